#include "betaprune/nn.hpp"

#include <cmath>

#include "betaprune/rng.hpp"

namespace betaprune {

std::string to_string(DatasetKind d) {
  return d == DatasetKind::mnist ? "mnist" : "cifar10";
}

std::string to_string(ModelKind k) {
  return k == ModelKind::cnn_classif ? "cnn_classif" : "beta_vae_classif";
}

void ModelParams::add(const std::string& name, Tensor t, bool prunable) {
  if (index_.count(name)) {
    throw Error(ErrorKind::config, "duplicate parameter name: " + name);
  }
  index_[name] = entries_.size();
  entries_.push_back({name, std::move(t), prunable});
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::config, "no parameter named " + name);
  return entries_[it->second].tensor;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::config, "no parameter named " + name);
  return entries_[it->second].tensor;
}

size_t ModelParams::remove_prefix(const std::string& prefix) {
  size_t removed = 0;
  std::vector<Entry> kept;
  kept.reserve(entries_.size());
  for (auto& e : entries_) {
    if (e.name.rfind(prefix, 0) == 0) {
      ++removed;
    } else {
      kept.push_back(std::move(e));
    }
  }
  entries_ = std::move(kept);
  index_.clear();
  for (size_t i = 0; i < entries_.size(); ++i) index_[entries_[i].name] = i;
  return removed;
}

void ModelParams::zero_grads() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

int64_t count_params(const ModelParams& params) {
  int64_t total = 0;
  for (const auto& e : params) total += e.tensor.numel();
  return total;
}

// ---- architecture ----------------------------------------------------------

ArchSpec reference_arch(DatasetKind dataset, ModelKind kind) {
  ArchSpec a{};
  a.dataset = dataset;
  a.vae_parts = kind == ModelKind::beta_vae_classif;
  a.num_classes = 10;
  a.clf_hidden = 32;
  if (dataset == DatasetKind::mnist) {
    a.in_ch = 1;
    a.img_h = a.img_w = 28;
    a.enc_convs = {{1, 8, 3, 2, 1}, {8, 16, 3, 2, 1}};  // 28 -> 14 -> 7
    a.enc_feat = 16 * 7 * 7;
    a.enc_hidden = 84;
    a.latent = 16;
    a.dec_ch = 8;
    a.dec_h = a.dec_w = 7;
    a.dec_deconvs = {{8, 8, 2, 2, 0}, {8, 1, 2, 2, 0}};  // 7 -> 14 -> 28
    a.declared_params = 69'000;
  } else {
    a.in_ch = 3;
    a.img_h = a.img_w = 32;
    a.enc_convs = {{3, 32, 3, 2, 1}, {32, 64, 3, 2, 1}, {64, 128, 3, 2, 1}};  // 32->16->8->4
    a.enc_feat = 128 * 4 * 4;
    a.enc_hidden = 1280;
    a.latent = 64;
    a.dec_ch = 128;
    a.dec_h = a.dec_w = 4;
    a.dec_deconvs = {{128, 64, 2, 2, 0}, {64, 32, 2, 2, 0}, {32, 3, 2, 2, 0}};  // 4->8->16->32
    a.declared_params = 2'900'000;
  }
  return a;
}

namespace {

Tensor he_uniform(Rng& rng, Shape shape, int fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from(std::move(shape), std::move(data), true);
}

void add_conv(ModelParams& p, Rng& rng, const std::string& name, const ConvSpec& c,
              bool transposed) {
  const int fan_in = c.in_ch * c.k * c.k;
  Shape kshape = transposed ? Shape{c.in_ch, c.out_ch, c.k, c.k}
                            : Shape{c.out_ch, c.in_ch, c.k, c.k};
  p.add(name + ".kernel", he_uniform(rng, std::move(kshape), fan_in), true);
  p.add(name + ".bias", Tensor::zeros({c.out_ch}, true), false);
}

void add_affine(ModelParams& p, Rng& rng, const std::string& name, int din, int dout) {
  p.add(name + ".weight", he_uniform(rng, {din, dout}, din), true);
  p.add(name + ".bias", Tensor::zeros({dout}, true), false);
}

}  // namespace

ModelParams init_params(const ArchSpec& arch, uint64_t seed) {
  Rng rng = stream_rng(seed, Stream::init);
  ModelParams p;
  for (size_t i = 0; i < arch.enc_convs.size(); ++i) {
    add_conv(p, rng, "encoder.conv" + std::to_string(i + 1), arch.enc_convs[i], false);
  }
  add_affine(p, rng, "encoder.fc", arch.enc_feat, arch.enc_hidden);
  add_affine(p, rng, "encoder.mu", arch.enc_hidden, arch.latent);
  if (arch.vae_parts) {
    add_affine(p, rng, "encoder.logvar", arch.enc_hidden, arch.latent);
    add_affine(p, rng, "decoder.fc", arch.latent, arch.dec_ch * arch.dec_h * arch.dec_w);
    for (size_t i = 0; i < arch.dec_deconvs.size(); ++i) {
      add_conv(p, rng, "decoder.deconv" + std::to_string(i + 1), arch.dec_deconvs[i], true);
    }
  }
  add_affine(p, rng, "classifier.fc1", arch.latent, arch.clf_hidden);
  add_affine(p, rng, "classifier.fc2", arch.clf_hidden, arch.num_classes);

  const int64_t total = count_params(p);
  const double lo = 0.85 * static_cast<double>(arch.declared_params);
  const double hi = 1.15 * static_cast<double>(arch.declared_params);
  if (static_cast<double>(total) < lo || static_cast<double>(total) > hi) {
    throw Error(ErrorKind::config,
                "init_params: " + to_string(arch.dataset) + " architecture has " +
                    std::to_string(total) + " parameters, outside ±15% of " +
                    std::to_string(arch.declared_params));
  }
  return p;
}

// ---- Adam ------------------------------------------------------------------

AdamState AdamState::create(const ModelParams& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& e : params) {
    const size_t n = static_cast<size_t>(e.tensor.numel());
    s.slots.emplace(e.name, Slot{std::vector<float>(n, 0.0f), std::vector<float>(n, 0.0f)});
  }
  return s;
}

void AdamState::drop_missing(const ModelParams& params) {
  for (auto it = slots.begin(); it != slots.end();) {
    if (!params.has(it->first)) {
      it = slots.erase(it);
    } else {
      ++it;
    }
  }
}

void adam_step(ModelParams& params, AdamState& state) {
  for (const auto& e : params) {
    if (!e.tensor.has_grad()) {
      throw Error(ErrorKind::config, "adam_step: parameter " + e.name + " has no gradient");
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (auto& e : params) {
    auto& slot = state.slots.at(e.name);
    auto& w = e.tensor.data();
    const auto& g = e.tensor.grad();
    for (size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double m = state.beta1 * slot.m[i] + (1.0 - state.beta1) * gi;
      const double v = state.beta2 * slot.v[i] + (1.0 - state.beta2) * gi * gi;
      slot.m[i] = static_cast<float>(m);
      slot.v[i] = static_cast<float>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      w[i] = static_cast<float>(w[i] - state.lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
  }
}

}  // namespace betaprune
