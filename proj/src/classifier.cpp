#include "betaprune/classifier.hpp"

namespace betaprune {

ClassifierOutput classify(const ArchSpec& arch, ModelParams& params, const Tensor& latent_input) {
  if (latent_input.rank() != 2 || latent_input.dim(1) != arch.latent) {
    throw Error(ErrorKind::config, "classify: latent input " + shape_str(latent_input.shape()) +
                                       " does not match latent width " +
                                       std::to_string(arch.latent));
  }
  Tensor h = relu(affine(latent_input, params.at("classifier.fc1.weight"),
                         params.at("classifier.fc1.bias")));
  ClassifierOutput out;
  out.logits = affine(h, params.at("classifier.fc2.weight"), params.at("classifier.fc2.bias"));
  out.log_probs = log_softmax(out.logits, 1);

  const int n = out.logits.dim(0), c = out.logits.dim(1);
  out.predicted.resize(static_cast<size_t>(n));
  const auto& lv = out.logits.data();
  for (int i = 0; i < n; ++i) {
    const float* row = lv.data() + static_cast<int64_t>(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;  // ties keep the lowest index
    }
    out.predicted[static_cast<size_t>(i)] = best;
  }
  return out;
}

Tensor cross_entropy(const std::vector<int>& labels, const Tensor& log_probs) {
  if (log_probs.rank() != 2 || static_cast<int64_t>(labels.size()) != log_probs.dim(0)) {
    throw Error(ErrorKind::config, "cross_entropy: " + std::to_string(labels.size()) +
                                       " labels vs log_probs " + shape_str(log_probs.shape()));
  }
  const int n = log_probs.dim(0), c = log_probs.dim(1);
  for (int y : labels) {
    if (y < 0 || y >= c) {
      throw Error(ErrorKind::config, "cross_entropy: label " + std::to_string(y) +
                                         " out of range 0.." + std::to_string(c - 1));
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const auto& lp = log_probs.data();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    total -= static_cast<double>(lp[static_cast<int64_t>(i) * c + labels[static_cast<size_t>(i)]]);
  }
  total *= inv_n;

  auto ln = log_probs.node();
  std::vector<int> labels_copy = labels;
  Tensor loss = Tensor::make_op(
      "cross_entropy", {1}, {static_cast<float>(total)}, {log_probs},
      [ln, labels_copy, c, inv_n](Tensor::Node& self) {
        ln->ensure_grad();
        const double g0 = static_cast<double>(self.grad[0]) * inv_n;
        float* dl = ln->grad.data();
        for (size_t i = 0; i < labels_copy.size(); ++i) {
          dl[static_cast<int64_t>(i) * c + labels_copy[i]] -= static_cast<float>(g0);
        }
      });
  loss.node()->has_hi = true;
  loss.node()->hi = total;
  return loss;
}

CombinedLoss combined_loss(const Tensor& x, const LatentSample& latent, const Tensor& x_hat,
                           const std::vector<int>& labels, const Tensor& log_probs, double beta) {
  VaeLossParts parts = beta_vae_loss(x, latent, x_hat, beta);
  Tensor ce = cross_entropy(labels, log_probs);

  CombinedLoss out;
  out.total = add(add(scale(parts.kl, beta), parts.recon), ce);
  out.breakdown.kl = parts.kl.item_f64();
  out.breakdown.recon = parts.recon.item_f64();
  out.breakdown.ce = ce.item_f64();
  out.breakdown.beta = beta;
  out.breakdown.total = out.total.item_f64();
  out.breakdown.per_dim_kl = std::move(parts.per_dim_kl);
  return out;
}

Model build_model(ModelKind kind, DatasetKind dataset, double beta, uint64_t seed) {
  if (kind == ModelKind::beta_vae_classif && beta < 0.0) {
    throw Error(ErrorKind::config, "build_model: beta must be non-negative");
  }
  Model m;
  m.kind = kind;
  m.arch = reference_arch(dataset, kind);
  m.beta = kind == ModelKind::beta_vae_classif ? beta : 0.0;
  m.params = init_params(m.arch, seed);
  return m;
}

}  // namespace betaprune
