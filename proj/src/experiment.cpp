#include "betaprune/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "betaprune/rng.hpp"

namespace betaprune {

namespace {

constexpr double kCollapseThreshold = 0.01;  // nats per latent dimension

std::string beta_tag(double beta) {
  std::ostringstream os;
  if (beta == std::floor(beta)) {
    os << static_cast<long long>(beta);
  } else {
    os << beta;
  }
  return os.str();
}

std::string model_file_name(const RunConfig& cfg, uint64_t seed, bool pruned) {
  std::string name = to_string(cfg.dataset) + "_" +
                     (cfg.kind == ModelKind::cnn_classif ? "cnn" : "bvae");
  if (cfg.kind == ModelKind::beta_vae_classif) name += "_b" + beta_tag(*cfg.beta);
  name += pruned ? "_pruned" : "_unpruned";
  name += "_seed" + std::to_string(seed) + ".bprn";
  return name;
}

void atomic_write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::data, "cannot write " + tmp);
    f << text;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void RunConfig::validate() const {
  if (kind == ModelKind::beta_vae_classif) {
    if (!beta) throw Error(ErrorKind::config, "beta is required for beta_vae_classif");
    if (*beta < 0.0) throw Error(ErrorKind::config, "beta must be non-negative");
  } else if (beta) {
    throw Error(ErrorKind::config, "beta is only valid for beta_vae_classif");
  }
  if (phase1_epochs < 0 || phase2_epochs < 0 || phase3_epochs < 0) {
    throw Error(ErrorKind::config, "epoch counts must be non-negative");
  }
  if (batch_size < 1) throw Error(ErrorKind::config, "batch size must be positive");
  if (lr <= 0.0) throw Error(ErrorKind::config, "learning rate must be positive");
  if (prune && (sparsity < 0.0 || sparsity >= 1.0)) {
    throw Error(ErrorKind::config, "sparsity must lie in [0,1)");
  }
  if (seeds.empty()) throw Error(ErrorKind::config, "at least one seed is required");
}

// ---- ProtocolRun -----------------------------------------------------------

ProtocolRun::ProtocolRun(const RunConfig& cfg, uint64_t seed, const Dataset& train,
                         const Dataset& test)
    : cfg_(cfg),
      seed_(seed),
      train_(train),
      test_(test),
      model_(build_model(cfg.kind, cfg.dataset,
                         cfg.kind == ModelKind::beta_vae_classif ? *cfg.beta : 0.0, seed)),
      opt_(AdamState::create(model_.params, cfg.lr)),
      eps_rng_(stream_rng(seed, Stream::eps)) {
  cfg_.validate();
  if (train.name != cfg.dataset || test.name != cfg.dataset) {
    throw Error(ErrorKind::config, "run_protocol: datasets do not match the configured kind");
  }
}

void ProtocolRun::train_epochs(int phase, int epochs, bool with_recon, bool masked) {
  const bool vae = model_.kind == ModelKind::beta_vae_classif;
  for (int e = 0; e < epochs; ++e) {
    const BatchPlan plan = BatchPlan::make(train_, seed_, epoch_cursor_, cfg_.batch_size);
    const int64_t nb = num_batches(train_, plan);
    LossBreakdown epoch_acc;
    epoch_acc.beta = model_.beta;
    for (int64_t b = 0; b < nb; ++b) {
      Batch batch = get_batch(train_, plan, b);
      model_.params.zero_grads();

      Tensor total;
      LossBreakdown bd;
      bd.beta = model_.beta;
      if (vae) {
        auto [mu, logvar] = encode(model_.arch, model_.params, batch.x);
        const int bs = mu.dim(0);
        std::vector<float> eps(static_cast<size_t>(bs) * model_.arch.latent);
        for (auto& v : eps) v = static_cast<float>(eps_rng_.gauss());
        LatentSample latent =
            sample_latent(mu, logvar, Tensor::from({bs, model_.arch.latent}, std::move(eps)));
        ClassifierOutput clf = classify(model_.arch, model_.params, latent.z);
        if (with_recon) {
          Tensor x_hat = decode(model_.arch, model_.params, latent.z);
          CombinedLoss loss = combined_loss(batch.x, latent, x_hat, batch.labels, clf.log_probs,
                                            model_.beta);
          total = loss.total;
          bd = loss.breakdown;
        } else {
          // decapitated objective: beta·kl + ce
          KlResult kl = kl_divergence(latent.mu, latent.logvar);
          Tensor ce = cross_entropy(batch.labels, clf.log_probs);
          total = add(scale(kl.kl, model_.beta), ce);
          bd.kl = kl.kl.item_f64();
          bd.ce = ce.item_f64();
          bd.total = total.item_f64();
          bd.per_dim_kl = std::move(kl.per_dim);
        }
      } else {
        Tensor feats = encoder_features(model_.arch, model_.params, batch.x);
        Tensor mu = mu_head(model_.params, feats);
        ClassifierOutput clf = classify(model_.arch, model_.params, mu);
        Tensor ce = cross_entropy(batch.labels, clf.log_probs);
        total = ce;
        bd.ce = ce.item_f64();
        bd.total = bd.ce;
      }

      if (!std::isfinite(bd.total)) {
        throw DivergenceError(phase, step_,
                              "non-finite loss in phase " + std::to_string(phase) + " at step " +
                                  std::to_string(step_));
      }
      backward(total);
      if (masked) {
        masked_step(model_.params, *masks_, opt_);
      } else {
        adam_step(model_.params, opt_);
      }
      ++step_;

      epoch_acc.kl += bd.kl;
      epoch_acc.recon += bd.recon;
      epoch_acc.ce += bd.ce;
      epoch_acc.total += bd.total;
      if (!bd.per_dim_kl.empty()) {
        if (epoch_acc.per_dim_kl.empty()) epoch_acc.per_dim_kl.assign(bd.per_dim_kl.size(), 0.0);
        for (size_t i = 0; i < bd.per_dim_kl.size(); ++i) {
          epoch_acc.per_dim_kl[i] += bd.per_dim_kl[i];
        }
      }
    }
    const double inv = 1.0 / static_cast<double>(nb);
    epoch_acc.kl *= inv;
    epoch_acc.recon *= inv;
    epoch_acc.ce *= inv;
    epoch_acc.total *= inv;
    for (auto& v : epoch_acc.per_dim_kl) v *= inv;
    last_epoch_loss_ = std::move(epoch_acc);
    ++epoch_cursor_;
  }
}

void ProtocolRun::train_phase1() { train_epochs(1, cfg_.phase1_epochs, true, false); }

void ProtocolRun::decapitate_and_train_phase2() {
  if (model_.kind == ModelKind::beta_vae_classif) {
    model_.params.remove_prefix("decoder.");
    opt_.drop_missing(model_.params);
  }
  train_epochs(2, cfg_.phase2_epochs, false, false);
}

void ProtocolRun::prune_and_train_phase3() {
  masks_ = compute_masks(model_.params, cfg_.sparsity);
  apply_masks(model_.params, *masks_);
  train_epochs(3, cfg_.phase3_epochs, false, true);
}

ResultRow ProtocolRun::finish(bool pruned_tag) {
  ResultRow row;
  row.kind = model_.kind;
  row.dataset = cfg_.dataset;
  row.beta = model_.beta;
  row.pruned = pruned_tag;
  row.seed = seed_;
  row.accuracy_pct = evaluate(model_, test_);
  row.final_loss = last_epoch_loss_;
  if (model_.kind == ModelKind::beta_vae_classif) {
    row.per_dim_kl = latent_kl_profile(model_, test_);
    double mean_kl = 0.0;
    for (double v : row.per_dim_kl) mean_kl += v;
    mean_kl /= static_cast<double>(row.per_dim_kl.size());
    row.collapsed = mean_kl < kCollapseThreshold;
  }

  std::filesystem::create_directories(cfg_.out_dir.empty() ? "." : cfg_.out_dir);
  const std::string dir = cfg_.out_dir.empty() ? "." : cfg_.out_dir;
  row.model_file = dir + "/" + model_file_name(cfg_, seed_, pruned_tag);
  row.raw_bytes = serialize_model(model_.params, row.model_file);
  row.compressed_bytes = measure_compression(row.model_file);
  return row;
}

ResultRow run_protocol(const RunConfig& cfg, uint64_t seed, const Dataset& train,
                       const Dataset& test) {
  ProtocolRun run(cfg, seed, train, test);
  run.train_phase1();
  run.decapitate_and_train_phase2();
  if (cfg.prune) run.prune_and_train_phase3();
  return run.finish(cfg.prune);
}

// ---- evaluation ------------------------------------------------------------

double evaluate(Model& model, const Dataset& test) {
  const BatchPlan plan = BatchPlan::sequential(test.count, 256);
  const int64_t nb = num_batches(test, plan);
  int64_t correct = 0;
  for (int64_t b = 0; b < nb; ++b) {
    Batch batch = get_batch(test, plan, b);
    Tensor feats = encoder_features(model.arch, model.params, batch.x);
    Tensor mu = mu_head(model.params, feats);
    ClassifierOutput clf = classify(model.arch, model.params, mu);
    for (size_t i = 0; i < batch.labels.size(); ++i) {
      if (clf.predicted[i] == batch.labels[i]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(test.count);
}

std::vector<double> latent_kl_profile(Model& model, const Dataset& data) {
  if (model.kind != ModelKind::beta_vae_classif) {
    throw Error(ErrorKind::config, "latent_kl_profile: model has no logvar head");
  }
  const BatchPlan plan = BatchPlan::sequential(data.count, 256);
  const int64_t nb = num_batches(data, plan);
  std::vector<double> acc(static_cast<size_t>(model.arch.latent), 0.0);
  for (int64_t b = 0; b < nb; ++b) {
    Batch batch = get_batch(data, plan, b);
    auto [mu, logvar] = encode(model.arch, model.params, batch.x);
    KlResult kl = kl_divergence(mu, logvar);
    const double w = static_cast<double>(mu.dim(0));
    for (size_t j = 0; j < acc.size(); ++j) acc[j] += kl.per_dim[j] * w;
  }
  for (auto& v : acc) v /= static_cast<double>(data.count);
  return acc;
}

// ---- aggregation -----------------------------------------------------------

AggregateRow aggregate(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw Error(ErrorKind::config, "aggregate: no rows");
  AggregateRow agg;
  agg.kind = rows[0].kind;
  agg.dataset = rows[0].dataset;
  agg.beta = rows[0].beta;
  agg.pruned = rows[0].pruned;
  agg.n_seeds = static_cast<int>(rows.size());
  agg.few_seeds = rows.size() < 3;
  for (const auto& r : rows) {
    if (r.kind != agg.kind || r.dataset != agg.dataset || r.beta != agg.beta ||
        r.pruned != agg.pruned) {
      throw Error(ErrorKind::config, "aggregate: rows from mixed configurations");
    }
  }
  const double n = static_cast<double>(rows.size());
  double acc_sum = 0.0, comp_sum = 0.0;
  for (const auto& r : rows) {
    acc_sum += r.accuracy_pct;
    comp_sum += static_cast<double>(r.compressed_bytes);
  }
  agg.acc_mean = acc_sum / n;
  agg.comp_mean = comp_sum / n;
  double acc_var = 0.0, comp_var = 0.0;
  for (const auto& r : rows) {
    acc_var += (r.accuracy_pct - agg.acc_mean) * (r.accuracy_pct - agg.acc_mean);
    comp_var += (static_cast<double>(r.compressed_bytes) - agg.comp_mean) *
                (static_cast<double>(r.compressed_bytes) - agg.comp_mean);
  }
  agg.acc_std = std::sqrt(acc_var / n);  // population std
  agg.comp_std = std::sqrt(comp_var / n);
  return agg;
}

// ---- table emission ----------------------------------------------------------

namespace {

// Table-1 ordering: per dataset, CNN rows first, then ascending beta,
// unpruned before pruned.
bool table_order(const AggregateRow& a, const AggregateRow& b) {
  if (a.dataset != b.dataset) return a.dataset == DatasetKind::mnist;
  if (a.kind != b.kind) return a.kind == ModelKind::cnn_classif;
  if (a.beta != b.beta) return a.beta < b.beta;
  return a.pruned < b.pruned;
}

std::string fmt(double v, int precision = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

}  // namespace

void emit_table(const std::vector<AggregateRow>& rows, TableFormat format,
                const std::string& path) {
  std::vector<AggregateRow> sorted = rows;
  std::sort(sorted.begin(), sorted.end(), table_order);

  std::ostringstream out;
  if (format == TableFormat::csv) {
    out << "model,beta,pruned,acc_mean,acc_std,comp_mean,comp_std,unit\n";
    for (const auto& r : sorted) {
      const bool mnist = r.dataset == DatasetKind::mnist;
      const double unit = mnist ? 1024.0 : 1024.0 * 1024.0;
      out << to_string(r.kind) << ',';
      if (r.kind == ModelKind::beta_vae_classif) out << beta_tag(r.beta);
      out << ',' << (r.pruned ? 1 : 0) << ',' << fmt(r.acc_mean, 4) << ',' << fmt(r.acc_std, 4)
          << ',' << fmt(r.comp_mean / unit, 4) << ',' << fmt(r.comp_std / unit, 4) << ','
          << (mnist ? "KB" : "MB") << '\n';
    }
  } else {
    DatasetKind current{};
    bool first = true;
    for (const auto& r : sorted) {
      if (first || r.dataset != current) {
        current = r.dataset;
        const bool mnist = current == DatasetKind::mnist;
        if (!first) out << '\n';
        out << "### " << (mnist ? "MNIST" : "CIFAR10") << "\n\n";
        out << "| Model | Beta | Acc. (%) | Comp. (" << (mnist ? "KB" : "MB") << ") |\n";
        out << "|---|---|---|---|\n";
        first = false;
      }
      const bool mnist = r.dataset == DatasetKind::mnist;
      const double unit = mnist ? 1024.0 : 1024.0 * 1024.0;
      out << "| " << (r.kind == ModelKind::cnn_classif ? "CNN-Classif." : "Beta-VAE-Classif.")
          << (r.pruned ? " w/ pruning" : "") << " | "
          << (r.kind == ModelKind::beta_vae_classif ? beta_tag(r.beta) : "-") << " | "
          << fmt(r.acc_mean) << " ± " << fmt(r.acc_std) << " | " << fmt(r.comp_mean / unit)
          << " ± " << fmt(r.comp_std / unit) << " |\n";
    }
    if (first) out << "| Model | Beta | Acc. (%) | Comp. |\n|---|---|---|---|\n";
  }
  atomic_write_text(path, out.str());
}

// ---- row persistence ---------------------------------------------------------

void write_row_json(const ResultRow& row, const std::string& path) {
  nlohmann::json j;
  j["model"] = to_string(row.kind);
  j["dataset"] = to_string(row.dataset);
  j["beta"] = row.beta;
  j["pruned"] = row.pruned;
  j["seed"] = row.seed;
  j["accuracy_pct"] = row.accuracy_pct;
  j["compressed_bytes"] = row.compressed_bytes;
  j["raw_bytes"] = row.raw_bytes;
  j["loss"] = {{"kl", row.final_loss.kl},
               {"recon", row.final_loss.recon},
               {"ce", row.final_loss.ce},
               {"beta", row.final_loss.beta},
               {"total", row.final_loss.total}};
  j["per_dim_kl"] = row.per_dim_kl;
  j["collapsed"] = row.collapsed;
  j["model_file"] = row.model_file;
  atomic_write_text(path, j.dump(2) + "\n");
}

ResultRow read_row_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::data, "cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw Error(ErrorKind::data, path + ": invalid JSON: " + e.what());
  }
  ResultRow row;
  const std::string kind = j.at("model").get<std::string>();
  row.kind = kind == "cnn_classif" ? ModelKind::cnn_classif : ModelKind::beta_vae_classif;
  const std::string dataset = j.at("dataset").get<std::string>();
  row.dataset = dataset == "mnist" ? DatasetKind::mnist : DatasetKind::cifar10;
  row.beta = j.at("beta").get<double>();
  row.pruned = j.at("pruned").get<bool>();
  row.seed = j.at("seed").get<uint64_t>();
  row.accuracy_pct = j.at("accuracy_pct").get<double>();
  row.compressed_bytes = j.at("compressed_bytes").get<int64_t>();
  row.raw_bytes = j.at("raw_bytes").get<int64_t>();
  const auto& loss = j.at("loss");
  row.final_loss.kl = loss.at("kl").get<double>();
  row.final_loss.recon = loss.at("recon").get<double>();
  row.final_loss.ce = loss.at("ce").get<double>();
  row.final_loss.beta = loss.at("beta").get<double>();
  row.final_loss.total = loss.at("total").get<double>();
  row.per_dim_kl = j.at("per_dim_kl").get<std::vector<double>>();
  row.collapsed = j.at("collapsed").get<bool>();
  row.model_file = j.at("model_file").get<std::string>();
  return row;
}

}  // namespace betaprune
