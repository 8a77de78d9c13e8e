#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "betaprune/classifier.hpp"
#include "betaprune/data.hpp"
#include "betaprune/pruning.hpp"
#include "betaprune/rng.hpp"

namespace betaprune {

struct RunConfig {
  DatasetKind dataset = DatasetKind::mnist;
  ModelKind kind = ModelKind::cnn_classif;
  std::optional<double> beta;  // required iff kind is beta_vae_classif
  bool prune = false;
  std::vector<uint64_t> seeds = {1, 2, 3};
  int phase1_epochs = 30;
  int phase2_epochs = 2;
  int phase3_epochs = 2;
  double lr = 1e-3;
  int batch_size = 64;
  double sparsity = 0.5;
  std::string data_dir;
  std::string out_dir;

  void validate() const;
};

// One Table-1 cell for one seed.
struct ResultRow {
  ModelKind kind;
  DatasetKind dataset;
  double beta = 0.0;  // 0 for cnn_classif
  bool pruned = false;
  uint64_t seed = 0;
  double accuracy_pct = 0.0;
  int64_t compressed_bytes = 0;
  int64_t raw_bytes = 0;
  LossBreakdown final_loss;
  std::vector<double> per_dim_kl;  // test-set profile; empty for cnn_classif
  bool collapsed = false;          // mean per-dim KL < 0.01 nats
  std::string model_file;
};

struct AggregateRow {
  ModelKind kind;
  DatasetKind dataset;
  double beta = 0.0;
  bool pruned = false;
  int n_seeds = 0;
  bool few_seeds = false;  // < 3 seeds
  double acc_mean = 0.0, acc_std = 0.0;
  double comp_mean = 0.0, comp_std = 0.0;  // bytes
};

// ---- protocol --------------------------------------------------------------

// Phase-structured training session for one (config, seed). run_protocol
// drives all phases; the acceptance suite also measures the mid-point
// (post-phase-2) state, which is bitwise what an unpruned run produces.
class ProtocolRun {
public:
  ProtocolRun(const RunConfig& cfg, uint64_t seed, const Dataset& train, const Dataset& test);

  void train_phase1();
  // Removes decoder parameters and the reconstruction term, then fine-tunes.
  void decapitate_and_train_phase2();
  // Computes 50% masks once, applies them, fine-tunes under the masks.
  void prune_and_train_phase3();

  // Evaluates (mu-path), serializes, measures. `pruned_tag` names the file.
  ResultRow finish(bool pruned_tag);

  const Model& model() const { return model_; }
  Model& model() { return model_; }

private:
  void train_epochs(int phase, int epochs, bool with_recon, bool masked);

  RunConfig cfg_;
  uint64_t seed_;
  const Dataset& train_;
  const Dataset& test_;
  Model model_;
  AdamState opt_;
  Rng eps_rng_;
  std::optional<SparsityMask> masks_;
  int epoch_cursor_ = 0;
  int64_t step_ = 0;
  LossBreakdown last_epoch_loss_;
};

ResultRow run_protocol(const RunConfig& cfg, uint64_t seed, const Dataset& train,
                       const Dataset& test);

// Single deterministic mu-path pass; fraction correct × 100.
double evaluate(Model& model, const Dataset& test);

// Mean per-dimension KL of q(z|x) over a dataset (mu-path statistics).
std::vector<double> latent_kl_profile(Model& model, const Dataset& data);

// ---- model files -----------------------------------------------------------

// "BPRN" format: magic, version u16, tensor count u32, then per tensor
// name (u16 length + UTF-8), rank u8, extents u32, f32 LE payload.
// Returns bytes written. Writes are atomic (temp + rename).
int64_t serialize_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);

// Size in bytes of the DEFLATE-compressed (gzip container, default level)
// contents of the file at `path`.
int64_t measure_compression(const std::string& path);

// ---- aggregation & output ---------------------------------------------------

AggregateRow aggregate(const std::vector<ResultRow>& rows);

enum class TableFormat { csv, markdown };
void emit_table(const std::vector<AggregateRow>& rows, TableFormat format,
                const std::string& path);

// Row persistence for the CLI (JSON, one file per run).
void write_row_json(const ResultRow& row, const std::string& path);
ResultRow read_row_json(const std::string& path);

}  // namespace betaprune
