#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "betaprune/tensor.hpp"

namespace betaprune {

enum class DatasetKind { mnist, cifar10 };
enum class ModelKind { cnn_classif, beta_vae_classif };

std::string to_string(DatasetKind d);
std::string to_string(ModelKind k);

// Named, ordered parameter registry. Iteration order is insertion order;
// kernels are prunable, biases are not.
class ModelParams {
public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool prunable;
  };

  void add(const std::string& name, Tensor t, bool prunable);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  // Drops every parameter whose name starts with `prefix`; returns how many.
  size_t remove_prefix(const std::string& prefix);

  void zero_grads();

private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

int64_t count_params(const ModelParams& params);

// ---- architecture ----------------------------------------------------------

struct ConvSpec {
  int in_ch, out_ch, k, stride, pad;
};

// Full model layout for one dataset. The CNN baseline is the same spec with
// vae_parts off (no logvar head, no decoder).
struct ArchSpec {
  DatasetKind dataset;
  bool vae_parts;
  int in_ch, img_h, img_w;
  std::vector<ConvSpec> enc_convs;  // 3x3 stride-2 pad-1
  int enc_feat;                     // flattened trunk width
  int enc_hidden;
  int latent;
  int dec_ch, dec_h, dec_w;                // decoder reshape target
  std::vector<ConvSpec> dec_deconvs;       // 2x2 stride-2 pad-0
  int clf_hidden;
  int num_classes;
  int64_t declared_params;  // dataset's published total; init checks ±15%
};

ArchSpec reference_arch(DatasetKind dataset, ModelKind kind);

// He-uniform kernels (bound sqrt(6/fan_in)) from the init stream of `seed`,
// zero biases. Errors if the trainable total leaves ±15% of declared_params.
ModelParams init_params(const ArchSpec& arch, uint64_t seed);

// ---- Adam ------------------------------------------------------------------

struct AdamState {
  struct Slot {
    std::vector<float> m, v;
  };

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int64_t t = 0;  // shared step counter
  std::unordered_map<std::string, Slot> slots;

  static AdamState create(const ModelParams& params, double lr);
  void drop_missing(const ModelParams& params);
};

// Standard Adam with bias correction; every parameter must have a gradient.
void adam_step(ModelParams& params, AdamState& state);

}  // namespace betaprune
