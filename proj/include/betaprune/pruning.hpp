#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "betaprune/nn.hpp"

namespace betaprune {

// Per-tensor keep masks (true = keep), frozen once computed. Exactly
// floor(n·target_sparsity) elements are dropped per prunable tensor.
struct SparsityMask {
  double target_sparsity = 0.0;
  std::unordered_map<std::string, std::vector<uint8_t>> keep;
};

// Local low-magnitude criterion: per prunable tensor, mask out the
// floor(n·sparsity) smallest-|w| elements; ties go to the lowest flat index.
SparsityMask compute_masks(const ModelParams& params, double sparsity);

// Masked weights set to exactly 0.0f; everything else untouched. Idempotent.
void apply_masks(ModelParams& params, const SparsityMask& masks);

// Zeroes gradients at masked slots, runs Adam, re-zeroes masked weights so
// stale momentum cannot resurrect them.
void masked_step(ModelParams& params, const SparsityMask& masks, AdamState& state);

struct SparsityReport {
  struct PerTensor {
    std::string name;
    int64_t zeros, total;
    double fraction;
  };
  std::vector<PerTensor> tensors;     // every parameter, registry order
  int64_t prunable_zeros = 0, prunable_total = 0;
  double global_fraction = 0.0;       // over prunable tensors only
};

SparsityReport sparsity_report(const ModelParams& params);

}  // namespace betaprune
