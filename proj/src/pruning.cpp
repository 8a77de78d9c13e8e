#include "betaprune/pruning.hpp"

#include <algorithm>
#include <cmath>

namespace betaprune {

SparsityMask compute_masks(const ModelParams& params, double sparsity) {
  if (sparsity < 0.0 || sparsity >= 1.0) {
    throw Error(ErrorKind::config, "compute_masks: sparsity " + std::to_string(sparsity) +
                                       " outside [0,1)");
  }
  SparsityMask masks;
  masks.target_sparsity = sparsity;
  bool any = false;
  for (const auto& e : params) {
    if (!e.prunable) continue;
    any = true;
    const auto& w = e.tensor.data();
    const auto n = w.size();
    const auto drop = static_cast<size_t>(std::floor(static_cast<double>(n) * sparsity));
    std::vector<uint8_t> keep(n, 1);
    if (drop > 0) {
      std::vector<uint32_t> idx(n);
      for (size_t i = 0; i < n; ++i) idx[i] = static_cast<uint32_t>(i);
      auto by_magnitude = [&w](uint32_t a, uint32_t b) {
        const float ma = std::fabs(w[a]);
        const float mb = std::fabs(w[b]);
        return ma < mb || (ma == mb && a < b);
      };
      std::nth_element(idx.begin(), idx.begin() + static_cast<int64_t>(drop) - 1, idx.end(),
                       by_magnitude);
      for (size_t i = 0; i < drop; ++i) keep[idx[i]] = 0;
    }
    masks.keep.emplace(e.name, std::move(keep));
  }
  if (!any) {
    throw Error(ErrorKind::config, "compute_masks: no prunable tensors in the registry");
  }
  return masks;
}

void apply_masks(ModelParams& params, const SparsityMask& masks) {
  for (auto& e : params) {
    auto it = masks.keep.find(e.name);
    if (it == masks.keep.end()) {
      if (e.prunable) {
        throw Error(ErrorKind::config, "apply_masks: no mask for prunable tensor " + e.name);
      }
      continue;
    }
    auto& w = e.tensor.data();
    const auto& keep = it->second;
    if (keep.size() != w.size()) {
      throw Error(ErrorKind::config, "apply_masks: mask size mismatch for " + e.name);
    }
    for (size_t i = 0; i < w.size(); ++i) {
      if (!keep[i]) w[i] = 0.0f;
    }
  }
}

void masked_step(ModelParams& params, const SparsityMask& masks, AdamState& state) {
  for (auto& e : params) {
    auto it = masks.keep.find(e.name);
    if (it == masks.keep.end()) continue;
    if (!e.tensor.has_grad()) {
      throw Error(ErrorKind::config, "masked_step: parameter " + e.name + " has no gradient");
    }
    auto& g = e.tensor.grad();
    const auto& keep = it->second;
    for (size_t i = 0; i < g.size(); ++i) {
      if (!keep[i]) g[i] = 0.0f;
    }
  }
  adam_step(params, state);
  apply_masks(params, masks);
}

SparsityReport sparsity_report(const ModelParams& params) {
  SparsityReport report;
  for (const auto& e : params) {
    const auto& w = e.tensor.data();
    int64_t zeros = 0;
    for (float v : w) {
      if (v == 0.0f) ++zeros;
    }
    const auto total = static_cast<int64_t>(w.size());
    report.tensors.push_back(
        {e.name, zeros, total, static_cast<double>(zeros) / static_cast<double>(total)});
    if (e.prunable) {
      report.prunable_zeros += zeros;
      report.prunable_total += total;
    }
  }
  report.global_fraction =
      report.prunable_total > 0
          ? static_cast<double>(report.prunable_zeros) / static_cast<double>(report.prunable_total)
          : 0.0;
  return report;
}

}  // namespace betaprune
