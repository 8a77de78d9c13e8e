#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "betaprune/nn.hpp"
#include "betaprune/tensor.hpp"

namespace betaprune {

enum class Split { train, test };

// Immutable after load; images normalized to [0,1] by 1/255.
struct Dataset {
  DatasetKind name;
  Split split;
  int channels, height, width;
  int64_t count;
  std::vector<float> images;   // count × C × H × W, row-major
  std::vector<uint8_t> labels; // 0..9
};

// IDX files: big-endian magic 2051 (images) / 2049 (labels).
std::pair<Dataset, Dataset> load_mnist(const std::string& dir);

// 5 train files + 1 test file of 10000 records × 3073 bytes (label + RGB planes).
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

// Fisher–Yates permutation of 0..n−1, seeded by hash(run_seed, epoch).
std::vector<int64_t> shuffle_epoch(int64_t n, uint64_t run_seed, int epoch);

struct BatchPlan {
  uint64_t epoch_seed;
  std::vector<int64_t> permutation;
  int batch_size;

  static BatchPlan make(const Dataset& data, uint64_t run_seed, int epoch, int batch_size);
  // Identity permutation (evaluation passes).
  static BatchPlan sequential(int64_t n, int batch_size);
};

struct Batch {
  Tensor x;                 // B × C × H × W
  std::vector<int> labels;  // length B
};

// ⌈N/B⌉ batches in plan order; the last one may be short.
int64_t num_batches(const Dataset& data, const BatchPlan& plan);
Batch get_batch(const Dataset& data, const BatchPlan& plan, int64_t index);

}  // namespace betaprune
