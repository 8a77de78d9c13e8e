#include "betaprune/data.hpp"

#include <algorithm>
#include <fstream>

#include "betaprune/rng.hpp"

namespace betaprune {

namespace {

[[noreturn]] void data_error(const std::string& msg) {
  throw Error(ErrorKind::data, msg);
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) data_error("cannot open " + path);
  f.seekg(0, std::ios::end);
  const auto size = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) data_error("failed reading " + path);
  return bytes;
}

uint32_t be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

// IDX image file: magic 2051, then count, rows, cols, raw u8 pixels.
std::vector<uint8_t> read_idx_images(const std::string& path, uint32_t& count,
                                     uint32_t& rows, uint32_t& cols) {
  const auto bytes = read_file(path);
  if (bytes.size() < 16) data_error(path + ": truncated IDX header");
  const uint32_t magic = be32(bytes.data());
  if (magic != 2051) data_error(path + ": bad IDX magic " + std::to_string(magic) + ", want 2051");
  count = be32(bytes.data() + 4);
  rows = be32(bytes.data() + 8);
  cols = be32(bytes.data() + 12);
  const size_t want = 16 + static_cast<size_t>(count) * rows * cols;
  if (bytes.size() != want) {
    data_error(path + ": expected " + std::to_string(want) + " bytes, got " +
               std::to_string(bytes.size()));
  }
  return {bytes.begin() + 16, bytes.end()};
}

std::vector<uint8_t> read_idx_labels(const std::string& path, uint32_t& count) {
  const auto bytes = read_file(path);
  if (bytes.size() < 8) data_error(path + ": truncated IDX header");
  const uint32_t magic = be32(bytes.data());
  if (magic != 2049) data_error(path + ": bad IDX magic " + std::to_string(magic) + ", want 2049");
  count = be32(bytes.data() + 4);
  if (bytes.size() != 8 + static_cast<size_t>(count)) {
    data_error(path + ": expected " + std::to_string(8 + count) + " bytes, got " +
               std::to_string(bytes.size()));
  }
  return {bytes.begin() + 8, bytes.end()};
}

Dataset mnist_split(const std::string& dir, const std::string& images_file,
                    const std::string& labels_file, Split split, int64_t expected) {
  uint32_t n_img = 0, rows = 0, cols = 0, n_lab = 0;
  const auto pixels = read_idx_images(dir + "/" + images_file, n_img, rows, cols);
  const auto labels = read_idx_labels(dir + "/" + labels_file, n_lab);
  if (n_img != n_lab) {
    data_error(images_file + ": image count " + std::to_string(n_img) +
               " != label count " + std::to_string(n_lab));
  }
  if (n_img != expected || rows != 28 || cols != 28) {
    data_error(images_file + ": expected " + std::to_string(expected) +
               " 28x28 images, got " + std::to_string(n_img) + " " + std::to_string(rows) + "x" +
               std::to_string(cols));
  }
  Dataset d;
  d.name = DatasetKind::mnist;
  d.split = split;
  d.channels = 1;
  d.height = d.width = 28;
  d.count = expected;
  d.images.resize(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i) {
    d.images[i] = static_cast<float>(pixels[i]) * (1.0f / 255.0f);
  }
  d.labels.assign(labels.begin(), labels.end());
  for (uint8_t y : d.labels) {
    if (y > 9) data_error(labels_file + ": label out of range: " + std::to_string(y));
  }
  return d;
}

constexpr int64_t kCifarRecord = 3073;  // 1 label byte + 3 × 1024 pixels

void append_cifar_file(Dataset& d, const std::string& path) {
  const auto bytes = read_file(path);
  if (bytes.size() % kCifarRecord != 0) {
    data_error(path + ": size " + std::to_string(bytes.size()) + " not divisible by 3073");
  }
  const int64_t records = static_cast<int64_t>(bytes.size()) / kCifarRecord;
  if (records != 10'000) {
    data_error(path + ": expected 10000 records, got " + std::to_string(records));
  }
  const size_t pix_per = 3 * 32 * 32;
  size_t img_off = d.images.size();
  d.images.resize(d.images.size() + static_cast<size_t>(records) * pix_per);
  for (int64_t r = 0; r < records; ++r) {
    const uint8_t* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] > 9) data_error(path + ": label out of range: " + std::to_string(rec[0]));
    d.labels.push_back(rec[0]);
    for (size_t p = 0; p < pix_per; ++p) {
      d.images[img_off++] = static_cast<float>(rec[1 + p]) * (1.0f / 255.0f);
    }
  }
  d.count += records;
}

}  // namespace

std::pair<Dataset, Dataset> load_mnist(const std::string& dir) {
  Dataset train = mnist_split(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                              Split::train, 60'000);
  Dataset test = mnist_split(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte",
                             Split::test, 10'000);
  return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
  Dataset train;
  train.name = DatasetKind::cifar10;
  train.split = Split::train;
  train.channels = 3;
  train.height = train.width = 32;
  train.count = 0;
  for (int i = 1; i <= 5; ++i) {
    append_cifar_file(train, dir + "/data_batch_" + std::to_string(i) + ".bin");
  }
  if (train.count != 50'000) {
    data_error(dir + ": expected 50000 training records, got " + std::to_string(train.count));
  }
  Dataset test;
  test.name = DatasetKind::cifar10;
  test.split = Split::test;
  test.channels = 3;
  test.height = test.width = 32;
  test.count = 0;
  append_cifar_file(test, dir + "/test_batch.bin");
  return {std::move(train), std::move(test)};
}

std::vector<int64_t> shuffle_epoch(int64_t n, uint64_t run_seed, int epoch) {
  if (n <= 0) throw Error(ErrorKind::config, "shuffle_epoch: n must be positive");
  std::vector<int64_t> perm(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  Rng rng(mix_seed(mix_seed(run_seed, static_cast<uint64_t>(Stream::shuffle)),
                   static_cast<uint64_t>(epoch)));
  for (int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<int64_t>(rng.below(static_cast<uint64_t>(i + 1)));
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }
  return perm;
}

BatchPlan BatchPlan::make(const Dataset& data, uint64_t run_seed, int epoch, int batch_size) {
  if (batch_size < 1 || batch_size > data.count) {
    throw Error(ErrorKind::config, "batch size " + std::to_string(batch_size) +
                                       " out of range for dataset of " + std::to_string(data.count));
  }
  BatchPlan plan;
  plan.epoch_seed = mix_seed(mix_seed(run_seed, static_cast<uint64_t>(Stream::shuffle)),
                             static_cast<uint64_t>(epoch));
  plan.permutation = shuffle_epoch(data.count, run_seed, epoch);
  plan.batch_size = batch_size;
  return plan;
}

BatchPlan BatchPlan::sequential(int64_t n, int batch_size) {
  BatchPlan plan;
  plan.epoch_seed = 0;
  plan.permutation.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) plan.permutation[static_cast<size_t>(i)] = i;
  plan.batch_size = batch_size;
  return plan;
}

int64_t num_batches(const Dataset& data, const BatchPlan& plan) {
  return (data.count + plan.batch_size - 1) / plan.batch_size;
}

Batch get_batch(const Dataset& data, const BatchPlan& plan, int64_t index) {
  const int64_t begin = index * plan.batch_size;
  const int64_t end = std::min<int64_t>(begin + plan.batch_size, data.count);
  if (begin < 0 || begin >= end) {
    throw Error(ErrorKind::config, "batch index " + std::to_string(index) + " out of range");
  }
  const int64_t b = end - begin;
  const size_t pix = static_cast<size_t>(data.channels) * data.height * data.width;
  std::vector<float> x(static_cast<size_t>(b) * pix);
  Batch batch;
  batch.labels.resize(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) {
    const int64_t src = plan.permutation[static_cast<size_t>(begin + i)];
    std::copy_n(data.images.begin() + static_cast<int64_t>(pix) * src, pix,
                x.begin() + static_cast<int64_t>(pix) * i);
    batch.labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(src)];
  }
  batch.x = Tensor::from({static_cast<int>(b), data.channels, data.height, data.width},
                         std::move(x));
  return batch;
}

}  // namespace betaprune
