#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tslab/tensor.hpp"

namespace tslab {

struct Dataset {
  Tensor images;  // [N, C, H, W], values in [0, 1]
  std::vector<std::int32_t> labels;
  std::size_t classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::vector<std::size_t> sample_shape() const;  // [C, H, W]
  void validate() const;
  Dataset select(std::span<const std::size_t> indices) const;
};

// Expects the four standard IDX files in dir:
// train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte,
// t10k-labels-idx1-ubyte. Pixels are divided by 255.
std::pair<Dataset, Dataset> load_mnist(const std::filesystem::path& dir);

enum class CifarVariant { C10, C100 };

// C10: data_batch_1..5.bin + test_batch.bin, record = label byte + 3072 pixel
// bytes (R,G,B planes). C100: train.bin + test.bin, record = coarse byte +
// fine byte + 3072 pixel bytes; the fine label is retained.
std::pair<Dataset, Dataset> load_cifar(const std::filesystem::path& dir, CifarVariant variant);

struct FoldPlan {
  std::size_t k = 0;
  std::vector<std::uint32_t> assignments;  // [N], values in [0, k)
  std::uint64_t seed = 0;

  std::vector<std::size_t> fold_indices(std::uint32_t fold) const;
  std::vector<std::size_t> complement_indices(std::uint32_t fold) const;
};

// Seeded shuffle followed by round-robin assignment; fold sizes differ by at
// most one.
FoldPlan make_folds(std::size_t n, std::size_t k, std::uint64_t seed);

// Class-balanced deterministic subsample of per_class examples per class.
Dataset subset(const Dataset& d, std::size_t per_class, std::uint64_t seed);

// Exact re-serialization to the on-disk formats (byte-level round trips).
std::vector<std::uint8_t> serialize_idx_images(const Dataset& d);
std::vector<std::uint8_t> serialize_idx_labels(const Dataset& d);
std::vector<std::uint8_t> serialize_cifar10(const Dataset& d);

// Manifest lines are "filename,sha256". Missing files raise IoError; hash or
// format problems raise FormatError.
void verify_data_manifest(const std::filesystem::path& data_dir,
                          const std::filesystem::path& manifest);

}  // namespace tslab
