#include "tslab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "detail/rng.hpp"
#include "tslab/io.hpp"

namespace tslab {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

std::vector<std::uint8_t> load_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IoError("missing dataset file: " + path.string());
  }
  return read_binary_file(path);
}

struct IdxImages {
  std::size_t n, rows, cols;
  const std::uint8_t* pixels;
};

IdxImages parse_idx_images(const std::vector<std::uint8_t>& buf, const std::string& what) {
  if (buf.size() < 16) throw FormatError(what + ": too short for an IDX image header");
  std::uint32_t magic = read_be32(buf.data());
  if (magic != kIdxImagesMagic) {
    throw FormatError(what + ": bad magic " + std::to_string(magic) + ", expected 2051");
  }
  std::size_t n = read_be32(buf.data() + 4);
  std::size_t rows = read_be32(buf.data() + 8);
  std::size_t cols = read_be32(buf.data() + 12);
  if (buf.size() != 16 + n * rows * cols) throw IoError(what + ": truncated IDX image data");
  return {n, rows, cols, buf.data() + 16};
}

std::pair<std::size_t, const std::uint8_t*> parse_idx_labels(const std::vector<std::uint8_t>& buf,
                                                             const std::string& what) {
  if (buf.size() < 8) throw FormatError(what + ": too short for an IDX label header");
  std::uint32_t magic = read_be32(buf.data());
  if (magic != kIdxLabelsMagic) {
    throw FormatError(what + ": bad magic " + std::to_string(magic) + ", expected 2049");
  }
  std::size_t n = read_be32(buf.data() + 4);
  if (buf.size() != 8 + n) throw IoError(what + ": truncated IDX label data");
  return {n, buf.data() + 8};
}

Dataset mnist_split(const std::filesystem::path& dir, const std::string& images_name,
                    const std::string& labels_name, const std::string& split) {
  auto ibuf = load_file(dir / images_name);
  auto lbuf = load_file(dir / labels_name);
  IdxImages im = parse_idx_images(ibuf, images_name);
  auto [ln, lptr] = parse_idx_labels(lbuf, labels_name);
  if (im.n != ln) {
    throw FormatError("mnist " + split + ": " + std::to_string(im.n) + " images but " +
                      std::to_string(ln) + " labels");
  }
  Dataset d;
  d.name = "mnist-" + split;
  d.classes = 10;
  d.images = Tensor({im.n, 1, im.rows, im.cols});
  float* dst = d.images.data();
  const std::size_t px = im.n * im.rows * im.cols;
  for (std::size_t i = 0; i < px; ++i) dst[i] = float(im.pixels[i]) / 255.0f;
  d.labels.resize(ln);
  for (std::size_t i = 0; i < ln; ++i) {
    if (lptr[i] > 9) throw FormatError("mnist " + split + ": label out of range");
    d.labels[i] = std::int32_t(lptr[i]);
  }
  return d;
}

}  // namespace

std::vector<std::size_t> Dataset::sample_shape() const {
  std::vector<std::size_t> s(images.shape().begin() + 1, images.shape().end());
  return s;
}

void Dataset::validate() const {
  if (images.rank() < 2 || images.dim(0) != labels.size()) {
    throw FormatError("dataset: image/label count mismatch");
  }
  for (std::int32_t l : labels) {
    if (l < 0 || std::size_t(l) >= classes) throw FormatError("dataset: label out of range");
  }
  for (float v : images.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("dataset: pixel outside [0, 1]");
  }
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  Dataset out;
  out.classes = classes;
  out.name = name;
  std::vector<std::size_t> shape = images.shape();
  shape[0] = indices.size();
  out.images = Tensor(shape);
  const std::size_t sample = images.size() / images.dim(0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= labels.size()) throw std::invalid_argument("select: index out of range");
    std::memcpy(out.images.data() + i * sample, images.data() + indices[i] * sample,
                sample * sizeof(float));
    out.labels.push_back(labels[indices[i]]);
  }
  return out;
}

std::pair<Dataset, Dataset> load_mnist(const std::filesystem::path& dir) {
  Dataset train = mnist_split(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", "train");
  Dataset test = mnist_split(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", "test");
  return {std::move(train), std::move(test)};
}

namespace {

Dataset cifar_from_files(const std::filesystem::path& dir, const std::vector<std::string>& files,
                         CifarVariant variant, const std::string& split) {
  const std::size_t label_bytes = variant == CifarVariant::C10 ? 1 : 2;
  const std::size_t record = label_bytes + 3072;
  const std::size_t classes = variant == CifarVariant::C10 ? 10 : 100;

  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pixels;
  for (const auto& f : files) {
    auto buf = load_file(dir / f);
    if (buf.empty() || buf.size() % record != 0) {
      throw FormatError(f + ": size " + std::to_string(buf.size()) +
                        " is not a multiple of the record size " + std::to_string(record));
    }
    std::size_t n = buf.size() / record;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t* rec = buf.data() + i * record;
      labels.push_back(rec[label_bytes - 1]);  // fine label for C100
      pixels.insert(pixels.end(), rec + label_bytes, rec + record);
    }
  }

  Dataset d;
  d.name = (variant == CifarVariant::C10 ? "cifar10-" : "cifar100-") + split;
  d.classes = classes;
  d.images = Tensor({labels.size(), 3, 32, 32});
  float* dst = d.images.data();
  for (std::size_t i = 0; i < pixels.size(); ++i) dst[i] = float(pixels[i]) / 255.0f;
  d.labels.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw FormatError(d.name + ": label out of range");
    d.labels[i] = std::int32_t(labels[i]);
  }
  return d;
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar(const std::filesystem::path& dir, CifarVariant variant) {
  if (variant == CifarVariant::C10) {
    std::vector<std::string> train_files = {"data_batch_1.bin", "data_batch_2.bin",
                                            "data_batch_3.bin", "data_batch_4.bin",
                                            "data_batch_5.bin"};
    Dataset train = cifar_from_files(dir, train_files, variant, "train");
    Dataset test = cifar_from_files(dir, {"test_batch.bin"}, variant, "test");
    return {std::move(train), std::move(test)};
  }
  Dataset train = cifar_from_files(dir, {"train.bin"}, variant, "train");
  Dataset test = cifar_from_files(dir, {"test.bin"}, variant, "test");
  return {std::move(train), std::move(test)};
}

std::vector<std::size_t> FoldPlan::fold_indices(std::uint32_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::complement_indices(std::uint32_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] != fold) out.push_back(i);
  }
  return out;
}

FoldPlan make_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("make_folds: k must be >= 2");
  if (k > n) throw std::invalid_argument("make_folds: k exceeds sample count");
  detail::Rng rng(detail::stream_seed(seed, "folds"));
  auto order = detail::shuffled_indices(n, rng);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignments.resize(n);
  for (std::size_t i = 0; i < n; ++i) plan.assignments[order[i]] = std::uint32_t(i % k);
  return plan;
}

Dataset subset(const Dataset& d, std::size_t per_class, std::uint64_t seed) {
  if (per_class < 1) throw std::invalid_argument("subset: per_class must be >= 1");
  std::vector<std::vector<std::size_t>> by_class(d.classes);
  for (std::size_t i = 0; i < d.labels.size(); ++i) by_class[std::size_t(d.labels[i])].push_back(i);

  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < d.classes; ++c) {
    if (by_class[c].size() < per_class) {
      throw std::invalid_argument("subset: class " + std::to_string(c) + " has only " +
                                  std::to_string(by_class[c].size()) + " samples");
    }
    detail::Rng rng(detail::stream_seed(seed, "subset", c));
    auto order = detail::shuffled_indices(by_class[c].size(), rng);
    for (std::size_t i = 0; i < per_class; ++i) chosen.push_back(by_class[c][order[i]]);
  }
  detail::Rng rng(detail::stream_seed(seed, "subset-order"));
  auto order = detail::shuffled_indices(chosen.size(), rng);
  std::vector<std::size_t> final_idx(chosen.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) final_idx[i] = chosen[order[i]];
  return d.select(final_idx);
}

namespace {

std::uint8_t to_byte(float v) {
  long b = std::lroundf(v * 255.0f);
  return std::uint8_t(std::clamp(b, 0L, 255L));
}

}  // namespace

std::vector<std::uint8_t> serialize_idx_images(const Dataset& d) {
  std::vector<std::uint8_t> out;
  write_be32(out, kIdxImagesMagic);
  write_be32(out, std::uint32_t(d.images.dim(0)));
  write_be32(out, std::uint32_t(d.images.dim(2)));
  write_be32(out, std::uint32_t(d.images.dim(3)));
  out.reserve(out.size() + d.images.size());
  for (float v : d.images.values()) out.push_back(to_byte(v));
  return out;
}

std::vector<std::uint8_t> serialize_idx_labels(const Dataset& d) {
  std::vector<std::uint8_t> out;
  write_be32(out, kIdxLabelsMagic);
  write_be32(out, std::uint32_t(d.labels.size()));
  for (std::int32_t l : d.labels) out.push_back(std::uint8_t(l));
  return out;
}

std::vector<std::uint8_t> serialize_cifar10(const Dataset& d) {
  std::vector<std::uint8_t> out;
  const std::size_t sample = 3072;
  out.reserve(d.size() * (sample + 1));
  for (std::size_t i = 0; i < d.size(); ++i) {
    out.push_back(std::uint8_t(d.labels[i]));
    const float* px = d.images.data() + i * sample;
    for (std::size_t j = 0; j < sample; ++j) out.push_back(to_byte(px[j]));
  }
  return out;
}

void verify_data_manifest(const std::filesystem::path& data_dir,
                          const std::filesystem::path& manifest) {
  std::istringstream lines(read_text_file(manifest));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw FormatError(manifest.string() + ":" + std::to_string(lineno) +
                        ": expected 'filename,sha256'");
    }
    std::string file = line.substr(0, comma);
    std::string want = line.substr(comma + 1);
    while (!want.empty() && want.front() == ' ') want.erase(want.begin());
    std::string got = sha256_file(data_dir / file);
    if (got != want) {
      throw FormatError("manifest mismatch for " + file + ": expected " + want + ", got " + got);
    }
  }
}

}  // namespace tslab
