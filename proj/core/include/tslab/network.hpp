#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tslab/activation.hpp"
#include "tslab/tensor.hpp"

namespace tslab {

enum class LayerKind : std::uint8_t {
  Dense = 0,
  Conv2D = 1,
  MaxPool2D = 2,
  Flatten = 3,
  Activation = 4,
  Dropout = 5,
};

std::string_view layer_kind_name(LayerKind kind);

// Convolutions are valid-padding stride-1 square kernels; pooling is fixed
// 2x2 window, stride 2.
struct Layer {
  LayerKind kind = LayerKind::Flatten;

  std::size_t in_features = 0, out_features = 0;       // Dense
  std::size_t in_channels = 0, out_channels = 0, kernel = 0;  // Conv2D
  ActivationSpec act;                                  // Activation
  double rate = 0.0;                                   // Dropout

  Tensor weight;  // Dense: [out,in]; Conv2D: [out_c,in_c,k,k]
  Tensor bias;    // [out] / [out_c]

  static Layer dense(std::size_t in, std::size_t out);
  static Layer conv2d(std::size_t in_c, std::size_t out_c, std::size_t k);
  static Layer maxpool2();
  static Layer flatten();
  static Layer activation(const ActivationSpec& spec);
  static Layer dropout(double rate);

  bool has_params() const { return kind == LayerKind::Dense || kind == LayerKind::Conv2D; }
};

struct Network {
  std::vector<Layer> layers;
  std::vector<std::size_t> input_shape;  // per-sample shape, e.g. [C,H,W]
  std::size_t classes = 0;

  // Per-layer output shapes (per sample). Throws std::invalid_argument when
  // consecutive shapes do not chain or the final length != classes.
  std::vector<std::vector<std::size_t>> layer_output_shapes() const;
  void validate() const { (void)layer_output_shapes(); }
  std::size_t param_count() const;
};

// Registry of named topologies ("cnn5", "mlp2"); the activation is injected
// at every Activation layer.
Network make_network(const std::string& topology_id, const std::vector<std::size_t>& input_shape,
                     std::size_t classes, const ActivationSpec& act);
std::vector<std::string> topology_ids();

// Deterministic He (fan-in) init: same seed gives bit-identical parameters.
// Consumes no randomness from the activation choice.
void init_params(Network& net, std::uint64_t seed);

struct ForwardCache {
  std::vector<Tensor> inputs;                           // input seen by each layer
  std::vector<std::vector<std::uint32_t>> pool_argmax;  // per MaxPool layer
  std::vector<Tensor> dropout_masks;                    // per Dropout layer
  bool train_mode = false;
  std::size_t batch = 0;
};

struct ParamGrads {
  std::vector<Tensor> weight;  // indexed like net.layers; empty when no params
  std::vector<Tensor> bias;
};

// batch shape must be [B] + input_shape. Dropout fires only in train mode and
// draws from dropout_seed, independent of thread count.
Tensor forward(const Network& net, const Tensor& batch, ForwardCache& cache, bool train_mode,
               std::uint64_t dropout_seed, int threads = 1);
Tensor forward(const Network& net, const Tensor& batch, int threads = 1);

ParamGrads backward(const Network& net, const ForwardCache& cache, const Tensor& loss_grad,
                    int threads = 1);

// Versioned little-endian parameter checkpoint:
// "TSNN" | u32 version | u32 layer count | per layer: u8 kind, tensors as
// (u8 ndim, u32 dims..., f32 data...). Loads verify kind and shapes against
// the receiving network.
void save_params(const Network& net, const std::filesystem::path& path);
void load_params(Network& net, const std::filesystem::path& path);

}  // namespace tslab
