#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tslab/activation.hpp"
#include "tslab/dataset.hpp"
#include "tslab/network.hpp"
#include "tslab/tensor.hpp"

namespace tslab {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.0;
  friend bool operator==(const SgdConfig&, const SgdConfig&) = default;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

using OptimizerConfig = std::variant<SgdConfig, AdamConfig>;

struct TrainConfig {
  std::string topology = "cnn5";
  ActivationSpec activation = ActivationSpec::relu();
  OptimizerConfig optimizer = AdamConfig{};
  double weight_decay = 0.0;
  int epochs = 1;
  int batch_size = 128;
  std::uint64_t seed = 0;
  std::string dataset = "mnist";
  int topk = 3;

  void validate() const;
  // Sorted key=value lines; every field appears, so nothing about a run is
  // implicit. digest() is the SHA-256 of this text.
  std::string canonical_text() const;
  std::string digest() const;
};

struct TrialResult {
  std::string config_digest;
  std::uint64_t seed = 0;
  double top1 = 0.0;                 // final test top-1, percent
  std::map<int, double> topk;        // k -> percent
  double final_train_loss = 0.0;
  double final_test_loss = 0.0;
  std::vector<double> train_loss_curve;
  std::vector<double> test_loss_curve;
  std::vector<double> test_top1_curve;
  double wall_seconds = 0.0;
  bool failed = false;
  int failed_epoch = -1;
  std::string note;

  std::string to_jsonl() const;  // one JSON object, no trailing newline
  static TrialResult from_jsonl(std::string_view line);
};

// Mean softmax cross-entropy over the batch (log-sum-exp stabilized) and its
// gradient (softmax - onehot) / B.
std::pair<double, Tensor> cross_entropy_with_grad(const Tensor& logits,
                                                  std::span<const std::int32_t> labels);

// Percent of rows whose label is among the k largest logits; equal logits are
// ranked by lower class index first.
double top_k_accuracy(const Tensor& logits, std::span<const std::int32_t> labels, int k);

struct AdamState {
  std::vector<Tensor> m, v;
};
AdamState make_adam_state(std::span<const Tensor* const> params);

// Bias-corrected Adam with decoupled weight decay: every parameter is scaled
// by (1 - lr*wd) before the Adam delta is applied.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state, std::int64_t t, const AdamConfig& cfg, double weight_decay);

struct SgdState {
  std::vector<Tensor> velocity;
};
SgdState make_sgd_state(std::span<const Tensor* const> params);
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
              SgdState& state, const SgdConfig& cfg, double weight_decay);

// The seeded batch order for an epoch; shared by every trial with the same
// (n, epoch, seed) regardless of activation.
std::vector<std::size_t> epoch_order(std::size_t n, int epoch, std::uint64_t seed);

// Deterministic given cfg.seed for any thread count. A non-finite loss marks
// the trial failed instead of throwing.
TrialResult train(const TrainConfig& cfg, const Dataset& train_data, const Dataset& test_data,
                  int threads = 0);

struct CrossValidation {
  double mean = 0.0;    // held-out top-1 mean, percent
  double stddev = 0.0;  // population standard deviation
  std::vector<TrialResult> per_fold;
  std::vector<std::size_t> failed_folds;
};

CrossValidation cross_validate(const TrainConfig& cfg, const Dataset& data, const FoldPlan& plan,
                               int threads = 0);

}  // namespace tslab
