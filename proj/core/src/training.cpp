#include "tslab/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "detail/rng.hpp"
#include "tslab/io.hpp"

namespace tslab {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (topk < 1) throw std::invalid_argument("topk must be >= 1");
  std::visit(
      [](const auto& opt) {
        if (!(opt.lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
      },
      optimizer);
}

std::string TrainConfig::canonical_text() const {
  std::string out;
  out += "activation=" + activation.to_string() + "\n";
  out += "batch_size=" + std::to_string(batch_size) + "\n";
  out += "dataset=" + dataset + "\n";
  out += "epochs=" + std::to_string(epochs) + "\n";
  if (const auto* adam = std::get_if<AdamConfig>(&optimizer)) {
    out += "optimizer=adam\n";
    out += "optimizer.beta1=" + format_double(adam->beta1) + "\n";
    out += "optimizer.beta2=" + format_double(adam->beta2) + "\n";
    out += "optimizer.eps=" + format_double(adam->eps) + "\n";
    out += "optimizer.lr=" + format_double(adam->lr) + "\n";
  } else {
    const auto& sgd = std::get<SgdConfig>(optimizer);
    out += "optimizer=sgd\n";
    out += "optimizer.lr=" + format_double(sgd.lr) + "\n";
    out += "optimizer.momentum=" + format_double(sgd.momentum) + "\n";
  }
  out += "seed=" + std::to_string(seed) + "\n";
  out += "topk=" + std::to_string(topk) + "\n";
  out += "topology=" + topology + "\n";
  out += "weight_decay=" + format_double(weight_decay) + "\n";
  return out;
}

std::string TrainConfig::digest() const { return sha256_hex(canonical_text()); }

std::string TrialResult::to_jsonl() const {
  json j;
  j["config_digest"] = config_digest;
  j["seed"] = seed;
  j["top1"] = top1;
  json jk = json::object();
  for (const auto& [k, v] : topk) jk[std::to_string(k)] = v;
  j["topk"] = jk;
  j["final_train_loss"] = final_train_loss;
  j["final_test_loss"] = final_test_loss;
  j["train_loss_curve"] = train_loss_curve;
  j["test_loss_curve"] = test_loss_curve;
  j["test_top1_curve"] = test_top1_curve;
  j["wall_seconds"] = wall_seconds;
  j["failed"] = failed;
  if (failed) {
    j["failed_epoch"] = failed_epoch;
    j["note"] = note;
  }
  return j.dump();
}

TrialResult TrialResult::from_jsonl(std::string_view line) {
  json j = json::parse(line);
  TrialResult r;
  r.config_digest = j.at("config_digest").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.top1 = j.at("top1").get<double>();
  for (const auto& [k, v] : j.at("topk").items()) r.topk[std::stoi(k)] = v.get<double>();
  r.final_train_loss = j.at("final_train_loss").get<double>();
  r.final_test_loss = j.at("final_test_loss").get<double>();
  r.train_loss_curve = j.at("train_loss_curve").get<std::vector<double>>();
  r.test_loss_curve = j.at("test_loss_curve").get<std::vector<double>>();
  r.test_top1_curve = j.at("test_top1_curve").get<std::vector<double>>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.failed = j.value("failed", false);
  r.failed_epoch = j.value("failed_epoch", -1);
  r.note = j.value("note", std::string());
  return r;
}

std::pair<double, Tensor> cross_entropy_with_grad(const Tensor& logits,
                                                  std::span<const std::int32_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw std::invalid_argument("cross_entropy: logits must be [B, C] with B = label count");
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  Tensor grad(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    std::int32_t y = labels[i];
    if (y < 0 || std::size_t(y) >= c) throw std::invalid_argument("cross_entropy: label out of range");
    const float* row = logits.data() + i * c;
    double maxv = row[0];
    for (std::size_t j = 1; j < c; ++j) maxv = std::max(maxv, double(row[j]));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(double(row[j]) - maxv);
    double lse = maxv + std::log(sum);
    total += lse - double(row[y]);
    float* grow = grad.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      double soft = std::exp(double(row[j]) - lse);
      grow[j] = float((soft - (std::size_t(y) == j ? 1.0 : 0.0)) / double(b));
    }
  }
  return {total / double(b), std::move(grad)};
}

double top_k_accuracy(const Tensor& logits, std::span<const std::int32_t> labels, int k) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw std::invalid_argument("top_k_accuracy: logits must be [B, C] with B = label count");
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (k < 1 || std::size_t(k) > c) throw std::invalid_argument("top_k_accuracy: k out of range");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const float* row = logits.data() + i * c;
    std::size_t y = std::size_t(labels[i]);
    std::size_t ranked_above = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (row[j] > row[y] || (row[j] == row[y] && j < y)) ++ranked_above;
    }
    if (ranked_above < std::size_t(k)) ++hits;
  }
  return 100.0 * double(hits) / double(b);
}

AdamState make_adam_state(std::span<const Tensor* const> params) {
  AdamState s;
  for (const Tensor* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state, std::int64_t t, const AdamConfig& cfg, double weight_decay) {
  if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient/state size mismatch");
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  const double shrink = 1.0 - cfg.lr * weight_decay;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    const Tensor& g = *grads[pi];
    Tensor& m = state.m[pi];
    Tensor& v = state.v[pi];
    if (!p.same_shape(g)) throw std::invalid_argument("adam_step: gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      double gi = double(g[i]);
      double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
      double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = float(mi);
      v[i] = float(vi);
      double mhat = mi / bc1;
      double vhat = vi / bc2;
      double value = double(p[i]) * shrink - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      p[i] = float(value);
    }
  }
}

SgdState make_sgd_state(std::span<const Tensor* const> params) {
  SgdState s;
  for (const Tensor* p : params) s.velocity.emplace_back(p->shape());
  return s;
}

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
              SgdState& state, const SgdConfig& cfg, double weight_decay) {
  if (params.size() != grads.size() || params.size() != state.velocity.size()) {
    throw std::invalid_argument("sgd_step: parameter/gradient/state size mismatch");
  }
  const double shrink = 1.0 - cfg.lr * weight_decay;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    const Tensor& g = *grads[pi];
    Tensor& vel = state.velocity[pi];
    if (!p.same_shape(g)) throw std::invalid_argument("sgd_step: gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      double vi = cfg.momentum * double(vel[i]) + double(g[i]);
      vel[i] = float(vi);
      p[i] = float(double(p[i]) * shrink - cfg.lr * vi);
    }
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, int epoch, std::uint64_t seed) {
  detail::Rng rng(detail::stream_seed(seed, "shuffle", std::uint64_t(epoch)));
  return detail::shuffled_indices(n, rng);
}

namespace {

Tensor gather_batch(const Dataset& d, std::span<const std::size_t> idx,
                    std::vector<std::int32_t>& labels) {
  std::vector<std::size_t> shape = d.images.shape();
  shape[0] = idx.size();
  Tensor out(shape);
  const std::size_t sample = d.images.size() / d.images.dim(0);
  labels.clear();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(out.data() + i * sample, d.images.data() + idx[i] * sample,
                sample * sizeof(float));
    labels.push_back(d.labels[idx[i]]);
  }
  return out;
}

struct EvalMetrics {
  double loss = 0.0;
  double top1 = 0.0;
  double topk = 0.0;
};

EvalMetrics evaluate(const Network& net, const Dataset& d, int k, int batch_size, int threads) {
  EvalMetrics m;
  const std::size_t n = d.size();
  std::vector<std::size_t> idx(static_cast<std::size_t>(batch_size));
  std::vector<std::int32_t> labels;
  double loss_sum = 0.0, top1_hits = 0.0, topk_hits = 0.0;
  for (std::size_t at = 0; at < n; at += std::size_t(batch_size)) {
    std::size_t take = std::min(std::size_t(batch_size), n - at);
    idx.resize(take);
    for (std::size_t i = 0; i < take; ++i) idx[i] = at + i;
    Tensor batch = gather_batch(d, idx, labels);
    Tensor logits = forward(net, batch, threads);
    auto [loss, grad] = cross_entropy_with_grad(logits, labels);
    (void)grad;
    loss_sum += loss * double(take);
    top1_hits += top_k_accuracy(logits, labels, 1) * double(take) / 100.0;
    topk_hits += top_k_accuracy(logits, labels, k) * double(take) / 100.0;
  }
  m.loss = loss_sum / double(n);
  m.top1 = 100.0 * top1_hits / double(n);
  m.topk = 100.0 * topk_hits / double(n);
  return m;
}

std::vector<Tensor*> collect_params(Network& net) {
  std::vector<Tensor*> params;
  for (auto& layer : net.layers) {
    if (!layer.has_params()) continue;
    params.push_back(&layer.weight);
    params.push_back(&layer.bias);
  }
  return params;
}

}  // namespace

TrialResult train(const TrainConfig& cfg, const Dataset& train_data, const Dataset& test_data,
                  int threads) {
  cfg.validate();
  train_data.validate();
  test_data.validate();
  if (train_data.classes != test_data.classes) {
    throw std::invalid_argument("train/test class counts differ");
  }

  auto t0 = std::chrono::steady_clock::now();

  TrialResult result;
  result.config_digest = cfg.digest();
  result.seed = cfg.seed;

  Network net = make_network(cfg.topology, train_data.sample_shape(), train_data.classes,
                             cfg.activation);
  init_params(net, cfg.seed);

  std::vector<Tensor*> params = collect_params(net);
  AdamState adam;
  SgdState sgd;
  const bool use_adam = std::holds_alternative<AdamConfig>(cfg.optimizer);
  if (use_adam) {
    adam = make_adam_state(params);
  } else {
    sgd = make_sgd_state(params);
  }

  const std::size_t n = train_data.size();
  std::int64_t step = 0;
  std::vector<std::int32_t> labels;

  for (int epoch = 0; epoch < cfg.epochs && !result.failed; ++epoch) {
    auto order = epoch_order(n, epoch, cfg.seed);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t at = 0; at < n; at += std::size_t(cfg.batch_size)) {
      std::size_t take = std::min(std::size_t(cfg.batch_size), n - at);
      std::span<const std::size_t> idx(order.data() + at, take);
      Tensor batch = gather_batch(train_data, idx, labels);

      ForwardCache cache;
      std::uint64_t step_seed = detail::stream_seed(cfg.seed, "step", std::uint64_t(step));
      Tensor logits = forward(net, batch, cache, true, step_seed, threads);
      auto [loss, loss_grad] = cross_entropy_with_grad(logits, labels);
      if (!std::isfinite(loss)) {
        result.failed = true;
        result.failed_epoch = epoch;
        result.note = "loss diverged (non-finite) at step " + std::to_string(step);
        break;
      }
      loss_sum += loss * double(take);
      seen += take;

      ParamGrads grads = backward(net, cache, loss_grad, threads);
      std::vector<const Tensor*> grad_ptrs;
      for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (!net.layers[i].has_params()) continue;
        grad_ptrs.push_back(&grads.weight[i]);
        grad_ptrs.push_back(&grads.bias[i]);
      }
      ++step;
      if (use_adam) {
        adam_step(params, grad_ptrs, adam, step, std::get<AdamConfig>(cfg.optimizer),
                  cfg.weight_decay);
      } else {
        sgd_step(params, grad_ptrs, sgd, std::get<SgdConfig>(cfg.optimizer), cfg.weight_decay);
      }
    }
    if (result.failed) break;

    result.train_loss_curve.push_back(loss_sum / double(seen));
    EvalMetrics test = evaluate(net, test_data, cfg.topk, cfg.batch_size, threads);
    result.test_loss_curve.push_back(test.loss);
    result.test_top1_curve.push_back(test.top1);
    result.top1 = test.top1;
    result.topk[1] = test.top1;
    result.topk[cfg.topk] = test.topk;
    result.final_train_loss = result.train_loss_curve.back();
    result.final_test_loss = test.loss;
  }

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

CrossValidation cross_validate(const TrainConfig& cfg, const Dataset& data, const FoldPlan& plan,
                               int threads) {
  if (plan.assignments.size() != data.size()) {
    throw std::invalid_argument("cross_validate: fold plan does not match dataset size");
  }
  CrossValidation cv;
  for (std::uint32_t fold = 0; fold < plan.k; ++fold) {
    auto held_out = plan.fold_indices(fold);
    auto kept = plan.complement_indices(fold);
    Dataset fold_train = data.select(kept);
    Dataset fold_test = data.select(held_out);
    TrialResult r = train(cfg, fold_train, fold_test, threads);
    if (r.failed) cv.failed_folds.push_back(fold);
    cv.per_fold.push_back(std::move(r));
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& r : cv.per_fold) {
    if (r.failed) continue;
    sum += r.top1;
    ++count;
  }
  if (count > 0) {
    cv.mean = sum / double(count);
    double ss = 0.0;
    for (const auto& r : cv.per_fold) {
      if (r.failed) continue;
      ss += (r.top1 - cv.mean) * (r.top1 - cv.mean);
    }
    cv.stddev = std::sqrt(ss / double(count));  // population standard deviation
  }
  return cv;
}

}  // namespace tslab
