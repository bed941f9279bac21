#pragma once

#include <span>
#include <string>
#include <vector>

#include "tslab/activation.hpp"
#include "tslab/dataset.hpp"
#include "tslab/training.hpp"

namespace tslab {

// Explicit value lists (the tested points are named, not stepped); every
// point must satisfy the experimental ranges.
struct GridSpec {
  std::vector<double> alphas{0.0};
  std::vector<double> betas{0.0};
  std::vector<double> gammas{1.0};
  std::vector<double> deltas{0.0};  // subset of {0, 1}
  TrainConfig base;                 // activation is replaced per grid point
  std::vector<std::uint64_t> seeds{1, 2, 3};

  void validate() const;
};

// Cartesian product in lexicographic (alpha, beta, gamma, delta) order with
// duplicates removed. Out-of-range values raise std::invalid_argument.
std::vector<Hyperparams> enumerate_grid(const GridSpec& g);

struct LeaderboardRow {
  Hyperparams params{0.0, 0.0, 1.0, 0.0};
  std::size_t seed_count = 0;  // successful seeds contributing to the means
  std::size_t failed_count = 0;
  double mean_top1 = 0.0;
  double std_top1 = 0.0;
  double mean_topk = 0.0;
};

// Rows sorted by mean top-1 descending, ties broken lexicographically by
// (alpha, beta, gamma, delta), so ordering is total.
struct Leaderboard {
  std::vector<LeaderboardRow> rows;
  int topk = 3;
  std::string to_csv() const;  // alpha,beta,gamma,delta,seeds,mean_top1,std_top1,mean_top3
};

// Trains every grid point with every seed under the shared-seed fairness
// contract. All n*s trials are appended to trial_log (failures flagged);
// failed trials are excluded from the means. jobs > 1 runs whole trials in
// parallel; otherwise each trial may use all cores internally.
Leaderboard run_search(const GridSpec& g, const Dataset& train, const Dataset& test,
                       std::vector<TrialResult>* trial_log = nullptr, int jobs = 1);

// Same harness over arbitrary activation specs (family members or baselines).
struct SpecSummaryRow {
  ActivationSpec spec;
  std::size_t seed_count = 0;
  std::size_t failed_count = 0;
  double mean_top1 = 0.0;
  double std_top1 = 0.0;
  double mean_topk = 0.0;
  double first_train_loss = 0.0;
  double final_train_loss = 0.0;
};

struct SpecLeaderboard {
  std::vector<SpecSummaryRow> rows;
  int topk = 3;
  std::string to_csv() const;  // spec,seeds,mean_top1,std_top1,mean_top3,...
};

SpecLeaderboard run_spec_trials(std::span<const ActivationSpec> specs, const TrainConfig& base,
                                const Dataset& train, const Dataset& test,
                                std::span<const std::uint64_t> seeds,
                                std::vector<TrialResult>* trial_log = nullptr, int jobs = 1);

// One mean-top-1 measurement of a spec under a (model, dataset) experiment.
struct ExperimentResult {
  std::string spec;
  std::string model;
  std::string dataset;
  double top1 = 0.0;
};

struct WinTieLoss {
  int win = 0;
  int tie = 0;
  int loss = 0;
};

struct IncompleteDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CompareMatrix {
  std::vector<ActivationSpec> candidates;
  std::vector<ActivationSpec> baselines;
  std::vector<std::vector<WinTieLoss>> cells;  // [candidate][baseline]
  std::size_t experiments = 0;                 // (model, dataset) pairs counted
  double tie_tolerance = 0.005;
  std::string to_csv() const;
};

// Counts, per candidate/baseline pair and over every (model, dataset)
// experiment present in results, how often the candidate mean top-1 is
// greater / equal within tie_tolerance / smaller. A missing (spec, model,
// dataset) cell raises IncompleteDataError naming every absent run.
CompareMatrix compare_baselines(std::span<const ActivationSpec> candidates,
                                std::span<const ActivationSpec> baselines,
                                std::span<const ExperimentResult> results,
                                double tie_tolerance = 0.005);

}  // namespace tslab
