#include "tslab/search.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "detail/parallel.hpp"
#include "tslab/io.hpp"

namespace tslab {

namespace {

std::vector<double> sorted_unique(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // population
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= double(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  out.stddev = std::sqrt(ss / double(xs.size()));
  return out;
}

}  // namespace

void GridSpec::validate() const {
  if (alphas.empty() || betas.empty() || gammas.empty() || deltas.empty()) {
    throw std::invalid_argument("grid lists must be nonempty");
  }
  if (seeds.empty()) throw std::invalid_argument("grid needs at least one seed");
  base.validate();
  (void)enumerate_grid(*this);
}

std::vector<Hyperparams> enumerate_grid(const GridSpec& g) {
  auto alphas = sorted_unique(g.alphas);
  auto betas = sorted_unique(g.betas);
  auto gammas = sorted_unique(g.gammas);
  auto deltas = sorted_unique(g.deltas);
  std::vector<Hyperparams> out;
  out.reserve(alphas.size() * betas.size() * gammas.size() * deltas.size());
  for (double a : alphas) {
    for (double b : betas) {
      for (double c : gammas) {
        for (double d : deltas) {
          out.push_back(Hyperparams::search_range(a, b, c, d));
        }
      }
    }
  }
  return out;
}

std::string Leaderboard::to_csv() const {
  std::string csv = "alpha,beta,gamma,delta,seeds,mean_top1,std_top1,mean_top" +
                    std::to_string(topk) + "\n";
  for (const auto& r : rows) {
    csv += format_double(r.params.alpha) + "," + format_double(r.params.beta) + "," +
           format_double(r.params.gamma) + "," + format_double(r.params.delta) + "," +
           std::to_string(r.seed_count) + "," + format_double(r.mean_top1) + "," +
           format_double(r.std_top1) + "," + format_double(r.mean_topk) + "\n";
  }
  return csv;
}

std::string SpecLeaderboard::to_csv() const {
  std::string csv = "spec,seeds,mean_top1,std_top1,mean_top" + std::to_string(topk) +
                    ",first_train_loss,final_train_loss\n";
  for (const auto& r : rows) {
    csv += r.spec.to_string() + "," + std::to_string(r.seed_count) + "," +
           format_double(r.mean_top1) + "," + format_double(r.std_top1) + "," +
           format_double(r.mean_topk) + "," + format_double(r.first_train_loss) + "," +
           format_double(r.final_train_loss) + "\n";
  }
  return csv;
}

namespace {

// Runs |specs| x |seeds| trials; trial results land in fixed slots so the
// outcome is independent of scheduling.
std::vector<TrialResult> run_trials(std::span<const ActivationSpec> specs,
                                    const TrainConfig& base, const Dataset& train,
                                    const Dataset& test, std::span<const std::uint64_t> seeds,
                                    int jobs) {
  const std::size_t total = specs.size() * seeds.size();
  std::vector<TrialResult> results(total);
  const int trial_threads = jobs > 1 ? 1 : 0;
  detail::run_chunked(total, jobs, [&](std::size_t t) {
    TrainConfig cfg = base;
    cfg.activation = specs[t / seeds.size()];
    cfg.seed = seeds[t % seeds.size()];
    results[t] = tslab::train(cfg, train, test, trial_threads);
  });
  return results;
}

}  // namespace

Leaderboard run_search(const GridSpec& g, const Dataset& train, const Dataset& test,
                       std::vector<TrialResult>* trial_log, int jobs) {
  g.validate();
  auto points = enumerate_grid(g);
  std::vector<ActivationSpec> specs;
  specs.reserve(points.size());
  for (const auto& h : points) specs.push_back(ActivationSpec::family(h));

  auto results = run_trials(specs, g.base, train, test, g.seeds, jobs);
  if (trial_log) trial_log->insert(trial_log->end(), results.begin(), results.end());

  Leaderboard board;
  board.topk = g.base.topk;
  for (std::size_t p = 0; p < points.size(); ++p) {
    LeaderboardRow row;
    row.params = points[p];
    std::vector<double> top1s, topks;
    for (std::size_t s = 0; s < g.seeds.size(); ++s) {
      const TrialResult& r = results[p * g.seeds.size() + s];
      if (r.failed) {
        ++row.failed_count;
        continue;
      }
      top1s.push_back(r.top1);
      topks.push_back(r.topk.at(g.base.topk));
    }
    row.seed_count = top1s.size();
    auto ms = mean_std(top1s);
    row.mean_top1 = ms.mean;
    row.std_top1 = ms.stddev;
    row.mean_topk = mean_std(topks).mean;
    board.rows.push_back(row);
  }
  std::sort(board.rows.begin(), board.rows.end(), [](const auto& a, const auto& b) {
    if (a.mean_top1 != b.mean_top1) return a.mean_top1 > b.mean_top1;
    return a.params < b.params;
  });
  return board;
}

SpecLeaderboard run_spec_trials(std::span<const ActivationSpec> specs, const TrainConfig& base,
                                const Dataset& train, const Dataset& test,
                                std::span<const std::uint64_t> seeds,
                                std::vector<TrialResult>* trial_log, int jobs) {
  base.validate();
  if (specs.empty()) throw std::invalid_argument("run_spec_trials: no specs");
  if (seeds.empty()) throw std::invalid_argument("run_spec_trials: no seeds");

  auto results = run_trials(specs, base, train, test, seeds, jobs);
  if (trial_log) trial_log->insert(trial_log->end(), results.begin(), results.end());

  SpecLeaderboard board;
  board.topk = base.topk;
  for (std::size_t p = 0; p < specs.size(); ++p) {
    SpecSummaryRow row;
    row.spec = specs[p];
    std::vector<double> top1s, topks, first_losses, final_losses;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const TrialResult& r = results[p * seeds.size() + s];
      if (r.failed) {
        ++row.failed_count;
        continue;
      }
      top1s.push_back(r.top1);
      topks.push_back(r.topk.at(base.topk));
      first_losses.push_back(r.train_loss_curve.front());
      final_losses.push_back(r.train_loss_curve.back());
    }
    row.seed_count = top1s.size();
    auto ms = mean_std(top1s);
    row.mean_top1 = ms.mean;
    row.std_top1 = ms.stddev;
    row.mean_topk = mean_std(topks).mean;
    row.first_train_loss = mean_std(first_losses).mean;
    row.final_train_loss = mean_std(final_losses).mean;
    board.rows.push_back(row);
  }
  std::sort(board.rows.begin(), board.rows.end(), [](const auto& a, const auto& b) {
    if (a.mean_top1 != b.mean_top1) return a.mean_top1 > b.mean_top1;
    return a.spec.to_string() < b.spec.to_string();
  });
  return board;
}

std::string CompareMatrix::to_csv() const {
  std::string csv = "baseline";
  for (const auto& b : baselines) csv += "," + b.to_string();
  csv += "\n";
  static constexpr const char* kRel[3] = {" > baseline", " = baseline", " < baseline"};
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    for (int rel = 0; rel < 3; ++rel) {
      csv += candidates[c].to_string() + kRel[rel];
      for (std::size_t b = 0; b < baselines.size(); ++b) {
        const WinTieLoss& wtl = cells[c][b];
        int v = rel == 0 ? wtl.win : rel == 1 ? wtl.tie : wtl.loss;
        csv += "," + std::to_string(v);
      }
      csv += "\n";
    }
  }
  return csv;
}

CompareMatrix compare_baselines(std::span<const ActivationSpec> candidates,
                                std::span<const ActivationSpec> baselines,
                                std::span<const ExperimentResult> results,
                                double tie_tolerance) {
  if (candidates.empty() || baselines.empty()) {
    throw std::invalid_argument("compare_baselines: empty spec list");
  }

  // (model, dataset) -> spec -> mean top1 (duplicates averaged).
  std::set<std::pair<std::string, std::string>> experiments;
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::pair<double, int>>>
      table;
  for (const auto& r : results) {
    auto key = std::make_pair(r.model, r.dataset);
    experiments.insert(key);
    auto& slot = table[key][r.spec];
    slot.first += r.top1;
    slot.second += 1;
  }

  std::vector<std::string> missing;
  auto lookup = [&](const ActivationSpec& spec, const std::pair<std::string, std::string>& key,
                    double& out) {
    auto it = table[key].find(spec.to_string());
    if (it == table[key].end()) {
      missing.push_back(spec.to_string() + " @ " + key.first + "/" + key.second);
      return false;
    }
    out = it->second.first / double(it->second.second);
    return true;
  };

  CompareMatrix m;
  m.candidates.assign(candidates.begin(), candidates.end());
  m.baselines.assign(baselines.begin(), baselines.end());
  m.tie_tolerance = tie_tolerance;
  m.experiments = experiments.size();
  m.cells.assign(candidates.size(), std::vector<WinTieLoss>(baselines.size()));

  for (std::size_t c = 0; c < candidates.size(); ++c) {
    for (std::size_t b = 0; b < baselines.size(); ++b) {
      for (const auto& key : experiments) {
        double cv = 0.0, bv = 0.0;
        bool have_c = lookup(candidates[c], key, cv);
        bool have_b = lookup(baselines[b], key, bv);
        if (!have_c || !have_b) continue;
        if (std::abs(cv - bv) <= tie_tolerance) {
          ++m.cells[c][b].tie;
        } else if (cv > bv) {
          ++m.cells[c][b].win;
        } else {
          ++m.cells[c][b].loss;
        }
      }
    }
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    std::string msg = "compare_baselines: missing results for:";
    for (const auto& s : missing) msg += "\n  " + s;
    throw IncompleteDataError(msg);
  }
  return m;
}

}  // namespace tslab
