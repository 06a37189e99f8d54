#include "hetsid/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#include "hetsid/common.hpp"

namespace hetsid {

namespace {
constexpr int kStates = 8;  // repressilator ring size
}

double rnmse(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth) {
  if (estimate.size() != truth.size()) throw std::invalid_argument("rnmse: size mismatch");
  const double denom = truth.norm();
  if (denom == 0.0) throw std::invalid_argument("rnmse: reference has zero norm");
  return (estimate - truth).norm() / denom;
}

SupportRecovery support_recovery(const std::vector<int>& estimated,
                                 const std::vector<int>& truth) {
  const std::set<int> est(estimated.begin(), estimated.end());
  const std::set<int> tru(truth.begin(), truth.end());
  int inter = 0;
  for (int i : est) inter += tru.count(i) ? 1 : 0;
  SupportRecovery out;
  out.precision = est.empty() ? 0.0 : static_cast<double>(inter) / est.size();
  out.recall = tru.empty() ? 0.0 : static_cast<double>(inter) / tru.size();
  return out;
}

std::string to_string(SweepAlgorithm a) {
  return a == SweepAlgorithm::group_lasso ? "group_lasso" : "full";
}

SweepConfig default_sweep_config() {
  SweepConfig cfg;
  cfg.generation.sample_interval = 0.01;
  cfg.generation.spread = 0.2;
  cfg.generation.sigma = 0.0;
  cfg.generation.spread_mask = {true, false, false, true, true};
  cfg.difference.k = 1;
  cfg.dictionary = default_repressilator_spec();
  cfg.group_lasso_lambda = 40.0;
  return cfg;
}

namespace {

RepressilatorParams params_from_meta(const nlohmann::json& meta) {
  RepressilatorParams out;
  const auto& arr = meta.at("params");
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 5; ++j) out.p(i, j) = arr.at(i).at(j).get<double>();
  return out;
}

void mark_failed(SweepRunRecord& rec, const std::string& why) {
  rec.failed = true;
  rec.error = why;
  rec.rnmse = std::numeric_limits<double>::quiet_NaN();
  rec.precision = std::numeric_limits<double>::quiet_NaN();
  rec.recall = std::numeric_limits<double>::quiet_NaN();
}

struct SweepContext {
  const SweepConfig* config = nullptr;
  std::vector<std::pair<int, int>> cells;  // (C, M)
  int n_alg = 0;
  std::vector<SweepRunRecord>* records = nullptr;
};

// One task = one (cell, repeat): a fresh dataset scored by every algorithm
// on all states. Record slots are preassigned so the layout is independent
// of scheduling.
void run_task(const SweepContext& ctx, int task_id) {
  const SweepConfig& config = *ctx.config;
  const int repeats = config.repeats;
  const int cell_index = task_id / repeats;
  const int repeat = task_id % repeats;
  const auto [C, M] = ctx.cells[cell_index];
  const int k = config.difference.k;
  const int N = config.dictionary.N();

  const size_t base = static_cast<size_t>(task_id) * ctx.n_alg * kStates;
  for (int a = 0; a < ctx.n_alg; ++a)
    for (int n = 0; n < kStates; ++n) {
      SweepRunRecord& rec = (*ctx.records)[base + static_cast<size_t>(a) * kStates + n];
      rec.algorithm = config.algorithms[a];
      rec.C = C;
      rec.M = M;
      rec.repeat = repeat;
      rec.state = n;
    }
  const auto fail_all = [&](const std::string& why) {
    for (int a = 0; a < ctx.n_alg; ++a)
      for (int n = 0; n < kStates; ++n)
        mark_failed((*ctx.records)[base + static_cast<size_t>(a) * kStates + n], why);
  };

  HeterogeneousDataset dataset;
  std::vector<DerivativeEstimate> estimates(C);
  std::vector<DictionaryMatrix> dictionaries(C);
  std::vector<RepressilatorParams> params(C);
  try {
    GenerationConfig g = config.generation;
    g.C = C;
    // M + 2k samples, so that trimming k rows per side leaves exactly M.
    g.t_end = (M + 2 * k - 1) * g.sample_interval;
    g.seed = splitmix64(config.seed + 0x9E3779B97F4A7C15ull * static_cast<uint64_t>(task_id + 1));
    dataset = generate_dataset(g);
    for (int c = 0; c < C; ++c) {
      const TimeSeriesExperiment& exp = dataset.experiments[c];
      estimates[c] = estimate_derivative(exp.times, exp.states, config.difference);
      dictionaries[c] = build_dictionary(exp, config.dictionary, estimates[c].row_indices);
      params[c] = params_from_meta(exp.meta);
    }
  } catch (const std::exception& e) {
    fail_all(e.what());
    return;
  }

  for (int n = 0; n < kStates; ++n) {
    StackedProblem problem;
    Eigen::VectorXd w_true(static_cast<Eigen::Index>(N) * C);
    std::vector<int> true_support;
    try {
      RegressionTarget target;
      target.state_index = n;
      target.y_per_experiment.reserve(C);
      for (int c = 0; c < C; ++c) target.y_per_experiment.push_back(estimates[c].values.col(n));
      problem = stack_problem(target, dictionaries);
      for (int c = 0; c < C; ++c) {
        const Eigen::VectorXd tw = true_weights(params[c], config.dictionary, n);
        for (int i = 0; i < N; ++i) w_true[static_cast<Eigen::Index>(i) * C + c] = tw[i];
      }
      for (int i = 0; i < N; ++i)
        if (w_true.segment(static_cast<Eigen::Index>(i) * C, C).norm() > 0.0)
          true_support.push_back(i);
    } catch (const std::exception& e) {
      for (int a = 0; a < ctx.n_alg; ++a)
        mark_failed((*ctx.records)[base + static_cast<size_t>(a) * kStates + n], e.what());
      continue;
    }

    for (int a = 0; a < ctx.n_alg; ++a) {
      SweepRunRecord& rec = (*ctx.records)[base + static_cast<size_t>(a) * kStates + n];
      try {
        IdentificationResult result =
            config.algorithms[a] == SweepAlgorithm::group_lasso
                ? group_lasso_baseline(problem, config.group_lasso_lambda, config.solver)
                : identify(problem, config.solver);
        rec.rnmse = rnmse(result.w, w_true);
        const SupportRecovery sr = support_recovery(result.support, true_support);
        rec.precision = sr.precision;
        rec.recall = sr.recall;
      } catch (const std::exception& e) {
        mark_failed(rec, e.what());
      }
    }
  }
}

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

SweepReport run_sweep(const SweepConfig& config, const std::function<void(int, int)>& progress) {
  if (config.C_grid.empty() || config.M_grid.empty())
    throw std::invalid_argument("run_sweep: empty grid");
  if (config.repeats < 1) throw std::invalid_argument("run_sweep: repeats must be >= 1");
  if (config.algorithms.empty()) throw std::invalid_argument("run_sweep: no algorithms");
  for (int C : config.C_grid)
    if (C < 1) throw std::invalid_argument("run_sweep: C must be >= 1");
  for (int M : config.M_grid)
    if (M < 1) throw std::invalid_argument("run_sweep: M must be >= 1");
  std::string gen_error;
  {
    GenerationConfig probe = config.generation;
    probe.C = config.C_grid.front();
    probe.t_end = config.generation.sample_interval;  // horizon is set per cell
    if (!probe.validate(&gen_error)) throw std::invalid_argument("run_sweep: " + gen_error);
  }

  SweepContext ctx;
  ctx.config = &config;
  for (int C : config.C_grid)
    for (int M : config.M_grid) ctx.cells.emplace_back(C, M);
  ctx.n_alg = static_cast<int>(config.algorithms.size());

  const int n_tasks = static_cast<int>(ctx.cells.size()) * config.repeats;
  SweepReport report;
  report.records.resize(static_cast<size_t>(n_tasks) * ctx.n_alg * kStates);
  ctx.records = &report.records;

  std::atomic<int> next{0};
  std::atomic<int> done{0};
  std::mutex progress_mutex;
  const auto worker = [&]() {
    while (true) {
      const int t = next.fetch_add(1);
      if (t >= n_tasks) break;
      run_task(ctx, t);
      const int d = done.fetch_add(1) + 1;
      if (progress) {
        std::lock_guard<std::mutex> lock(progress_mutex);
        progress(d, n_tasks);
      }
    }
  };

  int threads = config.threads > 0 ? config.threads
                                   : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, n_tasks));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads - 1);
    for (int t = 0; t + 1 < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
  }

  // Aggregate per (algorithm, C, M) cell.
  for (int a = 0; a < ctx.n_alg; ++a) {
    for (size_t cell = 0; cell < ctx.cells.size(); ++cell) {
      SweepCellStats stats;
      stats.algorithm = config.algorithms[a];
      stats.C = ctx.cells[cell].first;
      stats.M = ctx.cells[cell].second;
      std::vector<double> ok_rnmse;
      double prec_sum = 0, rec_sum = 0;
      for (int rep = 0; rep < config.repeats; ++rep) {
        const size_t task_id = cell * config.repeats + rep;
        const size_t slot = task_id * ctx.n_alg * kStates + static_cast<size_t>(a) * kStates;
        for (int n = 0; n < kStates; ++n) {
          const SweepRunRecord& rec = report.records[slot + n];
          ++stats.runs;
          if (rec.failed) {
            ++stats.failed;
          } else {
            ok_rnmse.push_back(rec.rnmse);
            prec_sum += rec.precision;
            rec_sum += rec.recall;
          }
        }
      }
      stats.fail_fraction = stats.runs ? static_cast<double>(stats.failed) / stats.runs : 0.0;
      if (!ok_rnmse.empty()) {
        double sum = 0;
        for (double v : ok_rnmse) sum += v;
        stats.mean_rnmse = sum / ok_rnmse.size();
        stats.median_rnmse = median_of(ok_rnmse);
        stats.mean_precision = prec_sum / ok_rnmse.size();
        stats.mean_recall = rec_sum / ok_rnmse.size();
      } else {
        stats.mean_rnmse = std::numeric_limits<double>::quiet_NaN();
        stats.median_rnmse = std::numeric_limits<double>::quiet_NaN();
        stats.mean_precision = std::numeric_limits<double>::quiet_NaN();
        stats.mean_recall = std::numeric_limits<double>::quiet_NaN();
      }
      stats.valid = stats.fail_fraction <= config.invalid_fraction;
      if (!stats.valid) ++report.invalid_cells;
      report.cells.push_back(stats);
    }
  }
  return report;
}

void write_sweep_csv(const std::vector<SweepRunRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_sweep_csv: cannot open " + path);
  out << "algorithm,C,M,repeat,state,rnmse,precision,recall,failed\n";
  for (const SweepRunRecord& rec : records) {
    out << to_string(rec.algorithm) << ',' << rec.C << ',' << rec.M << ',' << rec.repeat + 1
        << ',' << rec.state + 1 << ',' << format_double(rec.rnmse) << ','
        << format_double(rec.precision) << ',' << format_double(rec.recall) << ','
        << (rec.failed ? 1 : 0) << '\n';
  }
  if (!out) throw std::runtime_error("write_sweep_csv: write failed for " + path);
}

void write_sweep_summary_json(const SweepReport& report, const SweepConfig& config,
                              const std::string& path) {
  nlohmann::json j;
  j["grid"]["C"] = config.C_grid;
  j["grid"]["M"] = config.M_grid;
  j["repeats"] = config.repeats;
  j["seed"] = config.seed;
  j["group_lasso_lambda"] = config.group_lasso_lambda;
  j["difference_k"] = config.difference.k;
  j["generation"]["sample_interval"] = config.generation.sample_interval;
  j["generation"]["spread"] = config.generation.spread;
  j["generation"]["sigma"] = config.generation.sigma;
  j["generation"]["rk_tol"] = config.generation.rk_tol;
  j["generation"]["spread_mask"] = config.generation.spread_mask;
  j["invalid_cells"] = report.invalid_cells;
  j["cells"] = nlohmann::json::array();
  for (const SweepCellStats& s : report.cells) {
    nlohmann::json c;
    c["algorithm"] = to_string(s.algorithm);
    c["C"] = s.C;
    c["M"] = s.M;
    c["runs"] = s.runs;
    c["failed"] = s.failed;
    c["fail_fraction"] = s.fail_fraction;
    c["mean_rnmse"] = s.mean_rnmse;
    c["median_rnmse"] = s.median_rnmse;
    c["mean_precision"] = s.mean_precision;
    c["mean_recall"] = s.mean_recall;
    c["valid"] = s.valid;
    j["cells"].push_back(std::move(c));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_sweep_summary_json: cannot open " + path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write_sweep_summary_json: write failed for " + path);
}

void write_heatmap_csv(const SweepReport& report, SweepAlgorithm algorithm,
                       const std::string& path) {
  std::vector<int> Cs, Ms;
  for (const SweepCellStats& s : report.cells) {
    if (s.algorithm != algorithm) continue;
    if (std::find(Cs.begin(), Cs.end(), s.C) == Cs.end()) Cs.push_back(s.C);
    if (std::find(Ms.begin(), Ms.end(), s.M) == Ms.end()) Ms.push_back(s.M);
  }
  std::sort(Cs.begin(), Cs.end());
  std::sort(Ms.begin(), Ms.end());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_heatmap_csv: cannot open " + path);
  out << "M";
  for (int C : Cs) out << ",C=" << C;
  out << '\n';
  for (int M : Ms) {
    out << M;
    for (int C : Cs) {
      double value = std::numeric_limits<double>::quiet_NaN();
      for (const SweepCellStats& s : report.cells)
        if (s.algorithm == algorithm && s.C == C && s.M == M) value = s.mean_rnmse;
      out << ',' << format_double(value);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write_heatmap_csv: write failed for " + path);
}

}  // namespace hetsid
