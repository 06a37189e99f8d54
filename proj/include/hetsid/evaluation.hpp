#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "hetsid/derivatives.hpp"
#include "hetsid/dictionary.hpp"
#include "hetsid/simulator.hpp"
#include "hetsid/solver.hpp"

namespace hetsid {

// Relative root-mean-square error ||estimate - truth|| / ||truth||.
double rnmse(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth);

struct SupportRecovery {
  double precision = 0;  // |est ∩ true| / |est|, 0 when est is empty
  double recall = 0;     // |est ∩ true| / |true|, 0 when true is empty
};

SupportRecovery support_recovery(const std::vector<int>& estimated,
                                 const std::vector<int>& truth);

enum class SweepAlgorithm { group_lasso, full };

std::string to_string(SweepAlgorithm a);

// Benchmark over a grid of (experiment count C, samples per experiment M):
// per repeat, synthesize a dataset, estimate derivatives, build dictionaries,
// and identify every state's dynamics with each algorithm; score the stacked
// weights against the generating parameters.
struct SweepConfig {
  std::vector<int> C_grid{1, 2, 4, 6, 8, 10};
  std::vector<int> M_grid{10, 20, 30, 40, 50};
  int repeats = 20;
  std::vector<SweepAlgorithm> algorithms{SweepAlgorithm::group_lasso, SweepAlgorithm::full};

  GenerationConfig generation;  // C and t_end are overridden per cell
  DifferenceSpec difference;
  DictionarySpec dictionary;
  SolverOptions solver;
  double group_lasso_lambda = 40.0;

  uint64_t seed = 0;
  int threads = 0;                // 0 = hardware concurrency
  double invalid_fraction = 0.2;  // cell invalid when more runs fail
};

// The calibrated benchmark configuration: dense early-transient sampling
// (interval 0.01 so the k = 1 difference stencil resolves the fast initial
// dynamics), parameter spread on the production/leak/degradation rates only
// (Hill thresholds and exponents shared), noise-free measurements.
SweepConfig default_sweep_config();

struct SweepRunRecord {
  SweepAlgorithm algorithm = SweepAlgorithm::full;
  int C = 0;
  int M = 0;
  int repeat = 0;  // 0-based
  int state = 0;   // 0-based; written 1-based
  double rnmse = 0;
  double precision = 0;
  double recall = 0;
  bool failed = false;
  std::string error;  // diagnostic only, not part of the CSV
};

struct SweepCellStats {
  SweepAlgorithm algorithm = SweepAlgorithm::full;
  int C = 0;
  int M = 0;
  int runs = 0;
  int failed = 0;
  double fail_fraction = 0;
  double mean_rnmse = 0;  // over non-failed runs; NaN when all failed
  double median_rnmse = 0;
  double mean_precision = 0;
  double mean_recall = 0;
  bool valid = true;
};

struct SweepReport {
  std::vector<SweepRunRecord> records;
  std::vector<SweepCellStats> cells;
  int invalid_cells = 0;
};

// Runs the sweep. Tasks (one per cell x repeat) are distributed over a small
// thread pool; records land in preassigned slots and every task derives its
// own seed from the config seed and task index, so results are byte-identical
// across thread counts. progress, when set, is called after each finished
// task with (done, total).
SweepReport run_sweep(const SweepConfig& config,
                      const std::function<void(int, int)>& progress = nullptr);

// CSV with header algorithm,C,M,repeat,state,rnmse,precision,recall,failed;
// metrics of failed runs are written as nan, repeat and state are 1-based.
void write_sweep_csv(const std::vector<SweepRunRecord>& records, const std::string& path);

// Per-cell aggregate statistics plus the grid definition, as JSON.
void write_sweep_summary_json(const SweepReport& report, const SweepConfig& config,
                              const std::string& path);

// Mean-RNMSE heatmap for one algorithm: one row per M, one column per C.
void write_heatmap_csv(const SweepReport& report, SweepAlgorithm algorithm,
                       const std::string& path);

}  // namespace hetsid
