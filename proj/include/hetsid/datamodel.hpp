#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

namespace hetsid {

// One sampled trajectory: uniformly resampled states (and optional inputs)
// of a single experiment, plus free-form provenance metadata.
struct TimeSeriesExperiment {
  int id = 0;               // experiment index c, 1-based
  Eigen::VectorXd times;    // strictly increasing sample instants
  Eigen::MatrixXd states;   // M x n_x
  Eigen::MatrixXd inputs;   // M x n_u (zero columns when absent)
  nlohmann::json meta;      // generation parameters, noise level, ...

  int samples() const { return static_cast<int>(times.size()); }
};

// C experiments of the same system under different conditions/parameters.
// All experiments share the state/input dimensions and the sample count M.
struct HeterogeneousDataset {
  std::vector<TimeSeriesExperiment> experiments;
  int n_x = 0;
  int n_u = 0;

  int C() const { return static_cast<int>(experiments.size()); }
};

struct ValidationIssue {
  int experiment_id = 0;  // 0 = dataset-level issue
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool ok() const { return issues.empty(); }
  std::string to_string() const;
};

ValidationReport validate_dataset(const HeterogeneousDataset& ds);

// Per-experiment regression targets for one state variable: the estimated
// derivative samples this state's row of the model is fit against.
struct RegressionTarget {
  int state_index = 0;                            // n, 0-based
  std::vector<Eigen::VectorXd> y_per_experiment;  // C vectors, each length M
};

enum class SignConstraint { free_sign, nonnegative, nonpositive };

struct ProblemLayout {
  int C = 0;  // experiments
  int M = 0;  // samples per experiment
  int N = 0;  // dictionary columns (blocks)
};

// Block-structured stacked regression y = A w.
//
// Block i of the stacked matrix is CM x C and block-diagonal: entry
// (c*M + m, column c) holds A^[c](m, i). The stacked weight vector orders
// block index slowest and experiment index fastest: w[i*C + c] is the weight
// of basis i in experiment c. Storage is structural (the per-experiment
// dictionaries and targets); the dense CM x NC matrix is materialized only
// for tests and small oracles.
struct StackedProblem {
  std::vector<Eigen::MatrixXd> A;  // C dictionaries, each M x N
  std::vector<Eigen::VectorXd> y;  // C targets, each length M
  std::vector<SignConstraint> sign_constraints;  // per block; empty = all free
  ProblemLayout layout;

  Eigen::VectorXd stacked_y() const;
  Eigen::MatrixXd dense_stacked_A() const;
  Eigen::VectorXd multiply(const Eigen::VectorXd& w) const;  // stacked A*w

  // w^[c]: weights of experiment c across all blocks (length N).
  Eigen::VectorXd experiment_weights(const Eigen::VectorXd& w, int c) const;
  // w_i: weights of block i across all experiments (length C).
  Eigen::VectorXd block_weights(const Eigen::VectorXd& w, int i) const;
  // Euclidean norms of all N blocks.
  Eigen::VectorXd block_norms(const Eigen::VectorXd& w) const;

  SignConstraint constraint(int block) const {
    return sign_constraints.empty() ? SignConstraint::free_sign : sign_constraints[block];
  }
};

StackedProblem stack_problem(const RegressionTarget& target,
                             const std::vector<Eigen::MatrixXd>& dictionaries,
                             std::vector<SignConstraint> sign_constraints = {});

// Alternative formulation with a single weight vector shared across all
// experiments: targets and dictionaries are concatenated vertically.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> concatenate_problem(
    const RegressionTarget& target, const std::vector<Eigen::MatrixXd>& dictionaries);

// Disk format: one CSV per experiment with header t,x1,...,xn_x[,u1,...],
// plus a JSON manifest listing the files, dimensions and metadata.
// Returns the manifest path.
std::string write_dataset(const HeterogeneousDataset& ds, const std::string& out_dir,
                          const std::string& stem = "experiment");
HeterogeneousDataset read_dataset(const std::string& manifest_path);

}  // namespace hetsid
