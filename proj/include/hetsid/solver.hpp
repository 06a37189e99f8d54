#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "hetsid/admm.hpp"
#include "hetsid/datamodel.hpp"

namespace hetsid {

// Lambda-like structured symmetric matrix (CM x CM) sharing the noise
// model's block layout: per-experiment blocks, or one dense matrix.
struct StructuredCov {
  bool full = false;
  std::vector<Eigen::MatrixXd> blocks;  // per experiment, M x M
  Eigen::MatrixXd dense;                // CM x CM when full

  static StructuredCov Identity(bool full_structure, int C, int M);
  Eigen::MatrixXd dense_matrix(int C, int M) const;
};

struct SolverOptions {
  int k_max = 5;             // outer iterations
  AdmmOptions admm;          // inner weighted group-lasso solver
  double jitter = 1e-8;      // trace-scaled ridge for matrix inversions
  PrecisionMatrix::Structure S_structure = PrecisionMatrix::Structure::block_diagonal;
  double lambda = 1.0;       // scale for the fixed-identity-scaled structure
  double stop_tol = 1e-6;    // stop when the relative cost decrease falls below
  double support_threshold = 1e-6;  // support cut, relative to max block norm
  double prune_threshold = 1e-10;   // gamma_i <= this * max gamma is pruned

  // theta = sqrt(C alpha) is the penalty consistent with the gamma update
  // (the minimizer of ||w_i||^2/gamma + C gamma alpha); the linear variant
  // theta = C alpha is kept for comparison.
  enum class ThetaRule { sqrt_c_alpha, c_alpha };
  ThetaRule theta_rule = ThetaRule::sqrt_c_alpha;

  uint64_t seed = 0;  // reserved; identification itself is deterministic
};

// Current iterates of the outer loop, exposed for diagnostics and tests.
struct SolverState {
  Eigen::VectorXd w;      // length NC
  Eigen::VectorXd gamma;  // length N
  Eigen::VectorXd alpha;  // length N
  Eigen::VectorXd theta;  // length N
  PrecisionMatrix S;
  StructuredCov Lambda;
  std::vector<double> cost_history;
  std::vector<char> active;  // pruning mask (0 = permanently pruned)
};

struct IdentificationResult {
  Eigen::VectorXd w;          // length NC; pruned blocks are exactly zero
  Eigen::VectorXd gamma;      // length N
  std::vector<int> support;   // blocks with norm above the support threshold
  double final_cost = 0;
  int iterations = 0;
  std::vector<double> cost_history;
  PrecisionMatrix S;          // estimated noise precision (Pi = S^{-1})
  bool inner_converged = true;   // every inner ADMM call converged
  double inner_r_norm = 0;       // residuals of the worst non-converged call
  double inner_s_norm = 0;
};

// Marginal-likelihood cost
//   -log|S| + log|Gamma| + log|Gamma^{-1} + A'SA| + (y-Aw)'S(y-Aw)
//   + w'Gamma^{-1}w + sum_j p(gamma_j),  p = 1 (Student-t prior),
// evaluated in the cancellation-free form log|Gamma| + log|Gamma^{-1}+B| =
// log|I + Gamma^{1/2} B Gamma^{1/2}|. Blocks with gamma_i = 0 and w_i = 0
// contribute only p = 1; gamma_i = 0 with w_i != 0 yields +infinity.
double cost(const Eigen::VectorXd& w, const Eigen::VectorXd& gamma, const PrecisionMatrix& S,
            const StackedProblem& problem);

// Posterior moments m_w = Sigma_w A'Sy, Sigma_w = (A'SA + Gamma^{-1})^{-1},
// returned dense (NC and NC x NC). Blocks with gamma_i = 0 are treated as
// pruned (zero mean, zero covariance rows).
std::pair<Eigen::VectorXd, Eigen::MatrixXd> posterior_moments(const Eigen::VectorXd& gamma,
                                                              const PrecisionMatrix& S,
                                                              const StackedProblem& problem);

// Gradient coefficients of the log-determinant terms:
//   C alpha_i = sum over block i's stacked positions j of
//               [ 1/gamma_i - gamma_i^{-2} ((Gamma^{-1} + A'SA)^{-1})_{jj} ].
// Computed in the algebraically identical Woodbury form
//   alpha_i = (1/C) sum_c [B_c' (S_c^{-1} + B_c Gamma B_c')^{-1} B_c]_{ii},
// which is free of the small-gamma cancellation and nonnegative in floating
// point.
Eigen::VectorXd update_alpha(const Eigen::VectorXd& gamma, const PrecisionMatrix& S,
                             const StackedProblem& problem);

// Weighted group-lasso step (inner ADMM); returns the stacked minimizer of
// 0.5 (y-Aw)'S(y-Aw) + sum_i theta_i ||w_i||_2 under the sign constraints.
Eigen::VectorXd update_w(const Eigen::VectorXd& theta, const PrecisionMatrix& S,
                         const StackedProblem& problem, const AdmmOptions& options,
                         AdmmResult* diagnostics = nullptr);

// gamma_i = ||w_i||_2 / sqrt(C alpha_i); zero blocks get gamma_i = 0, and a
// block with alpha_i = 0 and w_i = 0 is additionally marked pruned. alpha_i
// = 0 with a nonzero block signals numerical breakdown.
Eigen::VectorXd update_gamma(const Eigen::VectorXd& w, const Eigen::VectorXd& alpha,
                             std::vector<char>* pruned_marks = nullptr);

// Lambda = A (Gamma^{-1} + A'SA)^{-1} A' over the unpruned blocks
// (gamma_i > 0), in S's structure.
StructuredCov update_Lambda(const Eigen::VectorXd& gamma, const PrecisionMatrix& S,
                            const StackedProblem& problem);

// S = (Y + Lambda + eps I)^{-1} with Y = (Aw - y)(Aw - y)' and the
// trace-scaled jitter eps = options.jitter * max(trace(Y + Lambda)/M, 1);
// restricted to the configured structure. Under fixed_identity_scaled the
// matrix lambda^{-1} I is returned unchanged. eps_out (one entry per block,
// or a single entry for full structure) reports the applied jitter.
PrecisionMatrix update_S(const Eigen::VectorXd& w, const StructuredCov& Lambda,
                         const StackedProblem& problem, const SolverOptions& options,
                         std::vector<double>* eps_out = nullptr);

// Outer loop: initialise theta_i = 1, alpha_i = theta_i/C, S = I, Lambda = I;
// per iteration run w-update, gamma-update (with pruning), Lambda-update (at
// the fresh gamma, so the following S-step minimizes a true majorizer and the
// cost stays monotone), S-update, alpha-update, theta-update; stop on k_max
// or when the relative cost decrease drops below stop_tol.
IdentificationResult identify(const StackedProblem& problem, const SolverOptions& options,
                              SolverState* final_state = nullptr);

// Group-lasso baseline: the first iteration of the full algorithm with the
// noise precision fixed to lambda^{-1} I and unit penalty weights.
IdentificationResult group_lasso_baseline(const StackedProblem& problem, double lambda,
                                          SolverOptions base = SolverOptions{});

}  // namespace hetsid
