#pragma once

#include <Eigen/Dense>
#include <vector>

#include "hetsid/datamodel.hpp"

namespace hetsid {

// Noise precision S of the stacked regression, in one of three structures:
//  - block_diagonal: one M x M block per experiment (noise independent
//    across experiments); the workhorse structure.
//  - full: dense CM x CM, for desk-scale runs.
//  - fixed_identity_scaled: S = lambda^{-1} I, not re-estimated.
struct PrecisionMatrix {
  enum class Structure { block_diagonal, full, fixed_identity_scaled };

  Structure structure = Structure::block_diagonal;
  std::vector<Eigen::MatrixXd> blocks;  // block_diagonal: C matrices, M x M
  Eigen::MatrixXd dense;                // full: CM x CM
  double lambda = 1.0;                  // fixed_identity_scaled: S = I / lambda

  static PrecisionMatrix Identity(int C, int M);
  static PrecisionMatrix FixedIdentityScaled(double lambda);
  static PrecisionMatrix Full(Eigen::MatrixXd S);
  static PrecisionMatrix BlockDiagonal(std::vector<Eigen::MatrixXd> blocks);

  // S_c as a dense M x M block (requires block-diagonal-compatible structure).
  Eigen::MatrixXd block(int c, int M) const;
  // Materialized CM x CM matrix (tests and the dense full-structure path).
  Eigen::MatrixXd dense_matrix(int C, int M) const;
  double log_det(int C, int M) const;
};

struct AdmmOptions {
  double rho = 1.0;
  double eps_abs = 1e-6;
  double eps_rel = 1e-4;
  int max_iters = 5000;
  // Residual-balancing rho adaptation; off by default so runs with different
  // rho histories stay comparable and reproducible.
  bool adaptive_rho = false;
};

struct AdmmState {
  Eigen::VectorXd w;  // primal, length NC
  Eigen::VectorXd z;  // block-sparse split variable, length NC
  Eigen::VectorXd u;  // scaled dual, length NC
};

struct AdmmResult {
  Eigen::VectorXd w;
  Eigen::VectorXd z;
  Eigen::VectorXd u;
  int iterations = 0;
  double r_norm = 0;
  double s_norm = 0;
  double eps_primal = 0;
  double eps_dual = 0;
  bool converged = false;
};

// Vector soft-thresholding S_kappa(a) = (1 - kappa/||a||_2)_+ a, with
// S_kappa(0) = 0.
Eigen::VectorXd soft_threshold_vector(const Eigen::VectorXd& a, double kappa);

// Stopping rule: r <= eps_primal and s <= eps_dual with
//   eps_primal = sqrt(n) eps_abs + eps_rel * max(||w||_2, ||z||_2)
//   eps_dual   = sqrt(n) eps_abs + eps_rel * rho * ||u||_2,  n = NC.
bool admm_converged(double r_norm, double s_norm, const AdmmState& state,
                    const AdmmOptions& options);

// Minimize 0.5 (y - Aw)' S (y - Aw) + sum_i theta_i ||w_i||_2 over the
// stacked problem, subject to the problem's per-block sign constraints.
//
// Splitting theta_i w_i = z_i gives a w-update that solves the cached-
// factorization linear system (A'SA + rho Theta'Theta) w = A'Sy +
// rho Theta (z - u), a z-update by blockwise soft thresholding at 1/rho
// (projected onto the feasible orthant first when a sign constraint is
// active), and the scaled dual ascent u += Theta w - z. With theta = 0 the
// penalty vanishes and the generalized least-squares solution is returned
// directly. Non-convergence returns the best iterate with its residuals.
AdmmResult admm_group_lasso(const StackedProblem& problem, const PrecisionMatrix& S,
                            const Eigen::VectorXd& theta, const AdmmOptions& options);

}  // namespace hetsid
