#include "hetsid/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hetsid {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::vector<int> active_set(const VectorXd& gamma) {
  std::vector<int> act;
  act.reserve(gamma.size());
  for (int i = 0; i < gamma.size(); ++i) {
    if (gamma[i] < 0.0) throw std::invalid_argument("gamma must be nonnegative");
    if (gamma[i] > 0.0) act.push_back(i);
  }
  return act;
}

MatrixXd gather_columns(const MatrixXd& A, const std::vector<int>& cols) {
  MatrixXd out(A.rows(), static_cast<int>(cols.size()));
  for (int a = 0; a < static_cast<int>(cols.size()); ++a) out.col(a) = A.col(cols[a]);
  return out;
}

// Dense stacked matrix restricted to the given blocks: CM rows, one column
// per (block a, experiment c) pair at index a*C + c, matching w's ordering.
MatrixXd stacked_active_dense(const StackedProblem& problem, const std::vector<int>& act) {
  const int C = problem.layout.C, M = problem.layout.M;
  const int n_act = static_cast<int>(act.size());
  MatrixXd out = MatrixXd::Zero(C * M, n_act * C);
  for (int c = 0; c < C; ++c)
    for (int a = 0; a < n_act; ++a) out.block(c * M, a * C + c, M, 1) = problem.A[c].col(act[a]);
  return out;
}

double logdet_spd(const MatrixXd& X, const char* what) {
  Eigen::LLT<MatrixXd> llt(X);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(std::string("log-det factorization failed in ") + what);
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

MatrixXd solve_identity(const MatrixXd& X, const char* what) {
  Eigen::LDLT<MatrixXd> ldlt(X);
  if (ldlt.info() != Eigen::Success)
    throw std::runtime_error(std::string("factorization failed in ") + what);
  MatrixXd inv = ldlt.solve(MatrixXd::Identity(X.rows(), X.cols()));
  return 0.5 * (inv + inv.transpose());
}

void check_problem_sizes(const StackedProblem& problem) {
  const int C = problem.layout.C, M = problem.layout.M, N = problem.layout.N;
  if (C < 1 || M < 1 || N < 1) throw std::invalid_argument("empty stacked problem");
  if (static_cast<int>(problem.A.size()) != C || static_cast<int>(problem.y.size()) != C)
    throw std::invalid_argument("stacked problem: experiment count mismatch");
}

}  // namespace

StructuredCov StructuredCov::Identity(bool full_structure, int C, int M) {
  StructuredCov out;
  out.full = full_structure;
  if (full_structure) {
    out.dense = MatrixXd::Identity(C * M, C * M);
  } else {
    out.blocks.assign(C, MatrixXd::Identity(M, M));
  }
  return out;
}

MatrixXd StructuredCov::dense_matrix(int C, int M) const {
  if (full) return dense;
  MatrixXd out = MatrixXd::Zero(C * M, C * M);
  for (int c = 0; c < C; ++c) out.block(c * M, c * M, M, M) = blocks[c];
  return out;
}

double cost(const VectorXd& w, const VectorXd& gamma, const PrecisionMatrix& S,
            const StackedProblem& problem) {
  check_problem_sizes(problem);
  const int C = problem.layout.C, M = problem.layout.M, N = problem.layout.N;
  if (w.size() != static_cast<Eigen::Index>(N) * C || gamma.size() != N)
    throw std::invalid_argument("cost: w or gamma size mismatch");

  const std::vector<int> act = active_set(gamma);
  for (int i = 0; i < N; ++i) {
    if (gamma[i] == 0.0 && problem.block_weights(w, i).norm() > 0.0)
      return std::numeric_limits<double>::infinity();
  }

  double total = static_cast<double>(N);  // sum_j p(gamma_j) with p = 1
  total -= S.log_det(C, M);

  const int n_act = static_cast<int>(act.size());
  if (S.structure == PrecisionMatrix::Structure::full) {
    const MatrixXd Sd = S.dense_matrix(C, M);
    const VectorXd r = problem.multiply(w) - problem.stacked_y();
    total += r.dot(Sd * r);
    if (n_act > 0) {
      const MatrixXd Aact = stacked_active_dense(problem, act);
      VectorXd sq(n_act * C);
      for (int a = 0; a < n_act; ++a)
        for (int c = 0; c < C; ++c) sq[a * C + c] = std::sqrt(gamma[act[a]]);
      const MatrixXd T = Aact.transpose() * Sd * Aact;
      const MatrixXd inner = MatrixXd::Identity(n_act * C, n_act * C) +
                             sq.asDiagonal() * T * sq.asDiagonal();
      total += logdet_spd(inner, "cost (full)");
    }
  } else {
    VectorXd sq(n_act);
    for (int a = 0; a < n_act; ++a) sq[a] = std::sqrt(gamma[act[a]]);
    for (int c = 0; c < C; ++c) {
      const MatrixXd S_c = S.block(c, M);
      const VectorXd r_c = problem.A[c] * problem.experiment_weights(w, c) - problem.y[c];
      total += r_c.dot(S_c * r_c);
      if (n_act > 0) {
        const MatrixXd Bact = gather_columns(problem.A[c], act);
        const MatrixXd T = Bact.transpose() * S_c * Bact;
        const MatrixXd inner =
            MatrixXd::Identity(n_act, n_act) + sq.asDiagonal() * T * sq.asDiagonal();
        total += logdet_spd(inner, "cost (block)");
      }
    }
  }

  for (int i : act) total += problem.block_weights(w, i).squaredNorm() / gamma[i];
  return total;
}

std::pair<VectorXd, MatrixXd> posterior_moments(const VectorXd& gamma, const PrecisionMatrix& S,
                                                const StackedProblem& problem) {
  check_problem_sizes(problem);
  const int C = problem.layout.C, M = problem.layout.M, N = problem.layout.N;
  if (gamma.size() != N) throw std::invalid_argument("posterior_moments: gamma size mismatch");

  VectorXd m = VectorXd::Zero(static_cast<Eigen::Index>(N) * C);
  MatrixXd Sig = MatrixXd::Zero(N * C, N * C);
  const std::vector<int> act = active_set(gamma);
  const int n_act = static_cast<int>(act.size());
  if (n_act == 0) return {m, Sig};

  if (S.structure == PrecisionMatrix::Structure::full) {
    const MatrixXd Sd = S.dense_matrix(C, M);
    const MatrixXd Aact = stacked_active_dense(problem, act);
    MatrixXd T = Aact.transpose() * Sd * Aact;
    for (int a = 0; a < n_act; ++a)
      for (int c = 0; c < C; ++c) T(a * C + c, a * C + c) += 1.0 / gamma[act[a]];
    Eigen::LDLT<MatrixXd> ldlt(T);
    if (ldlt.info() != Eigen::Success)
      throw std::runtime_error("posterior_moments: factorization failed");
    MatrixXd Sig_act = ldlt.solve(MatrixXd::Identity(n_act * C, n_act * C));
    Sig_act = 0.5 * (Sig_act + Sig_act.transpose());
    const VectorXd m_act = Sig_act * (Aact.transpose() * (Sd * problem.stacked_y()));
    for (int a = 0; a < n_act; ++a)
      for (int c = 0; c < C; ++c) {
        m[act[a] * C + c] = m_act[a * C + c];
        for (int b = 0; b < n_act; ++b)
          for (int d = 0; d < C; ++d)
            Sig(act[a] * C + c, act[b] * C + d) = Sig_act(a * C + c, b * C + d);
      }
  } else {
    for (int c = 0; c < C; ++c) {
      const MatrixXd S_c = S.block(c, M);
      const MatrixXd Bact = gather_columns(problem.A[c], act);
      MatrixXd T = Bact.transpose() * S_c * Bact;
      for (int a = 0; a < n_act; ++a) T(a, a) += 1.0 / gamma[act[a]];
      Eigen::LDLT<MatrixXd> ldlt(T);
      if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("posterior_moments: factorization failed");
      MatrixXd Sig_c = ldlt.solve(MatrixXd::Identity(n_act, n_act));
      Sig_c = 0.5 * (Sig_c + Sig_c.transpose());
      const VectorXd m_c = Sig_c * (Bact.transpose() * (S_c * problem.y[c]));
      for (int a = 0; a < n_act; ++a) {
        m[act[a] * C + c] = m_c[a];
        for (int b = 0; b < n_act; ++b) Sig(act[a] * C + c, act[b] * C + c) = Sig_c(a, b);
      }
    }
  }
  return {m, Sig};
}

VectorXd update_alpha(const VectorXd& gamma, const PrecisionMatrix& S,
                      const StackedProblem& problem) {
  check_problem_sizes(problem);
  const int C = problem.layout.C, M = problem.layout.M, N = problem.layout.N;
  if (gamma.size() != N) throw std::invalid_argument("update_alpha: gamma size mismatch");

  const std::vector<int> act = active_set(gamma);
  const int n_act = static_cast<int>(act.size());
  VectorXd alpha = VectorXd::Zero(N);

  if (S.structure == PrecisionMatrix::Structure::full) {
    const MatrixXd Sd = S.dense_matrix(C, M);
    MatrixXd K = solve_identity(Sd, "update_alpha (S inverse)");
    if (n_act > 0) {
      const MatrixXd Aact = stacked_active_dense(problem, act);
      VectorXd g(n_act * C);
      for (int a = 0; a < n_act; ++a)
        for (int c = 0; c < C; ++c) g[a * C + c] = gamma[act[a]];
      K += Aact * g.asDiagonal() * Aact.transpose();
    }
    Eigen::LDLT<MatrixXd> ldlt(K);
    if (ldlt.info() != Eigen::Success)
      throw std::runtime_error("update_alpha: kernel factorization failed");
    // Full stacked dictionary, all N blocks.
    std::vector<int> all(N);
    for (int i = 0; i < N; ++i) all[i] = i;
    const MatrixXd Afull = stacked_active_dense(problem, all);
    const MatrixXd X = ldlt.solve(Afull);
    for (int i = 0; i < N; ++i)
      for (int c = 0; c < C; ++c) alpha[i] += Afull.col(i * C + c).dot(X.col(i * C + c));
  } else {
    VectorXd g(n_act);
    for (int a = 0; a < n_act; ++a) g[a] = gamma[act[a]];
    for (int c = 0; c < C; ++c) {
      const MatrixXd S_c = S.block(c, M);
      MatrixXd K = solve_identity(S_c, "update_alpha (S inverse)");
      if (n_act > 0) {
        const MatrixXd Bact = gather_columns(problem.A[c], act);
        K += Bact * g.asDiagonal() * Bact.transpose();
      }
      Eigen::LDLT<MatrixXd> ldlt(K);
      if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("update_alpha: kernel factorization failed");
      const MatrixXd X = ldlt.solve(problem.A[c]);
      for (int i = 0; i < N; ++i) alpha[i] += problem.A[c].col(i).dot(X.col(i));
    }
  }
  alpha /= static_cast<double>(C);
  return alpha.cwiseMax(0.0);  // clip roundoff negatives of a PSD quadratic form
}

VectorXd update_w(const VectorXd& theta, const PrecisionMatrix& S, const StackedProblem& problem,
                  const AdmmOptions& options, AdmmResult* diagnostics) {
  AdmmResult res = admm_group_lasso(problem, S, theta, options);
  if (diagnostics) *diagnostics = res;
  return res.w;
}

VectorXd update_gamma(const VectorXd& w, const VectorXd& alpha, std::vector<char>* pruned_marks) {
  const int N = static_cast<int>(alpha.size());
  if (N < 1 || w.size() % N != 0) throw std::invalid_argument("update_gamma: size mismatch");
  const int C = static_cast<int>(w.size()) / N;

  VectorXd gamma = VectorXd::Zero(N);
  if (pruned_marks) pruned_marks->assign(N, 0);
  for (int i = 0; i < N; ++i) {
    if (alpha[i] < 0.0) throw std::invalid_argument("update_gamma: alpha must be nonnegative");
    const double nw = w.segment(static_cast<Eigen::Index>(i) * C, C).norm();
    if (nw == 0.0) {
      gamma[i] = 0.0;
    } else if (alpha[i] == 0.0) {
      throw std::runtime_error(
          "update_gamma: alpha_i = 0 with a nonzero block (numerical breakdown)");
    } else {
      const double g = nw / std::sqrt(C * alpha[i]);
      gamma[i] = std::isfinite(g) ? g : 0.0;
    }
    if (pruned_marks && gamma[i] == 0.0) (*pruned_marks)[i] = 1;
  }
  return gamma;
}

StructuredCov update_Lambda(const VectorXd& gamma, const PrecisionMatrix& S,
                            const StackedProblem& problem) {
  check_problem_sizes(problem);
  const int C = problem.layout.C, M = problem.layout.M, N = problem.layout.N;
  if (gamma.size() != N) throw std::invalid_argument("update_Lambda: gamma size mismatch");

  const std::vector<int> act = active_set(gamma);
  const int n_act = static_cast<int>(act.size());
  StructuredCov L;
  L.full = (S.structure == PrecisionMatrix::Structure::full);

  if (L.full) {
    if (n_act == 0) {
      L.dense = MatrixXd::Zero(C * M, C * M);
      return L;
    }
    const MatrixXd Sd = S.dense_matrix(C, M);
    const MatrixXd Aact = stacked_active_dense(problem, act);
    MatrixXd T = Aact.transpose() * Sd * Aact;
    for (int a = 0; a < n_act; ++a)
      for (int c = 0; c < C; ++c) T(a * C + c, a * C + c) += 1.0 / gamma[act[a]];
    const MatrixXd Sig = solve_identity(T, "update_Lambda");
    MatrixXd Lam = Aact * Sig * Aact.transpose();
    L.dense = 0.5 * (Lam + Lam.transpose());
    return L;
  }

  L.blocks.resize(C);
  for (int c = 0; c < C; ++c) {
    if (n_act == 0) {
      L.blocks[c] = MatrixXd::Zero(M, M);
      continue;
    }
    const MatrixXd S_c = S.block(c, M);
    const MatrixXd Bact = gather_columns(problem.A[c], act);
    MatrixXd T = Bact.transpose() * S_c * Bact;
    for (int a = 0; a < n_act; ++a) T(a, a) += 1.0 / gamma[act[a]];
    const MatrixXd Sig = solve_identity(T, "update_Lambda");
    MatrixXd Lam = Bact * Sig * Bact.transpose();
    L.blocks[c] = 0.5 * (Lam + Lam.transpose());
  }
  return L;
}

PrecisionMatrix update_S(const VectorXd& w, const StructuredCov& Lambda,
                         const StackedProblem& problem, const SolverOptions& options,
                         std::vector<double>* eps_out) {
  check_problem_sizes(problem);
  const int C = problem.layout.C, M = problem.layout.M;
  if (eps_out) eps_out->clear();

  if (options.S_structure == PrecisionMatrix::Structure::fixed_identity_scaled) {
    if (!(options.lambda > 0.0))
      throw std::invalid_argument("update_S: lambda must be positive");
    return PrecisionMatrix::FixedIdentityScaled(options.lambda);
  }
  if (!(options.jitter > 0.0)) throw std::invalid_argument("update_S: jitter must be positive");

  if (options.S_structure == PrecisionMatrix::Structure::full) {
    if (!Lambda.full || Lambda.dense.rows() != C * M)
      throw std::invalid_argument("update_S: Lambda structure mismatch");
    const VectorXd r = problem.multiply(w) - problem.stacked_y();
    MatrixXd P = r * r.transpose() + Lambda.dense;
    const double eps = options.jitter * std::max(P.trace() / (C * M), 1.0);
    P.diagonal().array() += eps;
    if (eps_out) eps_out->push_back(eps);
    return PrecisionMatrix::Full(solve_identity(P, "update_S (full)"));
  }

  if (Lambda.full || static_cast<int>(Lambda.blocks.size()) != C)
    throw std::invalid_argument("update_S: Lambda structure mismatch");
  std::vector<MatrixXd> blocks(C);
  for (int c = 0; c < C; ++c) {
    if (Lambda.blocks[c].rows() != M)
      throw std::invalid_argument("update_S: Lambda block size mismatch");
    const VectorXd r_c = problem.A[c] * problem.experiment_weights(w, c) - problem.y[c];
    MatrixXd P = r_c * r_c.transpose() + Lambda.blocks[c];
    const double eps = options.jitter * std::max(P.trace() / M, 1.0);
    P.diagonal().array() += eps;
    if (eps_out) eps_out->push_back(eps);
    blocks[c] = solve_identity(P, "update_S (block)");
  }
  return PrecisionMatrix::BlockDiagonal(std::move(blocks));
}

namespace {

StackedProblem reduced_problem(const StackedProblem& problem, const std::vector<int>& act) {
  StackedProblem sub;
  sub.layout = problem.layout;
  sub.layout.N = static_cast<int>(act.size());
  sub.A.resize(problem.A.size());
  for (size_t c = 0; c < problem.A.size(); ++c) sub.A[c] = gather_columns(problem.A[c], act);
  sub.y = problem.y;
  if (!problem.sign_constraints.empty()) {
    sub.sign_constraints.reserve(act.size());
    for (int i : act) sub.sign_constraints.push_back(problem.sign_constraints[i]);
  }
  return sub;
}

}  // namespace

IdentificationResult identify(const StackedProblem& problem, const SolverOptions& options,
                              SolverState* final_state) {
  check_problem_sizes(problem);
  const int C = problem.layout.C, M = problem.layout.M, N = problem.layout.N;
  if (options.k_max < 1) throw std::invalid_argument("identify: k_max must be >= 1");
  if (options.stop_tol < 0.0) throw std::invalid_argument("identify: stop_tol must be >= 0");

  std::vector<char> active(N, 1);
  VectorXd w = VectorXd::Zero(static_cast<Eigen::Index>(N) * C);
  VectorXd gamma = VectorXd::Zero(N);
  VectorXd theta = VectorXd::Ones(N);
  VectorXd alpha = VectorXd::Constant(N, 1.0 / C);

  const bool full = options.S_structure == PrecisionMatrix::Structure::full;
  PrecisionMatrix S;
  if (options.S_structure == PrecisionMatrix::Structure::fixed_identity_scaled) {
    S = PrecisionMatrix::FixedIdentityScaled(options.lambda);
  } else if (full) {
    S = PrecisionMatrix::Full(MatrixXd::Identity(C * M, C * M));
  } else {
    S = PrecisionMatrix::Identity(C, M);
  }
  StructuredCov Lambda = StructuredCov::Identity(full, C, M);

  IdentificationResult result;
  double prev_cost = std::numeric_limits<double>::infinity();

  for (int k = 0; k < options.k_max; ++k) {
    ++result.iterations;

    // w-update over the surviving blocks.
    std::vector<int> act_idx;
    for (int i = 0; i < N; ++i)
      if (active[i]) act_idx.push_back(i);
    w.setZero();
    if (!act_idx.empty()) {
      const StackedProblem sub = reduced_problem(problem, act_idx);
      VectorXd theta_sub(act_idx.size());
      for (size_t a = 0; a < act_idx.size(); ++a) theta_sub[a] = theta[act_idx[a]];
      AdmmResult inner = admm_group_lasso(sub, S, theta_sub, options.admm);
      if (!inner.converged) {
        result.inner_converged = false;
        result.inner_r_norm = std::max(result.inner_r_norm, inner.r_norm);
        result.inner_s_norm = std::max(result.inner_s_norm, inner.s_norm);
      }
      for (size_t a = 0; a < act_idx.size(); ++a)
        for (int c = 0; c < C; ++c)
          w[static_cast<Eigen::Index>(act_idx[a]) * C + c] = inner.w[a * C + c];
    }

    // gamma-update with previous-round alpha, then permanent pruning.
    gamma = update_gamma(w, alpha);
    double gmax = 0.0;
    for (int i = 0; i < N; ++i)
      if (active[i]) gmax = std::max(gmax, gamma[i]);
    for (int i = 0; i < N; ++i) {
      if (!active[i]) {
        gamma[i] = 0.0;
        continue;
      }
      if (gamma[i] <= options.prune_threshold * gmax) {
        active[i] = 0;
        gamma[i] = 0.0;
        w.segment(static_cast<Eigen::Index>(i) * C, C).setZero();
      }
    }

    // Linearize the concave log-det term at the fresh gamma and the current
    // S before touching S: the S-step then minimizes a true majorizer of the
    // cost in S alone, which keeps the outer iteration monotone. (The
    // log-det term is concave in gamma and in S separately but not jointly,
    // so a Lambda carried over from the previous gamma can make the S-step
    // increase the cost.)
    Lambda = update_Lambda(gamma, S, problem);
    S = update_S(w, Lambda, problem, options);
    alpha = update_alpha(gamma, S, problem);
    for (int i = 0; i < N; ++i) {
      const double a = std::max(alpha[i], 0.0);
      theta[i] = options.theta_rule == SolverOptions::ThetaRule::sqrt_c_alpha
                     ? std::sqrt(C * a)
                     : C * a;
    }

    const double cst = cost(w, gamma, S, problem);
    result.cost_history.push_back(cst);
    if (std::isfinite(prev_cost) &&
        std::abs(prev_cost - cst) < options.stop_tol * std::abs(prev_cost)) {
      break;
    }
    prev_cost = cst;
  }

  result.w = w;
  result.gamma = gamma;
  result.S = S;
  result.final_cost = result.cost_history.empty() ? 0.0 : result.cost_history.back();

  const VectorXd norms = problem.block_norms(w);
  const double max_norm = norms.size() > 0 ? norms.maxCoeff() : 0.0;
  if (max_norm > 0.0) {
    for (int i = 0; i < N; ++i)
      if (norms[i] > options.support_threshold * max_norm) result.support.push_back(i);
  }

  if (final_state) {
    final_state->w = w;
    final_state->gamma = gamma;
    final_state->alpha = alpha;
    final_state->theta = theta;
    final_state->S = S;
    final_state->Lambda = Lambda;
    final_state->cost_history = result.cost_history;
    final_state->active = active;
  }
  return result;
}

IdentificationResult group_lasso_baseline(const StackedProblem& problem, double lambda,
                                          SolverOptions base) {
  if (!(lambda > 0.0)) throw std::invalid_argument("group_lasso_baseline: lambda must be > 0");
  base.k_max = 1;
  base.S_structure = PrecisionMatrix::Structure::fixed_identity_scaled;
  base.lambda = lambda;
  return identify(problem, base);
}

}  // namespace hetsid
