#include "hetsid/admm.hpp"

#include <cmath>
#include <stdexcept>

namespace hetsid {

PrecisionMatrix PrecisionMatrix::Identity(int C, int M) {
  PrecisionMatrix S;
  S.structure = Structure::block_diagonal;
  S.blocks.assign(C, Eigen::MatrixXd::Identity(M, M));
  return S;
}

PrecisionMatrix PrecisionMatrix::FixedIdentityScaled(double lambda) {
  if (!(lambda > 0)) throw std::invalid_argument("lambda must be > 0");
  PrecisionMatrix S;
  S.structure = Structure::fixed_identity_scaled;
  S.lambda = lambda;
  return S;
}

PrecisionMatrix PrecisionMatrix::Full(Eigen::MatrixXd S_dense) {
  PrecisionMatrix S;
  S.structure = Structure::full;
  S.dense = std::move(S_dense);
  return S;
}

PrecisionMatrix PrecisionMatrix::BlockDiagonal(std::vector<Eigen::MatrixXd> blocks) {
  PrecisionMatrix S;
  S.structure = Structure::block_diagonal;
  S.blocks = std::move(blocks);
  return S;
}

Eigen::MatrixXd PrecisionMatrix::block(int c, int M) const {
  switch (structure) {
    case Structure::block_diagonal:
      return blocks.at(c);
    case Structure::fixed_identity_scaled:
      return Eigen::MatrixXd::Identity(M, M) / lambda;
    case Structure::full:
      throw std::logic_error("full precision matrix has no per-experiment blocks");
  }
  throw std::logic_error("unknown precision structure");
}

Eigen::MatrixXd PrecisionMatrix::dense_matrix(int C, int M) const {
  if (structure == Structure::full) return dense;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<long>(C) * M, static_cast<long>(C) * M);
  for (int c = 0; c < C; ++c)
    out.block(static_cast<long>(c) * M, static_cast<long>(c) * M, M, M) = block(c, M);
  return out;
}

double PrecisionMatrix::log_det(int C, int M) const {
  auto logdet_pd = [](const Eigen::MatrixXd& A) {
    const Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("log_det: matrix not positive definite");
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  };
  switch (structure) {
    case Structure::block_diagonal: {
      double acc = 0;
      for (const auto& B : blocks) acc += logdet_pd(B);
      return acc;
    }
    case Structure::fixed_identity_scaled:
      return -static_cast<double>(C) * M * std::log(lambda);
    case Structure::full:
      return logdet_pd(dense);
  }
  throw std::logic_error("unknown precision structure");
}

Eigen::VectorXd soft_threshold_vector(const Eigen::VectorXd& a, double kappa) {
  if (kappa < 0) throw std::invalid_argument("kappa must be >= 0");
  const double norm = a.norm();
  if (norm <= kappa) return Eigen::VectorXd::Zero(a.size());
  return (1.0 - kappa / norm) * a;
}

bool admm_converged(double r_norm, double s_norm, const AdmmState& state,
                    const AdmmOptions& options) {
  const double sqrt_n = std::sqrt(static_cast<double>(state.z.size()));
  const double eps_primal =
      sqrt_n * options.eps_abs + options.eps_rel * std::max(state.w.norm(), state.z.norm());
  const double eps_dual =
      sqrt_n * options.eps_abs + options.eps_rel * options.rho * state.u.norm();
  return r_norm <= eps_primal && s_norm <= eps_dual;
}

namespace {

void project_sign(Eigen::Ref<Eigen::VectorXd> v, SignConstraint sc) {
  if (sc == SignConstraint::nonnegative)
    v = v.cwiseMax(0.0);
  else if (sc == SignConstraint::nonpositive)
    v = v.cwiseMin(0.0);
}

// Shared per-experiment gather/scatter for the stacked ordering
// (block index slowest, experiment index fastest).
Eigen::VectorXd gather_experiment(const Eigen::VectorXd& v, int c, int C, int N) {
  Eigen::VectorXd out(N);
  for (int i = 0; i < N; ++i) out[i] = v[static_cast<long>(i) * C + c];
  return out;
}

void scatter_experiment(const Eigen::VectorXd& v, int c, int C, Eigen::VectorXd& out) {
  for (long i = 0; i < v.size(); ++i) out[i * C + c] = v[i];
}

struct Factorization {
  // One linear system per experiment (block-diagonal S), or a single dense
  // system over the whole stacked vector (full S).
  std::vector<Eigen::LDLT<Eigen::MatrixXd>> per_experiment;
  Eigen::LDLT<Eigen::MatrixXd> full;
};

}  // namespace

AdmmResult admm_group_lasso(const StackedProblem& problem, const PrecisionMatrix& S,
                            const Eigen::VectorXd& theta, const AdmmOptions& options) {
  const int C = problem.layout.C, M = problem.layout.M, N = problem.layout.N;
  if (theta.size() != N) throw std::invalid_argument("theta length must equal block count N");
  if ((theta.array() < 0).any()) throw std::invalid_argument("theta must be >= 0");
  if (!(options.rho > 0) || !(options.eps_abs > 0) || !(options.eps_rel > 0))
    throw std::invalid_argument("invalid ADMM options");
  const long NC = static_cast<long>(N) * C;

  const bool full_S = S.structure == PrecisionMatrix::Structure::full;

  // Data-dependent quantities that are reused across all iterations.
  std::vector<Eigen::MatrixXd> G;  // per experiment: B' S B (N x N)
  std::vector<Eigen::VectorXd> q;  // per experiment: B' S y
  Eigen::MatrixXd A_dense, G_full;
  Eigen::VectorXd q_full;
  if (full_S) {
    A_dense = problem.dense_stacked_A();
    const Eigen::MatrixXd SA = S.dense * A_dense;
    G_full = A_dense.transpose() * SA;
    q_full = SA.transpose() * problem.stacked_y();
  } else {
    G.reserve(C);
    q.reserve(C);
    for (int c = 0; c < C; ++c) {
      const Eigen::MatrixXd Sc = S.block(c, M);
      const Eigen::MatrixXd SB = Sc * problem.A[c];
      G.push_back(problem.A[c].transpose() * SB);
      q.push_back(SB.transpose() * problem.y[c]);
    }
  }

  auto jitter_scale = [](const Eigen::MatrixXd& H) {
    return 1e-12 * std::max(1.0, H.trace() / static_cast<double>(H.rows()));
  };

  double rho = options.rho;
  Factorization fact;
  auto refactor = [&]() {
    if (full_S) {
      Eigen::MatrixXd H = G_full;
      for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c) H(static_cast<long>(i) * C + c, static_cast<long>(i) * C + c) +=
            rho * theta[i] * theta[i];
      H.diagonal().array() += jitter_scale(H);
      fact.full.compute(H);
      if (fact.full.info() != Eigen::Success)
        throw std::runtime_error("ADMM: linear system factorization failed");
    } else {
      fact.per_experiment.resize(C);
      for (int c = 0; c < C; ++c) {
        Eigen::MatrixXd H = G[c];
        for (int i = 0; i < N; ++i) H(i, i) += rho * theta[i] * theta[i];
        H.diagonal().array() += jitter_scale(H);
        fact.per_experiment[c].compute(H);
        if (fact.per_experiment[c].info() != Eigen::Success)
          throw std::runtime_error("ADMM: linear system factorization failed");
      }
    }
  };

  auto apply_final_projection = [&](Eigen::VectorXd& w) {
    if (problem.sign_constraints.empty()) return;
    for (int i = 0; i < N; ++i) {
      auto wi = w.segment(static_cast<long>(i) * C, C);
      project_sign(wi, problem.constraint(i));
    }
  };

  auto objective = [&](const Eigen::VectorXd& w) {
    double val = 0;
    if (full_S) {
      const Eigen::VectorXd r = A_dense * w - problem.stacked_y();
      val = 0.5 * r.dot(S.dense * r);
    } else {
      for (int c = 0; c < C; ++c) {
        const Eigen::VectorXd r = problem.A[c] * gather_experiment(w, c, C, N) - problem.y[c];
        val += 0.5 * r.dot(S.block(c, M) * r);
      }
    }
    for (int i = 0; i < N; ++i) val += theta[i] * w.segment(static_cast<long>(i) * C, C).norm();
    return val;
  };

  AdmmResult res;

  // With no penalty at all the problem is plain generalized least squares;
  // solve it directly instead of iterating.
  if ((theta.array() == 0).all()) {
    refactor();
    res.w.setZero(NC);
    if (full_S) {
      res.w = fact.full.solve(q_full);
    } else {
      for (int c = 0; c < C; ++c)
        scatter_experiment(fact.per_experiment[c].solve(q[c]), c, C, res.w);
    }
    apply_final_projection(res.w);
    res.z = Eigen::VectorXd::Zero(NC);
    res.u = Eigen::VectorXd::Zero(NC);
    res.converged = true;
    return res;
  }

  refactor();

  AdmmState st;
  st.w = Eigen::VectorXd::Zero(NC);
  st.z = Eigen::VectorXd::Zero(NC);
  st.u = Eigen::VectorXd::Zero(NC);
  Eigen::VectorXd z_prev(NC), theta_w(NC), rhs_c(N);

  double best_obj = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_w;

  AdmmOptions live = options;  // carries the current rho for the stopping rule
  int iter = 0;
  for (; iter < options.max_iters; ++iter) {
    // w-update: (A'SA + rho Theta'Theta) w = A'Sy + rho Theta (z - u).
    if (full_S) {
      Eigen::VectorXd rhs = q_full;
      for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c) {
          const long idx = static_cast<long>(i) * C + c;
          rhs[idx] += rho * theta[i] * (st.z[idx] - st.u[idx]);
        }
      st.w = fact.full.solve(rhs);
    } else {
      for (int c = 0; c < C; ++c) {
        rhs_c = q[c];
        for (int i = 0; i < N; ++i) {
          const long idx = static_cast<long>(i) * C + c;
          rhs_c[i] += rho * theta[i] * (st.z[idx] - st.u[idx]);
        }
        scatter_experiment(fact.per_experiment[c].solve(rhs_c), c, C, st.w);
      }
    }

    // z-update: blockwise soft threshold of (theta_i w_i + u_i) at 1/rho,
    // after projection onto the feasible orthant when a constraint is set.
    z_prev = st.z;
    for (int i = 0; i < N; ++i) {
      const long off = static_cast<long>(i) * C;
      theta_w.segment(off, C) = theta[i] * st.w.segment(off, C);
      Eigen::VectorXd v = theta_w.segment(off, C) + st.u.segment(off, C);
      project_sign(v, problem.constraint(i));
      st.z.segment(off, C) = soft_threshold_vector(v, 1.0 / rho);
    }

    // Scaled dual update and residuals.
    st.u += theta_w - st.z;
    const double r_norm = (theta_w - st.z).norm();
    const double s_norm = rho * (st.z - z_prev).norm();

    live.rho = rho;
    const double sqrt_n = std::sqrt(static_cast<double>(NC));
    res.r_norm = r_norm;
    res.s_norm = s_norm;
    res.eps_primal = sqrt_n * live.eps_abs + live.eps_rel * std::max(st.w.norm(), st.z.norm());
    res.eps_dual = sqrt_n * live.eps_abs + live.eps_rel * rho * st.u.norm();

    if (admm_converged(r_norm, s_norm, st, live)) {
      res.converged = true;
      ++iter;
      break;
    }

    // Periodically track the best iterate so non-convergence can still
    // return the best point visited.
    if ((iter & 31) == 0) {
      Eigen::VectorXd w_proj = st.w;
      apply_final_projection(w_proj);
      const double obj = objective(w_proj);
      if (obj < best_obj) {
        best_obj = obj;
        best_w = std::move(w_proj);
      }
    }

    if (options.adaptive_rho) {
      if (r_norm > 10.0 * s_norm) {
        rho *= 2.0;
        st.u /= 2.0;
        refactor();
      } else if (s_norm > 10.0 * r_norm) {
        rho /= 2.0;
        st.u *= 2.0;
        refactor();
      }
    }
  }

  res.iterations = iter;
  res.z = st.z;
  res.u = st.u;
  if (res.converged) {
    res.w = st.w;
    apply_final_projection(res.w);
  } else {
    Eigen::VectorXd w_final = st.w;
    apply_final_projection(w_final);
    const double final_obj = objective(w_final);
    res.w = (best_w.size() > 0 && best_obj < final_obj) ? best_w : w_final;
  }
  return res;
}

}  // namespace hetsid
