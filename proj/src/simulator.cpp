#include "hetsid/simulator.hpp"

#include <algorithm>
#include <cmath>

namespace hetsid {

bool RepressilatorParams::valid() const {
  return (p.array() > 0).all() && (p.col(2).array() >= 1).all();
}

RepressilatorParams mean_repressilator_params() {
  RepressilatorParams m;
  for (int i = 0; i < 8; ++i) {
    m.p(i, 0) = 40.0;  // production
    m.p(i, 1) = 1.0;   // threshold
    m.p(i, 2) = 3.0;   // Hill exponent
    m.p(i, 3) = 0.5;   // basal rate
    m.p(i, 4) = 1.0;   // degradation
  }
  return m;
}

bool GenerationConfig::validate(std::string* error) const {
  auto fail = [error](const char* msg) {
    if (error) *error = msg;
    return false;
  };
  if (C < 1) return fail("C must be >= 1");
  if (!(t_end > 0)) return fail("t_end must be > 0");
  if (!(sample_interval > 0)) return fail("sample_interval must be > 0");
  if (!(spread >= 0 && spread < 1)) return fail("spread must be in [0, 1)");
  if (!(sigma >= 0)) return fail("sigma must be >= 0");
  if (!(rk_tol > 0)) return fail("rk_tol must be > 0");
  return true;
}

Eigen::Matrix<double, 8, 1> repressilator_rhs(const Eigen::Matrix<double, 8, 1>& x,
                                              const RepressilatorParams& params) {
  Eigen::Matrix<double, 8, 1> dx;
  for (int i = 0; i < 8; ++i) {
    const int pred = (i + 7) % 8;  // species 1 is repressed by species 8
    const double xp = x[pred];
    const double h = params.p(i, 2);
    const double production = params.p(i, 0) / (std::pow(params.p(i, 1), h) + std::pow(xp, h));
    dx[i] = production + params.p(i, 3) - params.p(i, 4) * x[i];
  }
  return dx;
}

RepressilatorParams sample_experiment_params(const RepressilatorParams& mean, double spread,
                                             CounterRng& rng) {
  return sample_experiment_params(mean, spread, {true, true, true, true, true}, rng);
}

RepressilatorParams sample_experiment_params(const RepressilatorParams& mean, double spread,
                                             const std::array<bool, 5>& mask, CounterRng& rng) {
  if (!(spread >= 0 && spread < 1)) throw std::invalid_argument("spread must be in [0, 1)");
  RepressilatorParams out = mean;
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 5; ++j) {
      const double u = rng.uniform();  // always consumed, mask-independent
      if (mask[j]) out.p(i, j) = mean.p(i, j) * (1.0 - spread + 2.0 * spread * u);
    }
  }
  return out;
}

Eigen::VectorXd DenseTrajectory::eval(double at) const {
  if (t.empty()) throw std::logic_error("empty trajectory");
  const double t0 = t.front(), t1 = t.back();
  const double slack = 1e-9 * std::max(1.0, std::abs(t1));
  if (at < t0 - slack || at > t1 + slack)
    throw std::out_of_range("trajectory evaluated outside [t0, t_end]");
  at = std::clamp(at, t0, t1);

  const auto it = std::upper_bound(t.begin(), t.end(), at);
  const size_t hi = std::min<size_t>(std::max<ptrdiff_t>(it - t.begin(), 1), t.size() - 1);
  const size_t lo = hi - 1;

  const double h = t[hi] - t[lo];
  const double s = (at - t[lo]) / h;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1;
  const double h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2;
  const double h11 = s3 - s2;
  return h00 * x[lo] + (h10 * h) * f[lo] + h01 * x[hi] + (h11 * h) * f[hi];
}

Eigen::MatrixXd DenseTrajectory::sample(const Eigen::VectorXd& times) const {
  Eigen::MatrixXd out(times.size(), x.front().size());
  for (long i = 0; i < times.size(); ++i) out.row(i) = eval(times[i]).transpose();
  return out;
}

DenseTrajectory integrate_adaptive(const OdeRhs& rhs, const Eigen::VectorXd& x0, double t_end,
                                   double rk_tol) {
  if (!(rk_tol > 0)) throw std::invalid_argument("rk_tol must be > 0");
  if (!(t_end > 0)) throw std::invalid_argument("t_end must be > 0");
  if (!x0.allFinite()) throw std::invalid_argument("x0 must be finite");

  // Dormand-Prince 5(4) tableau.
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                   a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                   a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                   b6 = 11.0 / 84;
  // 5th-order minus embedded 4th-order weights (error estimator).
  constexpr double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                   e4 = 125.0 / 192 - 393.0 / 640, e5 = -2187.0 / 6784 + 92097.0 / 339200,
                   e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;

  const long n = x0.size();
  const double atol = rk_tol, rtol = rk_tol;

  DenseTrajectory traj;
  double t = 0.0;
  Eigen::VectorXd x = x0;
  Eigen::VectorXd k1 = rhs(t, x);
  traj.t.push_back(t);
  traj.x.push_back(x);
  traj.f.push_back(k1);

  // Initial step size: standard two-stage heuristic on the scaled norms of
  // the state and its derivative, refined with one explicit Euler probe.
  auto scaled_rms = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& ref) {
    double acc = 0;
    for (long i = 0; i < n; ++i) {
      const double sc = atol + rtol * std::abs(ref[i]);
      const double q = v[i] / sc;
      acc += q * q;
    }
    return std::sqrt(acc / static_cast<double>(n));
  };
  double h;
  {
    const double d0 = scaled_rms(x, x);
    const double d1 = scaled_rms(k1, x);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, t_end);
    const Eigen::VectorXd x1 = x + h0 * k1;
    const Eigen::VectorXd f1 = rhs(t + h0, x1);
    const double d2 = scaled_rms(f1 - k1, x) / h0;
    const double dm = std::max(d1, d2);
    const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
    h = std::min({100 * h0, h1, t_end});
  }

  double err_prev = 1e-4;
  Eigen::VectorXd k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), x_new(n), err_vec(n);

  while (t < t_end) {
    h = std::min(h, t_end - t);
    if (h < 1e-14 * std::max(1.0, std::abs(t)))
      throw IntegrationFailure("step size underflow", t);

    k2 = rhs(t + c2 * h, x + h * (a21 * k1));
    k3 = rhs(t + c3 * h, x + h * (a31 * k1 + a32 * k2));
    k4 = rhs(t + c4 * h, x + h * (a41 * k1 + a42 * k2 + a43 * k3));
    k5 = rhs(t + c5 * h, x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    k6 = rhs(t + h, x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    x_new = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    k7 = rhs(t + h, x_new);  // FSAL stage
    err_vec = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    if (!x_new.allFinite())
      throw IntegrationFailure("state blew up to non-finite values", t);

    double err_acc = 0;
    for (long i = 0; i < n; ++i) {
      const double sc = atol + rtol * std::max(std::abs(x[i]), std::abs(x_new[i]));
      const double q = err_vec[i] / sc;
      err_acc += q * q;
    }
    const double err = std::sqrt(err_acc / static_cast<double>(n));

    if (err <= 1.0) {
      t += h;
      x = x_new;
      k1 = k7;
      traj.t.push_back(t);
      traj.x.push_back(x);
      traj.f.push_back(k1);
      // PI controller on the accepted-error history.
      const double e = std::max(err, 1e-10);
      double fac = 0.9 * std::pow(e, -0.7 / 5.0) * std::pow(err_prev, 0.4 / 5.0);
      fac = std::clamp(fac, 0.2, 10.0);
      h *= fac;
      err_prev = e;
    } else {
      const double fac = std::clamp(0.9 * std::pow(err, -0.2), 0.2, 1.0);
      h *= fac;
    }
  }
  return traj;
}

HeterogeneousDataset generate_dataset(const GenerationConfig& config) {
  std::string err;
  if (!config.validate(&err)) throw std::invalid_argument("generation config: " + err);

  const RepressilatorParams mean = mean_repressilator_params();
  const int M = static_cast<int>(std::floor(config.t_end / config.sample_interval + 1e-9)) + 1;

  HeterogeneousDataset ds;
  ds.n_x = 8;
  ds.n_u = 0;

  for (int c = 0; c < config.C; ++c) {
    CounterRng rng(config.seed, static_cast<uint64_t>(c) + 1);  // per-experiment substream
    const RepressilatorParams params =
        sample_experiment_params(mean, config.spread, config.spread_mask, rng);

    Eigen::VectorXd x0(8);
    for (int i = 0; i < 8; ++i) x0[i] = rng.uniform_open();

    const OdeRhs rhs = [&params](double, const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return repressilator_rhs(x, params);
    };
    const DenseTrajectory traj = integrate_adaptive(rhs, x0, config.t_end, config.rk_tol);

    TimeSeriesExperiment exp;
    exp.id = c + 1;
    exp.times.resize(M);
    for (int m = 0; m < M; ++m) exp.times[m] = m * config.sample_interval;
    exp.states = traj.sample(exp.times);
    exp.inputs.resize(M, 0);

    int positivity_violations = 0;
    for (int m = 0; m < M; ++m)
      for (int j = 0; j < 8; ++j)
        if (!(exp.states(m, j) > 0)) ++positivity_violations;

    if (config.sigma > 0) {
      for (int m = 0; m < M; ++m)
        for (int j = 0; j < 8; ++j) exp.states(m, j) += config.sigma * rng.normal();
    }

    exp.meta["params"] = nlohmann::json::array();
    for (int i = 0; i < 8; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int j = 0; j < 5; ++j) row.push_back(params.p(i, j));
      exp.meta["params"].push_back(std::move(row));
    }
    exp.meta["x0"] = std::vector<double>(x0.data(), x0.data() + 8);
    exp.meta["sigma"] = config.sigma;
    exp.meta["seed"] = config.seed;
    exp.meta["stream"] = c + 1;
    exp.meta["spread"] = config.spread;
    exp.meta["positivity_violations"] = positivity_violations;

    ds.experiments.push_back(std::move(exp));
  }
  return ds;
}

}  // namespace hetsid
