#include "hetsid/derivatives.hpp"

#include <cmath>
#include <stdexcept>

namespace hetsid {

Eigen::VectorXd lpr_weights(int k) {
  if (k < 1) throw std::invalid_argument("half-window k must be >= 1");
  const double denom = static_cast<double>(k) * (k + 1) * (2 * k + 1);
  Eigen::VectorXd w(k);
  for (int j = 1; j <= k; ++j) w[j - 1] = 6.0 * j * j / denom;
  // Nudge the largest weight by at most a few ulps so the sum is exactly 1
  // in floating point (the analytic weights sum to 1 by construction).
  const double defect = 1.0 - w.sum();
  if (defect != 0.0) w[k - 1] += defect;
  return w;
}

DerivativeEstimate estimate_derivative(const Eigen::VectorXd& times,
                                       const Eigen::MatrixXd& series,
                                       const DifferenceSpec& spec) {
  const int k = spec.k;
  const int M = static_cast<int>(times.size());
  if (k < 1) throw std::invalid_argument("half-window k must be >= 1");
  if (series.rows() != M) throw std::invalid_argument("series rows must match times length");
  if (M < 2 * k + 1)
    throw std::invalid_argument("series too short: need at least 2k+1 samples");

  const double dt = times[1] - times[0];
  for (int i = 0; i + 1 < M; ++i) {
    if (std::abs((times[i + 1] - times[i]) - dt) > 1e-9 * std::max(1.0, std::abs(dt)))
      throw std::invalid_argument("estimate_derivative requires a uniform time grid");
  }

  const Eigen::VectorXd w = lpr_weights(k);
  const int rows = M - 2 * k;
  DerivativeEstimate out;
  out.values.setZero(rows, series.cols());
  out.row_indices.resize(rows);
  out.times.resize(rows);

  for (int r = 0; r < rows; ++r) {
    const int i = r + k;  // interior source row
    out.row_indices[r] = i;
    out.times[r] = times[i];
    for (int j = 1; j <= k; ++j) {
      const double span = times[i + j] - times[i - j];
      out.values.row(r) += w[j - 1] * (series.row(i + j) - series.row(i - j)) / span;
    }
  }
  return out;
}

Eigen::VectorXd estimate_derivative(const Eigen::VectorXd& times, const Eigen::VectorXd& series,
                                    const DifferenceSpec& spec, std::vector<int>* row_indices) {
  const DerivativeEstimate est = estimate_derivative(times, Eigen::MatrixXd(series), spec);
  if (row_indices) *row_indices = est.row_indices;
  return est.values.col(0);
}

}  // namespace hetsid
