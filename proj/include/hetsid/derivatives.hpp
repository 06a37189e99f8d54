#pragma once

#include <Eigen/Dense>
#include <vector>

namespace hetsid {

// Weighted symmetric-difference derivative estimator on a uniform grid.
// Boundary handling is trim-only: the first and last k samples are dropped,
// and the retained row indices are reported so downstream dictionary rows
// stay aligned with the derivative targets.
struct DifferenceSpec {
  int k = 1;  // half-window size; k = 1 is the plain central difference
};

// w_j = 6 j^2 / (k (k+1) (2k+1)), j = 1..k; the weights sum to 1.
Eigen::VectorXd lpr_weights(int k);

struct DerivativeEstimate {
  Eigen::MatrixXd values;        // (M - 2k) x n_series
  std::vector<int> row_indices;  // retained source rows: k .. M-1-k (0-based)
  Eigen::VectorXd times;         // sample instants at the retained rows
};

// dY_i = sum_j w_j (Y_{i+j} - Y_{i-j}) / (t_{i+j} - t_{i-j}) at interior
// rows. Requires M >= 2k+1 samples on a uniform grid; columns of `series`
// are differentiated independently.
DerivativeEstimate estimate_derivative(const Eigen::VectorXd& times,
                                       const Eigen::MatrixXd& series,
                                       const DifferenceSpec& spec);

// Single-series convenience overload.
Eigen::VectorXd estimate_derivative(const Eigen::VectorXd& times, const Eigen::VectorXd& series,
                                    const DifferenceSpec& spec,
                                    std::vector<int>* row_indices = nullptr);

}  // namespace hetsid
