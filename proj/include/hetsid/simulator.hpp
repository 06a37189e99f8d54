#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hetsid/datamodel.hpp"
#include "hetsid/rng.hpp"

namespace hetsid {

// Kinetics of the 8-species repressilator ring. Row i holds
// (production p_i1, threshold p_i2, Hill exponent p_i3, basal p_i4,
// degradation p_i5); species i is repressed by its predecessor i-1
// (species 1 by species 8).
struct RepressilatorParams {
  Eigen::Matrix<double, 8, 5> p;

  bool valid() const;
};

// Mean kinetics: production 40, threshold 1, Hill exponent 3, basal 0.5,
// degradation 1 for every species.
RepressilatorParams mean_repressilator_params();

struct GenerationConfig {
  int C = 1;                     // number of experiments
  double t_end = 50.0;           // simulation horizon
  double sample_interval = 1.0;  // uniform resampling step
  double spread = 0.2;           // relative parameter perturbation
  double sigma = 0.0;            // measurement-noise standard deviation
  uint64_t seed = 0;
  double rk_tol = 1e-8;          // adaptive integrator tolerance

  // Which parameter columns receive the perturbation (production, threshold,
  // Hill exponent, basal, degradation). Default: all five, i.e. every p_ij
  // is drawn from [(1-spread), (1+spread)] * mean. Benchmark configurations
  // that treat the Hill threshold and exponent as known structural constants
  // restrict the spread to (production, basal, degradation).
  std::array<bool, 5> spread_mask = {true, true, true, true, true};

  bool validate(std::string* error = nullptr) const;
};

Eigen::Matrix<double, 8, 1> repressilator_rhs(const Eigen::Matrix<double, 8, 1>& x,
                                              const RepressilatorParams& params);

// Each p_ij ~ U[(1-spread)*mean_ij, (1+spread)*mean_ij], drawn row-major.
// The masked variant draws the same 40 uniforms (stream position is
// independent of the mask) but applies the perturbation only where the mask
// is set.
RepressilatorParams sample_experiment_params(const RepressilatorParams& mean, double spread,
                                             CounterRng& rng);
RepressilatorParams sample_experiment_params(const RepressilatorParams& mean, double spread,
                                             const std::array<bool, 5>& mask, CounterRng& rng);

struct IntegrationFailure : std::runtime_error {
  IntegrationFailure(const std::string& what, double t)
      : std::runtime_error(what + " at t=" + std::to_string(t)), t_fail(t) {}
  double t_fail;
};

using OdeRhs = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;

// Accepted steps of the adaptive integrator plus the stored derivatives,
// supporting evaluation at arbitrary t in [0, t_end] by cubic Hermite
// interpolation between accepted steps.
struct DenseTrajectory {
  std::vector<double> t;
  std::vector<Eigen::VectorXd> x;
  std::vector<Eigen::VectorXd> f;  // rhs at accepted steps

  Eigen::VectorXd eval(double at) const;
  Eigen::MatrixXd sample(const Eigen::VectorXd& times) const;  // rows = times
};

// Embedded Runge-Kutta 4(5) pair (Dormand-Prince) with PI step-size control.
// Local error is controlled at rk_tol (used as both absolute and relative
// tolerance). Throws IntegrationFailure on step-size underflow.
DenseTrajectory integrate_adaptive(const OdeRhs& rhs, const Eigen::VectorXd& x0, double t_end,
                                   double rk_tol);

// Simulate C experiments: per experiment, fresh parameters via
// sample_experiment_params, x0 ~ U(0,1)^8, adaptive integration, uniform
// resampling at sample_interval, then i.i.d. Gaussian measurement noise of
// std sigma on every sample. Each experiment consumes its own RNG substream,
// and the manifest metadata records the true parameters.
HeterogeneousDataset generate_dataset(const GenerationConfig& config);

}  // namespace hetsid
