#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <string>
#include <vector>

#include "hetsid/datamodel.hpp"
#include "hetsid/simulator.hpp"

namespace hetsid {

// Saturating Hill kinetics x^h_num / (K^h_den + x^h_den): repression when
// h_num = 0, activation when h_num = h_den. Throws std::domain_error for
// negative x (concentrations are nonnegative; negative samples can only
// arise from measurement noise and are handled by the build policy below).
double hill(double x, double K, int h_num, int h_den);

enum class BasisKind { linear, hill, constant, mass_action, michaelis_menten };

// One candidate basis function. State indices are 0-based internally and
// displayed 1-based (x1..xn) in names and reports.
struct BasisFunction {
  BasisKind kind = BasisKind::constant;
  int i = 0;        // primary state index
  int j = 0;        // partner state index (mass_action only)
  double K = 1.0;   // hill / michaelis_menten threshold
  int h_num = 0;    // hill numerator exponent: 0 (repression) or h_den (activation)
  int h_den = 1;    // hill denominator exponent

  static BasisFunction Linear(int state);
  static BasisFunction Hill(int state, double K, int h_num, int h_den);
  static BasisFunction Constant();
  static BasisFunction MassAction(int a, int b);
  static BasisFunction MichaelisMenten(int state, double K);

  double eval(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  std::string name() const;
  bool valid(int n_x, std::string* error = nullptr) const;

  nlohmann::json to_json() const;
  static BasisFunction from_json(const nlohmann::json& j);
};

// Ordered list of candidate basis functions; the order fixes the column
// ordering of every dictionary matrix and weight vector downstream.
struct DictionarySpec {
  std::vector<BasisFunction> basis;

  int N() const { return static_cast<int>(basis.size()); }
  std::vector<std::string> names() const;
  nlohmann::json to_json() const;
  static DictionarySpec from_json(const nlohmann::json& j);
};

// The 25-column repressilator dictionary:
// [x1..x8, hill(x1,1,0,3)..hill(x8,1,0,3), hill(x1,1,3,3)..hill(x8,1,3,3), 1].
DictionarySpec default_repressilator_spec();

struct DictionaryBuildOptions {
  // Negative state samples (possible under measurement noise) are clamped to
  // zero before evaluation, with the clamp count reported; strict mode
  // raises std::domain_error instead.
  bool strict_negative = false;
};

struct DictionaryMatrix {
  Eigen::MatrixXd values;  // retained rows x N
  int experiment_id = 0;
  int clamped_values = 0;  // negative entries clamped to 0 in the used rows
};

// Evaluate the spec on the selected rows of an experiment. `row_range` is
// the retained-row index set from the derivative estimator, so dictionary
// rows stay aligned with the derivative targets.
DictionaryMatrix build_dictionary(const TimeSeriesExperiment& experiment,
                                  const DictionarySpec& spec, const std::vector<int>& row_range,
                                  const DictionaryBuildOptions& options = {});

// Ground-truth weights of state n for the default repressilator dictionary:
// +p_n1 on the repressing hill of the predecessor state, -p_n5 on the linear
// x_n column, +p_n4 on the constant column.
Eigen::VectorXd true_weights(const RepressilatorParams& params, const DictionarySpec& spec,
                             int state);

// Convenience overload wiring built dictionaries into the stacked problem.
StackedProblem stack_problem(const RegressionTarget& target,
                             const std::vector<DictionaryMatrix>& dictionaries,
                             std::vector<SignConstraint> sign_constraints = {});

}  // namespace hetsid
