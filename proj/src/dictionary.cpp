#include "hetsid/dictionary.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hetsid {

double hill(double x, double K, int h_num, int h_den) {
  if (x < 0) throw std::domain_error("hill: negative concentration");
  if (!(K > 0)) throw std::invalid_argument("hill: K must be > 0");
  if (h_den < 1) throw std::invalid_argument("hill: h_den must be >= 1");
  if (h_num != 0 && h_num != h_den)
    throw std::invalid_argument("hill: h_num must be 0 or h_den");
  const double num = h_num == 0 ? 1.0 : std::pow(x, h_num);
  return num / (std::pow(K, h_den) + std::pow(x, h_den));
}

BasisFunction BasisFunction::Linear(int state) {
  BasisFunction b;
  b.kind = BasisKind::linear;
  b.i = state;
  return b;
}

BasisFunction BasisFunction::Hill(int state, double K, int h_num, int h_den) {
  BasisFunction b;
  b.kind = BasisKind::hill;
  b.i = state;
  b.K = K;
  b.h_num = h_num;
  b.h_den = h_den;
  return b;
}

BasisFunction BasisFunction::Constant() {
  BasisFunction b;
  b.kind = BasisKind::constant;
  return b;
}

BasisFunction BasisFunction::MassAction(int a, int b_) {
  BasisFunction b;
  b.kind = BasisKind::mass_action;
  b.i = a;
  b.j = b_;
  return b;
}

BasisFunction BasisFunction::MichaelisMenten(int state, double K) {
  BasisFunction b;
  b.kind = BasisKind::michaelis_menten;
  b.i = state;
  b.K = K;
  return b;
}

double BasisFunction::eval(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  switch (kind) {
    case BasisKind::linear:
      return x[i];
    case BasisKind::hill:
      return hill(x[i], K, h_num, h_den);
    case BasisKind::constant:
      return 1.0;
    case BasisKind::mass_action:
      return x[i] * x[j];
    case BasisKind::michaelis_menten:
      // V_max-free normalized saturation x / (K + x).
      return x[i] / (K + x[i]);
  }
  throw std::logic_error("unknown basis kind");
}

namespace {

std::string trim_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::string BasisFunction::name() const {
  switch (kind) {
    case BasisKind::linear:
      return "x" + std::to_string(i + 1);
    case BasisKind::hill:
      return "hill(x" + std::to_string(i + 1) + "," + trim_number(K) + "," +
             std::to_string(h_num) + "," + std::to_string(h_den) + ")";
    case BasisKind::constant:
      return "1";
    case BasisKind::mass_action:
      return "x" + std::to_string(i + 1) + "*x" + std::to_string(j + 1);
    case BasisKind::michaelis_menten:
      return "mm(x" + std::to_string(i + 1) + "," + trim_number(K) + ")";
  }
  return "?";
}

bool BasisFunction::valid(int n_x, std::string* error) const {
  auto fail = [error](std::string msg) {
    if (error) *error = std::move(msg);
    return false;
  };
  auto check_index = [&](int idx) { return idx >= 0 && idx < n_x; };
  switch (kind) {
    case BasisKind::constant:
      return true;
    case BasisKind::linear:
      if (!check_index(i)) return fail("linear: state index out of range");
      return true;
    case BasisKind::hill:
      if (!check_index(i)) return fail("hill: state index out of range");
      if (!(K > 0)) return fail("hill: K must be > 0");
      if (h_den < 1) return fail("hill: h_den must be >= 1");
      if (h_num != 0 && h_num != h_den) return fail("hill: h_num must be 0 or h_den");
      return true;
    case BasisKind::mass_action:
      if (!check_index(i) || !check_index(j))
        return fail("mass_action: state index out of range");
      return true;
    case BasisKind::michaelis_menten:
      if (!check_index(i)) return fail("michaelis_menten: state index out of range");
      if (!(K > 0)) return fail("michaelis_menten: K must be > 0");
      return true;
  }
  return fail("unknown basis kind");
}

nlohmann::json BasisFunction::to_json() const {
  nlohmann::json j;
  switch (kind) {
    case BasisKind::linear:
      j["kind"] = "linear";
      j["state"] = i + 1;
      break;
    case BasisKind::hill:
      j["kind"] = "hill";
      j["state"] = i + 1;
      j["K"] = K;
      j["h_num"] = h_num;
      j["h_den"] = h_den;
      break;
    case BasisKind::constant:
      j["kind"] = "constant";
      break;
    case BasisKind::mass_action:
      j["kind"] = "mass_action";
      j["state"] = i + 1;
      j["partner"] = this->j + 1;
      break;
    case BasisKind::michaelis_menten:
      j["kind"] = "michaelis_menten";
      j["state"] = i + 1;
      j["K"] = K;
      break;
  }
  return j;
}

BasisFunction BasisFunction::from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear") return Linear(j.at("state").get<int>() - 1);
  if (kind == "hill")
    return Hill(j.at("state").get<int>() - 1, j.at("K").get<double>(),
                j.at("h_num").get<int>(), j.at("h_den").get<int>());
  if (kind == "constant") return Constant();
  if (kind == "mass_action")
    return MassAction(j.at("state").get<int>() - 1, j.at("partner").get<int>() - 1);
  if (kind == "michaelis_menten")
    return MichaelisMenten(j.at("state").get<int>() - 1, j.at("K").get<double>());
  throw std::invalid_argument("unknown basis kind '" + kind + "'");
}

std::vector<std::string> DictionarySpec::names() const {
  std::vector<std::string> out;
  out.reserve(basis.size());
  for (const auto& b : basis) out.push_back(b.name());
  return out;
}

nlohmann::json DictionarySpec::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& b : basis) j.push_back(b.to_json());
  return j;
}

DictionarySpec DictionarySpec::from_json(const nlohmann::json& j) {
  DictionarySpec spec;
  for (const auto& item : j) spec.basis.push_back(BasisFunction::from_json(item));
  return spec;
}

DictionarySpec default_repressilator_spec() {
  DictionarySpec spec;
  for (int i = 0; i < 8; ++i) spec.basis.push_back(BasisFunction::Linear(i));
  for (int i = 0; i < 8; ++i) spec.basis.push_back(BasisFunction::Hill(i, 1.0, 0, 3));
  for (int i = 0; i < 8; ++i) spec.basis.push_back(BasisFunction::Hill(i, 1.0, 3, 3));
  spec.basis.push_back(BasisFunction::Constant());
  return spec;
}

DictionaryMatrix build_dictionary(const TimeSeriesExperiment& experiment,
                                  const DictionarySpec& spec, const std::vector<int>& row_range,
                                  const DictionaryBuildOptions& options) {
  const int n_x = static_cast<int>(experiment.states.cols());
  for (const auto& b : spec.basis) {
    std::string err;
    if (!b.valid(n_x, &err)) throw std::invalid_argument("dictionary spec: " + err);
  }
  for (int r : row_range) {
    if (r < 0 || r >= experiment.samples())
      throw std::invalid_argument("dictionary row_range outside experiment rows");
  }

  DictionaryMatrix out;
  out.experiment_id = experiment.id;
  out.values.resize(static_cast<long>(row_range.size()), spec.N());

  Eigen::RowVectorXd row(n_x);
  for (size_t r = 0; r < row_range.size(); ++r) {
    row = experiment.states.row(row_range[r]);
    for (int j = 0; j < n_x; ++j) {
      if (row[j] < 0) {
        if (options.strict_negative)
          throw std::domain_error("negative state sample in experiment " +
                                  std::to_string(experiment.id) + " at row " +
                                  std::to_string(row_range[r]) + ", state x" +
                                  std::to_string(j + 1));
        row[j] = 0.0;
        ++out.clamped_values;
      }
    }
    for (int n = 0; n < spec.N(); ++n) out.values(r, n) = spec.basis[n].eval(row);
  }
  return out;
}

Eigen::VectorXd true_weights(const RepressilatorParams& params, const DictionarySpec& spec,
                             int state) {
  // Validate that the spec is exactly the default repressilator dictionary;
  // the ground-truth mapping is defined only for that column ordering.
  const DictionarySpec def = default_repressilator_spec();
  bool matches = spec.N() == def.N();
  for (int n = 0; matches && n < def.N(); ++n) {
    const BasisFunction &a = spec.basis[n], &b = def.basis[n];
    matches = a.kind == b.kind && a.i == b.i && a.K == b.K && a.h_num == b.h_num &&
              a.h_den == b.h_den;
  }
  if (!matches)
    throw std::invalid_argument(
        "true_weights is defined only for the default repressilator dictionary");
  if (state < 0 || state >= 8) throw std::invalid_argument("state index out of range");

  Eigen::VectorXd w = Eigen::VectorXd::Zero(25);
  const int pred = (state + 7) % 8;
  w[8 + pred] = params.p(state, 0);   // production via predecessor repression
  w[state] = -params.p(state, 4);     // linear degradation
  w[24] = params.p(state, 3);         // basal rate on the constant column
  return w;
}

StackedProblem stack_problem(const RegressionTarget& target,
                             const std::vector<DictionaryMatrix>& dictionaries,
                             std::vector<SignConstraint> sign_constraints) {
  std::vector<Eigen::MatrixXd> values;
  values.reserve(dictionaries.size());
  for (const auto& d : dictionaries) values.push_back(d.values);
  return stack_problem(target, values, std::move(sign_constraints));
}

}  // namespace hetsid
