#include "hetsid/datamodel.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hetsid/common.hpp"

namespace hetsid {

std::string ValidationReport::to_string() const {
  std::ostringstream os;
  for (const auto& issue : issues) {
    if (issue.experiment_id > 0) os << "experiment " << issue.experiment_id << ": ";
    os << issue.message << '\n';
  }
  return os.str();
}

ValidationReport validate_dataset(const HeterogeneousDataset& ds) {
  ValidationReport report;
  auto add = [&report](int id, std::string msg) {
    report.issues.push_back({id, std::move(msg)});
  };

  if (ds.experiments.empty()) {
    add(0, "dataset has no experiments (C >= 1 required)");
    return report;
  }

  const int M0 = ds.experiments.front().samples();
  for (const auto& exp : ds.experiments) {
    const int M = exp.samples();
    if (M == 0) add(exp.id, "experiment has no samples");
    if (exp.states.rows() != M)
      add(exp.id, "states row count does not match times length");
    if (exp.states.cols() != ds.n_x)
      add(exp.id, "state dimension differs from dataset n_x");
    if (exp.inputs.size() > 0 && exp.inputs.rows() != M)
      add(exp.id, "inputs row count does not match times length");
    if (static_cast<int>(exp.inputs.cols()) != ds.n_u)
      add(exp.id, "input dimension differs from dataset n_u");
    if (M != M0)
      add(exp.id, "unequal sample counts across experiments (M^[c] must all match)");

    for (int i = 0; i + 1 < M; ++i) {
      if (!(exp.times[i + 1] > exp.times[i])) {
        add(exp.id, "times not increasing");
        break;
      }
    }
    if (!exp.times.allFinite() || !exp.states.allFinite() ||
        (exp.inputs.size() > 0 && !exp.inputs.allFinite())) {
      add(exp.id, "non-finite values");
    }
  }
  return report;
}

Eigen::VectorXd StackedProblem::stacked_y() const {
  Eigen::VectorXd out(static_cast<long>(layout.C) * layout.M);
  for (int c = 0; c < layout.C; ++c) out.segment(static_cast<long>(c) * layout.M, layout.M) = y[c];
  return out;
}

Eigen::MatrixXd StackedProblem::dense_stacked_A() const {
  const int C = layout.C, M = layout.M, N = layout.N;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<long>(C) * M, static_cast<long>(N) * C);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < N; ++i)
      out.block(static_cast<long>(c) * M, static_cast<long>(i) * C + c, M, 1) = A[c].col(i);
  return out;
}

Eigen::VectorXd StackedProblem::multiply(const Eigen::VectorXd& w) const {
  Eigen::VectorXd out(static_cast<long>(layout.C) * layout.M);
  for (int c = 0; c < layout.C; ++c)
    out.segment(static_cast<long>(c) * layout.M, layout.M) = A[c] * experiment_weights(w, c);
  return out;
}

Eigen::VectorXd StackedProblem::experiment_weights(const Eigen::VectorXd& w, int c) const {
  Eigen::VectorXd out(layout.N);
  for (int i = 0; i < layout.N; ++i) out[i] = w[static_cast<long>(i) * layout.C + c];
  return out;
}

Eigen::VectorXd StackedProblem::block_weights(const Eigen::VectorXd& w, int i) const {
  return w.segment(static_cast<long>(i) * layout.C, layout.C);
}

Eigen::VectorXd StackedProblem::block_norms(const Eigen::VectorXd& w) const {
  Eigen::VectorXd out(layout.N);
  for (int i = 0; i < layout.N; ++i) out[i] = block_weights(w, i).norm();
  return out;
}

namespace {

void check_problem_dims(const RegressionTarget& target,
                        const std::vector<Eigen::MatrixXd>& dictionaries) {
  if (dictionaries.empty() || target.y_per_experiment.size() != dictionaries.size())
    throw std::invalid_argument("stacking: target and dictionary experiment counts differ");
  const long M = dictionaries.front().rows();
  const long N = dictionaries.front().cols();
  for (size_t c = 0; c < dictionaries.size(); ++c) {
    if (dictionaries[c].rows() != M || dictionaries[c].cols() != N)
      throw std::invalid_argument("stacking: dictionary dimensions differ across experiments");
    if (target.y_per_experiment[c].size() != M)
      throw std::invalid_argument("stacking: target length does not match dictionary rows");
  }
}

}  // namespace

StackedProblem stack_problem(const RegressionTarget& target,
                             const std::vector<Eigen::MatrixXd>& dictionaries,
                             std::vector<SignConstraint> sign_constraints) {
  check_problem_dims(target, dictionaries);
  StackedProblem p;
  p.A = dictionaries;
  p.y = target.y_per_experiment;
  p.layout.C = static_cast<int>(dictionaries.size());
  p.layout.M = static_cast<int>(dictionaries.front().rows());
  p.layout.N = static_cast<int>(dictionaries.front().cols());
  if (!sign_constraints.empty() && static_cast<int>(sign_constraints.size()) != p.layout.N)
    throw std::invalid_argument("stacking: sign constraint count does not match block count");
  p.sign_constraints = std::move(sign_constraints);
  return p;
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> concatenate_problem(
    const RegressionTarget& target, const std::vector<Eigen::MatrixXd>& dictionaries) {
  check_problem_dims(target, dictionaries);
  const int C = static_cast<int>(dictionaries.size());
  const long M = dictionaries.front().rows();
  const long N = dictionaries.front().cols();
  Eigen::VectorXd y_cat(C * M);
  Eigen::MatrixXd A_cat(C * M, N);
  for (int c = 0; c < C; ++c) {
    y_cat.segment(c * M, M) = target.y_per_experiment[c];
    A_cat.middleRows(c * M, M) = dictionaries[c];
  }
  return {std::move(y_cat), std::move(A_cat)};
}

std::string write_dataset(const HeterogeneousDataset& ds, const std::string& out_dir,
                          const std::string& stem) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  nlohmann::json manifest;
  manifest["n_x"] = ds.n_x;
  manifest["n_u"] = ds.n_u;
  manifest["experiments"] = nlohmann::json::array();

  for (const auto& exp : ds.experiments) {
    const std::string file = stem + "_" + std::to_string(exp.id) + ".csv";
    std::ofstream os(fs::path(out_dir) / file, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + file + " in " + out_dir);

    os << 't';
    for (int j = 0; j < ds.n_x; ++j) os << ",x" << (j + 1);
    for (int j = 0; j < ds.n_u; ++j) os << ",u" << (j + 1);
    os << '\n';
    for (int m = 0; m < exp.samples(); ++m) {
      os << format_double(exp.times[m]);
      for (int j = 0; j < ds.n_x; ++j) os << ',' << format_double(exp.states(m, j));
      for (int j = 0; j < ds.n_u; ++j) os << ',' << format_double(exp.inputs(m, j));
      os << '\n';
    }

    nlohmann::json entry;
    entry["id"] = exp.id;
    entry["file"] = file;
    entry["samples"] = exp.samples();
    entry["meta"] = exp.meta;
    manifest["experiments"].push_back(std::move(entry));
  }

  const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  std::ofstream os(manifest_path, std::ios::binary);
  os << manifest.dump(2) << '\n';
  return manifest_path;
}

namespace {

std::vector<double> parse_csv_row(const std::string& line, const std::string& file) {
  std::vector<double> row;
  size_t pos = 0;
  while (pos <= line.size()) {
    const size_t next = line.find(',', pos);
    std::string cell =
        line.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    // tolerate surrounding whitespace and CRLF line endings
    const auto first = cell.find_first_not_of(" \t\r");
    const auto last = cell.find_last_not_of(" \t\r");
    if (first != std::string::npos) cell = cell.substr(first, last - first + 1);
    // from_chars round-trips every finite double (including subnormals,
    // where std::stod raises a spurious range error) and rejects trailing
    // garbage that std::stod would silently ignore
    double value = 0.0;
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end || cell.empty())
      throw UsageError("malformed numeric cell '" + cell + "' in " + file);
    row.push_back(value);
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return row;
}

}  // namespace

HeterogeneousDataset read_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream is(manifest_path);
  if (!is) throw UsageError("cannot open manifest " + manifest_path);
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const std::exception& e) {
    throw UsageError("malformed manifest " + manifest_path + ": " + e.what());
  }

  HeterogeneousDataset ds;
  ds.n_x = manifest.at("n_x").get<int>();
  ds.n_u = manifest.at("n_u").get<int>();
  const fs::path dir = fs::path(manifest_path).parent_path();

  for (const auto& entry : manifest.at("experiments")) {
    TimeSeriesExperiment exp;
    exp.id = entry.at("id").get<int>();
    exp.meta = entry.value("meta", nlohmann::json::object());
    const std::string file = entry.at("file").get<std::string>();

    std::ifstream cs(dir / file);
    if (!cs) throw UsageError("cannot open experiment file " + file);
    std::string line;
    if (!std::getline(cs, line)) throw UsageError("empty experiment file " + file);

    std::vector<std::vector<double>> rows;
    while (std::getline(cs, line)) {
      if (line.empty()) continue;
      rows.push_back(parse_csv_row(line, file));
      if (rows.back().size() != static_cast<size_t>(1 + ds.n_x + ds.n_u))
        throw UsageError("wrong column count in " + file);
    }

    const int M = static_cast<int>(rows.size());
    exp.times.resize(M);
    exp.states.resize(M, ds.n_x);
    exp.inputs.resize(M, ds.n_u);
    for (int m = 0; m < M; ++m) {
      exp.times[m] = rows[m][0];
      for (int j = 0; j < ds.n_x; ++j) exp.states(m, j) = rows[m][1 + j];
      for (int j = 0; j < ds.n_u; ++j) exp.inputs(m, j) = rows[m][1 + ds.n_x + j];
    }
    ds.experiments.push_back(std::move(exp));
  }
  return ds;
}

}  // namespace hetsid
