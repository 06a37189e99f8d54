#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "hetsid/common.hpp"
#include "hetsid/datamodel.hpp"
#include "hetsid/derivatives.hpp"
#include "hetsid/dictionary.hpp"
#include "hetsid/evaluation.hpp"
#include "hetsid/simulator.hpp"
#include "hetsid/solver.hpp"

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config file handling: a flat JSON object with dotted keys holding parameter
// defaults; command-line flags override. The file is located by pre-scanning
// argv so its values can seed the option defaults before parsing.

const std::set<std::string>& allowed_config_keys() {
  static const std::set<std::string> keys = {
      "generation.c", "generation.t_end", "generation.sample_interval", "generation.spread",
      "generation.sigma", "generation.seed", "generation.rk_tol", "generation.spread_mask",
      "difference.k",
      "dictionary.spec", "dictionary.strict",
      "solver.k_max", "solver.jitter", "solver.s_structure", "solver.lambda", "solver.stop_tol",
      "solver.support_threshold", "solver.prune_threshold", "solver.theta_rule",
      "admm.rho", "admm.eps_abs", "admm.eps_rel", "admm.max_iters", "admm.adaptive_rho",
      "identify.algorithm", "identify.lambda",
      "sweep.c_grid", "sweep.m_grid", "sweep.repeats", "sweep.algorithms",
      "sweep.group_lasso_lambda", "sweep.seed", "sweep.threads", "sweep.invalid_fraction",
  };
  return keys;
}

json load_config(int argc, char** argv) {
  std::string path;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) {
      path = argv[i + 1];
      break;
    }
    if (a.rfind("--config=", 0) == 0) {
      path = a.substr(9);
      break;
    }
  }
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw hetsid::UsageError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw hetsid::UsageError("config parse error in " + path + ": " + e.what());
  }
  if (!j.is_object()) throw hetsid::UsageError("config root must be a JSON object: " + path);
  for (const auto& item : j.items()) {
    if (!allowed_config_keys().count(item.key()))
      throw hetsid::UsageError("unknown config key: " + item.key());
  }
  return j;
}

struct Cfg {
  json j;

  template <typename T>
  T get(const std::string& key, T fallback) const {
    if (!j.contains(key)) return fallback;
    try {
      return j.at(key).get<T>();
    } catch (const std::exception&) {
      throw hetsid::UsageError("config key '" + key + "' has the wrong type");
    }
  }
};

// ---------------------------------------------------------------------------
// Shared option groups.

struct GenerationCli {
  hetsid::GenerationConfig g;
  std::vector<int> mask{1, 1, 1, 1, 1};

  void seed_from_config(const Cfg& cfg) {
    g.C = cfg.get("generation.c", g.C);
    g.t_end = cfg.get("generation.t_end", g.t_end);
    g.sample_interval = cfg.get("generation.sample_interval", g.sample_interval);
    g.spread = cfg.get("generation.spread", g.spread);
    g.sigma = cfg.get("generation.sigma", g.sigma);
    g.seed = cfg.get("generation.seed", g.seed);
    g.rk_tol = cfg.get("generation.rk_tol", g.rk_tol);
    mask.assign(5, 1);
    for (int i = 0; i < 5; ++i) mask[i] = g.spread_mask[i] ? 1 : 0;
    mask = cfg.get("generation.spread_mask", mask);
  }

  void add_options(CLI::App* cmd, bool with_C) {
    if (with_C)
      cmd->add_option("-C,--experiments", g.C, "number of experiments")
          ->capture_default_str();
    cmd->add_option("--t-end", g.t_end, "simulation horizon")->capture_default_str();
    cmd->add_option("--sample-interval", g.sample_interval, "uniform sampling step")
        ->capture_default_str();
    cmd->add_option("--spread", g.spread, "relative parameter perturbation")
        ->capture_default_str();
    cmd->add_option("--sigma", g.sigma, "measurement noise std")->capture_default_str();
    cmd->add_option("--seed", g.seed, "RNG seed")->capture_default_str();
    cmd->add_option("--rk-tol", g.rk_tol, "integrator tolerance")->capture_default_str();
    cmd->add_option("--spread-mask", mask,
                    "five 0/1 entries: perturb production,threshold,exponent,basal,degradation")
        ->delimiter(',');
  }

  hetsid::GenerationConfig finalize() const {
    if (mask.size() != 5)
      throw hetsid::UsageError("--spread-mask needs exactly 5 entries");
    hetsid::GenerationConfig out = g;
    for (int i = 0; i < 5; ++i) out.spread_mask[i] = mask[i] != 0;
    std::string error;
    if (!out.validate(&error)) throw hetsid::UsageError("generation config: " + error);
    return out;
  }
};

struct SolverCli {
  hetsid::SolverOptions s;
  std::string structure = "block-diagonal-per-experiment";
  std::string theta_rule = "sqrt-c-alpha";

  void seed_from_config(const Cfg& cfg) {
    s.k_max = cfg.get("solver.k_max", s.k_max);
    s.jitter = cfg.get("solver.jitter", s.jitter);
    s.lambda = cfg.get("solver.lambda", s.lambda);
    s.stop_tol = cfg.get("solver.stop_tol", s.stop_tol);
    s.support_threshold = cfg.get("solver.support_threshold", s.support_threshold);
    s.prune_threshold = cfg.get("solver.prune_threshold", s.prune_threshold);
    structure = cfg.get("solver.s_structure", structure);
    theta_rule = cfg.get("solver.theta_rule", theta_rule);
    s.admm.rho = cfg.get("admm.rho", s.admm.rho);
    s.admm.eps_abs = cfg.get("admm.eps_abs", s.admm.eps_abs);
    s.admm.eps_rel = cfg.get("admm.eps_rel", s.admm.eps_rel);
    s.admm.max_iters = cfg.get("admm.max_iters", s.admm.max_iters);
    s.admm.adaptive_rho = cfg.get("admm.adaptive_rho", s.admm.adaptive_rho);
  }

  void add_options(CLI::App* cmd) {
    cmd->add_option("--k-max", s.k_max, "outer iterations")->capture_default_str();
    cmd->add_option("--jitter", s.jitter, "trace-scaled inversion ridge")->capture_default_str();
    cmd->add_option("--s-structure", structure,
                    "noise precision structure: block-diagonal-per-experiment|full|"
                    "fixed-identity-scaled")
        ->capture_default_str();
    cmd->add_option("--s-lambda", s.lambda, "scale for fixed-identity-scaled")
        ->capture_default_str();
    cmd->add_option("--stop-tol", s.stop_tol, "relative cost-decrease stop")
        ->capture_default_str();
    cmd->add_option("--support-threshold", s.support_threshold,
                    "support cut relative to max block norm")
        ->capture_default_str();
    cmd->add_option("--prune-threshold", s.prune_threshold,
                    "gamma prune cut relative to max gamma")
        ->capture_default_str();
    cmd->add_option("--theta-rule", theta_rule, "penalty weights: sqrt-c-alpha|c-alpha")
        ->capture_default_str();
    cmd->add_option("--rho", s.admm.rho, "ADMM penalty")->capture_default_str();
    cmd->add_option("--eps-abs", s.admm.eps_abs, "ADMM absolute tolerance")
        ->capture_default_str();
    cmd->add_option("--eps-rel", s.admm.eps_rel, "ADMM relative tolerance")
        ->capture_default_str();
    cmd->add_option("--max-iters", s.admm.max_iters, "ADMM iteration cap")
        ->capture_default_str();
    cmd->add_flag("--adaptive-rho", s.admm.adaptive_rho, "residual-balancing rho adaptation");
  }

  hetsid::SolverOptions finalize() const {
    hetsid::SolverOptions out = s;
    if (structure == "block-diagonal-per-experiment" || structure == "block" ||
        structure == "block_diagonal") {
      out.S_structure = hetsid::PrecisionMatrix::Structure::block_diagonal;
    } else if (structure == "full") {
      out.S_structure = hetsid::PrecisionMatrix::Structure::full;
    } else if (structure == "fixed-identity-scaled" || structure == "fixed") {
      out.S_structure = hetsid::PrecisionMatrix::Structure::fixed_identity_scaled;
    } else {
      throw hetsid::UsageError("unknown --s-structure: " + structure);
    }
    if (theta_rule == "sqrt-c-alpha" || theta_rule == "sqrt" || theta_rule == "sqrt_c_alpha") {
      out.theta_rule = hetsid::SolverOptions::ThetaRule::sqrt_c_alpha;
    } else if (theta_rule == "c-alpha" || theta_rule == "linear" || theta_rule == "c_alpha") {
      out.theta_rule = hetsid::SolverOptions::ThetaRule::c_alpha;
    } else {
      throw hetsid::UsageError("unknown --theta-rule: " + theta_rule);
    }
    return out;
  }
};

hetsid::DictionarySpec load_spec(const std::string& path) {
  if (path.empty()) return hetsid::default_repressilator_spec();
  std::ifstream in(path);
  if (!in) throw hetsid::UsageError("cannot open dictionary spec: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw hetsid::UsageError("dictionary spec parse error: " + std::string(e.what()));
  }
  return hetsid::DictionarySpec::from_json(j);
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// dx<n> = c1*term1 +/- c2*term2 ... with terms ordered by |coefficient|.
std::string equation_line(int state_1b, const std::vector<std::string>& names,
                          const std::vector<std::pair<int, double>>& terms) {
  std::string s = "dx" + std::to_string(state_1b) + " = ";
  if (terms.empty()) return s + "0";
  bool first = true;
  for (const auto& [index, coeff] : terms) {
    const std::string mag = fmt3(std::abs(coeff));
    const std::string body = names[index] == "1" ? mag : mag + "*" + names[index];
    if (first) {
      if (coeff < 0) s += "-";
      s += body;
      first = false;
    } else {
      s += coeff < 0 ? " - " : " + ";
      s += body;
    }
  }
  return s;
}

json precision_to_json(const hetsid::PrecisionMatrix& S, int C, int M) {
  json j;
  switch (S.structure) {
    case hetsid::PrecisionMatrix::Structure::fixed_identity_scaled:
      j["structure"] = "fixed-identity-scaled";
      j["lambda"] = S.lambda;
      break;
    case hetsid::PrecisionMatrix::Structure::block_diagonal: {
      j["structure"] = "block-diagonal-per-experiment";
      json diags = json::array();
      for (int c = 0; c < C; ++c) {
        const Eigen::VectorXd d = S.blocks[c].diagonal();
        diags.push_back(std::vector<double>(d.data(), d.data() + d.size()));
      }
      j["block_diagonals"] = std::move(diags);
      break;
    }
    case hetsid::PrecisionMatrix::Structure::full: {
      j["structure"] = "full";
      const Eigen::VectorXd d = S.dense_matrix(C, M).diagonal();
      j["diagonal"] = std::vector<double>(d.data(), d.data() + d.size());
      break;
    }
  }
  return j;
}

// ---------------------------------------------------------------------------
// Subcommands.

int run_simulate(const GenerationCli& gen, const std::string& out_dir, const std::string& stem) {
  const hetsid::GenerationConfig g = gen.finalize();
  const hetsid::HeterogeneousDataset ds = hetsid::generate_dataset(g);
  const hetsid::ValidationReport report = hetsid::validate_dataset(ds);
  if (!report.ok()) {
    std::cerr << "generated dataset failed validation:\n" << report.to_string();
    return 1;
  }
  const std::string manifest = hetsid::write_dataset(ds, out_dir, stem);
  int violations = 0;
  for (const auto& exp : ds.experiments)
    violations += exp.meta.value("positivity_violations", 0);
  std::cerr << "simulated " << ds.C() << " experiments, "
            << (ds.experiments.empty() ? 0 : ds.experiments[0].samples())
            << " samples each; positivity violations: " << violations << "\n";
  std::cout << manifest << "\n";
  return 0;
}

int run_derivatives(const std::string& manifest, int k, const std::string& out_dir) {
  if (k < 1) throw hetsid::UsageError("-k must be >= 1");
  const hetsid::HeterogeneousDataset ds = hetsid::read_dataset(manifest);
  std::filesystem::create_directories(out_dir);
  const hetsid::DifferenceSpec spec{k};
  for (const auto& exp : ds.experiments) {
    if (exp.samples() < 2 * k + 1)
      throw hetsid::UsageError("experiment " + std::to_string(exp.id) + " has " +
                               std::to_string(exp.samples()) + " samples; need >= " +
                               std::to_string(2 * k + 1));
    const hetsid::DerivativeEstimate est =
        hetsid::estimate_derivative(exp.times, exp.states, spec);
    const std::string path = out_dir + "/derivative_" + std::to_string(exp.id) + ".csv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "# retained_rows=" << est.row_indices.front() << ".." << est.row_indices.back()
        << " (0-based)\n";
    out << "t";
    for (int j = 0; j < est.values.cols(); ++j) out << ",dx" << j + 1;
    out << "\n";
    for (int r = 0; r < est.values.rows(); ++r) {
      out << hetsid::format_double(est.times[r]);
      for (int j = 0; j < est.values.cols(); ++j)
        out << ',' << hetsid::format_double(est.values(r, j));
      out << "\n";
    }
    if (!out) throw std::runtime_error("write failed for " + path);
    std::cout << path << "\n";
  }
  return 0;
}

int run_dictionary(const std::string& manifest, const std::string& spec_path, int k, bool strict,
                   const std::string& out_dir) {
  if (k < 0) throw hetsid::UsageError("-k must be >= 0");
  const hetsid::HeterogeneousDataset ds = hetsid::read_dataset(manifest);
  const hetsid::DictionarySpec spec = load_spec(spec_path);
  const std::vector<std::string> names = spec.names();
  std::filesystem::create_directories(out_dir);

  {
    const std::string spec_out = out_dir + "/spec.json";
    std::ofstream out(spec_out, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + spec_out);
    out << spec.to_json().dump(2) << "\n";
    std::cout << spec_out << "\n";
  }

  hetsid::DictionaryBuildOptions opts;
  opts.strict_negative = strict;
  for (const auto& exp : ds.experiments) {
    if (exp.samples() < 2 * k + 1)
      throw hetsid::UsageError("experiment " + std::to_string(exp.id) +
                               " has too few samples for the requested trim");
    std::vector<int> rows;
    for (int r = k; r < exp.samples() - k; ++r) rows.push_back(r);
    const hetsid::DictionaryMatrix dict = hetsid::build_dictionary(exp, spec, rows, opts);
    if (dict.clamped_values > 0)
      std::cerr << "experiment " << exp.id << ": clamped " << dict.clamped_values
                << " negative state values\n";
    const std::string path = out_dir + "/dictionary_" + std::to_string(exp.id) + ".csv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    for (size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << csv_quote(names[j]);
    out << "\n";
    for (int r = 0; r < dict.values.rows(); ++r) {
      for (int j = 0; j < dict.values.cols(); ++j)
        out << (j ? "," : "") << hetsid::format_double(dict.values(r, j));
      out << "\n";
    }
    if (!out) throw std::runtime_error("write failed for " + path);
    std::cout << path << "\n";
  }
  return 0;
}

int run_identify(const std::string& manifest, const std::string& spec_path, int k, int state_1b,
                 const std::string& algorithm, double lambda, const SolverCli& solver_cli,
                 const std::string& out_path) {
  if (k < 1) throw hetsid::UsageError("-k must be >= 1");
  if (algorithm != "full" && algorithm != "group_lasso" && algorithm != "group-lasso")
    throw hetsid::UsageError("unknown --algorithm: " + algorithm);
  const bool group_lasso = algorithm != "full";
  const hetsid::SolverOptions solver = solver_cli.finalize();

  const hetsid::HeterogeneousDataset ds = hetsid::read_dataset(manifest);
  const hetsid::DictionarySpec spec = load_spec(spec_path);
  const std::vector<std::string> names = spec.names();
  const int C = ds.C();
  if (C < 1) throw hetsid::UsageError("dataset has no experiments");
  if (state_1b < 0 || state_1b > ds.n_x)
    throw hetsid::UsageError("--state must be in 0 (all) .. " + std::to_string(ds.n_x));

  const hetsid::DifferenceSpec dspec{k};
  std::vector<hetsid::DerivativeEstimate> estimates(C);
  std::vector<hetsid::DictionaryMatrix> dictionaries(C);
  for (int c = 0; c < C; ++c) {
    const auto& exp = ds.experiments[c];
    if (exp.samples() < 2 * k + 1)
      throw hetsid::UsageError("experiment " + std::to_string(exp.id) +
                               " has too few samples for k=" + std::to_string(k));
    estimates[c] = hetsid::estimate_derivative(exp.times, exp.states, dspec);
    dictionaries[c] = hetsid::build_dictionary(exp, spec, estimates[c].row_indices);
  }

  std::vector<int> states;
  if (state_1b == 0) {
    for (int n = 0; n < ds.n_x; ++n) states.push_back(n);
  } else {
    states.push_back(state_1b - 1);
  }

  json out_json;
  out_json["algorithm"] = group_lasso ? "group_lasso" : "full";
  if (group_lasso) out_json["lambda"] = lambda;
  out_json["C"] = C;
  out_json["M"] = static_cast<int>(estimates[0].values.rows());
  out_json["difference_k"] = k;
  out_json["dictionary"] = names;
  out_json["states"] = json::array();

  for (int n : states) {
    hetsid::RegressionTarget target;
    target.state_index = n;
    for (int c = 0; c < C; ++c) target.y_per_experiment.push_back(estimates[c].values.col(n));
    const hetsid::StackedProblem problem = hetsid::stack_problem(target, dictionaries);
    const hetsid::IdentificationResult result =
        group_lasso ? hetsid::group_lasso_baseline(problem, lambda, solver)
                    : hetsid::identify(problem, solver);

    std::vector<std::pair<int, double>> terms;  // (block, mean weight over experiments)
    for (int i : result.support) {
      const Eigen::VectorXd wi = problem.block_weights(result.w, i);
      terms.emplace_back(i, wi.mean());
    }
    std::sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) {
      return std::abs(a.second) > std::abs(b.second);
    });
    std::cout << equation_line(n + 1, names, terms) << "\n";

    json js;
    js["state"] = n + 1;
    js["iterations"] = result.iterations;
    js["inner_converged"] = result.inner_converged;
    js["final_cost"] = result.final_cost;
    js["cost_history"] = result.cost_history;
    js["support"] = json::array();
    for (int i : result.support) js["support"].push_back(i + 1);
    js["terms"] = json::array();
    for (const auto& [i, mean_w] : terms) {
      const Eigen::VectorXd wi = problem.block_weights(result.w, i);
      json t;
      t["index"] = i + 1;
      t["name"] = names[i];
      t["mean_weight"] = mean_w;
      t["weights"] = std::vector<double>(wi.data(), wi.data() + wi.size());
      t["gamma"] = result.gamma[i];
      js["terms"].push_back(std::move(t));
    }
    js["noise_precision"] = precision_to_json(result.S, C, problem.layout.M);
    out_json["states"].push_back(std::move(js));
  }

  if (!out_path.empty()) {
    const std::filesystem::path parent = std::filesystem::path(out_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + out_path);
    out << out_json.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed for " + out_path);
    std::cerr << "wrote " << out_path << "\n";
  }
  return 0;
}

int run_sweep_cmd(hetsid::SweepConfig config, const std::vector<std::string>& algorithms,
                  const std::string& out_dir) {
  config.algorithms.clear();
  for (const std::string& a : algorithms) {
    if (a == "full") {
      config.algorithms.push_back(hetsid::SweepAlgorithm::full);
    } else if (a == "group_lasso" || a == "group-lasso" || a == "gl") {
      config.algorithms.push_back(hetsid::SweepAlgorithm::group_lasso);
    } else {
      throw hetsid::UsageError("unknown algorithm: " + a);
    }
  }
  if (config.algorithms.empty()) throw hetsid::UsageError("no algorithms selected");

  int total_tasks = static_cast<int>(config.C_grid.size() * config.M_grid.size()) *
                    config.repeats;
  const int step = std::max(1, total_tasks / 100);
  const auto progress = [&](int done, int total) {
    if (done % step == 0 || done == total)
      std::cerr << "\r" << done << "/" << total << " tasks" << std::flush;
  };
  const hetsid::SweepReport report = hetsid::run_sweep(config, progress);
  std::cerr << "\n";

  std::filesystem::create_directories(out_dir);
  const std::string records_path = out_dir + "/records.csv";
  const std::string summary_path = out_dir + "/summary.json";
  hetsid::write_sweep_csv(report.records, records_path);
  hetsid::write_sweep_summary_json(report, config, summary_path);
  std::cout << records_path << "\n" << summary_path << "\n";
  for (hetsid::SweepAlgorithm a : config.algorithms) {
    const std::string heat_path = out_dir + "/heatmap_" + hetsid::to_string(a) + ".csv";
    hetsid::write_heatmap_csv(report, a, heat_path);
    std::cout << heat_path << "\n";
  }

  for (hetsid::SweepAlgorithm a : config.algorithms) {
    const hetsid::SweepCellStats* best = nullptr;
    for (const auto& cell : report.cells)
      if (cell.algorithm == a && cell.valid &&
          (!best || cell.mean_rnmse < best->mean_rnmse))
        best = &cell;
    if (best)
      std::cout << hetsid::to_string(a) << ": best cell C=" << best->C << " M=" << best->M
                << " mean RNMSE " << hetsid::format_double(best->mean_rnmse) << "\n";
  }

  if (report.invalid_cells > 0) {
    for (const auto& cell : report.cells)
      if (!cell.valid)
        std::cerr << "invalid cell (" << hetsid::to_string(cell.algorithm) << ", C=" << cell.C
                  << ", M=" << cell.M << "): " << cell.failed << "/" << cell.runs
                  << " runs failed\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::ios::sync_with_stdio(false);
  try {
    const Cfg cfg{load_config(argc, argv)};

    CLI::App app{"Sparse identification of reaction-network dynamics from heterogeneous "
                 "time-series experiments"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path,
                   "JSON file with flat dotted parameter keys; flags override");

    int exit_code = 0;

    // simulate ---------------------------------------------------------------
    auto* sim = app.add_subcommand("simulate", "synthesize a repressilator dataset");
    auto sim_gen = std::make_shared<GenerationCli>();
    sim_gen->seed_from_config(cfg);
    sim_gen->add_options(sim, /*with_C=*/true);
    auto sim_out = std::make_shared<std::string>();
    auto sim_stem = std::make_shared<std::string>("experiment");
    sim->add_option("-o,--out", *sim_out, "output directory")->required();
    sim->add_option("--stem", *sim_stem, "file name stem")->capture_default_str();
    sim->callback([&exit_code, sim_gen, sim_out, sim_stem]() {
      exit_code = run_simulate(*sim_gen, *sim_out, *sim_stem);
    });

    // derivatives ------------------------------------------------------------
    auto* der = app.add_subcommand("derivatives", "estimate state derivatives from a dataset");
    auto der_manifest = std::make_shared<std::string>();
    auto der_out = std::make_shared<std::string>();
    auto der_k = std::make_shared<int>(cfg.get("difference.k", 1));
    der->add_option("-m,--manifest", *der_manifest, "dataset manifest JSON")->required();
    der->add_option("-o,--out", *der_out, "output directory")->required();
    der->add_option("-k,--half-window", *der_k, "difference half-window")->capture_default_str();
    der->callback([&exit_code, der_manifest, der_k, der_out]() {
      exit_code = run_derivatives(*der_manifest, *der_k, *der_out);
    });

    // dictionary ------------------------------------------------------------
    auto* dic = app.add_subcommand("dictionary", "evaluate the candidate basis on a dataset");
    auto dic_manifest = std::make_shared<std::string>();
    auto dic_out = std::make_shared<std::string>();
    auto dic_spec = std::make_shared<std::string>(cfg.get("dictionary.spec", std::string()));
    auto dic_k = std::make_shared<int>(cfg.get("difference.k", 1));
    auto dic_strict = std::make_shared<bool>(cfg.get("dictionary.strict", false));
    dic->add_option("-m,--manifest", *dic_manifest, "dataset manifest JSON")->required();
    dic->add_option("-o,--out", *dic_out, "output directory")->required();
    dic->add_option("--spec", *dic_spec, "dictionary spec JSON (default: built-in basis)");
    dic->add_option("-k,--half-window", *dic_k,
                    "trim matching the derivative half-window (0 = keep all rows)")
        ->capture_default_str();
    dic->add_flag("--strict", *dic_strict, "error on negative state values instead of clamping");
    dic->callback([&exit_code, dic_manifest, dic_spec, dic_k, dic_strict, dic_out]() {
      exit_code = run_dictionary(*dic_manifest, *dic_spec, *dic_k, *dic_strict, *dic_out);
    });

    // identify ---------------------------------------------------------------
    auto* ide = app.add_subcommand("identify", "identify sparse dynamics from a dataset");
    auto ide_manifest = std::make_shared<std::string>();
    auto ide_spec = std::make_shared<std::string>(cfg.get("dictionary.spec", std::string()));
    auto ide_k = std::make_shared<int>(cfg.get("difference.k", 1));
    auto ide_state = std::make_shared<int>(0);
    auto ide_alg = std::make_shared<std::string>(
        cfg.get("identify.algorithm", std::string("full")));
    auto ide_lambda = std::make_shared<double>(cfg.get("identify.lambda", 40.0));
    auto ide_out = std::make_shared<std::string>();
    auto ide_solver = std::make_shared<SolverCli>();
    ide_solver->seed_from_config(cfg);
    ide->add_option("-m,--manifest", *ide_manifest, "dataset manifest JSON")->required();
    ide->add_option("--spec", *ide_spec, "dictionary spec JSON (default: built-in basis)");
    ide->add_option("-k,--half-window", *ide_k, "difference half-window")->capture_default_str();
    ide->add_option("--state", *ide_state, "1-based state to identify (0 = all)")
        ->capture_default_str();
    ide->add_option("--algorithm", *ide_alg, "full|group_lasso")->capture_default_str();
    ide->add_option("--lambda", *ide_lambda, "group-lasso regularization")
        ->capture_default_str();
    ide->add_option("-o,--out", *ide_out, "result JSON path");
    ide_solver->add_options(ide);
    ide->callback([&exit_code, ide_manifest, ide_spec, ide_k, ide_state, ide_alg, ide_lambda,
                   ide_solver, ide_out]() {
      exit_code = run_identify(*ide_manifest, *ide_spec, *ide_k, *ide_state, *ide_alg,
                               *ide_lambda, *ide_solver, *ide_out);
    });

    // sweep ------------------------------------------------------------------
    auto* swp = app.add_subcommand("sweep", "benchmark over a (C, M) grid");
    auto swp_config = std::make_shared<hetsid::SweepConfig>(hetsid::default_sweep_config());
    auto swp_out = std::make_shared<std::string>();
    auto swp_algorithms = std::make_shared<std::vector<std::string>>(
        std::vector<std::string>{"group_lasso", "full"});
    auto swp_gen = std::make_shared<GenerationCli>();
    swp_gen->g = swp_config->generation;
    swp_gen->seed_from_config(cfg);
    auto swp_solver = std::make_shared<SolverCli>();
    swp_solver->s = swp_config->solver;
    swp_solver->seed_from_config(cfg);

    swp_config->C_grid = cfg.get("sweep.c_grid", swp_config->C_grid);
    swp_config->M_grid = cfg.get("sweep.m_grid", swp_config->M_grid);
    swp_config->repeats = cfg.get("sweep.repeats", swp_config->repeats);
    swp_config->group_lasso_lambda =
        cfg.get("sweep.group_lasso_lambda", swp_config->group_lasso_lambda);
    swp_config->seed = cfg.get("sweep.seed", swp_config->seed);
    swp_config->threads = cfg.get("sweep.threads", swp_config->threads);
    swp_config->invalid_fraction = cfg.get("sweep.invalid_fraction", swp_config->invalid_fraction);
    *swp_algorithms = cfg.get("sweep.algorithms", *swp_algorithms);
    auto swp_diff_k = std::make_shared<int>(cfg.get("difference.k", swp_config->difference.k));

    swp->add_option("-o,--out", *swp_out, "output directory")->required();
    swp->add_option("--c-grid", swp_config->C_grid, "experiment counts")
        ->delimiter(',')
        ->capture_default_str();
    swp->add_option("--m-grid", swp_config->M_grid, "samples per experiment")
        ->delimiter(',')
        ->capture_default_str();
    swp->add_option("--repeats", swp_config->repeats, "repeats per cell")
        ->capture_default_str();
    swp->add_option("--algorithms", *swp_algorithms, "subset of full,group_lasso")
        ->delimiter(',')
        ->capture_default_str();
    swp->add_option("--lambda", swp_config->group_lasso_lambda,
                    "group-lasso baseline regularization")
        ->capture_default_str();
    swp->add_option("--sweep-seed", swp_config->seed, "master seed for per-task seeds")
        ->capture_default_str();
    swp->add_option("--threads", swp_config->threads, "worker threads (0 = hardware)")
        ->capture_default_str();
    swp->add_option("-k,--half-window", *swp_diff_k, "difference half-window")
        ->capture_default_str();
    swp_gen->add_options(swp, /*with_C=*/false);
    swp_solver->add_options(swp);
    swp->callback(
        [&exit_code, swp_config, swp_algorithms, swp_gen, swp_solver, swp_diff_k, swp_out]() {
          hetsid::SweepConfig config = *swp_config;
          config.generation = swp_gen->finalize();
          config.solver = swp_solver->finalize();
          config.difference.k = *swp_diff_k;
          if (config.difference.k < 1) throw hetsid::UsageError("-k must be >= 1");
          exit_code = run_sweep_cmd(config, *swp_algorithms, *swp_out);
        });

    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : 2;
    }
    return exit_code;
  } catch (const hetsid::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
