#include <doctest.h>

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "hetsid/common.hpp"
#include "hetsid/datamodel.hpp"
#include "oracles.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

hetsid::StackedProblem small_problem() {
  MatrixXd A0(3, 2), A1(3, 2);
  A0 << 1, 2, 3, 4, 5, 6;
  A1 << 7, 8, 9, 10, 11, 12;
  hetsid::RegressionTarget target;
  target.state_index = 0;
  target.y_per_experiment = {VectorXd::LinSpaced(3, 1, 3), VectorXd::LinSpaced(3, 4, 6)};
  return hetsid::stack_problem(target, {A0, A1});
}

hetsid::HeterogeneousDataset small_dataset() {
  hetsid::HeterogeneousDataset ds;
  ds.n_x = 2;
  ds.n_u = 1;
  for (int c = 0; c < 2; ++c) {
    hetsid::TimeSeriesExperiment exp;
    exp.id = c + 1;
    exp.times = VectorXd::LinSpaced(3, 0.0, 1.0);
    exp.states.resize(3, 2);
    exp.states << 1.0 / 3.0, -2.5, 0.125, 1e-17, 3.14159, 7;
    exp.states(2, 1) = 0.75 + c;
    exp.inputs = MatrixXd::Constant(3, 1, 0.5 * c);
    exp.meta = {{"sigma", 0.25}, {"note", "unit"}};
    ds.experiments.push_back(exp);
  }
  return ds;
}

}  // namespace

TEST_CASE("stacked problem matches the dense block definition") {
  const hetsid::StackedProblem p = small_problem();
  CHECK(p.layout.C == 2);
  CHECK(p.layout.M == 3);
  CHECK(p.layout.N == 2);

  const MatrixXd dense = p.dense_stacked_A();
  const MatrixXd ref = oracle::dense_stacked(p.A);
  CHECK((dense - ref).norm() == 0.0);
  CHECK((p.stacked_y() - oracle::dense_stacked_y(p.y)).norm() == 0.0);

  // block i occupies column i*C + c and rows of experiment c only
  CHECK(dense(0, 0) == 1.0);   // block 0, experiment 0, row 0
  CHECK(dense(3, 1) == 7.0);   // block 0, experiment 1, row 0
  CHECK(dense(0, 1) == 0.0);
  CHECK(dense(4, 3) == 10.0);  // block 1, experiment 1, row 1

  VectorXd w(4);
  w << 0.5, -1.5, 2.0, 0.25;  // [w_0^[1], w_0^[2], w_1^[1], w_1^[2]]
  CHECK((p.multiply(w) - dense * w).norm() < 1e-13);

  CHECK(p.experiment_weights(w, 0)[0] == 0.5);
  CHECK(p.experiment_weights(w, 1)[1] == 0.25);
  CHECK(p.block_weights(w, 1)[0] == 2.0);
  CHECK(p.block_norms(w)[0] == doctest::Approx(std::hypot(0.5, 1.5)));
}

TEST_CASE("concatenated formulation stacks experiments vertically") {
  const hetsid::StackedProblem p = small_problem();
  hetsid::RegressionTarget target;
  target.state_index = 0;
  target.y_per_experiment = p.y;
  const auto [y_cat, A_cat] = hetsid::concatenate_problem(target, p.A);
  CHECK(A_cat.rows() == 6);
  CHECK(A_cat.cols() == 2);
  CHECK(A_cat(0, 0) == 1.0);
  CHECK(A_cat(3, 0) == 7.0);
  CHECK(y_cat[3] == 4.0);
}

TEST_CASE("stacking validates dimensions") {
  hetsid::RegressionTarget target;
  target.y_per_experiment = {VectorXd::Zero(3)};
  CHECK_THROWS_AS(hetsid::stack_problem(target, std::vector<MatrixXd>{}),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      hetsid::stack_problem(target, std::vector<MatrixXd>{MatrixXd::Zero(4, 2)}),
      std::invalid_argument);
  target.y_per_experiment = {VectorXd::Zero(3), VectorXd::Zero(3)};
  CHECK_THROWS_AS(hetsid::stack_problem(
                      target, std::vector<MatrixXd>{MatrixXd::Zero(3, 2), MatrixXd::Zero(3, 3)}),
                  std::invalid_argument);
  target.y_per_experiment = {VectorXd::Zero(3)};
  CHECK_THROWS_AS(
      hetsid::stack_problem(target, std::vector<MatrixXd>{MatrixXd::Zero(3, 2)},
                            std::vector<hetsid::SignConstraint>{
                                hetsid::SignConstraint::free_sign}),
      std::invalid_argument);
}

TEST_CASE("dataset validation flags structural problems") {
  hetsid::HeterogeneousDataset good = small_dataset();
  CHECK(hetsid::validate_dataset(good).ok());

  hetsid::HeterogeneousDataset empty;
  CHECK_FALSE(hetsid::validate_dataset(empty).ok());

  hetsid::HeterogeneousDataset unequal = small_dataset();
  unequal.experiments[1].times = VectorXd::LinSpaced(4, 0, 1);
  unequal.experiments[1].states = MatrixXd::Zero(4, 2);
  unequal.experiments[1].inputs = MatrixXd::Zero(4, 1);
  CHECK_FALSE(hetsid::validate_dataset(unequal).ok());

  hetsid::HeterogeneousDataset decreasing = small_dataset();
  decreasing.experiments[0].times[2] = decreasing.experiments[0].times[1];
  CHECK_FALSE(hetsid::validate_dataset(decreasing).ok());

  hetsid::HeterogeneousDataset nonfinite = small_dataset();
  nonfinite.experiments[0].states(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(hetsid::validate_dataset(nonfinite).ok());

  hetsid::HeterogeneousDataset wrong_dim = small_dataset();
  wrong_dim.n_x = 3;
  CHECK_FALSE(hetsid::validate_dataset(wrong_dim).ok());
}

TEST_CASE("dataset disk round trip is exact") {
  const hetsid::HeterogeneousDataset ds = small_dataset();
  const fs::path dir = fs::temp_directory_path() / "hetsid_test_datamodel";
  fs::remove_all(dir);
  const std::string manifest = hetsid::write_dataset(ds, dir.string(), "exp");
  CHECK(fs::exists(manifest));
  CHECK(fs::exists(dir / "exp_1.csv"));

  const hetsid::HeterogeneousDataset back = hetsid::read_dataset(manifest);
  REQUIRE(back.C() == 2);
  CHECK(back.n_x == 2);
  CHECK(back.n_u == 1);
  for (int c = 0; c < 2; ++c) {
    CHECK(back.experiments[c].id == ds.experiments[c].id);
    CHECK((back.experiments[c].times - ds.experiments[c].times).norm() == 0.0);
    CHECK((back.experiments[c].states - ds.experiments[c].states).norm() == 0.0);
    CHECK((back.experiments[c].inputs - ds.experiments[c].inputs).norm() == 0.0);
    CHECK(back.experiments[c].meta.at("sigma").get<double>() == 0.25);
    CHECK(back.experiments[c].meta.at("note").get<std::string>() == "unit");
  }
  fs::remove_all(dir);
}

TEST_CASE("malformed inputs are reported as usage errors") {
  CHECK_THROWS_AS(hetsid::read_dataset("/nonexistent/manifest.json"), hetsid::UsageError);

  const fs::path dir = fs::temp_directory_path() / "hetsid_test_badcsv";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream m(dir / "manifest.json");
    m << R"({"n_x":1,"n_u":0,"experiments":[{"id":1,"file":"e.csv","samples":2}]})";
  }
  {
    std::ofstream c(dir / "e.csv");
    c << "t,x1\n0,abc\n";
  }
  CHECK_THROWS_AS(hetsid::read_dataset((dir / "manifest.json").string()), hetsid::UsageError);
  {
    std::ofstream c(dir / "e.csv");
    c << "t,x1\n0,1,2\n";
  }
  CHECK_THROWS_AS(hetsid::read_dataset((dir / "manifest.json").string()), hetsid::UsageError);
  {
    std::ofstream m(dir / "manifest.json");
    m << "{not json";
  }
  CHECK_THROWS_AS(hetsid::read_dataset((dir / "manifest.json").string()), hetsid::UsageError);
  fs::remove_all(dir);
}

TEST_CASE("shortest round-trip formatting") {
  CHECK(hetsid::format_double(0.1) == "0.1");
  CHECK(hetsid::format_double(1.0 / 3.0) == "0.3333333333333333");
  CHECK(hetsid::format_double(-2.5e-17) == "-2.5e-17");
  CHECK(hetsid::format_double(1234567.0) == "1234567");
  // parse-back exactness on awkward values (from_chars handles subnormals,
  // where std::stod reports a spurious range error)
  for (double v : {0.1, 1.0 / 3.0, 5e-324, 1.7976931348623157e308, -0.0}) {
    const std::string s = hetsid::format_double(v);
    double back = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), back);
    REQUIRE(ec == std::errc{});
    REQUIRE(ptr == s.data() + s.size());
    CHECK(back == v);
    CHECK(std::signbit(back) == std::signbit(v));
  }
}
