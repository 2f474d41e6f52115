#include <catch2/catch_amalgamated.hpp>

#include "opfd/feeder.hpp"
#include "opfd/grid.hpp"
#include "opfd/rng.hpp"
#include "oracles.hpp"

using namespace opfd;

namespace {

FeederModel chain2() {
  FeederModel m;
  m.n_bus = 2;
  m.lines = {{0, 1, 0.01, 0.01}, {1, 2, 0.02, 0.02}};
  return m;
}

FeederModel single_line(double r, double x) {
  FeederModel m;
  m.n_bus = 1;
  m.lines = {{0, 1, r, x}};
  return m;
}

FeederModel star2() {
  FeederModel m;
  m.n_bus = 2;
  m.lines = {{0, 1, 0.01, 0.01}, {0, 2, 0.01, 0.01}};
  return m;
}

/// Random tree on n buses: parent of bus k drawn among 0..k-1.
FeederModel random_tree(int n, Rng& rng) {
  FeederModel m;
  m.n_bus = n;
  for (int k = 1; k <= n; ++k) {
    int parent = (k == 1) ? 0 : rng.index(k);
    m.lines.push_back({parent, k, 0.002 + 0.01 * rng.uniform(), 0.002 + 0.01 * rng.uniform()});
  }
  return m;
}

}  // namespace

TEST_CASE("grid matrices on a 2-bus chain match the common-path construction") {
  GridMatrices g = build_grid_matrices(chain2());
  Mat expected(2, 2);
  expected << 0.01, 0.01, 0.01, 0.03;
  REQUIRE((g.R - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("grid matrices on a chain agree with AC finite differences") {
  FeederModel m = chain2();
  GridMatrices g = build_grid_matrices(m);
  const double h = 1e-4;
  for (int col = 0; col < 2; ++col) {
    Vec p = Vec::Zero(2), q = Vec::Zero(2);
    p(col) = h;
    Vec vp = ac_power_flow(m, p, q, 1.0);
    p(col) = -h;
    Vec vm = ac_power_flow(m, p, q, 1.0);
    Vec fd = (vp - vm) / (2.0 * h);
    REQUIRE((fd - g.R.col(col)).cwiseAbs().maxCoeff() < 1e-3);
  }
}

TEST_CASE("single line and star cases") {
  GridMatrices g1 = build_grid_matrices(single_line(0.05, 0.05));
  REQUIRE(g1.R(0, 0) == Catch::Approx(0.05).margin(1e-15));
  REQUIRE(g1.X(0, 0) == Catch::Approx(0.05).margin(1e-15));

  GridMatrices g2 = build_grid_matrices(star2());
  REQUIRE(g2.R(0, 1) == 0.0);
  REQUIRE(g2.R(1, 0) == 0.0);
  REQUIRE(g2.R(0, 0) == Catch::Approx(0.01));
  REQUIRE(g2.R(1, 1) == Catch::Approx(0.01));
}

TEST_CASE("grid matrices reject bad topology and impedances") {
  FeederModel cycle;
  cycle.n_bus = 2;
  cycle.lines = {{0, 1, 0.01, 0.01}, {1, 2, 0.01, 0.01}, {2, 0, 0.01, 0.01}};
  REQUIRE_THROWS_AS(build_grid_matrices(cycle), TopologyError);

  FeederModel disconnected;
  disconnected.n_bus = 3;
  disconnected.lines = {{0, 1, 0.01, 0.01}, {2, 3, 0.01, 0.01}, {1, 2, 0.01, 0.01}};
  REQUIRE_NOTHROW(build_grid_matrices(disconnected));
  disconnected.lines[2] = {0, 1, 0.01, 0.01};  // duplicate edge, bus 2..3 detached
  REQUIRE_THROWS_AS(build_grid_matrices(disconnected), TopologyError);

  FeederModel zero_r = single_line(0.0, 0.05);
  REQUIRE_THROWS_AS(build_grid_matrices(zero_r), ModelError);
}

TEST_CASE("grid matrices are symmetric positive definite on random trees") {
  Rng rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    FeederModel m = random_tree(2 + rng.index(12), rng);
    GridMatrices g = build_grid_matrices(m);
    REQUIRE((g.R - g.R.transpose()).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((g.X - g.X.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Mat> er(g.R), ex(g.X);
    REQUIRE(er.eigenvalues().minCoeff() > 0.0);
    REQUIRE(ex.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("linear voltage basics") {
  GridMatrices g = build_grid_matrices(chain2());
  Vec zero = Vec::Zero(2);
  REQUIRE((linear_voltage(g, zero, zero, 1.0) - Vec::Constant(2, 1.0)).norm() == 0.0);

  GridMatrices g1 = build_grid_matrices(single_line(0.05, 0.05));
  Vec p1 = Vec::Constant(1, -1.0), q1 = Vec::Zero(1);
  REQUIRE(linear_voltage(g1, p1, q1, 1.0)(0) == Catch::Approx(0.95));

  Vec p2 = Vec::Constant(2, -1.0);
  Vec v = linear_voltage(g, p2, zero, 1.0);
  REQUIRE(v(0) == Catch::Approx(0.98));
  REQUIRE(v(1) == Catch::Approx(0.96));

  REQUIRE_THROWS_AS(linear_voltage(g, Vec::Zero(3), zero, 1.0), ShapeError);
}

TEST_CASE("linear voltage is linear to machine precision") {
  Rng rng(3);
  GridMatrices g = build_grid_matrices(random_tree(6, rng));
  Vec p1 = rng.randn(6), q1 = rng.randn(6), p2 = rng.randn(6), q2 = rng.randn(6);
  double a = 0.37, b = -1.21;
  Vec ones = Vec::Ones(6);
  Vec lhs = linear_voltage(g, a * p1 + b * p2, a * q1 + b * q2, 1.0) - ones;
  Vec rhs = a * (linear_voltage(g, p1, q1, 1.0) - ones) + b * (linear_voltage(g, p2, q2, 1.0) - ones);
  REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("quadratic losses match explicit summation and are nonnegative") {
  GridMatrices g1 = build_grid_matrices(single_line(0.05, 0.05));
  REQUIRE(quadratic_losses(g1, Vec::Zero(1), Vec::Zero(1)) == 0.0);
  REQUIRE(quadratic_losses(g1, Vec::Constant(1, 1.0), Vec::Zero(1)) == Catch::Approx(0.1));

  Rng rng(11);
  GridMatrices g = build_grid_matrices(random_tree(7, rng));
  for (int rep = 0; rep < 5; ++rep) {
    Vec p = rng.randn(7), q = rng.randn(7);
    double val = quadratic_losses(g, p, q);
    REQUIRE(val == Catch::Approx(oracles::losses_by_summation(g.R, p, q)).margin(1e-12));
    REQUIRE(val >= 0.0);
  }
}

TEST_CASE("AC power flow at zero injection returns the substation voltage") {
  FeederModel m = chain2();
  Vec v = ac_power_flow(m, Vec::Zero(2), Vec::Zero(2), 1.02);
  REQUIRE((v - Vec::Constant(2, 1.02)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("AC power flow stays close to the linear model under light load") {
  FeederModel m = chain2();
  GridMatrices g = build_grid_matrices(m);
  Rng rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    Vec p = 0.05 * rng.randn(2).cwiseMin(1.0).cwiseMax(-1.0);
    Vec q = 0.05 * rng.randn(2).cwiseMin(1.0).cwiseMax(-1.0);
    Vec vac = ac_power_flow(m, p, q, 1.0);
    Vec vlin = linear_voltage(g, p, q, 1.0);
    REQUIRE((vac - vlin).cwiseAbs().maxCoeff() < 5e-3);
  }
}

TEST_CASE("AC power flow matches the single-branch DistFlow closed form") {
  FeederModel m = single_line(0.05, 0.05);
  Vec p = Vec::Constant(1, -0.5), q = Vec::Zero(1);
  Vec v = ac_power_flow(m, p, q, 1.0);
  double expected = oracles::single_branch_voltage(0.05, 0.05, -0.5, 0.0, 1.0);
  REQUIRE(std::abs(v(0) - expected) < 1e-9);
}

TEST_CASE("AC-linear gap decays at second order in the loading scale") {
  FeederModel m = chain2();
  GridMatrices g = build_grid_matrices(m);
  Vec p = Vec::Constant(2, -1.0), q = Vec::Constant(2, 0.4);
  double prev_ratio = -1.0;
  for (double s : {0.1, 0.05, 0.025}) {
    Vec vac = ac_power_flow(m, s * p, s * q, 1.0);
    Vec vlin = linear_voltage(g, s * p, s * q, 1.0);
    double ratio = (vac - vlin).cwiseAbs().maxCoeff() / (s * s);
    REQUIRE(ratio < 1.0);  // bounded constant for this feeder
    if (prev_ratio > 0.0) REQUIRE(ratio < 2.0 * prev_ratio);
    prev_ratio = ratio;
  }
}

TEST_CASE("feeder CSV round trip and validation") {
  FeederModel m;
  m.n_bus = 3;
  m.lines = {{0, 1, 0.013, 0.011}, {1, 2, 0.007, 0.006}, {1, 3, 0.009, 0.008}};
  m.der_buses = {2};
  m.der_qmax = Vec::Constant(1, 0.25);
  m.validate();

  std::string buses = "/tmp/opfd_test_buses.csv";
  std::string lines = "/tmp/opfd_test_lines.csv";
  save_feeder_csv(m, buses, lines);
  FeederModel loaded = load_feeder_csv(buses, lines);
  REQUIRE(loaded.n_bus == 3);
  REQUIRE(loaded.der_buses == std::vector<int>{2});
  REQUIRE(loaded.der_qmax(0) == 0.25);
  GridMatrices a = build_grid_matrices(m), b = build_grid_matrices(loaded);
  REQUIRE((a.R - b.R).cwiseAbs().maxCoeff() == 0.0);

  {
    std::ofstream f("/tmp/opfd_bad_lines.csv");
    f << "from,to,r_pu,x_pu\n1,2,0.01,0.01\n";
  }
  {
    std::ofstream f("/tmp/opfd_bad_buses.csv");
    f << "bus_id,der_qmax\n0,\n1,\n2,\n";
  }
  REQUIRE_THROWS_AS(load_feeder_csv("/tmp/opfd_bad_buses.csv", "/tmp/opfd_bad_lines.csv"),
                    ParseError);  // substation never appears in lines
}
