#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "powergnn/powerflow.hpp"
#include "test_support.hpp"

using namespace powergnn;
using Catch::Approx;

namespace {

VoltageState random_state(std::mt19937_64& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> uv(0.9, 1.1), ut(-0.5, 0.5);
  VoltageState s{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    s.v[i] = uv(rng);
    s.theta[i] = ut(rng);
  }
  return s;
}

}  // namespace

TEST_CASE("inverse power flow at flat state", "[powerflow]") {
  std::mt19937_64 rng(1);
  const auto y = assemble_admittance(test::random_grid(rng, 8, false));
  const auto s = inverse_pf(y, VoltageState::flat(8));
  CHECK(s.p.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(s.q.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("inverse power flow on two buses", "[powerflow]") {
  const auto y = assemble_admittance(test::two_bus());
  VoltageState st{Eigen::Vector2d(1.0, 1.0), Eigen::Vector2d(0.1, 0.0)};
  const auto s = inverse_pf(y, st);
  CHECK(s.p[0] == Approx(0.998334).margin(1e-6));
  CHECK(s.q[0] == Approx(0.049958).margin(1e-6));
  CHECK(s.p[1] == Approx(-0.998334).margin(1e-6));
  CHECK(s.q[1] == Approx(0.049958).margin(1e-6));
  CHECK_THROWS_AS(inverse_pf(y, VoltageState::flat(3)), DimensionMismatch);
}

TEST_CASE("inverse power flow matches the trigonometric sum", "[powerflow][property]") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + trial % 8;
    const auto Y = assemble_admittance(test::random_grid(rng, n));
    const auto st = random_state(rng, n);
    const auto s = inverse_pf(Y, st);
    for (int i = 0; i < n; ++i) {
      double p = 0, q = 0;
      for (int j = 0; j < n; ++j) {
        const double g = Y(i, j).real(), b = Y(i, j).imag(), d = st.theta[i] - st.theta[j];
        p += st.v[i] * st.v[j] * (g * std::cos(d) + b * std::sin(d));
        q += st.v[i] * st.v[j] * (g * std::sin(d) - b * std::cos(d));
      }
      CHECK(std::abs(p - s.p[i]) < 1e-12);
      CHECK(std::abs(q - s.q[i]) < 1e-12);
    }
  }
}

TEST_CASE("global phase shift leaves powers unchanged", "[powerflow][property]") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uc(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 12;
    const auto y = assemble_admittance(test::random_grid(rng, n));
    auto st = random_state(rng, n);
    const auto a = inverse_pf(y, st);
    st.theta.array() += uc(rng);
    const auto b = inverse_pf(y, st);
    CHECK((a.p - b.p).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a.q - b.q).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("lossless grids balance active power", "[powerflow][property]") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 12;
    GridCase g = test::random_grid(rng, n);
    for (auto& l : g.lines) l.r = 0.0;
    for (auto& b : g.buses) b.shunt_g = 0.0;
    const auto s = inverse_pf(assemble_admittance(g), random_state(rng, n));
    CHECK(std::abs(s.p.sum()) < 1e-10);
  }
}

TEST_CASE("Jacobian matches central finite differences", "[powerflow][property]") {
  std::mt19937_64 rng(5);
  const double h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 3 + trial;
    const auto y = assemble_admittance(test::random_grid(rng, n)).entries();
    const auto st = random_state(rng, n);
    const Eigen::MatrixXd jac = pf_jacobian(y, st);
    Eigen::MatrixXd fd(2 * n, 2 * n);
    for (int c = 0; c < 2 * n; ++c) {
      auto plus = st, minus = st;
      (c < n ? plus.theta[c] : plus.v[c - n]) += h;
      (c < n ? minus.theta[c] : minus.v[c - n]) -= h;
      const auto sp = inverse_pf(y, plus), sm = inverse_pf(y, minus);
      fd.col(c).head(n) = (sp.p - sm.p) / (2 * h);
      fd.col(c).tail(n) = (sp.q - sm.q) / (2 * h);
    }
    const double rel = (jac - fd).norm() / fd.norm();
    CHECK(rel < 1e-6);
  }
}

TEST_CASE("Newton solve: flat solution", "[powerflow]") {
  std::mt19937_64 rng(6);
  const auto g = test::random_grid(rng, 9, false);
  const auto sol = solve_pf(g, Injections::unconstrained(g));
  CHECK(sol.iterations <= 1);
  CHECK(sol.residual < 1e-8);
  CHECK((sol.state.v.array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(sol.state.theta.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("Newton solve inverts the two-bus example", "[powerflow]") {
  const auto g = test::two_bus();
  auto inj = Injections::unconstrained(g);
  // Both line ends supply the series reactive loss, so q at the PQ bus is positive.
  inj.p[1] = -10.0 * std::sin(0.1);
  inj.q[1] = 10.0 * (1.0 - std::cos(0.1));
  auto sol = solve_pf(g, inj);
  CHECK(sol.state.theta[1] == Approx(-0.1).margin(1e-9));
  CHECK(sol.state.v[1] == Approx(1.0).margin(1e-9));

  inj.p[1] = -0.998334;
  inj.q[1] = 0.049958;
  sol = solve_pf(g, inj);
  CHECK(sol.state.theta[1] == Approx(-0.1).margin(1e-5));
  CHECK(sol.state.v[1] == Approx(1.0).margin(1e-5));

  // Absorbing that reactive power instead lands on a depressed-voltage solution.
  inj.q[1] = -0.049958;
  sol = solve_pf(g, inj);
  CHECK(sol.state.v[1] < 0.995);
  const auto back = inverse_pf(assemble_admittance(g), sol.state);
  CHECK(back.q[1] == Approx(-0.049958).margin(1e-8));
}

TEST_CASE("Newton solve reports infeasible injections", "[powerflow]") {
  const auto g = test::two_bus();
  auto inj = Injections::unconstrained(g);
  inj.p[1] = -20.0;
  CHECK_THROWS_AS(solve_pf(g, inj), NonConvergence);
  try {
    solve_pf(g, inj);
  } catch (const NonConvergence& e) {
    CHECK(e.iterations() == 30);
    CHECK(e.residual() > 1.0);
  }
}

TEST_CASE("Newton round trip on IEEE 14-bus", "[powerflow][property]") {
  const auto g = test::ieee14();
  const auto y = assemble_admittance(g);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lam(0.6, 1.3);
  for (int trial = 0; trial < 20; ++trial) {
    auto inj = Injections::unconstrained(g);
    const auto load = base_load(g, lam(rng));
    inj.p = load.p;
    inj.q = load.q;
    for (const auto& gen : g.generators) inj.v[gen.bus] = gen.v_set;
    inj.p[1] += 0.4;
    const auto sol = solve_pf(y.entries(), inj);
    const auto back = inverse_pf(y, sol.state);
    for (Eigen::Index i = 0; i < 14; ++i) {
      if (inj.kind[i] != BusKind::Slack) CHECK(std::abs(back.p[i] - inj.p[i]) < 1e-8);
      if (inj.kind[i] == BusKind::PQ) CHECK(std::abs(back.q[i] - inj.q[i]) < 1e-8);
      if (inj.kind[i] != BusKind::PQ) CHECK(sol.state.v[i] == inj.v[i]);
    }
  }
}

TEST_CASE("reactive limits switch PV buses to PQ", "[powerflow]") {
  GridCase g = test::two_bus();
  g.buses[1].kind = BusKind::PV;
  g.generators.push_back({1, 0.0, 1.0, -0.01, 0.01, 1.0, 1.05});
  auto inj = Injections::unconstrained(g);
  inj.v[1] = 1.05;
  inj.q_max[1] = 0.01;
  inj.q_min[1] = -0.01;
  const auto sol = solve_pf(g, inj);
  CHECK(sol.kind[1] == BusKind::PQ);
  CHECK(inverse_pf(assemble_admittance(g), sol.state).q[1] == Approx(0.01).margin(1e-8));
  CHECK(sol.state.v[1] < 1.05);
}

TEST_CASE("merit-order dispatch", "[powerflow][dispatch]") {
  SECTION("single generator carries the load plus losses") {
    GridCase g = test::two_bus(0.02, 0.1);
    g.buses[1].base_load_p = 0.5;
    const auto load = base_load(g);
    const auto set = dispatch(g, load, {1.0}, {true});
    CHECK(set[0] == Approx(0.5));
    const auto op = operating_point(g, assemble_admittance(g), load, {1.0}, {true});
    CHECK(op.power.p[0] > 0.5);
    CHECK(op.power.p[0] < 0.52);
  }
  SECTION("cheapest generator fills first") {
    GridCase g;
    g.buses = {{0, BusKind::Slack}, {1, BusKind::PV}, {2, BusKind::PQ, 0, 0, 1.0, 0.2}};
    g.lines = {{0, 2, 0.01, 0.1, 0}, {1, 2, 0.01, 0.1, 0}};
    g.generators = {{0, 0.0, 1.0, -2, 2, 2.0, 1.0}, {1, 0.0, 0.6, -2, 2, 1.0, 1.0}};
    const auto load = base_load(g);
    const auto set = dispatch(g, load, {2.0, 1.0}, {true, true});
    CHECK(set[1] == Approx(0.6));
    CHECK(set[0] == Approx(0.4));
    const auto op = operating_point(g, assemble_admittance(g), load, {2.0, 1.0}, {true, true});
    CHECK(op.power.p[1] == Approx(0.6).margin(1e-8));
    CHECK(op.power.p[0] > 0.4);
  }
  SECTION("no available capacity") {
    GridCase g = test::two_bus();
    g.buses[1].base_load_p = 0.5;
    CHECK_THROWS_AS(dispatch(g, base_load(g), {1.0}, {false}), InfeasibleDispatch);
  }
  SECTION("setpoints respect limits") {
    const auto g = test::ieee14();
    std::vector<double> costs;
    for (const auto& gen : g.generators) costs.push_back(gen.cost);
    const auto set = dispatch(g, base_load(g, 1.2), costs, std::vector<bool>(5, true));
    for (std::size_t k = 0; k < set.size(); ++k) {
      CHECK(set[k] >= g.generators[k].p_min);
      CHECK(set[k] <= g.generators[k].p_max);
    }
  }
}
