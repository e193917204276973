#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "powergnn/grid_model.hpp"

namespace powergnn {

// Sign convention: p, q are injections into the grid; loads are negative injections.

struct VoltageState {
  Eigen::VectorXd v;
  Eigen::VectorXd theta;

  Eigen::Index size() const { return v.size(); }
  Eigen::VectorXcd phasors() const {
    Eigen::VectorXcd out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = std::polar(v[i], theta[i]);
    return out;
  }
  static VoltageState flat(Eigen::Index n) {
    return {Eigen::VectorXd::Ones(n), Eigen::VectorXd::Zero(n)};
  }
};

struct PowerState {
  Eigen::VectorXd p;
  Eigen::VectorXd q;

  Eigen::Index size() const { return p.size(); }
  static PowerState zero(Eigen::Index n) { return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)}; }
};

struct PFSolveOptions {
  double tol = 1e-8;
  int max_iter = 30;
  bool flat_start = true;
};

/// Explicit map from potentials to powers: S = V o conj(Y V).
inline PowerState inverse_pf(const Eigen::MatrixXcd& y, const VoltageState& state) {
  if (state.v.size() != y.rows() || state.theta.size() != y.rows())
    throw DimensionMismatch("inverse_pf: state has " + std::to_string(state.v.size()) +
                            " buses, admittance has " + std::to_string(y.rows()));
  const Eigen::VectorXcd volts = state.phasors();
  const Eigen::VectorXcd s = volts.cwiseProduct((y * volts).conjugate());
  return {s.real(), s.imag()};
}

inline PowerState inverse_pf(const AdmittanceMatrix& y, const VoltageState& state) {
  return inverse_pf(y.entries(), state);
}

/// Full polar Jacobian [[dP/dtheta, dP/dv], [dQ/dtheta, dQ/dv]], size 2n x 2n.
inline Eigen::MatrixXd pf_jacobian(const Eigen::MatrixXcd& y, const VoltageState& state) {
  const Eigen::Index n = y.rows();
  const PowerState s = inverse_pf(y, state);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double vi = state.v[i];
    for (Eigen::Index j = 0; j < n; ++j) {
      const double g = y(i, j).real(), b = y(i, j).imag();
      if (i == j) {
        jac(i, i) = -s.q[i] - b * vi * vi;
        jac(i, n + i) = s.p[i] / vi + g * vi;
        jac(n + i, i) = s.p[i] - g * vi * vi;
        jac(n + i, n + i) = s.q[i] / vi - b * vi;
      } else {
        if (g == 0.0 && b == 0.0) continue;
        const double vj = state.v[j];
        const double d = state.theta[i] - state.theta[j];
        const double c = std::cos(d), sn = std::sin(d);
        jac(i, j) = vi * vj * (g * sn - b * c);
        jac(i, n + j) = vi * (g * c + b * sn);
        jac(n + i, j) = -vi * vj * (g * c + b * sn);
        jac(n + i, n + j) = vi * (g * sn - b * c);
      }
    }
  }
  return jac;
}

/// Specified quantities for one power-flow solve. Entries not constrained by a bus's
/// kind are ignored (p at slack, q at slack/PV, v at PQ).
struct Injections {
  std::vector<BusKind> kind;
  Eigen::VectorXd p;
  Eigen::VectorXd q;
  Eigen::VectorXd v;
  /// Net reactive-injection limits at PV buses; infinite means unlimited.
  Eigen::VectorXd q_min;
  Eigen::VectorXd q_max;

  static Injections unconstrained(const GridCase& grid) {
    const auto n = static_cast<Eigen::Index>(grid.n_bus());
    Injections inj;
    for (const auto& b : grid.buses) inj.kind.push_back(b.kind);
    inj.p = Eigen::VectorXd::Zero(n);
    inj.q = Eigen::VectorXd::Zero(n);
    inj.v = Eigen::VectorXd::Ones(n);
    inj.q_min = Eigen::VectorXd::Constant(n, -std::numeric_limits<double>::infinity());
    inj.q_max = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
    return inj;
  }
};

struct PFSolution {
  VoltageState state;
  int iterations = 0;
  double residual = 0.0;
  /// Bus kinds after PV->PQ switching.
  std::vector<BusKind> kind;
};

namespace detail {

inline double pf_mismatch(const Eigen::MatrixXcd& y, const VoltageState& st, const Injections& inj,
                          const Eigen::VectorXd& q_spec,
                          const std::vector<Eigen::Index>& th_idx, const std::vector<Eigen::Index>& v_idx,
                          Eigen::VectorXd& f) {
  const PowerState s = inverse_pf(y, st);
  const auto nt = static_cast<Eigen::Index>(th_idx.size());
  f.resize(nt + static_cast<Eigen::Index>(v_idx.size()));
  for (Eigen::Index k = 0; k < nt; ++k) f[k] = inj.p[th_idx[k]] - s.p[th_idx[k]];
  for (std::size_t k = 0; k < v_idx.size(); ++k) f[nt + k] = q_spec[v_idx[k]] - s.q[v_idx[k]];
  if (!f.allFinite()) return std::numeric_limits<double>::infinity();
  return f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
}

}  // namespace detail

/// Newton-Raphson in polar coordinates with PV->PQ switching on reactive limits.
inline PFSolution solve_pf(const Eigen::MatrixXcd& y, const Injections& inj, const PFSolveOptions& opts = {},
                           const std::optional<VoltageState>& warm = std::nullopt) {
  const Eigen::Index n = y.rows();
  if (static_cast<Eigen::Index>(inj.kind.size()) != n || inj.p.size() != n || inj.q.size() != n ||
      inj.v.size() != n)
    throw DimensionMismatch("solve_pf: injection vectors do not match the admittance size");
  if (std::count(inj.kind.begin(), inj.kind.end(), BusKind::Slack) != 1)
    throw Error("solve_pf: exactly one slack bus required");

  std::vector<BusKind> kind = inj.kind;
  Eigen::VectorXd q_spec = inj.q;
  const bool limited = inj.q_min.size() == n && inj.q_max.size() == n;

  VoltageState st = (warm && !opts.flat_start) ? *warm : VoltageState::flat(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (kind[i] != BusKind::PQ) st.v[i] = inj.v[i];

  PFSolution out;
  for (Eigen::Index round = 0; round <= n; ++round) {
    std::vector<Eigen::Index> th_idx, v_idx;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (kind[i] != BusKind::Slack) th_idx.push_back(i);
      if (kind[i] == BusKind::PQ) v_idx.push_back(i);
    }
    const auto nt = static_cast<Eigen::Index>(th_idx.size());
    const auto nv = static_cast<Eigen::Index>(v_idx.size());

    Eigen::VectorXd f;
    double res = detail::pf_mismatch(y, st, inj, q_spec, th_idx, v_idx, f);
    int it = 0;
    while (res > opts.tol) {
      if (it >= opts.max_iter || !std::isfinite(res)) throw NonConvergence(out.iterations + it, res);
      const Eigen::MatrixXd full = pf_jacobian(y, st);
      Eigen::MatrixXd jac(nt + nv, nt + nv);
      for (Eigen::Index r = 0; r < nt + nv; ++r) {
        const Eigen::Index row = r < nt ? th_idx[r] : n + v_idx[r - nt];
        for (Eigen::Index c = 0; c < nt + nv; ++c) {
          const Eigen::Index col = c < nt ? th_idx[c] : n + v_idx[c - nt];
          jac(r, c) = full(row, col);
        }
      }
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
      if (!(lu.rcond() > 1e-14)) throw SingularJacobian("power-flow Jacobian is singular");
      const Eigen::VectorXd dx = lu.solve(f);
      for (Eigen::Index k = 0; k < nt; ++k) st.theta[th_idx[k]] += dx[k];
      for (Eigen::Index k = 0; k < nv; ++k) st.v[v_idx[k]] += dx[nt + k];
      ++it;
      res = detail::pf_mismatch(y, st, inj, q_spec, th_idx, v_idx, f);
    }
    out.iterations += it;
    out.residual = res;

    if (!limited) break;
    const PowerState s = inverse_pf(y, st);
    bool switched = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (kind[i] != BusKind::PV) continue;
      if (s.q[i] > inj.q_max[i] + opts.tol) {
        kind[i] = BusKind::PQ;
        q_spec[i] = inj.q_max[i];
        switched = true;
      } else if (s.q[i] < inj.q_min[i] - opts.tol) {
        kind[i] = BusKind::PQ;
        q_spec[i] = inj.q_min[i];
        switched = true;
      }
    }
    if (!switched) break;
  }
  out.state = st;
  out.kind = kind;
  return out;
}

inline PFSolution solve_pf(const GridCase& grid, const Injections& inj, const PFSolveOptions& opts = {},
                           const std::optional<VoltageState>& warm = std::nullopt) {
  return solve_pf(assemble_admittance(grid).entries(), inj, opts, warm);
}

// ---------------------------------------------------------------------------
// Merit-order dispatch
// ---------------------------------------------------------------------------

struct DispatchOptions {
  /// Capacity headroom reserved for losses when checking feasibility.
  double loss_margin = 0.05;
};

/// Active setpoints per generator (index-aligned with grid.generators); unavailable
/// generators get 0. The slack generator's setpoint is nominal: after the power-flow
/// solve it also carries the losses.
inline std::vector<double> dispatch(const GridCase& grid, const PowerState& load, const std::vector<double>& costs,
                                    const std::vector<bool>& available, const DispatchOptions& opts = {}) {
  const std::size_t ng = grid.generators.size();
  if (costs.size() != ng || available.size() != ng)
    throw DimensionMismatch("dispatch: cost/availability vectors must match generator count");
  const double demand = -load.p.sum();

  std::vector<std::size_t> pool;
  double capacity = 0.0;
  for (std::size_t k = 0; k < ng; ++k)
    if (available[k]) {
      pool.push_back(k);
      capacity += grid.generators[k].p_max;
    }
  if (pool.empty() || capacity < demand * (1.0 + opts.loss_margin))
    throw InfeasibleDispatch("available capacity " + std::to_string(capacity) + " p.u. below demand " +
                             std::to_string(demand) + " p.u. plus loss margin");

  std::stable_sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) { return costs[a] < costs[b]; });

  std::vector<double> set(ng, 0.0);
  double remaining = demand;
  for (std::size_t k : pool) {
    set[k] = grid.generators[k].p_min;
    remaining -= set[k];
  }
  for (std::size_t k : pool) {
    if (remaining <= 0.0) break;
    const double add = std::min(grid.generators[k].p_max - set[k], remaining);
    set[k] += add;
    remaining -= add;
  }
  return set;
}

/// One solved operating point: dispatch, build PV/PQ/slack injections, Newton solve.
struct OperatingPoint {
  VoltageState state;
  PowerState power;
  std::vector<double> setpoints;
  int iterations = 0;
};

inline Injections build_injections(const GridCase& grid, const PowerState& load, const std::vector<double>& setpoints,
                                   const std::vector<bool>& available) {
  const auto n = static_cast<Eigen::Index>(grid.n_bus());
  Injections inj = Injections::unconstrained(grid);
  inj.p = load.p;
  inj.q = load.q;
  Eigen::VectorXd qmin = Eigen::VectorXd::Zero(n), qmax = Eigen::VectorXd::Zero(n);
  std::vector<bool> has_gen(n, false);
  for (std::size_t k = 0; k < grid.generators.size(); ++k) {
    if (!available[k]) continue;
    const auto& g = grid.generators[k];
    inj.p[g.bus] += setpoints[k];
    qmin[g.bus] += g.q_min;
    qmax[g.bus] += g.q_max;
    if (!has_gen[g.bus]) inj.v[g.bus] = g.v_set;
    has_gen[g.bus] = true;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (inj.kind[i] == BusKind::PV && !has_gen[i]) inj.kind[i] = BusKind::PQ;
    if (inj.kind[i] == BusKind::PV) {
      inj.q_min[i] = qmin[i] + load.q[i];
      inj.q_max[i] = qmax[i] + load.q[i];
    }
  }
  return inj;
}

inline OperatingPoint operating_point(const GridCase& grid, const AdmittanceMatrix& y, const PowerState& load,
                                      const std::vector<double>& costs, const std::vector<bool>& available,
                                      const PFSolveOptions& opts = {}) {
  OperatingPoint op;
  op.setpoints = dispatch(grid, load, costs, available);
  const Injections inj = build_injections(grid, load, op.setpoints, available);
  PFSolution sol = solve_pf(y.entries(), inj, opts);
  op.state = std::move(sol.state);
  op.iterations = sol.iterations;
  op.power = inverse_pf(y, op.state);
  return op;
}

/// Nodal load injections (negative of consumption) scaled by lambda.
inline PowerState base_load(const GridCase& grid, double lambda = 1.0) {
  PowerState s = PowerState::zero(static_cast<Eigen::Index>(grid.n_bus()));
  for (const auto& b : grid.buses) {
    s.p[b.id] = -lambda * b.base_load_p;
    s.q[b.id] = -lambda * b.base_load_q;
  }
  return s;
}

}  // namespace powergnn
