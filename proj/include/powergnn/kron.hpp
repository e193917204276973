#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "powergnn/grid_io.hpp"
#include "powergnn/grid_model.hpp"

namespace powergnn {

/// Largest accepted condition estimate of the interior block before reduction is refused.
inline constexpr double kMaxInteriorCondition = 1e12;

/// Sorted set of observed bus ids; everything else is eliminated.
class ObservabilityMask {
 public:
  ObservabilityMask(std::vector<int> observed, Eigen::Index n_bus) : n_(n_bus), observed_(std::move(observed)) {
    std::sort(observed_.begin(), observed_.end());
    observed_.erase(std::unique(observed_.begin(), observed_.end()), observed_.end());
    if (observed_.empty()) throw ValidationError("observed", "observability mask is empty");
    if (observed_.front() < 0 || observed_.back() >= n_bus)
      throw ValidationError("observed", "bus id outside the grid");
    std::vector<bool> mark(static_cast<std::size_t>(n_bus), false);
    for (int b : observed_) mark[b] = true;
    for (int i = 0; i < n_bus; ++i)
      if (!mark[i]) unobserved_.push_back(i);
  }

  static ObservabilityMask all(Eigen::Index n_bus) {
    std::vector<int> ids(static_cast<std::size_t>(n_bus));
    std::iota(ids.begin(), ids.end(), 0);
    return {std::move(ids), n_bus};
  }

  const std::vector<int>& observed() const { return observed_; }
  const std::vector<int>& unobserved() const { return unobserved_; }
  Eigen::Index n_bus() const { return n_; }
  bool full() const { return unobserved_.empty(); }

 private:
  Eigen::Index n_;
  std::vector<int> observed_;
  std::vector<int> unobserved_;
};

/// Blocks of Y reindexed by (observed, unobserved) with a factorization of Y^(uu).
class KronBlocks {
 public:
  KronBlocks(const Eigen::MatrixXcd& y, const ObservabilityMask& mask) : mask_(mask) {
    if (y.rows() != mask.n_bus() || y.cols() != mask.n_bus())
      throw DimensionMismatch("kron: admittance size does not match the mask");
    const auto& o = mask.observed();
    const auto& u = mask.unobserved();
    yoo_ = y(o, o);
    you_ = y(o, u);
    yuo_ = y(u, o);
    if (!u.empty()) {
      lu_.compute(y(u, u));
      const double rc = lu_.rcond();
      if (!(rc > 1.0 / kMaxInteriorCondition))
        throw SingularInteriorBlock("interior block is numerically singular (rcond " + std::to_string(rc) + ")");
    }
  }

  /// Y^(r) = Y^(oo) - Y^(ou) Y^(uu)^-1 Y^(uo), symmetrized.
  Eigen::MatrixXcd reduced() const {
    if (mask_.full()) return yoo_;
    Eigen::MatrixXcd yr = yoo_ - you_ * lu_.solve(yuo_);
    return 0.5 * (yr + yr.transpose());
  }

  /// Y^(ou) Y^(uu)^-1 applied to an unobserved-node vector.
  Eigen::VectorXcd transfer(const Eigen::VectorXcd& unobserved) const {
    if (mask_.full()) return Eigen::VectorXcd::Zero(yoo_.rows());
    return you_ * lu_.solve(unobserved);
  }

  const ObservabilityMask& mask() const { return mask_; }

 private:
  ObservabilityMask mask_;
  Eigen::MatrixXcd yoo_, you_, yuo_;
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu_;
};

inline AdmittanceMatrix kron_reduce(const AdmittanceMatrix& y, const ObservabilityMask& mask) {
  return AdmittanceMatrix(KronBlocks(y.entries(), mask).reduced());
}

/// Observed complex powers split into the reduced-network term and the term carried by
/// currents injected at unobserved nodes.
struct EffectiveInjections {
  Eigen::VectorXcd reduced_term;
  Eigen::VectorXcd unobserved_term;
  Eigen::VectorXcd total() const { return reduced_term + unobserved_term; }
};

/// S^(o) = V^(o) o conj(Y^(r) V^(o)) + V^(o) o conj(Y^(ou) Y^(uu)^-1 I^(u)).
inline EffectiveInjections effective_injections(const KronBlocks& blocks, const Eigen::VectorXcd& volts,
                                                const Eigen::VectorXcd& currents) {
  const auto& o = blocks.mask().observed();
  const auto& u = blocks.mask().unobserved();
  if (volts.size() != blocks.mask().n_bus() || currents.size() != blocks.mask().n_bus())
    throw DimensionMismatch("effective_injections: full-grid vectors required");
  const Eigen::VectorXcd vo = volts(o);
  const Eigen::VectorXcd iu = currents(u);
  EffectiveInjections out;
  out.reduced_term = vo.cwiseProduct((blocks.reduced() * vo).conjugate());
  out.unobserved_term = vo.cwiseProduct(blocks.transfer(iu).conjugate());
  return out;
}

struct ReducedModel {
  AdmittanceMatrix y_reduced;
  /// Observed bus ids of the original grid, in row order of y_reduced.
  std::vector<int> observed;
  /// Pairs of row indices (i < j) into y_reduced.
  std::vector<std::pair<int, int>> edges;
  double threshold_rel = 0.02;
  int components = 1;

  bool connected() const { return components == 1; }
};

/// Keeps off-diagonal entries with |Y_ij| >= threshold_rel * max_{k != l} |Y_kl| as edges.
inline ReducedModel extract_reduced_graph(const AdmittanceMatrix& y_reduced, double threshold_rel,
                                          std::vector<int> observed = {}) {
  const Eigen::Index n = y_reduced.size();
  if (observed.empty()) {
    observed.resize(static_cast<std::size_t>(n));
    std::iota(observed.begin(), observed.end(), 0);
  }
  ReducedModel rm{y_reduced, std::move(observed), {}, threshold_rel, 0};
  double max_off = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) max_off = std::max(max_off, std::abs(y_reduced(i, j)));
  const double cut = threshold_rel * max_off;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double a = std::abs(y_reduced(i, j));
      if (a > 0.0 && a >= cut) rm.edges.emplace_back(i, j);
    }

  std::vector<int> comp(static_cast<std::size_t>(n), -1);
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (auto [a, b] : rm.edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (int s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    std::queue<int> q;
    q.push(s);
    comp[s] = rm.components;
    while (!q.empty()) {
      int a = q.front();
      q.pop();
      for (int b : adj[a])
        if (comp[b] < 0) {
          comp[b] = rm.components;
          q.push(b);
        }
    }
    ++rm.components;
  }
  return rm;
}

/// Kron reference for a grid and mask: reduce, then threshold.
inline ReducedModel reduce_grid(const GridCase& grid, const ObservabilityMask& mask, double threshold_rel = 0.02) {
  return extract_reduced_graph(kron_reduce(assemble_admittance(grid), mask), threshold_rel, mask.observed());
}

/// Native-schema export of a reduced model. Each edge becomes a line with series
/// admittance -Y_ij; the remaining diagonal goes to bus shunts so the kept entries of
/// Y^(r) are reproduced exactly.
inline json reduced_to_json(const ReducedModel& rm, const GridCase& parent) {
  GridCase g;
  g.base_mva = parent.base_mva;
  const int n = static_cast<int>(rm.observed.size());
  std::vector<int> local(parent.n_bus(), -1);
  for (int i = 0; i < n; ++i) local[rm.observed[i]] = i;

  const int slack = parent.slack_bus();
  const bool slack_observed = slack >= 0 && local[slack] >= 0;
  Eigen::VectorXcd shunt = rm.y_reduced.entries().diagonal();
  for (auto [a, b] : rm.edges) {
    shunt[a] += rm.y_reduced(a, b);
    shunt[b] += rm.y_reduced(a, b);
  }
  for (int i = 0; i < n; ++i) {
    const Bus& src = parent.buses[rm.observed[i]];
    Bus b;
    b.id = i;
    b.kind = src.kind == BusKind::Slack ? BusKind::Slack : (src.kind == BusKind::PV ? BusKind::PV : BusKind::PQ);
    if (!slack_observed && i == 0) b.kind = BusKind::Slack;
    b.shunt_g = shunt[i].real();
    b.shunt_b = shunt[i].imag();
    b.base_load_p = src.base_load_p;
    b.base_load_q = src.base_load_q;
    g.buses.push_back(b);
  }
  for (auto [a, b] : rm.edges) {
    const cplx z = -1.0 / rm.y_reduced(a, b);
    g.lines.push_back({a, b, z.real(), z.imag(), 0.0});
  }
  for (const auto& gen : parent.generators)
    if (local[gen.bus] >= 0) {
      Generator c = gen;
      c.bus = local[gen.bus];
      g.generators.push_back(c);
    }
  json j = grid_to_json(g);
  j["reduced"] = true;
  j["threshold"] = rm.threshold_rel;
  j["observed"] = rm.observed;
  j["components"] = rm.components;
  return j;
}

}  // namespace powergnn
