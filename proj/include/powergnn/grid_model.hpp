#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "powergnn/errors.hpp"

namespace powergnn {

using cplx = std::complex<double>;

/// Smallest accepted |z|^2 = r^2 + x^2 for a line, per unit.
inline constexpr double kMinImpedanceSq = 1e-8;

enum class BusKind { Slack, PV, PQ };

/// All electrical quantities are per unit on GridCase::base_mva.
/// Loads are consumption (positive = drawn from the grid).
struct Bus {
  int id = 0;
  BusKind kind = BusKind::PQ;
  double shunt_g = 0.0;
  double shunt_b = 0.0;
  double base_load_p = 0.0;
  double base_load_q = 0.0;

  bool operator==(const Bus&) const = default;
};

/// Pi-model line: series impedance r + i x, total charging y_sh split half per end.
struct Line {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double y_sh = 0.0;

  bool operator==(const Line&) const = default;
};

struct Generator {
  int bus = 0;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double cost = 1.0;
  double v_set = 1.0;

  bool operator==(const Generator&) const = default;
};

struct GridCase {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<Generator> generators;
  double base_mva = 100.0;

  std::size_t n_bus() const { return buses.size(); }

  int slack_bus() const {
    for (const auto& b : buses)
      if (b.kind == BusKind::Slack) return b.id;
    return -1;
  }

  bool operator==(const GridCase&) const = default;
};

/// Series admittance g + i b of a line from its impedance r + i x.
inline cplx line_admittance(double r, double x) {
  const double z2 = r * r + x * x;
  if (!(z2 >= kMinImpedanceSq))
    throw DegenerateImpedance("line impedance |z|^2 = " + std::to_string(z2) +
                              " below " + std::to_string(kMinImpedanceSq));
  return {r / z2, -x / z2};
}

inline cplx line_admittance(const Line& line) { return line_admittance(line.r, line.x); }

/// Dense complex bus-admittance matrix Y = G + i B.
class AdmittanceMatrix {
 public:
  AdmittanceMatrix() = default;
  explicit AdmittanceMatrix(Eigen::MatrixXcd entries) : y_(std::move(entries)) {
    if (y_.rows() != y_.cols()) throw DimensionMismatch("admittance matrix must be square");
  }

  Eigen::Index size() const { return y_.rows(); }
  const Eigen::MatrixXcd& entries() const { return y_; }
  cplx operator()(Eigen::Index i, Eigen::Index j) const { return y_(i, j); }
  Eigen::MatrixXd G() const { return y_.real(); }
  Eigen::MatrixXd B() const { return y_.imag(); }

  double max_asymmetry() const { return (y_ - y_.transpose()).cwiseAbs().maxCoeff(); }

 private:
  Eigen::MatrixXcd y_;
};

inline const char* to_string(BusKind k) {
  switch (k) {
    case BusKind::Slack: return "slack";
    case BusKind::PV: return "pv";
    case BusKind::PQ: return "pq";
  }
  return "pq";
}

/// Checks every GridCase invariant; throws ValidationError naming the field path.
inline void validate(const GridCase& grid) {
  if (grid.buses.empty()) throw ValidationError("buses", "bus list is empty");
  if (!(grid.base_mva > 0.0) || !std::isfinite(grid.base_mva))
    throw ValidationError("base_mva", "must be positive and finite");

  const int n = static_cast<int>(grid.buses.size());
  int slack_count = 0;
  for (int i = 0; i < n; ++i) {
    const auto& b = grid.buses[i];
    const std::string path = "buses[" + std::to_string(i) + "]";
    if (b.id != i) throw ValidationError(path + ".id", "expected " + std::to_string(i));
    if (!std::isfinite(b.shunt_g) || !std::isfinite(b.shunt_b))
      throw ValidationError(path + ".shunt", "not finite");
    if (!std::isfinite(b.base_load_p) || !std::isfinite(b.base_load_q))
      throw ValidationError(path + ".base_load", "not finite");
    if (b.kind == BusKind::Slack) ++slack_count;
  }
  if (slack_count != 1)
    throw ValidationError("buses", "expected exactly one slack bus, found " +
                                       std::to_string(slack_count));

  std::vector<std::vector<int>> adj(n);
  std::vector<std::pair<int, int>> seen;
  for (std::size_t k = 0; k < grid.lines.size(); ++k) {
    const auto& l = grid.lines[k];
    const std::string path = "lines[" + std::to_string(k) + "]";
    if (l.from < 0 || l.from >= n) throw ValidationError(path + ".from", "invalid bus id");
    if (l.to < 0 || l.to >= n) throw ValidationError(path + ".to", "invalid bus id");
    if (l.from == l.to) throw ValidationError(path, "from == to");
    if (!std::isfinite(l.r) || !std::isfinite(l.x) || !std::isfinite(l.y_sh))
      throw ValidationError(path, "not finite");
    if (!(l.r * l.r + l.x * l.x >= kMinImpedanceSq))
      throw ValidationError(path, "degenerate impedance");
    const std::pair<int, int> key = std::minmax(l.from, l.to);
    for (const auto& s : seen)
      if (s == key) throw ValidationError(path, "duplicate line between the same buses");
    seen.emplace_back(key);
    adj[l.from].push_back(l.to);
    adj[l.to].push_back(l.from);
  }

  std::vector<bool> reached(n, false);
  std::queue<int> frontier;
  frontier.push(0);
  reached[0] = true;
  int count = 1;
  while (!frontier.empty()) {
    int u = frontier.front();
    frontier.pop();
    for (int v : adj[u])
      if (!reached[v]) {
        reached[v] = true;
        ++count;
        frontier.push(v);
      }
  }
  if (count != n) throw ValidationError("lines", "grid graph is not connected");

  for (std::size_t k = 0; k < grid.generators.size(); ++k) {
    const auto& g = grid.generators[k];
    const std::string path = "generators[" + std::to_string(k) + "]";
    if (g.bus < 0 || g.bus >= n) throw ValidationError(path + ".bus", "invalid bus id");
    if (g.p_min > g.p_max) throw ValidationError(path, "p_min > p_max");
    if (g.q_min > g.q_max) throw ValidationError(path, "q_min > q_max");
    if (!std::isfinite(g.cost) || !(g.v_set > 0.0)) throw ValidationError(path, "bad cost or v_set");
  }
}

/// Pi-model stamp of every line plus bus shunts.
inline AdmittanceMatrix assemble_admittance(const GridCase& grid) {
  const auto n = static_cast<Eigen::Index>(grid.n_bus());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& l : grid.lines) {
    const cplx ys = line_admittance(l);
    const cplx half_sh{0.0, 0.5 * l.y_sh};
    y(l.from, l.to) -= ys;
    y(l.to, l.from) -= ys;
    y(l.from, l.from) += ys + half_sh;
    y(l.to, l.to) += ys + half_sh;
  }
  for (const auto& b : grid.buses) y(b.id, b.id) += cplx{b.shunt_g, b.shunt_b};
  return AdmittanceMatrix(std::move(y));
}

/// Buses hosting at least one generator, ascending and deduplicated.
inline std::vector<int> generator_buses(const GridCase& grid) {
  std::vector<bool> mark(grid.n_bus(), false);
  for (const auto& g : grid.generators) mark[g.bus] = true;
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(mark.size()); ++i)
    if (mark[i]) out.push_back(i);
  return out;
}

}  // namespace powergnn
