#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "powergnn/datagen.hpp"
#include "powergnn/diffkit.hpp"
#include "powergnn/grid_model.hpp"
#include "powergnn/kron.hpp"

namespace powergnn {

/// Observed nodes (local indices 0..n-1 map to grid bus ids) and the lines between them.
struct EffectiveGraph {
  std::vector<int> observed;
  std::vector<std::pair<int, int>> edges;

  int n_nodes() const { return static_cast<int>(observed.size()); }
  int n_edges() const { return static_cast<int>(edges.size()); }

  std::vector<std::vector<int>> neighbors() const {
    std::vector<std::vector<int>> nb(observed.size());
    for (auto [a, b] : edges) {
      nb[a].push_back(b);
      nb[b].push_back(a);
    }
    for (auto& l : nb) std::sort(l.begin(), l.end());
    return nb;
  }
};

/// Every bus observed, one edge per line of the grid.
inline EffectiveGraph full_graph(const GridCase& grid) {
  EffectiveGraph g;
  for (int i = 0; i < static_cast<int>(grid.n_bus()); ++i) g.observed.push_back(i);
  for (const auto& l : grid.lines) g.edges.push_back(std::minmax(l.from, l.to));
  return g;
}

inline EffectiveGraph effective_graph(const ReducedModel& rm) { return {rm.observed, rm.edges}; }

/// Learnable physical parameters: series r, x per edge and a shunt g + i b per node.
struct PhysParams {
  Eigen::VectorXd r, x, gsh, bsh;

  Eigen::Index size() const { return r.size() + x.size() + gsh.size() + bsh.size(); }

  static PhysParams uniform(const EffectiveGraph& g, double r0, double x0, double gsh0, double bsh0) {
    return {Eigen::VectorXd::Constant(g.n_edges(), r0), Eigen::VectorXd::Constant(g.n_edges(), x0),
            Eigen::VectorXd::Constant(g.n_nodes(), gsh0), Eigen::VectorXd::Constant(g.n_nodes(), bsh0)};
  }

  /// Reads the parameters off an admittance matrix over the graph's nodes. Off-diagonal
  /// entries outside the edge set are ignored; the diagonal is reproduced exactly.
  static PhysParams from_admittance(const EffectiveGraph& g, const Eigen::MatrixXcd& y) {
    if (y.rows() != g.n_nodes()) throw DimensionMismatch("from_admittance: size differs from graph");
    PhysParams p = uniform(g, 0, 0, 0, 0);
    Eigen::VectorXcd sh = y.diagonal();
    for (int k = 0; k < g.n_edges(); ++k) {
      auto [a, b] = g.edges[k];
      const cplx yl = -y(a, b);
      const cplx z = 1.0 / yl;
      p.r[k] = z.real();
      p.x[k] = z.imag();
      sh[a] -= yl;
      sh[b] -= yl;
    }
    p.gsh = sh.real();
    p.bsh = sh.imag();
    return p;
  }

  Eigen::VectorXd pack() const {
    Eigen::VectorXd out(size());
    out << r, x, gsh, bsh;
    return out;
  }

  void unpack(const Eigen::VectorXd& v) {
    if (v.size() != size()) throw DimensionMismatch("PhysParams::unpack: wrong length");
    const Eigen::Index e = r.size(), n = gsh.size();
    r = v.segment(0, e);
    x = v.segment(e, e);
    gsh = v.segment(2 * e, n);
    bsh = v.segment(2 * e + n, n);
  }

  /// Pushes any (r, x) with r^2 + x^2 below the impedance floor out onto it.
  void clamp() {
    const double floor = std::sqrt(kMinImpedanceSq);
    for (Eigen::Index k = 0; k < r.size(); ++k) {
      const double z = std::hypot(r[k], x[k]);
      if (z >= floor) continue;
      if (z == 0.0) {
        x[k] = floor;
        continue;
      }
      // slight overshoot so rounding cannot leave the pair under the floor
      const double s = floor / z * (1.0 + 1e-12);
      r[k] *= s;
      x[k] *= s;
    }
  }

  /// [g; b; gsh; bsh] with g + i b = line_admittance(r, x).
  Eigen::VectorXd weights() const {
    const Eigen::Index e = r.size(), n = gsh.size();
    Eigen::VectorXd w(2 * e + 2 * n);
    for (Eigen::Index k = 0; k < e; ++k) {
      const cplx y = line_admittance(r[k], x[k]);
      w[k] = y.real();
      w[e + k] = y.imag();
    }
    w.segment(2 * e, n) = gsh;
    w.segment(2 * e + n, n) = bsh;
    return w;
  }

  /// Maps a gradient wrt weights() to a gradient wrt pack().
  Eigen::VectorXd chain(const Eigen::VectorXd& grad_w) const {
    const Eigen::Index e = r.size();
    Eigen::VectorXd out = grad_w;
    for (Eigen::Index k = 0; k < e; ++k) {
      const double rr = r[k], xx = x[k];
      const double z2 = rr * rr + xx * xx;
      const double z4 = z2 * z2;
      const double dg_dr = (xx * xx - rr * rr) / z4;
      const double dg_dx = -2.0 * rr * xx / z4;
      const double db_dr = 2.0 * rr * xx / z4;
      const double db_dx = (xx * xx - rr * rr) / z4;
      out[k] = grad_w[k] * dg_dr + grad_w[e + k] * db_dr;
      out[e + k] = grad_w[k] * dg_dx + grad_w[e + k] * db_dx;
    }
    return out;
  }
};

/// Admittance matrix of the effective grid described by the parameters.
inline AdmittanceMatrix assemble(const EffectiveGraph& g, const PhysParams& p) {
  const int n = g.n_nodes();
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (int k = 0; k < g.n_edges(); ++k) {
    auto [a, b] = g.edges[k];
    const cplx yl = line_admittance(p.r[k], p.x[k]);
    y(a, b) -= yl;
    y(b, a) -= yl;
    y(a, a) += yl;
    y(b, b) += yl;
  }
  for (int i = 0; i < n; ++i) y(i, i) += cplx{p.gsh[i], p.bsh[i]};
  return AdmittanceMatrix(std::move(y));
}

/// Inverse power flow written as a linear map of the weights [g; b; gsh; bsh]:
/// prediction = design * weights. Rows: for sample s, p at s*2n + i, q at s*2n + n + i.
struct PFDesign {
  Eigen::SparseMatrix<double> design;
  Eigen::VectorXd target;
  Eigen::Index n_samples = 0;
  Eigen::Index n_nodes = 0;
};

inline PFDesign pf_design(const EffectiveGraph& g, const ObservedData& d) {
  const Eigen::Index n = g.n_nodes(), e = g.n_edges(), ns = d.n_samples();
  if (d.n_nodes() != n) throw DimensionMismatch("pf_design: data has a different node count");
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(ns * (8 * e + 2 * n)));
  PFDesign out;
  out.n_samples = ns;
  out.n_nodes = n;
  out.target.resize(2 * n * ns);
  for (Eigen::Index s = 0; s < ns; ++s) {
    const Eigen::Index base = s * 2 * n;
    for (Eigen::Index k = 0; k < e; ++k) {
      auto [a, b] = g.edges[static_cast<std::size_t>(k)];
      const double va = d.v(s, a), vb = d.v(s, b);
      const double dt = d.theta(s, a) - d.theta(s, b);
      const double c = std::cos(dt), sn = std::sin(dt), vv = va * vb;
      // node a sees theta_ab = dt, node b sees -dt
      trip.emplace_back(base + a, k, va * va - vv * c);
      trip.emplace_back(base + a, e + k, -vv * sn);
      trip.emplace_back(base + n + a, e + k, -(va * va - vv * c));
      trip.emplace_back(base + n + a, k, -vv * sn);
      trip.emplace_back(base + b, k, vb * vb - vv * c);
      trip.emplace_back(base + b, e + k, vv * sn);
      trip.emplace_back(base + n + b, e + k, -(vb * vb - vv * c));
      trip.emplace_back(base + n + b, k, vv * sn);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v2 = d.v(s, i) * d.v(s, i);
      trip.emplace_back(base + i, 2 * e + i, v2);
      trip.emplace_back(base + n + i, 2 * e + n + i, -v2);
      out.target[base + i] = d.p(s, i);
      out.target[base + n + i] = d.q(s, i);
    }
  }
  out.design.resize(2 * n * ns, 2 * e + 2 * n);
  out.design.setFromTriplets(trip.begin(), trip.end());
  return out;
}

/// Phase-free inputs of the correction network: per node v_i and the sum over neighbors
/// of (cos(theta_i - theta_j), sin(theta_i - theta_j), v_i v_j). Row s*n + i.
struct NetInputs {
  Eigen::MatrixXd node;
  Eigen::MatrixXd edge;
  std::shared_ptr<const Eigen::SparseMatrix<double>> adjacency;
};

inline NetInputs net_inputs(const EffectiveGraph& g, const ObservedData& d) {
  const Eigen::Index n = g.n_nodes(), ns = d.n_samples();
  NetInputs in{Eigen::MatrixXd(ns * n, 1), Eigen::MatrixXd::Zero(ns * n, 3), block_adjacency(g.neighbors(), ns)};
  for (Eigen::Index s = 0; s < ns; ++s) {
    for (Eigen::Index i = 0; i < n; ++i) in.node(s * n + i, 0) = d.v(s, i);
    for (auto [a, b] : g.edges) {
      const double dt = d.theta(s, a) - d.theta(s, b);
      const double c = std::cos(dt), sn = std::sin(dt), vv = d.v(s, a) * d.v(s, b);
      in.edge.row(s * n + a) += Eigen::RowVector3d(c, sn, vv);
      in.edge.row(s * n + b) += Eigen::RowVector3d(c, -sn, vv);
    }
  }
  return in;
}

/// Stack of graph-masked layers producing (dp, dq) per observed node.
struct CorrectionNet {
  std::vector<GraphMaskedLayer> layers;

  static CorrectionNet init(int n_layers, int hidden, Activation act, std::mt19937_64& rng) {
    if (n_layers < 1) throw ValidationError("layers", "correction net needs at least one layer");
    CorrectionNet net;
    Eigen::Index in = 1;
    for (int l = 0; l < n_layers; ++l) {
      const bool last = l + 1 == n_layers;
      const Eigen::Index out = last ? 2 : hidden;
      net.layers.push_back(GraphMaskedLayer::init(in, l == 0 ? 3 : 0, out, last ? Activation::Identity : act, rng));
      in = out;
    }
    return net;
  }

  std::vector<Eigen::MatrixXd*> params() {
    std::vector<Eigen::MatrixXd*> out;
    for (auto& l : layers)
      for (auto* m : l.params()) out.push_back(m);
    return out;
  }
  std::vector<const Eigen::MatrixXd*> params() const {
    std::vector<const Eigen::MatrixXd*> out;
    for (const auto& l : layers)
      for (auto* m : l.params()) out.push_back(m);
    return out;
  }
  Eigen::VectorXd flat() const { return pack(params()); }

  Var forward(Tape& t, const NetInputs& in, std::vector<Var>& bound) const {
    Var h = t.leaf(in.node);
    Var e = t.leaf(in.edge);
    for (std::size_t l = 0; l < layers.size(); ++l) h = layers[l].forward(t, h, l == 0 ? e : Var{}, in.adjacency, bound);
    return h;
  }
};

/// Fully connected net from observed [v, theta] to observed [p, q].
struct VanillaNet {
  std::vector<DenseLayer> layers;

  static VanillaNet init(int n_nodes, int n_layers, int width, Activation act, std::mt19937_64& rng) {
    if (n_layers < 1 || width < 1) throw ValidationError("layers", "vanilla net needs hidden layers of positive width");
    VanillaNet net;
    Eigen::Index in = 2 * n_nodes;
    for (int l = 0; l < n_layers; ++l) {
      net.layers.push_back(DenseLayer::init(in, width, act, rng));
      in = width;
    }
    net.layers.push_back(DenseLayer::init(in, 2 * n_nodes, Activation::Identity, rng));
    return net;
  }

  std::vector<Eigen::MatrixXd*> params() {
    std::vector<Eigen::MatrixXd*> out;
    for (auto& l : layers)
      for (auto* m : l.params()) out.push_back(m);
    return out;
  }
  std::vector<const Eigen::MatrixXd*> params() const {
    std::vector<const Eigen::MatrixXd*> out;
    for (const auto& l : layers)
      for (auto* m : l.params()) out.push_back(m);
    return out;
  }

  int n_nodes() const { return static_cast<int>(layers.front().in() / 2); }

  Var forward(Tape& t, Var x, std::vector<Var>& bound) const {
    for (const auto& l : layers) x = l.forward(t, x, bound);
    return x;
  }
};

inline Eigen::MatrixXd vanilla_inputs(const ObservedData& d) {
  Eigen::MatrixXd x(d.n_samples(), 2 * d.n_nodes());
  x << d.v, d.theta;
  return x;
}

inline Eigen::MatrixXd vanilla_targets(const ObservedData& d) {
  Eigen::MatrixXd y(d.n_samples(), 2 * d.n_nodes());
  y << d.p, d.q;
  return y;
}

struct TrainConfig {
  double lr = 2e-4;
  /// Learning rate reached at the last epoch by exponential decay; 0 keeps lr constant.
  double lr_final = 0.0;
  int epochs = 30000;
  double reg_coeff = 0.0;
  double init_r = 1.0;
  double init_x = 1.0;
  double init_gsh = 1.0;
  double init_bsh = 1.0;
  std::uint64_t seed = 0;
  bool correction = false;
  int layers = 3;
  int hidden = 16;
  Activation activation = Activation::SoftSign;
  /// Abort when the loss exceeds this multiple of the first epoch's loss.
  double divergence_factor = 1e3;

  void validate() const {
    if (!(lr > 0.0)) throw ValidationError("lr", "must be positive");
    if (!(lr_final >= 0.0)) throw ValidationError("lr_final", "must be non-negative");
    if (epochs < 0) throw ValidationError("epochs", "must be non-negative");
    if (!(reg_coeff >= 0.0)) throw ValidationError("reg_coeff", "must be non-negative");
    if (layers < 1) throw ValidationError("layers", "must be at least 1");
    if (hidden < 1) throw ValidationError("hidden", "must be at least 1");
  }

  /// Power-GNN, 14-bus scale, every bus observed.
  static TrainConfig pgnn_full() { return {}; }

  /// Power-GNN with a correction net for partial observability.
  static TrainConfig pgnn_partial() {
    TrainConfig c;
    c.lr = 2e-5;
    c.epochs = 20000;
    c.init_r = 0.1;
    c.init_x = 0.6;
    c.init_gsh = 0.1;
    c.init_bsh = 0.01;
    c.correction = true;
    c.layers = 3;
    c.hidden = 400;
    return c;
  }

  /// Vanilla NN: width 2 * n_bus, ReLU.
  static TrainConfig vanilla(int n_bus) {
    TrainConfig c;
    c.lr = 2e-5;
    c.epochs = 800000;
    c.layers = 3;
    c.hidden = 2 * n_bus;
    c.activation = Activation::ReLU;
    return c;
  }
};

/// Learning rate used at a given epoch.
inline double learning_rate(const TrainConfig& c, int epoch) {
  if (c.lr_final <= 0.0 || c.epochs <= 1) return c.lr;
  const double t = static_cast<double>(epoch) / static_cast<double>(c.epochs - 1);
  return c.lr * std::pow(c.lr_final / c.lr, t);
}

inline json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"lr_final", c.lr_final},
          {"epochs", c.epochs},
          {"reg_coeff", c.reg_coeff},
          {"init_r", c.init_r},
          {"init_x", c.init_x},
          {"init_gsh", c.init_gsh},
          {"init_bsh", c.init_bsh},
          {"seed", c.seed},
          {"correction", c.correction},
          {"layers", c.layers},
          {"hidden", c.hidden},
          {"activation", to_string(c.activation)},
          {"divergence_factor", c.divergence_factor}};
}

/// Overrides fields of base with whatever keys j carries.
inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  if (!j.is_object()) throw ValidationError("train", "expected an object");
  auto take = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
  };
  take("lr", c.lr);
  take("lr_final", c.lr_final);
  take("epochs", c.epochs);
  take("reg_coeff", c.reg_coeff);
  take("init_r", c.init_r);
  take("init_x", c.init_x);
  take("init_gsh", c.init_gsh);
  take("init_bsh", c.init_bsh);
  take("seed", c.seed);
  take("correction", c.correction);
  take("layers", c.layers);
  take("hidden", c.hidden);
  take("divergence_factor", c.divergence_factor);
  if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
  c.validate();
  return c;
}

struct TraceRow {
  int epoch = 0;
  double loss = 0.0;
  double data_term = 0.0;
  double reg_term = 0.0;
};

struct TrainReport {
  std::vector<TraceRow> trace;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_data = 0.0;
  int epochs = 0;
  /// Vanilla only: final training loss reached 1e-4.
  bool success = false;
};

inline constexpr double kVanillaSuccessLoss = 1e-4;

inline std::string trace_csv(const TrainReport& r) {
  std::string out = "epoch,loss,data_term,reg_term\n";
  for (const auto& row : r.trace)
    out += std::to_string(row.epoch) + "," + format_double(row.loss) + "," + format_double(row.data_term) + "," +
           format_double(row.reg_term) + "\n";
  return out;
}

inline json to_json(const TrainReport& r) {
  return {{"epochs", r.epochs},
          {"initial_loss", r.initial_loss},
          {"final_loss", r.final_loss},
          {"final_data", r.final_data},
          {"success", r.success}};
}

/// Physical parameters plus an optional correction network over an effective graph.
struct PowerGnn {
  EffectiveGraph graph;
  PhysParams phys;
  std::optional<CorrectionNet> net;

  AdmittanceMatrix admittance() const { return assemble(graph, phys); }
};

struct LossValue {
  double loss = 0.0;
  double data = 0.0;
  double reg = 0.0;
  Eigen::VectorXd grad_phys;  // wrt phys.pack()
  Eigen::VectorXd grad_net;   // wrt net->flat()
};

namespace detail {

/// Adds the correction output (rows s*n + i, cols dp/dq) into the stacked layout.
inline void add_correction(Eigen::VectorXd& stacked, const Eigen::MatrixXd& corr, Eigen::Index n) {
  const Eigen::Index ns = corr.rows() / n;
  for (Eigen::Index s = 0; s < ns; ++s)
    for (Eigen::Index i = 0; i < n; ++i) {
      stacked[s * 2 * n + i] += corr(s * n + i, 0);
      stacked[s * 2 * n + n + i] += corr(s * n + i, 1);
    }
}

inline Eigen::MatrixXd correction_layout(const Eigen::VectorXd& stacked, Eigen::Index n) {
  const Eigen::Index ns = stacked.size() / (2 * n);
  Eigen::MatrixXd out(ns * n, 2);
  for (Eigen::Index s = 0; s < ns; ++s)
    for (Eigen::Index i = 0; i < n; ++i) {
      out(s * n + i, 0) = stacked[s * 2 * n + i];
      out(s * n + i, 1) = stacked[s * 2 * n + n + i];
    }
  return out;
}

}  // namespace detail

/// L = (1/(N n)) sum ||S - inverse_pf(Y(params), V) - correction||^2 + reg_coeff ||phi||^2.
inline LossValue pgnn_loss(const PowerGnn& model, const PFDesign& design, const NetInputs& inputs, double reg_coeff,
                           bool with_grad = true) {
  const Eigen::Index n = design.n_nodes;
  if (design.n_samples == 0) throw ValidationError("samples", "loss needs at least one sample");
  const double norm = 1.0 / static_cast<double>(design.n_samples * n);
  const Eigen::VectorXd w = model.phys.weights();
  Eigen::VectorXd resid = design.design * w;

  Tape tape;
  std::vector<Var> bound;
  Var out{};
  if (model.net) {
    out = model.net->forward(tape, inputs, bound);
    detail::add_correction(resid, tape.value(out), n);
  }
  resid -= design.target;
  if (!resid.allFinite()) throw NonFiniteValue("non-finite power mismatch");

  LossValue lv;
  lv.data = norm * resid.squaredNorm();
  Eigen::VectorXd phi;
  if (model.net) {
    phi = model.net->flat();
    lv.reg = reg_coeff * phi.squaredNorm();
  }
  lv.loss = lv.data + lv.reg;
  if (!with_grad) return lv;

  const Eigen::VectorXd dr = 2.0 * norm * resid;
  lv.grad_phys = model.phys.chain(design.design.transpose() * dr);
  if (model.net) {
    tape.backward(out, detail::correction_layout(dr, n));
    lv.grad_net = pack_grads(tape, bound) + 2.0 * reg_coeff * phi;
  }
  return lv;
}

/// Predicted observed injections, N x n each.
struct Prediction {
  Eigen::MatrixXd p, q;
};

namespace detail {

inline Prediction unstack(const Eigen::VectorXd& stacked, Eigen::Index ns, Eigen::Index n) {
  Prediction pr{Eigen::MatrixXd(ns, n), Eigen::MatrixXd(ns, n)};
  for (Eigen::Index s = 0; s < ns; ++s)
    for (Eigen::Index i = 0; i < n; ++i) {
      pr.p(s, i) = stacked[s * 2 * n + i];
      pr.q(s, i) = stacked[s * 2 * n + n + i];
    }
  return pr;
}

}  // namespace detail

inline Prediction predict_injections(const PowerGnn& model, const ObservedData& d) {
  const PFDesign design = pf_design(model.graph, d);
  Eigen::VectorXd stacked = design.design * model.phys.weights();
  if (model.net) {
    Tape tape;
    std::vector<Var> bound;
    Var out = model.net->forward(tape, net_inputs(model.graph, d), bound);
    detail::add_correction(stacked, tape.value(out), design.n_nodes);
  }
  return detail::unstack(stacked, design.n_samples, design.n_nodes);
}

inline Prediction predict_injections(const VanillaNet& net, const ObservedData& d) {
  Tape tape;
  std::vector<Var> bound;
  const Eigen::MatrixXd out = tape.value(net.forward(tape, tape.leaf(vanilla_inputs(d)), bound));
  const Eigen::Index n = d.n_nodes();
  return {out.leftCols(n), out.rightCols(n)};
}

namespace detail {

inline void check_divergence(double loss, double initial, double factor, int epoch) {
  if (!std::isfinite(loss) || loss > factor * initial)
    throw Divergence("training diverged at epoch " + std::to_string(epoch) + " (loss " + std::to_string(loss) +
                     ", initial " + std::to_string(initial) + ")");
}

}  // namespace detail

struct PgnnResult {
  PowerGnn model;
  TrainReport report;
};

/// Initial model for a configuration: uniform physical parameters, Glorot correction net.
inline PowerGnn init_pgnn(const EffectiveGraph& graph, const TrainConfig& cfg) {
  PowerGnn m{graph, PhysParams::uniform(graph, cfg.init_r, cfg.init_x, cfg.init_gsh, cfg.init_bsh), std::nullopt};
  m.phys.clamp();
  if (cfg.correction) {
    std::mt19937_64 rng(cfg.seed);
    m.net = CorrectionNet::init(cfg.layers, cfg.hidden, cfg.activation, rng);
  }
  return m;
}

/// Full-batch Adam over (physical parameters, phi). The trace records the loss at the
/// parameters each epoch starts from.
inline PgnnResult train_pgnn(PowerGnn model, const ObservedData& train, const TrainConfig& cfg) {
  cfg.validate();
  const PFDesign design = pf_design(model.graph, train);
  const NetInputs inputs = model.net ? net_inputs(model.graph, train) : NetInputs{};
  const Eigen::Index np = model.phys.size();
  const Eigen::Index nn = model.net ? model.net->flat().size() : 0;
  AdamState adam(np + nn, cfg.lr);
  Eigen::VectorXd theta(np + nn);
  theta.head(np) = model.phys.pack();
  if (nn) theta.tail(nn) = model.net->flat();

  PgnnResult res;
  res.report.trace.reserve(static_cast<std::size_t>(cfg.epochs));
  Eigen::VectorXd grad(np + nn);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    LossValue lv;
    try {
      lv = pgnn_loss(model, design, inputs, cfg.reg_coeff);
    } catch (const NonFiniteValue& e) {
      throw Divergence(std::string("training diverged: ") + e.what());
    }
    if (epoch == 0) res.report.initial_loss = lv.loss;
    detail::check_divergence(lv.loss, res.report.initial_loss, cfg.divergence_factor, epoch);
    res.report.trace.push_back({epoch, lv.loss, lv.data, lv.reg});
    grad.head(np) = lv.grad_phys;
    if (nn) grad.tail(nn) = lv.grad_net;
    adam.lr = learning_rate(cfg, epoch);
    adam_step(adam, theta, grad);
    model.phys.unpack(theta.head(np));
    model.phys.clamp();
    theta.head(np) = model.phys.pack();
    if (nn) unpack(theta.tail(nn), model.net->params());
  }
  const LossValue last = pgnn_loss(model, design, inputs, cfg.reg_coeff, false);
  if (cfg.epochs == 0) res.report.initial_loss = last.loss;
  if (!std::isfinite(last.loss)) throw Divergence("training ended with a non-finite loss");
  res.report.final_loss = last.loss;
  res.report.final_data = last.data;
  res.report.epochs = cfg.epochs;
  res.model = std::move(model);
  return res;
}

inline PgnnResult train_pgnn(const EffectiveGraph& graph, const ObservedData& train, const TrainConfig& cfg) {
  cfg.validate();
  return train_pgnn(init_pgnn(graph, cfg), train, cfg);
}

struct VanillaLoss {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// L = (1/(N n)) sum ||S - NN(V)||^2.
inline VanillaLoss vanilla_loss(const VanillaNet& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                bool with_grad = true) {
  const double norm = 1.0 / static_cast<double>(x.rows() * (y.cols() / 2));
  Tape t;
  std::vector<Var> bound;
  Var out = net.forward(t, t.leaf(x), bound);
  Var loss = ops::scale(t, ops::sum_squares(t, ops::sub(t, out, t.leaf(y))), norm);
  VanillaLoss vl{t.scalar(loss), {}};
  if (with_grad) {
    t.backward(loss);
    vl.grad = pack_grads(t, bound);
  }
  return vl;
}

struct VanillaResult {
  VanillaNet net;
  TrainReport report;
};

inline VanillaResult train_vanilla(const ObservedData& train, const TrainConfig& cfg) {
  cfg.validate();
  if (train.n_samples() == 0) throw ValidationError("samples", "training set is empty");
  std::mt19937_64 rng(cfg.seed);
  VanillaNet net = VanillaNet::init(static_cast<int>(train.n_nodes()), cfg.layers, cfg.hidden, cfg.activation, rng);
  const Eigen::MatrixXd x = vanilla_inputs(train), y = vanilla_targets(train);
  Eigen::VectorXd theta = pack(std::as_const(net).params());
  AdamState adam(theta.size(), cfg.lr);
  VanillaResult res;
  res.report.trace.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    VanillaLoss vl;
    try {
      vl = vanilla_loss(net, x, y);
    } catch (const NonFiniteValue& e) {
      throw Divergence(std::string("training diverged: ") + e.what());
    }
    if (epoch == 0) res.report.initial_loss = vl.loss;
    detail::check_divergence(vl.loss, res.report.initial_loss, cfg.divergence_factor, epoch);
    res.report.trace.push_back({epoch, vl.loss, vl.loss, 0.0});
    adam.lr = learning_rate(cfg, epoch);
    adam_step(adam, theta, vl.grad);
    unpack(theta, net.params());
  }
  const double last = vanilla_loss(net, x, y, false).loss;
  if (!std::isfinite(last)) throw Divergence("training ended with a non-finite loss");
  if (cfg.epochs == 0) res.report.initial_loss = last;
  res.report.final_loss = res.report.final_data = last;
  res.report.epochs = cfg.epochs;
  res.report.success = last <= kVanillaSuccessLoss;
  res.net = std::move(net);
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline Checkpoint to_checkpoint(const PowerGnn& m) {
  Checkpoint c;
  c.meta = {{"model", "pgnn"}, {"observed", m.graph.observed}, {"correction", m.net.has_value()}};
  Eigen::MatrixXd edges(m.graph.n_edges(), 2);
  for (int k = 0; k < m.graph.n_edges(); ++k) {
    edges(k, 0) = m.graph.edges[k].first;
    edges(k, 1) = m.graph.edges[k].second;
  }
  c.add("graph.edges", edges);
  c.add("phys.r", m.phys.r);
  c.add("phys.x", m.phys.x);
  c.add("phys.gsh", m.phys.gsh);
  c.add("phys.bsh", m.phys.bsh);
  if (m.net) {
    json acts = json::array();
    for (std::size_t l = 0; l < m.net->layers.size(); ++l) {
      const auto& layer = m.net->layers[l];
      const std::string p = "net." + std::to_string(l) + ".";
      c.add(p + "w_self", layer.w_self);
      c.add(p + "w_nbr", layer.w_nbr);
      c.add(p + "w_edge", layer.w_edge);
      c.add(p + "bias", layer.bias);
      acts.push_back(to_string(layer.activation));
    }
    c.meta["activations"] = acts;
  }
  return c;
}

inline Checkpoint to_checkpoint(const VanillaNet& net) {
  Checkpoint c;
  json acts = json::array();
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::string p = "dense." + std::to_string(l) + ".";
    c.add(p + "weights", net.layers[l].weights);
    c.add(p + "bias", net.layers[l].bias);
    acts.push_back(to_string(net.layers[l].activation));
  }
  c.meta = {{"model", "vanilla"}, {"activations", acts}};
  return c;
}

inline std::string checkpoint_model(const Checkpoint& c) { return c.meta.value("model", ""); }

inline PowerGnn pgnn_from_checkpoint(const Checkpoint& c) {
  if (checkpoint_model(c) != "pgnn") throw ValidationError("meta.model", "not a Power-GNN checkpoint");
  PowerGnn m;
  m.graph.observed = c.meta.at("observed").get<std::vector<int>>();
  const Eigen::MatrixXd& edges = c.get("graph.edges");
  for (Eigen::Index k = 0; k < edges.rows(); ++k)
    m.graph.edges.emplace_back(static_cast<int>(edges(k, 0)), static_cast<int>(edges(k, 1)));
  m.phys.r = c.get("phys.r");
  m.phys.x = c.get("phys.x");
  m.phys.gsh = c.get("phys.gsh");
  m.phys.bsh = c.get("phys.bsh");
  if (c.meta.value("correction", false)) {
    CorrectionNet net;
    const auto acts = c.meta.at("activations").get<std::vector<std::string>>();
    for (std::size_t l = 0; l < acts.size(); ++l) {
      const std::string p = "net." + std::to_string(l) + ".";
      net.layers.push_back({c.get(p + "w_self"), c.get(p + "w_nbr"), c.get(p + "w_edge"), c.get(p + "bias"),
                            parse_activation(acts[l])});
    }
    m.net = std::move(net);
  }
  return m;
}

inline VanillaNet vanilla_from_checkpoint(const Checkpoint& c) {
  if (checkpoint_model(c) != "vanilla") throw ValidationError("meta.model", "not a vanilla checkpoint");
  VanillaNet net;
  const auto acts = c.meta.at("activations").get<std::vector<std::string>>();
  for (std::size_t l = 0; l < acts.size(); ++l) {
    const std::string p = "dense." + std::to_string(l) + ".";
    net.layers.push_back({c.get(p + "weights"), c.get(p + "bias"), parse_activation(acts[l])});
  }
  return net;
}

}  // namespace powergnn
