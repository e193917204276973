#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <nlohmann/json.hpp>

#include "powergnn/errors.hpp"

namespace powergnn {

/// Handle to a node of a Tape.
struct Var {
  int id = -1;
};

/// Reverse-mode tape whose nodes hold dense matrices. Nodes are appended in
/// evaluation order, so walking the list backwards is a reverse topological order.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Var leaf(Eigen::MatrixXd value) { return push("leaf", std::move(value), nullptr); }

  /// Records a computed node. Throws NonFiniteValue naming the op on NaN/Inf.
  Var push(const char* op, Eigen::MatrixXd value, Backward backward) {
    if (!value.allFinite()) throw NonFiniteValue(std::string("non-finite value produced by ") + op);
    nodes_.push_back({std::move(value), Eigen::MatrixXd(), std::move(backward)});
    return {static_cast<int>(nodes_.size()) - 1};
  }

  const Eigen::MatrixXd& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const { return value(v)(0, 0); }

  /// Adjoint of a node after backward(); zero if the node did not influence the output.
  Eigen::MatrixXd grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    return n.grad.size() ? n.grad : Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
  }

  /// Adds into the adjoint of node id. Used by backward closures.
  Eigen::MatrixXd& adjoint(int id) {
    auto& n = nodes_[id];
    if (!n.grad.size()) n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool has_adjoint(int id) const { return nodes_[id].grad.size() != 0; }

  void backward(Var out) { backward(out, Eigen::MatrixXd::Ones(value(out).rows(), value(out).cols())); }

  /// Seeds the adjoint of out and propagates to every ancestor exactly once.
  void backward(Var out, const Eigen::MatrixXd& seed) {
    if (seed.rows() != value(out).rows() || seed.cols() != value(out).cols())
      throw DimensionMismatch("backward: seed shape does not match output");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    adjoint(out.id) = seed;
    for (int i = out.id; i >= 0; --i) {
      if (!nodes_[i].backward || !has_adjoint(i)) continue;
      if (!nodes_[i].grad.allFinite()) throw NonFiniteValue("non-finite adjoint in backward pass");
      nodes_[i].backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

/// Scalar convenience on top of a Tape: a 1x1 node with value and adjoint.
struct DiffScalar {
  Tape* tape = nullptr;
  Var var;
  double value() const { return tape->scalar(var); }
  double adjoint() const { return tape->grad(var)(0, 0); }
};

namespace ops {

inline Var matmul(Tape& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).rows()) throw DimensionMismatch("matmul: inner dimensions differ");
  return t.push("matmul", t.value(a) * t.value(b), [a, b](Tape& t, int self) {
    const Eigen::MatrixXd& g = t.adjoint(self);
    Eigen::MatrixXd ga = g * t.value(b).transpose();
    Eigen::MatrixXd gb = t.value(a).transpose() * g;
    t.adjoint(a.id) += ga;
    t.adjoint(b.id) += gb;
  });
}

inline Var add(Tape& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
    throw DimensionMismatch("add: shapes differ");
  return t.push("add", t.value(a) + t.value(b), [a, b](Tape& t, int self) {
    Eigen::MatrixXd g = t.adjoint(self);
    t.adjoint(a.id) += g;
    t.adjoint(b.id) += g;
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
    throw DimensionMismatch("sub: shapes differ");
  return t.push("sub", t.value(a) - t.value(b), [a, b](Tape& t, int self) {
    Eigen::MatrixXd g = t.adjoint(self);
    t.adjoint(a.id) += g;
    t.adjoint(b.id) -= g;
  });
}

inline Var mul(Tape& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
    throw DimensionMismatch("mul: shapes differ");
  return t.push("mul", t.value(a).cwiseProduct(t.value(b)), [a, b](Tape& t, int self) {
    Eigen::MatrixXd g = t.adjoint(self);
    t.adjoint(a.id) += g.cwiseProduct(t.value(b));
    t.adjoint(b.id) += g.cwiseProduct(t.value(a));
  });
}

inline Var scale(Tape& t, Var a, double s) {
  return t.push("scale", s * t.value(a), [a, s](Tape& t, int self) {
    Eigen::MatrixXd g = s * t.adjoint(self);
    t.adjoint(a.id) += g;
  });
}

/// a (rows x k) plus a 1 x k row broadcast over rows.
inline Var add_row(Tape& t, Var a, Var row) {
  if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(a).cols())
    throw DimensionMismatch("add_row: bias must be 1 x cols");
  Eigen::MatrixXd out = t.value(a);
  out.rowwise() += t.value(row).row(0);
  return t.push("add_row", std::move(out), [a, row](Tape& t, int self) {
    Eigen::MatrixXd g = t.adjoint(self);
    t.adjoint(a.id) += g;
    t.adjoint(row.id) += g.colwise().sum();
  });
}

inline Var relu(Tape& t, Var a) {
  return t.push("relu", t.value(a).cwiseMax(0.0), [a](Tape& t, int self) {
    Eigen::MatrixXd g = t.adjoint(self);
    t.adjoint(a.id) += (t.value(a).array() > 0.0).select(g.array(), 0.0).matrix();
  });
}

/// x / (1 + |x|), derivative 1 / (1 + |x|)^2.
inline Var softsign(Tape& t, Var a) {
  Eigen::MatrixXd out = t.value(a).array() / (1.0 + t.value(a).array().abs());
  return t.push("softsign", std::move(out), [a](Tape& t, int self) {
    Eigen::MatrixXd g = t.adjoint(self);
    t.adjoint(a.id) += (g.array() / (1.0 + t.value(a).array().abs()).square()).matrix();
  });
}

inline Var sum_squares(Tape& t, Var a) {
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = t.value(a).squaredNorm();
  return t.push("sum_squares", std::move(out), [a](Tape& t, int self) {
    const double g = t.adjoint(self)(0, 0);
    t.adjoint(a.id) += 2.0 * g * t.value(a);
  });
}

/// Left-multiplies by a fixed sparse matrix: out = adj * a. Used for neighbor aggregation.
inline Var aggregate(Tape& t, Var a, std::shared_ptr<const Eigen::SparseMatrix<double>> adj) {
  if (adj->cols() != t.value(a).rows()) throw DimensionMismatch("aggregate: adjacency does not match rows");
  Eigen::MatrixXd out = (*adj) * t.value(a);
  return t.push("aggregate", std::move(out), [a, adj](Tape& t, int self) {
    Eigen::MatrixXd g = adj->transpose() * t.adjoint(self);
    t.adjoint(a.id) += g;
  });
}

}  // namespace ops

enum class Activation { ReLU, SoftSign, Identity };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::SoftSign: return "softsign";
    case Activation::Identity: return "identity";
  }
  return "identity";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "softsign") return Activation::SoftSign;
  if (s == "identity") return Activation::Identity;
  throw ValidationError("activation", "expected relu, softsign or identity, got '" + s + "'");
}

inline Var activate(Tape& t, Var a, Activation act) {
  switch (act) {
    case Activation::ReLU: return ops::relu(t, a);
    case Activation::SoftSign: return ops::softsign(t, a);
    case Activation::Identity: break;
  }
  return a;
}

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline Eigen::MatrixXd glorot_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
  const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-lim, lim);
  Eigen::MatrixXd w(fan_in, fan_out);
  for (Eigen::Index j = 0; j < fan_out; ++j)
    for (Eigen::Index i = 0; i < fan_in; ++i) w(i, j) = u(rng);
  return w;
}

/// Row-vector convention: y = act(x W + b) with x of shape rows x in.
struct DenseLayer {
  Eigen::MatrixXd weights;
  Eigen::MatrixXd bias;
  Activation activation = Activation::Identity;

  static DenseLayer init(Eigen::Index in, Eigen::Index out, Activation act, std::mt19937_64& rng) {
    return {glorot_uniform(in, out, rng), Eigen::MatrixXd::Zero(1, out), act};
  }

  Eigen::Index in() const { return weights.rows(); }
  Eigen::Index out() const { return weights.cols(); }

  std::vector<Eigen::MatrixXd*> params() { return {&weights, &bias}; }
  std::vector<const Eigen::MatrixXd*> params() const { return {&weights, &bias}; }

  Var forward(Tape& t, Var x, std::vector<Var>& bound) const {
    if (bias.rows() != 1 || bias.cols() != weights.cols()) throw DimensionMismatch("dense layer: bias shape");
    Var w = t.leaf(weights);
    Var b = t.leaf(bias);
    bound.push_back(w);
    bound.push_back(b);
    return activate(t, ops::add_row(t, ops::matmul(t, x, w), b), activation);
  }
};

/// Block-diagonal 0/1 matrix with one copy of the neighbor structure per sample; row
/// s*n + i sums rows s*n + j over j in neighbors[i].
inline std::shared_ptr<const Eigen::SparseMatrix<double>> block_adjacency(
    const std::vector<std::vector<int>>& neighbors, Eigen::Index n_blocks) {
  const auto n = static_cast<Eigen::Index>(neighbors.size());
  std::vector<Eigen::Triplet<double>> trip;
  for (Eigen::Index s = 0; s < n_blocks; ++s)
    for (Eigen::Index i = 0; i < n; ++i)
      for (int j : neighbors[static_cast<std::size_t>(i)]) trip.emplace_back(s * n + i, s * n + j, 1.0);
  auto adj = std::make_shared<Eigen::SparseMatrix<double>>(n * n_blocks, n * n_blocks);
  adj->setFromTriplets(trip.begin(), trip.end());
  return adj;
}

/// h_i' = act(h_i W_self + sum_{j in N(i)} h_j W_nbr + e_i W_edge + b), where e_i is the
/// per-node sum of incident edge features (first layer only; empty otherwise).
struct GraphMaskedLayer {
  Eigen::MatrixXd w_self;
  Eigen::MatrixXd w_nbr;
  Eigen::MatrixXd w_edge;
  Eigen::MatrixXd bias;
  Activation activation = Activation::SoftSign;

  static GraphMaskedLayer init(Eigen::Index in, Eigen::Index edge_in, Eigen::Index out, Activation act,
                               std::mt19937_64& rng) {
    GraphMaskedLayer l;
    l.w_self = glorot_uniform(in, out, rng);
    l.w_nbr = glorot_uniform(in, out, rng);
    l.w_edge = edge_in ? glorot_uniform(edge_in, out, rng) : Eigen::MatrixXd(0, out);
    l.bias = Eigen::MatrixXd::Zero(1, out);
    l.activation = act;
    return l;
  }

  std::vector<Eigen::MatrixXd*> params() {
    if (w_edge.rows()) return {&w_self, &w_nbr, &w_edge, &bias};
    return {&w_self, &w_nbr, &bias};
  }
  std::vector<const Eigen::MatrixXd*> params() const {
    if (w_edge.rows()) return {&w_self, &w_nbr, &w_edge, &bias};
    return {&w_self, &w_nbr, &bias};
  }

  /// h has one row per (sample, node); adj is the matching block_adjacency mask.
  /// edge_feat is a tape node of matching rows, or an invalid Var when unused.
  Var forward(Tape& t, Var h, Var edge_feat, const std::shared_ptr<const Eigen::SparseMatrix<double>>& adj,
              std::vector<Var>& bound) const {
    Var ws = t.leaf(w_self);
    Var wn = t.leaf(w_nbr);
    bound.push_back(ws);
    bound.push_back(wn);
    Var z = ops::add(t, ops::matmul(t, h, ws), ops::matmul(t, ops::aggregate(t, h, adj), wn));
    if (w_edge.rows()) {
      if (edge_feat.id < 0) throw DimensionMismatch("graph layer: edge features required");
      Var we = t.leaf(w_edge);
      bound.push_back(we);
      z = ops::add(t, z, ops::matmul(t, edge_feat, we));
    }
    Var b = t.leaf(bias);
    bound.push_back(b);
    return activate(t, ops::add_row(t, z, b), activation);
  }
};

/// Concatenates matrices column-major into one vector.
inline Eigen::VectorXd pack(const std::vector<const Eigen::MatrixXd*>& ms) {
  Eigen::Index n = 0;
  for (auto* m : ms) n += m->size();
  Eigen::VectorXd out(n);
  Eigen::Index k = 0;
  for (auto* m : ms) {
    out.segment(k, m->size()) = m->reshaped();
    k += m->size();
  }
  return out;
}

inline void unpack(const Eigen::VectorXd& flat, const std::vector<Eigen::MatrixXd*>& ms) {
  Eigen::Index k = 0;
  for (auto* m : ms) {
    if (k + m->size() > flat.size()) throw DimensionMismatch("unpack: vector too short");
    m->reshaped() = flat.segment(k, m->size());
    k += m->size();
  }
  if (k != flat.size()) throw DimensionMismatch("unpack: vector too long");
}

/// Gradients of bound leaves, packed in the same order as pack().
inline Eigen::VectorXd pack_grads(const Tape& t, const std::vector<Var>& bound) {
  Eigen::Index n = 0;
  for (Var v : bound) n += t.value(v).size();
  Eigen::VectorXd out(n);
  Eigen::Index k = 0;
  for (Var v : bound) {
    Eigen::MatrixXd g = t.grad(v);
    out.segment(k, g.size()) = g.reshaped();
    k += g.size();
  }
  return out;
}

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(Eigen::Index n, double lr_) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)), lr(lr_) {}
};

/// One bias-corrected Adam update in place.
inline void adam_step(AdamState& s, Eigen::VectorXd& params, const Eigen::VectorXd& grads) {
  if (params.size() != s.m.size() || grads.size() != s.m.size())
    throw DimensionMismatch("adam_step: parameter, gradient and moment sizes differ");
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grads;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double mh = s.m[i] / c1;
    const double vh = s.v[i] / c2;
    params[i] -= s.lr * mh / (std::sqrt(vh) + s.eps);
  }
}

/// Named matrices stored as one flat array plus an index of sections.
struct Checkpoint {
  struct Section {
    std::string name;
    Eigen::MatrixXd value;
  };
  std::vector<Section> sections;
  nlohmann::json meta = nlohmann::json::object();

  void add(std::string name, Eigen::MatrixXd value) { sections.push_back({std::move(name), std::move(value)}); }

  const Eigen::MatrixXd& get(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return s.value;
    throw ValidationError("sections", "checkpoint has no section '" + name + "'");
  }

  bool has(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return true;
    return false;
  }
};

inline nlohmann::json to_json(const Checkpoint& c) {
  nlohmann::json index = nlohmann::json::array();
  std::vector<double> data;
  for (const auto& s : c.sections) {
    index.push_back({{"name", s.name},
                     {"offset", data.size()},
                     {"rows", s.value.rows()},
                     {"cols", s.value.cols()}});
    for (Eigen::Index k = 0; k < s.value.size(); ++k) data.push_back(s.value.reshaped()[k]);
  }
  return {{"format", "powergnn-checkpoint-1"}, {"meta", c.meta}, {"index", index}, {"data", data}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != "powergnn-checkpoint-1")
    throw ValidationError("format", "not a checkpoint");
  const auto data = j.at("data").get<std::vector<double>>();
  Checkpoint c;
  c.meta = j.value("meta", nlohmann::json::object());
  for (const auto& e : j.at("index")) {
    const auto off = e.at("offset").get<std::size_t>();
    const auto rows = e.at("rows").get<Eigen::Index>();
    const auto cols = e.at("cols").get<Eigen::Index>();
    if (rows < 0 || cols < 0 || off + static_cast<std::size_t>(rows * cols) > data.size())
      throw ValidationError("index", "section '" + e.at("name").get<std::string>() + "' out of range");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.reshaped()[k] = data[off + static_cast<std::size_t>(k)];
    c.add(e.at("name").get<std::string>(), std::move(m));
  }
  return c;
}

}  // namespace powergnn
