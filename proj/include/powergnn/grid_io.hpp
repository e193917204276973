#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "powergnn/grid_model.hpp"

namespace powergnn {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Native JSON schema
// ---------------------------------------------------------------------------

inline json grid_to_json(const GridCase& grid) {
  json j;
  j["base_mva"] = grid.base_mva;
  j["buses"] = json::array();
  for (const auto& b : grid.buses)
    j["buses"].push_back({{"id", b.id},
                          {"kind", to_string(b.kind)},
                          {"shunt_g", b.shunt_g},
                          {"shunt_b", b.shunt_b},
                          {"load_p", b.base_load_p},
                          {"load_q", b.base_load_q}});
  j["lines"] = json::array();
  for (const auto& l : grid.lines)
    j["lines"].push_back({{"from", l.from}, {"to", l.to}, {"r", l.r}, {"x", l.x}, {"y_sh", l.y_sh}});
  j["generators"] = json::array();
  for (const auto& g : grid.generators)
    j["generators"].push_back({{"bus", g.bus},
                               {"p_min", g.p_min},
                               {"p_max", g.p_max},
                               {"q_min", g.q_min},
                               {"q_max", g.q_max},
                               {"cost", g.cost},
                               {"v_set", g.v_set}});
  return j;
}

inline std::string export_grid(const GridCase& grid) { return grid_to_json(grid).dump(1) + "\n"; }

namespace detail {

inline const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw ValidationError(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(path + "." + key, "missing");
  return *it;
}

inline double get_number(const json& obj, const std::string& key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_number()) throw ValidationError(path + "." + key, "expected a number");
  return v.get<double>();
}

inline int get_int(const json& obj, const std::string& key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_number_integer()) throw ValidationError(path + "." + key, "expected an integer");
  return v.get<int>();
}

inline const json& get_array(const json& obj, const std::string& key) {
  const json& v = require(obj, key, "");
  if (!v.is_array()) throw ValidationError(key, "expected an array");
  return v;
}

}  // namespace detail

inline GridCase grid_from_json(const json& j) {
  GridCase grid;
  grid.base_mva = detail::get_number(j, "base_mva", "");
  const json& buses = detail::get_array(j, "buses");
  if (buses.empty()) throw ValidationError("buses", "bus list is empty");
  for (std::size_t i = 0; i < buses.size(); ++i) {
    const std::string path = "buses[" + std::to_string(i) + "]";
    const json& e = buses[i];
    Bus b;
    b.id = detail::get_int(e, "id", path);
    const json& kind = detail::require(e, "kind", path);
    if (kind == "slack") b.kind = BusKind::Slack;
    else if (kind == "pv") b.kind = BusKind::PV;
    else if (kind == "pq") b.kind = BusKind::PQ;
    else throw ValidationError(path + ".kind", "expected \"slack\", \"pv\" or \"pq\"");
    b.shunt_g = detail::get_number(e, "shunt_g", path);
    b.shunt_b = detail::get_number(e, "shunt_b", path);
    b.base_load_p = detail::get_number(e, "load_p", path);
    b.base_load_q = detail::get_number(e, "load_q", path);
    grid.buses.push_back(b);
  }
  const json& lines = detail::get_array(j, "lines");
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const std::string path = "lines[" + std::to_string(k) + "]";
    const json& e = lines[k];
    grid.lines.push_back({detail::get_int(e, "from", path), detail::get_int(e, "to", path),
                          detail::get_number(e, "r", path), detail::get_number(e, "x", path),
                          detail::get_number(e, "y_sh", path)});
  }
  const json& gens = detail::get_array(j, "generators");
  for (std::size_t k = 0; k < gens.size(); ++k) {
    const std::string path = "generators[" + std::to_string(k) + "]";
    const json& e = gens[k];
    grid.generators.push_back(
        {detail::get_int(e, "bus", path), detail::get_number(e, "p_min", path),
         detail::get_number(e, "p_max", path), detail::get_number(e, "q_min", path),
         detail::get_number(e, "q_max", path), detail::get_number(e, "cost", path),
         detail::get_number(e, "v_set", path)});
  }
  validate(grid);
  return grid;
}

inline GridCase load_grid(std::string_view text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ParseError("grid file is not valid JSON");
  return grid_from_json(j);
}

/// FNV-1a over bytes; stable across platforms, used for dataset provenance.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string grid_hash(const GridCase& grid) { return hex64(fnv1a(export_grid(grid))); }

// ---------------------------------------------------------------------------
// MATPOWER case import
// ---------------------------------------------------------------------------

namespace detail {

struct MatrixBlock {
  std::vector<std::vector<double>> rows;
  std::size_t line = 0;
};

/// Scanner over the subset of MATLAB used by case files: `mpc.<name> = <scalar|matrix|string>;`.
class CaseScanner {
 public:
  explicit CaseScanner(std::string_view text) : s_(text) {}

  void run(std::map<std::string, MatrixBlock>& matrices, std::map<std::string, double>& scalars) {
    while (skip_space_and_comments(true), pos_ < s_.size()) {
      if (starts_with("mpc.")) {
        const std::size_t line = line_;
        pos_ += 4;
        col_ += 4;
        std::string name = identifier();
        skip_space_and_comments(false);
        if (peek() != '=') {
          skip_statement();
          continue;
        }
        advance();
        skip_space_and_comments(false);
        if (peek() == '[') {
          MatrixBlock block = matrix();
          block.line = line;
          matrices[name] = std::move(block);
        } else if (peek() == '\'' || peek() == '"' || peek() == '{') {
          skip_statement();
        } else {
          scalars[name] = number();
          skip_space_and_comments(false);
          if (peek() == ';') advance();
        }
      } else {
        skip_statement();
      }
    }
  }

 private:
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }

  void advance() {
    if (s_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  bool starts_with(std::string_view p) const { return s_.substr(pos_, p.size()) == p; }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, line_, col_); }

  void skip_space_and_comments(bool newlines) {
    while (pos_ < s_.size()) {
      char c = s_[pos_];
      if (c == '%' || c == '#') {
        while (pos_ < s_.size() && s_[pos_] != '\n') advance();
      } else if (starts_with("...")) {
        while (pos_ < s_.size() && s_[pos_] != '\n') advance();
        if (pos_ < s_.size()) advance();
      } else if (c == ' ' || c == '\t' || c == '\r' || (newlines && c == '\n')) {
        advance();
      } else {
        break;
      }
    }
  }

  void skip_statement() {
    int depth = 0;
    while (pos_ < s_.size()) {
      char c = s_[pos_];
      if (c == '%' || c == '#') {
        skip_space_and_comments(false);
        continue;
      }
      if (c == '[' || c == '{') ++depth;
      if (c == ']' || c == '}') --depth;
      advance();
      if (depth <= 0 && (c == ';' || c == '\n')) return;
    }
  }

  std::string identifier() {
    std::string out;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) {
      out.push_back(s_[pos_]);
      advance();
    }
    if (out.empty()) fail("expected identifier after 'mpc.'");
    return out;
  }

  double number() {
    const std::size_t start = pos_;
    bool neg = false;
    if (peek() == '+' || peek() == '-') {
      neg = peek() == '-';
      advance();
    }
    if (starts_with("Inf")) {
      for (int k = 0; k < 3; ++k) advance();
      return neg ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    }
    while (pos_ < s_.size() &&
           (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.' || s_[pos_] == 'e' ||
            s_[pos_] == 'E' ||
            ((s_[pos_] == '-' || s_[pos_] == '+') && (s_[pos_ - 1] == 'e' || s_[pos_ - 1] == 'E'))))
      advance();
    std::string tok(s_.substr(start, pos_ - start));
    if (tok.empty() || tok == "-" || tok == "+") fail("expected a numeric literal");
    char next = peek();
    if (next != '\0' && !std::isspace(static_cast<unsigned char>(next)) && next != ';' &&
        next != ',' && next != ']' && next != '%')
      fail("unsupported expression in numeric field");
    try {
      std::size_t used = 0;
      double v = std::stod(tok, &used);
      if (used != tok.size()) fail("malformed number '" + tok + "'");
      return v;
    } catch (const std::logic_error&) {
      fail("malformed number '" + tok + "'");
    }
  }

  MatrixBlock matrix() {
    advance();  // '['
    MatrixBlock block;
    std::vector<double> row;
    while (true) {
      skip_space_and_comments(false);
      if (pos_ >= s_.size()) fail("unterminated matrix");
      char c = peek();
      if (c == ']') {
        advance();
        if (!row.empty()) block.rows.push_back(std::move(row));
        skip_space_and_comments(false);
        if (peek() == ';') advance();
        return block;
      }
      if (c == ';' || c == '\n') {
        advance();
        if (!row.empty()) block.rows.push_back(std::move(row));
        row.clear();
        continue;
      }
      if (c == ',') {
        advance();
        continue;
      }
      row.push_back(number());
    }
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

inline double polynomial_marginal_cost(const std::vector<double>& row, double p_mw) {
  // row: model, startup, shutdown, n, c(n-1) ... c0
  const int n = static_cast<int>(row[3]);
  double d = 0.0;
  for (int k = 0; k < n - 1; ++k) {
    const int power = n - 1 - k;
    d += power * row[4 + k] * std::pow(p_mw, power - 1);
  }
  return d;
}

inline double piecewise_average_slope(const std::vector<double>& row) {
  const int n = static_cast<int>(row[3]);
  const double x0 = row[4], y0 = row[5];
  const double x1 = row[4 + 2 * (n - 1)], y1 = row[5 + 2 * (n - 1)];
  return x1 > x0 ? (y1 - y0) / (x1 - x0) : 0.0;
}

}  // namespace detail

/// Imports a MATPOWER case text into a per-unit GridCase.
///
/// Bus numbers are renumbered to 0..n-1 in file order. Out-of-service branches and
/// generators are dropped, off-nominal taps are folded into the line impedance and
/// bus shunts, and parallel branches are merged into one line by summing admittances.
/// A generator's scalar cost is its marginal cost at the midpoint of its active range.
inline GridCase import_matpower(std::string_view text) {
  std::map<std::string, detail::MatrixBlock> m;
  std::map<std::string, double> scalars;
  detail::CaseScanner(text).run(m, scalars);

  for (const char* key : {"bus", "branch", "gen"})
    if (!m.count(key)) throw ParseError(std::string("missing mpc.") + key + " matrix");

  GridCase grid;
  grid.base_mva = scalars.count("baseMVA") ? scalars["baseMVA"] : 100.0;
  const double base = grid.base_mva;

  auto check_width = [](const detail::MatrixBlock& b, std::size_t w, const char* name) {
    for (std::size_t r = 0; r < b.rows.size(); ++r)
      if (b.rows[r].size() < w)
        throw ParseError(std::string("mpc.") + name + " row " + std::to_string(r + 1) + " has " +
                             std::to_string(b.rows[r].size()) + " columns, expected at least " +
                             std::to_string(w),
                         b.line + r + 1, 1);
  };
  check_width(m["bus"], 13, "bus");
  check_width(m["branch"], 11, "branch");
  check_width(m["gen"], 10, "gen");

  std::map<long, int> index;
  for (const auto& row : m["bus"].rows) {
    const long ext = static_cast<long>(row[0]);
    if (index.count(ext)) throw ParseError("duplicate bus number " + std::to_string(ext));
    Bus b;
    b.id = static_cast<int>(grid.buses.size());
    switch (static_cast<int>(row[1])) {
      case 1: b.kind = BusKind::PQ; break;
      case 2: b.kind = BusKind::PV; break;
      case 3: b.kind = BusKind::Slack; break;
      default: throw UnsupportedFeature("bus " + std::to_string(ext) + ": isolated or unknown bus type");
    }
    b.base_load_p = row[2] / base;
    b.base_load_q = row[3] / base;
    b.shunt_g = row[4] / base;
    b.shunt_b = row[5] / base;
    index[ext] = b.id;
    grid.buses.push_back(b);
  }
  auto bus_of = [&](double ext, const char* what) {
    auto it = index.find(static_cast<long>(ext));
    if (it == index.end())
      throw ParseError(std::string(what) + " references unknown bus " + std::to_string(static_cast<long>(ext)));
    return it->second;
  };

  // Merge by unordered pair; keep first-seen order for determinism.
  std::vector<std::pair<int, int>> order;
  std::map<std::pair<int, int>, std::pair<cplx, double>> merged;  // series admittance, charging
  for (const auto& row : m["branch"].rows) {
    if (row[10] == 0.0) continue;
    if (row[9] != 0.0) throw UnsupportedFeature("phase-shifting transformers are not supported");
    int f = bus_of(row[0], "branch");
    int t = bus_of(row[1], "branch");
    if (f == t) throw ParseError("branch connects bus to itself");
    const double tap = row[8] == 0.0 ? 1.0 : row[8];
    const cplx y = line_admittance(row[2], row[3]);
    const double bc = row[4];
    double y_sh_line = bc;
    if (tap != 1.0) {
      // Off-nominal tap at the from end: series y/t, from shunt y(1-t)/t^2 + i bc/(2 t^2),
      // to shunt y(t-1)/t + i bc/2. Asymmetric parts go to bus shunts.
      const cplx from_sh = y * (1.0 - tap) / (tap * tap) + cplx{0.0, bc / (2.0 * tap * tap)};
      const cplx to_sh = y * (tap - 1.0) / tap + cplx{0.0, bc / 2.0};
      grid.buses[f].shunt_g += from_sh.real();
      grid.buses[f].shunt_b += from_sh.imag();
      grid.buses[t].shunt_g += to_sh.real();
      grid.buses[t].shunt_b += to_sh.imag();
      y_sh_line = 0.0;
    }
    const cplx ys = y / tap;
    const std::pair<int, int> key = std::minmax(f, t);
    auto it = merged.find(key);
    if (it == merged.end()) {
      order.push_back(key);
      merged[key] = {ys, y_sh_line};
    } else {
      it->second.first += ys;
      it->second.second += y_sh_line;
    }
  }
  for (const auto& key : order) {
    const auto& [ys, ysh] = merged[key];
    const cplx z = 1.0 / ys;
    grid.lines.push_back({key.first, key.second, z.real(), z.imag(), ysh});
  }

  const auto* gencost = m.count("gencost") ? &m["gencost"] : nullptr;
  const auto& gen_rows = m["gen"].rows;
  for (std::size_t k = 0; k < gen_rows.size(); ++k) {
    const auto& row = gen_rows[k];
    if (row[7] <= 0.0) continue;
    Generator g;
    g.bus = bus_of(row[0], "gen");
    g.q_max = row[3] / base;
    g.q_min = row[4] / base;
    g.v_set = row[5];
    g.p_max = row[8] / base;
    g.p_min = row[9] / base;
    g.cost = 1.0;
    if (gencost && k < gencost->rows.size()) {
      const auto& c = gencost->rows[k];
      if (c.size() < 4) throw ParseError("mpc.gencost row " + std::to_string(k + 1) + " too short");
      const int model = static_cast<int>(c[0]);
      const std::size_t need = 4 + static_cast<std::size_t>(c[3]) * (model == 1 ? 2 : 1);
      if (c.size() < need) throw ParseError("mpc.gencost row " + std::to_string(k + 1) + " too short");
      const double mid = 0.5 * (row[8] + row[9]);
      g.cost = model == 1 ? detail::piecewise_average_slope(c) : detail::polynomial_marginal_cost(c, mid);
    }
    grid.generators.push_back(g);
  }
  validate(grid);
  return grid;
}

}  // namespace powergnn
