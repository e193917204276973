#pragma once

#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "powergnn/grid_io.hpp"

namespace powergnn::test {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline GridCase ieee14() { return import_matpower(read_file(std::string(POWERGNN_DATA_DIR) + "/case14.m")); }

inline GridCase two_bus(double r = 0.0, double x = 0.1) {
  GridCase g;
  g.buses = {{0, BusKind::Slack}, {1, BusKind::PQ}};
  g.lines = {{0, 1, r, x, 0.0}};
  g.generators = {{0, 0.0, 5.0, -5.0, 5.0, 1.0, 1.0}};
  return g;
}

/// Connected grid: random spanning tree plus a few chords, random r, x, charging, shunts.
inline GridCase random_grid(std::mt19937_64& rng, int n, bool shunts = true) {
  std::uniform_real_distribution<double> ur(0.005, 0.1), ux(0.05, 0.5), us(-0.05, 0.2), ush(0.0, 0.05);
  GridCase g;
  for (int i = 0; i < n; ++i) {
    Bus b{i, i == 0 ? BusKind::Slack : BusKind::PQ};
    if (shunts) {
      b.shunt_g = 0.5 * ush(rng);
      b.shunt_b = us(rng);
    }
    g.buses.push_back(b);
  }
  auto has = [&](int a, int b) {
    for (const auto& l : g.lines)
      if ((l.from == a && l.to == b) || (l.from == b && l.to == a)) return true;
    return false;
  };
  for (int i = 1; i < n; ++i) {
    int j = std::uniform_int_distribution<int>(0, i - 1)(rng);
    g.lines.push_back({j, i, ur(rng), ux(rng), shunts ? ush(rng) : 0.0});
  }
  int extra = std::uniform_int_distribution<int>(0, n / 2)(rng);
  for (int k = 0; k < extra; ++k) {
    int a = std::uniform_int_distribution<int>(0, n - 1)(rng);
    int b = std::uniform_int_distribution<int>(0, n - 1)(rng);
    if (a != b && !has(a, b)) g.lines.push_back({a, b, ur(rng), ux(rng), shunts ? ush(rng) : 0.0});
  }
  g.generators = {{0, 0.0, 10.0, -10.0, 10.0, 1.0, 1.0}};
  return g;
}

}  // namespace powergnn::test
