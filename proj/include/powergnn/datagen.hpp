#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "powergnn/grid_io.hpp"
#include "powergnn/kron.hpp"
#include "powergnn/powerflow.hpp"

namespace powergnn {

inline constexpr const char* kDatagenVersion = "datagen-1";

/// Dataset families: C1 common load scaling, C2 + joint nodal noise, C3 + independent
/// p/q noise, C4 random generator outages, C5 random costs, C6 C1 with a global phase shift.
enum class ScenarioCase { C1 = 1, C2, C3, C4, C5, C6 };

inline ScenarioCase parse_case(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s.size() == 2 && s[0] == 'c' && s[1] >= '1' && s[1] <= '6') return static_cast<ScenarioCase>(s[1] - '0');
  if (s.size() == 1 && s[0] >= '1' && s[0] <= '6') return static_cast<ScenarioCase>(s[0] - '0');
  throw ValidationError("case", "expected c1..c6, got '" + s + "'");
}

inline std::string case_name(ScenarioCase c) { return "c" + std::to_string(static_cast<int>(c)); }

struct ScenarioConfig {
  ScenarioCase case_id = ScenarioCase::C1;
  int n_samples = 2000;
  std::array<double, 2> scale_range{0.8, 1.2};
  double noise_frac = 0.01;
  std::array<double, 2> cost_range{0.5, 1.5};
  double phase_shift_deg = 20.0;
  std::uint64_t seed = 0;

  bool pq_independent() const { return case_id == ScenarioCase::C3; }
  double gen_dropout_frac() const { return case_id == ScenarioCase::C4 ? 1.0 / 3.0 : 0.0; }

  void validate() const {
    if (n_samples < 1) throw ValidationError("n_samples", "must be >= 1");
    if (!(scale_range[0] <= scale_range[1])) throw ValidationError("scale_range", "min > max");
    if (!(noise_frac >= 0.0)) throw ValidationError("noise_frac", "must be >= 0");
    if (!(cost_range[0] <= cost_range[1]) || cost_range[0] < 0.0)
      throw ValidationError("cost_range", "invalid range");
    if (!std::isfinite(phase_shift_deg)) throw ValidationError("phase_shift_deg", "not finite");
  }
};

inline json to_json(const ScenarioConfig& c) {
  return {{"case", case_name(c.case_id)},
          {"n_samples", c.n_samples},
          {"scale_range", c.scale_range},
          {"noise_frac", c.noise_frac},
          {"pq_independent", c.pq_independent()},
          {"gen_dropout_frac", c.gen_dropout_frac()},
          {"cost_range", c.cost_range},
          {"phase_shift_deg", c.phase_shift_deg},
          {"seed", c.seed}};
}

inline ScenarioConfig scenario_from_json(const json& j) {
  ScenarioConfig c;
  if (j.contains("case")) c.case_id = parse_case(j.at("case").get<std::string>());
  if (j.contains("n_samples")) c.n_samples = j.at("n_samples").get<int>();
  if (j.contains("scale_range")) c.scale_range = j.at("scale_range").get<std::array<double, 2>>();
  if (j.contains("noise_frac")) c.noise_frac = j.at("noise_frac").get<double>();
  if (j.contains("cost_range")) c.cost_range = j.at("cost_range").get<std::array<double, 2>>();
  if (j.contains("phase_shift_deg")) c.phase_shift_deg = j.at("phase_shift_deg").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

struct Sample {
  VoltageState state;
  PowerState power;
  double lambda = 1.0;
  std::uint64_t seed = 0;
};

struct SampleSet {
  std::string grid_ref;
  std::vector<Sample> samples;
  ScenarioConfig config;
  int rejected = 0;
  /// max |inverse_pf(Y, V) - S| over all stored samples.
  double certificate = 0.0;

  std::size_t size() const { return samples.size(); }
  Eigen::Index n_bus() const { return samples.empty() ? 0 : samples.front().state.size(); }
};

namespace detail {

inline std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t attempt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(attempt)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Standard normal truncated at +-4 by redrawing.
inline double truncated_normal(std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  double z;
  do z = nd(rng);
  while (std::abs(z) > 4.0);
  return z;
}

struct Attempt {
  bool ok = false;
  Sample sample;
};

inline Attempt draw_sample(const GridCase& grid, const AdmittanceMatrix& y, const ScenarioConfig& cfg,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Attempt out;
  const double lambda =
      cfg.scale_range[0] == cfg.scale_range[1]
          ? cfg.scale_range[0]
          : std::uniform_real_distribution<double>(cfg.scale_range[0], cfg.scale_range[1])(rng);
  PowerState load = base_load(grid, lambda);

  if (cfg.case_id == ScenarioCase::C2 || cfg.case_id == ScenarioCase::C3) {
    for (Eigen::Index i = 0; i < load.size(); ++i) {
      const double zp = truncated_normal(rng);
      const double zq = cfg.pq_independent() ? truncated_normal(rng) : zp;
      load.p[i] *= 1.0 + cfg.noise_frac * zp;
      load.q[i] *= 1.0 + cfg.noise_frac * zq;
    }
  }

  const std::size_t ng = grid.generators.size();
  std::vector<double> costs(ng);
  for (std::size_t k = 0; k < ng; ++k) costs[k] = grid.generators[k].cost;
  std::vector<bool> available(ng, true);

  if (cfg.case_id == ScenarioCase::C4) {
    const int slack = grid.slack_bus();
    std::vector<std::size_t> candidates;
    for (std::size_t k = 0; k < ng; ++k)
      if (grid.generators[k].bus != slack) candidates.push_back(k);
    const std::size_t drop = std::min(candidates.size(), ng / 3);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    for (std::size_t k = 0; k < drop; ++k) available[candidates[k]] = false;
  }
  if (cfg.case_id == ScenarioCase::C5) {
    std::uniform_real_distribution<double> mult(cfg.cost_range[0], cfg.cost_range[1]);
    for (auto& c : costs) c *= mult(rng);
  }

  try {
    const Injections inj = build_injections(grid, load, dispatch(grid, load, costs, available), available);
    PFSolution sol = solve_pf(y.entries(), inj);
    // Stored powers: specified values where the solve constrained them, solved values elsewhere
    // (slack p and q, q at PV buses including those switched onto a limit).
    const PowerState computed = inverse_pf(y, sol.state);
    PowerState stored = computed;
    for (Eigen::Index i = 0; i < load.size(); ++i) {
      if (sol.kind[i] != BusKind::Slack) stored.p[i] = inj.p[i];
      if (inj.kind[i] == BusKind::PQ) stored.q[i] = inj.q[i];
    }
    if (cfg.case_id == ScenarioCase::C6) {
      const double shift = cfg.phase_shift_deg * std::numbers::pi / 180.0;
      sol.state.theta.array() += shift;
    }
    out.sample = {std::move(sol.state), std::move(stored), lambda, seed};
    out.ok = true;
  } catch (const NonConvergence&) {
  } catch (const SingularJacobian&) {
  } catch (const InfeasibleDispatch&) {
  }
  return out;
}

}  // namespace detail

struct GenerateOptions {
  int jobs = 1;
  /// Rejection accounting window, in samples.
  int window = 20;
  int max_attempts_per_sample = 50;
  std::ostream* log = nullptr;
};

/// Generates one labeled dataset. Every sample's randomness derives from
/// (seed, sample index, attempt), so any job count gives bitwise-identical output.
inline SampleSet generate(const GridCase& grid, const ScenarioConfig& cfg, const GenerateOptions& opts = {}) {
  cfg.validate();
  validate(grid);
  const AdmittanceMatrix y = assemble_admittance(grid);

  SampleSet set;
  set.grid_ref = grid_hash(grid);
  set.config = cfg;
  set.samples.resize(static_cast<std::size_t>(cfg.n_samples));
  std::vector<int> attempts(static_cast<std::size_t>(cfg.n_samples), 0);

  auto work = [&](int index) {
    for (int a = 0; a < opts.max_attempts_per_sample; ++a) {
      attempts[index] = a + 1;
      auto r = detail::draw_sample(grid, y, cfg, detail::sample_seed(cfg.seed, index, a));
      if (r.ok) {
        set.samples[index] = std::move(r.sample);
        return true;
      }
    }
    return false;
  };

  const int jobs = std::max(1, opts.jobs);
  for (int start = 0; start < cfg.n_samples; start += opts.window) {
    const int stop = std::min(cfg.n_samples, start + opts.window);
    std::vector<char> ok(static_cast<std::size_t>(stop - start), 0);
    if (jobs == 1) {
      for (int i = start; i < stop; ++i) ok[i - start] = work(i);
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < jobs; ++t)
        pool.emplace_back([&, t] {
          for (int i = start + t; i < stop; i += jobs) ok[i - start] = work(i);
        });
      for (auto& th : pool) th.join();
    }
    int tried = 0, rejected = 0;
    for (int i = start; i < stop; ++i) {
      tried += attempts[i];
      rejected += attempts[i] - (ok[i - start] ? 1 : 0);
    }
    set.rejected += rejected;
    if (2 * rejected > tried || std::find(ok.begin(), ok.end(), 0) != ok.end())
      throw GenerationStalled("rejection rate " + std::to_string(rejected) + "/" + std::to_string(tried) +
                              " in samples [" + std::to_string(start) + ", " + std::to_string(stop) + ")");
  }
  if (opts.log && set.rejected > 0)
    *opts.log << "datagen: rejected " << set.rejected << " draws on power-flow failure\n";

  double cert = 0.0;
  for (const auto& s : set.samples) {
    const PowerState back = inverse_pf(y, s.state);
    cert = std::max({cert, (back.p - s.power.p).cwiseAbs().maxCoeff(), (back.q - s.power.q).cwiseAbs().maxCoeff()});
  }
  set.certificate = cert;
  return set;
}

// ---------------------------------------------------------------------------
// Splits and observed views
// ---------------------------------------------------------------------------

struct Split {
  SampleSet train;
  SampleSet validation;
  std::vector<std::size_t> train_index;
};

/// Deterministic split under the set's seed. By default validation is the full set
/// (train is a subset of it); `disjoint` makes validation the complement.
inline Split split(const SampleSet& set, double train_fraction = 0.2, bool disjoint = false) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError("train_fraction", "must lie in (0, 1)");
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(set.size())));
  if (n_train < 1) throw ValidationError("train_fraction", "selects no training samples");

  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(set.config.seed ^ 0x5eedULL);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::sort(train_idx.begin(), train_idx.end());

  Split out;
  out.train_index = train_idx;
  out.train.grid_ref = out.validation.grid_ref = set.grid_ref;
  out.train.config = out.validation.config = set.config;
  for (auto i : train_idx) out.train.samples.push_back(set.samples[i]);
  if (!disjoint) {
    out.validation.samples = set.samples;
  } else {
    std::vector<bool> in_train(set.size(), false);
    for (auto i : train_idx) in_train[i] = true;
    for (std::size_t i = 0; i < set.size(); ++i)
      if (!in_train[i]) out.validation.samples.push_back(set.samples[i]);
  }
  return out;
}

/// First `count` samples of a set (in stored order).
inline SampleSet head(const SampleSet& set, std::size_t count) {
  SampleSet out = set;
  out.samples.resize(std::min(count, set.size()));
  return out;
}

/// Sample-major matrices restricted to the observed buses (N x |observed|).
struct ObservedData {
  Eigen::MatrixXd v, theta, p, q;

  Eigen::Index n_samples() const { return v.rows(); }
  Eigen::Index n_nodes() const { return v.cols(); }
};

inline ObservedData restrict_to(const SampleSet& set, const std::vector<int>& observed) {
  const auto n = static_cast<Eigen::Index>(set.size());
  const auto m = static_cast<Eigen::Index>(observed.size());
  ObservedData d{Eigen::MatrixXd(n, m), Eigen::MatrixXd(n, m), Eigen::MatrixXd(n, m), Eigen::MatrixXd(n, m)};
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto& smp = set.samples[static_cast<std::size_t>(s)];
    for (Eigen::Index k = 0; k < m; ++k) {
      const int b = observed[static_cast<std::size_t>(k)];
      if (b < 0 || b >= smp.state.size()) throw DimensionMismatch("observed bus outside the sample");
      d.v(s, k) = smp.state.v[b];
      d.theta(s, k) = smp.state.theta[b];
      d.p(s, k) = smp.power.p[b];
      d.q(s, k) = smp.power.q[b];
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// CSV + metadata sidecar
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string dataset_csv(const SampleSet& set) {
  const Eigen::Index n = set.n_bus();
  std::string out = "lambda";
  for (const char* prefix : {"v_", "theta_", "p_", "q_"})
    for (Eigen::Index i = 1; i <= n; ++i) out += std::string(",") + prefix + std::to_string(i);
  out += '\n';
  for (const auto& s : set.samples) {
    out += format_double(s.lambda);
    for (const Eigen::VectorXd* vec : {&s.state.v, &s.state.theta, &s.power.p, &s.power.q})
      for (Eigen::Index i = 0; i < n; ++i) {
        out += ',';
        out += format_double((*vec)[i]);
      }
    out += '\n';
  }
  return out;
}

inline json dataset_metadata(const SampleSet& set) {
  json seeds = json::array();
  for (const auto& s : set.samples) seeds.push_back(s.seed);
  return {{"config", to_json(set.config)},
          {"grid_hash", set.grid_ref},
          {"n_bus", set.n_bus()},
          {"n_samples", set.size()},
          {"rejected", set.rejected},
          {"certificate", set.certificate},
          {"generator_version", kDatagenVersion},
          {"sample_seeds", seeds}};
}

/// Parses a dataset CSV; metadata (optional) restores provenance fields.
inline SampleSet parse_dataset(std::string_view csv, const json* meta = nullptr) {
  SampleSet set;
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line)) throw ParseError("dataset is empty");
  const auto cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',') + 1);
  if (line.rfind("lambda,", 0) != 0 || (cols - 1) % 4 != 0 || cols < 5)
    throw ParseError("dataset header must be 'lambda,v_1..,theta_1..,p_1..,q_1..'", 1, 1);
  const auto n = static_cast<Eigen::Index>((cols - 1) / 4);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> vals;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t next = line.find(',', pos);
      if (next == std::string::npos) next = line.size();
      const std::string tok = line.substr(pos, next - pos);
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::logic_error&) {
        throw ParseError("bad number '" + tok + "'", lineno, pos + 1);
      }
      pos = next + 1;
    }
    if (vals.size() != cols) throw ParseError("wrong column count", lineno, 1);
    Sample s;
    s.lambda = vals[0];
    s.state.v = Eigen::Map<Eigen::VectorXd>(vals.data() + 1, n);
    s.state.theta = Eigen::Map<Eigen::VectorXd>(vals.data() + 1 + n, n);
    s.power.p = Eigen::Map<Eigen::VectorXd>(vals.data() + 1 + 2 * n, n);
    s.power.q = Eigen::Map<Eigen::VectorXd>(vals.data() + 1 + 3 * n, n);
    set.samples.push_back(std::move(s));
  }
  if (meta) {
    set.config = scenario_from_json(meta->at("config"));
    set.grid_ref = meta->value("grid_hash", "");
    set.rejected = meta->value("rejected", 0);
    set.certificate = meta->value("certificate", 0.0);
    if (meta->contains("sample_seeds")) {
      const auto& seeds = meta->at("sample_seeds");
      for (std::size_t i = 0; i < set.size() && i < seeds.size(); ++i) set.samples[i].seed = seeds[i].get<std::uint64_t>();
    }
  }
  return set;
}

}  // namespace powergnn
