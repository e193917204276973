#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "powergnn/datagen.hpp"
#include "powergnn/estimators.hpp"
#include "powergnn/kron.hpp"

namespace powergnn {

namespace detail {

/// Runs fn(0..n-1) on up to `jobs` threads. Each index writes only its own slot, so the
/// result does not depend on scheduling.
inline void run_indexed(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Injection mismatch

/// (1/(N n)) sum over samples and observed nodes of (dp^2 + dq^2).
inline double mismatch(const Prediction& pred, const ObservedData& truth) {
  if (pred.p.rows() != truth.p.rows() || pred.p.cols() != truth.p.cols() || pred.q.rows() != truth.q.rows() ||
      pred.q.cols() != truth.q.cols())
    throw DimensionMismatch("mismatch: prediction and data shapes differ");
  if (truth.p.size() == 0) return 0.0;
  return ((pred.p - truth.p).squaredNorm() + (pred.q - truth.q).squaredNorm()) / static_cast<double>(truth.p.size());
}

inline double mismatch(const PowerGnn& m, const ObservedData& d) { return mismatch(predict_injections(m, d), d); }
inline double mismatch(const VanillaNet& m, const ObservedData& d) { return mismatch(predict_injections(m, d), d); }

struct MismatchResult {
  double value = 0.0;
  std::map<std::string, double> per_case;
};

// ---------------------------------------------------------------------------
// Admittance reconstruction

enum class ReconNormalization { None, PerNode };

/// ||y_est - y_ref||_F / ||y_ref||_F, divided by the node count under PerNode.
inline double recon_error(const Eigen::MatrixXcd& y_est, const Eigen::MatrixXcd& y_ref,
                          ReconNormalization norm = ReconNormalization::None) {
  if (y_est.rows() != y_ref.rows() || y_est.cols() != y_ref.cols())
    throw DimensionMismatch("recon_error: matrices differ in size");
  const double denom = y_ref.norm();
  if (!(denom > 0.0)) throw ValidationError("y_ref", "reference admittance is zero");
  double e = (y_est - y_ref).norm() / denom;
  if (norm == ReconNormalization::PerNode) e /= static_cast<double>(y_ref.rows());
  return e;
}

struct ReconError {
  int n_samples = 0;
  double min = 0.0, mean = 0.0, max = 0.0;
  std::vector<double> values;  // one per successful realization, in realization order
  int failures = 0;
  ReconNormalization normalization = ReconNormalization::None;
};

inline ReconError summarize(int n_samples, std::vector<std::optional<double>> runs, ReconNormalization norm) {
  ReconError r;
  r.n_samples = n_samples;
  r.normalization = norm;
  for (const auto& v : runs) {
    if (v)
      r.values.push_back(*v);
    else
      ++r.failures;
  }
  if (r.values.empty()) {
    r.min = r.mean = r.max = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.min = *std::min_element(r.values.begin(), r.values.end());
  r.max = *std::max_element(r.values.begin(), r.values.end());
  r.mean = std::accumulate(r.values.begin(), r.values.end(), 0.0) / static_cast<double>(r.values.size());
  return r;
}

struct ReconCurveOptions {
  int realizations = 10;
  int jobs = 1;
  ReconNormalization normalization = ReconNormalization::None;
};

/// Seed of realization r at sample count n, derived from the scenario seed.
inline std::uint64_t realization_seed(std::uint64_t base, int n, int r) {
  return detail::sample_seed(base ^ 0xf162ULL, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(r));
}

/// Full observability: for each N, `realizations` fresh datasets of N samples (distinct
/// seeds) are trained and compared against the grid's own admittance matrix.
inline std::vector<ReconError> recon_error_curve(const GridCase& grid, const ScenarioConfig& scenario,
                                                 const std::vector<int>& sample_counts, const TrainConfig& train,
                                                 const ReconCurveOptions& opts = {}) {
  if (opts.realizations < 1) throw ValidationError("realizations", "must be at least 1");
  const EffectiveGraph graph = full_graph(grid);
  const Eigen::MatrixXcd y_ref = assemble_admittance(grid).entries();
  const std::size_t nr = static_cast<std::size_t>(opts.realizations);
  std::vector<std::optional<double>> slots(sample_counts.size() * nr);
  detail::run_indexed(slots.size(), opts.jobs, [&](std::size_t k) {
    const int n = sample_counts[k / nr];
    const int r = static_cast<int>(k % nr);
    ScenarioConfig sc = scenario;
    sc.n_samples = n;
    sc.seed = realization_seed(scenario.seed, n, r);
    const SampleSet set = generate(grid, sc);
    try {
      const PgnnResult res = train_pgnn(graph, restrict_to(set, graph.observed), train);
      slots[k] = recon_error(res.model.admittance().entries(), y_ref, opts.normalization);
    } catch (const Divergence&) {
      slots[k] = std::nullopt;
    }
  });
  std::vector<ReconError> out;
  for (std::size_t i = 0; i < sample_counts.size(); ++i)
    out.push_back(summarize(sample_counts[i],
                            {slots.begin() + static_cast<std::ptrdiff_t>(i * nr),
                             slots.begin() + static_cast<std::ptrdiff_t>((i + 1) * nr)},
                            opts.normalization));
  return out;
}

// ---------------------------------------------------------------------------
// Per-line comparison against the Kron reference

struct LineRow {
  int from = 0, to = 0;  // grid bus ids, from < to
  double g_est = 0.0, g_ref = 0.0, b_est = 0.0, b_ref = 0.0;
  double y_ref_abs = 0.0;
  bool violation = false;  // g_est < 0 or b_est > 0
};

struct LineComparison {
  std::vector<LineRow> rows;
  std::vector<std::pair<int, int>> est_only;  // estimated lines absent from the reference
  std::vector<std::pair<int, int>> ref_only;  // reference lines the estimate lacks

  std::vector<LineRow> violations() const {
    std::vector<LineRow> v;
    for (const auto& r : rows)
      if (r.violation) v.push_back(r);
    return v;
  }

  double physical_fraction() const {
    if (rows.empty()) return 1.0;
    return 1.0 - static_cast<double>(violations().size()) / static_cast<double>(rows.size());
  }

  double median_abs_y() const {
    std::vector<double> a;
    for (const auto& r : rows) a.push_back(r.y_ref_abs);
    if (a.empty()) return 0.0;
    std::sort(a.begin(), a.end());
    const std::size_t m = a.size() / 2;
    return a.size() % 2 ? a[m] : 0.5 * (a[m - 1] + a[m]);
  }
};

/// Pearson correlation of two equally long samples; NaN when either is constant.
inline double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw DimensionMismatch("correlation: need two equal samples of size >= 2");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

/// Lines are matched by unordered bus pair. The reference line admittance is -Y^(r)_ij.
inline LineComparison line_param_compare(const EffectiveGraph& graph, const PhysParams& est,
                                         const ReducedModel& ref) {
  auto key = [](int a, int b) { return std::pair<int, int>(std::min(a, b), std::max(a, b)); };
  std::map<std::pair<int, int>, std::pair<int, int>> ref_local;  // bus pair -> local (i, j) in ref
  for (auto [i, j] : ref.edges) ref_local[key(ref.observed[i], ref.observed[j])] = {i, j};

  LineComparison out;
  std::map<std::pair<int, int>, bool> matched;
  for (int k = 0; k < graph.n_edges(); ++k) {
    auto [a, b] = graph.edges[k];
    const auto bus = key(graph.observed[a], graph.observed[b]);
    auto it = ref_local.find(bus);
    if (it == ref_local.end()) {
      out.est_only.push_back(bus);
      continue;
    }
    matched[bus] = true;
    const cplx y = line_admittance(est.r[k], est.x[k]);
    const cplx yr = -ref.y_reduced(it->second.first, it->second.second);
    LineRow row{bus.first, bus.second, y.real(), yr.real(), y.imag(), yr.imag(), std::abs(yr), false};
    row.violation = row.g_est < 0.0 || row.b_est > 0.0;
    out.rows.push_back(row);
  }
  for (const auto& [bus, loc] : ref_local)
    if (!matched.count(bus)) out.ref_only.push_back(bus);
  std::sort(out.rows.begin(), out.rows.end(),
            [](const LineRow& x, const LineRow& y) { return std::tie(x.from, x.to) < std::tie(y.from, y.to); });
  return out;
}

inline double susceptance_correlation(const LineComparison& c) {
  std::vector<double> e, r;
  for (const auto& row : c.rows) {
    e.push_back(row.b_est);
    r.push_back(row.b_ref);
  }
  return correlation(e, r);
}

// ---------------------------------------------------------------------------
// Regularization sweep

struct SweepPoint {
  double reg_coeff = 0.0;
  double quality = std::numeric_limits<double>::quiet_NaN();  // relative Frobenius error of Y^(r)
  double data_term = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
};

struct RegSweep {
  std::vector<SweepPoint> points;

  /// Index of the smallest quality among successful points, or -1.
  int argmin() const {
    int best = -1;
    for (int i = 0; i < static_cast<int>(points.size()); ++i)
      if (!points[i].failed && (best < 0 || points[i].quality < points[best].quality)) best = i;
    return best;
  }

  bool interior_minimum() const {
    const int a = argmin();
    return a > 0 && a + 1 < static_cast<int>(points.size());
  }
};

/// Trains once per coefficient against the reduced graph and scores the learned Y^(r)
/// against the Kron reference.
inline RegSweep reg_sweep(const ReducedModel& ref, const ObservedData& train, const TrainConfig& base,
                          const std::vector<double>& coeffs, int jobs = 1) {
  const EffectiveGraph graph = effective_graph(ref);
  RegSweep sweep;
  sweep.points.resize(coeffs.size());
  detail::run_indexed(coeffs.size(), jobs, [&](std::size_t i) {
    TrainConfig cfg = base;
    cfg.reg_coeff = coeffs[i];
    SweepPoint& pt = sweep.points[i];
    pt.reg_coeff = coeffs[i];
    try {
      const PgnnResult res = train_pgnn(graph, train, cfg);
      pt.quality = recon_error(res.model.admittance().entries(), ref.y_reduced.entries());
      pt.data_term = res.report.final_data;
    } catch (const Divergence&) {
      pt.failed = true;
    }
  });
  return sweep;
}

// ---------------------------------------------------------------------------
// Table and figure files

struct Table1 {
  std::vector<std::string> methods;  // row labels
  std::vector<std::string> cases;    // column labels
  /// value[method][case]; NaN where a cell was not run.
  std::vector<std::vector<double>> validation;
  std::vector<std::vector<double>> train;

  void set(const std::string& method, const std::string& case_name, double val, double tr) {
    auto mi = std::find(methods.begin(), methods.end(), method);
    auto ci = std::find(cases.begin(), cases.end(), case_name);
    if (mi == methods.end() || ci == cases.end()) throw ValidationError("table1", "unknown row or column");
    validation[mi - methods.begin()][ci - cases.begin()] = val;
    train[mi - methods.begin()][ci - cases.begin()] = tr;
  }

  static Table1 empty(std::vector<std::string> methods, std::vector<std::string> cases) {
    Table1 t{std::move(methods), std::move(cases), {}, {}};
    const double nan = std::numeric_limits<double>::quiet_NaN();
    t.validation.assign(t.methods.size(), std::vector<double>(t.cases.size(), nan));
    t.train = t.validation;
    return t;
  }
};

namespace detail {

inline std::string cell(double v) { return std::isnan(v) ? "" : format_double(v); }

inline std::string table_csv(const Table1& t, const std::vector<std::vector<double>>& values) {
  std::string out = "method";
  for (const auto& c : t.cases) out += "," + c;
  out += "\n";
  for (std::size_t m = 0; m < t.methods.size(); ++m) {
    out += t.methods[m];
    for (double v : values[m]) out += "," + cell(v);
    out += "\n";
  }
  return out;
}

}  // namespace detail

inline std::string table1_csv(const Table1& t) { return detail::table_csv(t, t.validation); }
inline std::string table1_train_csv(const Table1& t) { return detail::table_csv(t, t.train); }

inline std::string fig2_csv(const std::vector<ReconError>& curve) {
  std::string out = "n_samples,min,mean,max,realizations,failures,normalization\n";
  for (const auto& r : curve)
    out += std::to_string(r.n_samples) + "," + detail::cell(r.min) + "," + detail::cell(r.mean) + "," +
           detail::cell(r.max) + "," + std::to_string(r.values.size()) + "," + std::to_string(r.failures) + "," +
           (r.normalization == ReconNormalization::PerNode ? "per_node" : "none") + "\n";
  return out;
}

inline std::string fig3_csv(const LineComparison& c) {
  std::string out = "from,to,g_est,g_ref,b_est,b_ref,abs_y_ref,violation\n";
  for (const auto& r : c.rows)
    out += std::to_string(r.from) + "," + std::to_string(r.to) + "," + format_double(r.g_est) + "," +
           format_double(r.g_ref) + "," + format_double(r.b_est) + "," + format_double(r.b_ref) + "," +
           format_double(r.y_ref_abs) + "," + (r.violation ? "1" : "0") + "\n";
  return out;
}

inline std::string fig4_csv(const RegSweep& s) {
  std::string out = "reg_coeff,quality,data_term,failed\n";
  for (const auto& p : s.points)
    out += format_double(p.reg_coeff) + "," + detail::cell(p.quality) + "," + detail::cell(p.data_term) + "," +
           (p.failed ? "1" : "0") + "\n";
  return out;
}

inline std::string fig2_gp() {
  return "set datafile separator ','\n"
         "set terminal pngcairo size 640,480\n"
         "set output 'fig2.png'\n"
         "set logscale xy\n"
         "set xlabel 'number of samples'\n"
         "set ylabel '||Y_est - Y_ref||_F / ||Y_ref||_F'\n"
         "plot 'fig2.csv' skip 1 using 1:2 with points pt 6 title 'min', \\\n"
         "     '' skip 1 using 1:3 with points pt 2 title 'mean', \\\n"
         "     '' skip 1 using 1:4 with points pt 4 title 'max'\n";
}

inline std::string fig3_gp() {
  return "set datafile separator ','\n"
         "set terminal pngcairo size 960,480\n"
         "set output 'fig3.png'\n"
         "set multiplot layout 1,2\n"
         "set xlabel 'reference'\n"
         "set ylabel 'estimate'\n"
         "set title 'conductance'\n"
         "plot 'fig3.csv' skip 1 using 4:3 with points pt 7 notitle, x notitle\n"
         "set title 'susceptance'\n"
         "plot 'fig3.csv' skip 1 using 6:5 with points pt 7 notitle, x notitle\n"
         "unset multiplot\n";
}

inline std::string fig4_gp() {
  return "set datafile separator ','\n"
         "set terminal pngcairo size 640,480\n"
         "set output 'fig4.png'\n"
         "set logscale x\n"
         "set xlabel 'regularization coefficient'\n"
         "set ylabel 'relative Frobenius error of Y^(r)'\n"
         "plot 'fig4.csv' skip 1 using ($1 > 0 ? $1 : 1e-9):2 with linespoints pt 7 notitle\n";
}

}  // namespace powergnn
