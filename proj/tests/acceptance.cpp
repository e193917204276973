// Acceptance run: one PASS/FAIL line per criterion, artifacts under ./acceptance_out.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "powergnn/cli.hpp"
#include "powergnn/datagen.hpp"
#include "powergnn/estimators.hpp"
#include "powergnn/grid_io.hpp"
#include "powergnn/kron.hpp"
#include "powergnn/metrics.hpp"
#include "powergnn/powerflow.hpp"

using namespace powergnn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

const fs::path kOut = "acceptance_out";

GridCase ieee14() { return import_matpower(cli::read_text(fs::path(POWERGNN_DATA_DIR) / "case14.m")); }

// Dataset seed shared by every case, so case #6 is case #1 under the phase shift.
constexpr std::uint64_t kDataSeed = 2024;

SampleSet dataset(const GridCase& g, ScenarioCase c, int n) {
  ScenarioConfig sc;
  sc.case_id = c;
  sc.n_samples = n;
  sc.seed = kDataSeed;
  return generate(g, sc);
}

// Desk-scale vanilla settings: appendix architecture (3 x 2 N_bus, ReLU) with a decayed
// learning rate instead of 8e5 epochs at 2e-5.
TrainConfig vanilla_desk() {
  TrainConfig c = TrainConfig::vanilla(14);
  c.lr = 1e-2;
  c.lr_final = 1e-6;
  c.epochs = 40000;
  return c;
}

// Desk-scale partial-observability settings shared by criteria 7 and 8.
TrainConfig partial_desk() {
  TrainConfig c = TrainConfig::pgnn_partial();
  c.lr = 3e-3;
  c.lr_final = 1e-5;
  c.epochs = 20000;
  c.hidden = 32;
  return c;
}
constexpr int kPartialTrain = 100;  // training samples for criteria 7 and 8
constexpr double kPartialReg = 1e-4;

// ---------------------------------------------------------------------------

Verdict pf_round_trip() {
  const auto t0 = Clock::now();
  const GridCase g = ieee14();
  const AdmittanceMatrix y = assemble_admittance(g);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> lam(0.8, 1.2), noise(-0.01, 0.01), cost(0.5, 1.5);
  double worst = 0.0;
  int max_iter = 0;
  for (int trial = 0; trial < 100; ++trial) {
    PowerState load = base_load(g, lam(rng));
    for (Eigen::Index i = 0; i < load.p.size(); ++i) {
      load.p[i] *= 1.0 + noise(rng);
      load.q[i] *= 1.0 + noise(rng);
    }
    std::vector<double> costs;
    for (std::size_t k = 0; k < g.generators.size(); ++k) costs.push_back(cost(rng));
    const std::vector<bool> avail(g.generators.size(), true);
    const Injections inj = build_injections(g, load, dispatch(g, load, costs, avail), avail);
    const PFSolution sol = solve_pf(y.entries(), inj);
    const PowerState back = inverse_pf(y, sol.state);
    for (Eigen::Index i = 0; i < back.p.size(); ++i) {
      if (inj.kind[i] == BusKind::Slack) continue;
      worst = std::max(worst, std::abs(back.p[i] - inj.p[i]));
      if (sol.kind[i] != BusKind::PQ) continue;
      double q_spec = inj.q[i];
      if (inj.kind[i] == BusKind::PV)  // switched at a reactive limit
        q_spec = std::abs(back.q[i] - inj.q_max[i]) < std::abs(back.q[i] - inj.q_min[i]) ? inj.q_max[i] : inj.q_min[i];
      worst = std::max(worst, std::abs(back.q[i] - q_spec));
    }
    max_iter = std::max(max_iter, sol.iterations);
  }
  const double t = seconds_since(t0);
  return {worst < 1e-7 && max_iter <= 15 && t < 5.0,
          "100 solves: max |S err| " + sci(worst) + " p.u., max iterations " + std::to_string(max_iter) + ", " +
              sci(t) + " s"};
}

// Connected random grid with random r, x, charging and bus shunts.
GridCase random_grid(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> ur(0.005, 0.1), ux(0.05, 0.5), ush(0.0, 0.05), us(-0.05, 0.2);
  GridCase g;
  for (int i = 0; i < n; ++i) {
    Bus b{i, i == 0 ? BusKind::Slack : BusKind::PQ};
    b.shunt_g = 0.5 * ush(rng);
    b.shunt_b = us(rng);
    g.buses.push_back(b);
  }
  for (int i = 1; i < n; ++i)
    g.lines.push_back({std::uniform_int_distribution<int>(0, i - 1)(rng), i, ur(rng), ux(rng), ush(rng)});
  const int extra = std::uniform_int_distribution<int>(0, n / 2)(rng);
  for (int k = 0; k < extra; ++k) {
    const int a = std::uniform_int_distribution<int>(0, n - 1)(rng);
    const int b = std::uniform_int_distribution<int>(0, n - 1)(rng);
    bool dup = a == b;
    for (const auto& l : g.lines) dup = dup || (std::minmax(l.from, l.to) == std::minmax(a, b));
    if (!dup) g.lines.push_back({a, b, ur(rng), ux(rng), ush(rng)});
  }
  return g;
}

Verdict kron_identities() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  double ohm = 0.0, split = 0.0, seq = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = std::uniform_int_distribution<int>(4, 12)(rng);
    const Eigen::MatrixXcd y = assemble_admittance(random_grid(rng, n)).entries();
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    const int k = std::uniform_int_distribution<int>(1, n - 2)(rng);
    const ObservabilityMask mask({ids.begin(), ids.begin() + k}, n);
    Eigen::VectorXcd i_full(n);
    for (auto& c : i_full) c = cplx(nd(rng), nd(rng));
    const Eigen::VectorXcd v = y.partialPivLu().solve(i_full);
    const KronBlocks blocks(y, mask);
    const auto& o = mask.observed();
    const auto& u = mask.unobserved();

    // reduced Ohm's law with the effective current
    const Eigen::VectorXcd i_r = i_full(o) - blocks.transfer(i_full(u));
    ohm = std::max(ohm, (i_r - blocks.reduced() * v(o)).cwiseAbs().maxCoeff());

    // observed powers = reduced-network term + unobserved-current term
    const auto eff = effective_injections(blocks, v, i_full);
    const Eigen::VectorXcd s_o = v(o).cwiseProduct(i_full(o).conjugate());
    split = std::max(split, (eff.total() - s_o).cwiseAbs().maxCoeff());

    // eliminate the unobserved nodes one at a time
    AdmittanceMatrix cur(y);
    std::vector<int> alive(n);
    std::iota(alive.begin(), alive.end(), 0);
    for (int drop : u) {
      std::vector<int> keep;
      for (int i = 0; i < static_cast<int>(alive.size()); ++i)
        if (alive[i] != drop) keep.push_back(i);
      cur = kron_reduce(cur, ObservabilityMask(keep, static_cast<Eigen::Index>(alive.size())));
      alive.erase(std::find(alive.begin(), alive.end(), drop));
    }
    seq = std::max(seq, (cur.entries() - blocks.reduced()).cwiseAbs().maxCoeff());
  }
  const double t = seconds_since(t0);
  return {ohm < 1e-10 && split < 1e-10 && seq < 1e-10 && t < 10.0,
          "200 grids: Ohm " + sci(ohm) + ", power split " + sci(split) + ", sequential vs joint " + sci(seq) + ", " +
              sci(t) + " s"};
}

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  const double h = 1e-5;
  double worst = 0.0;
  for (int point = 0; point < 10; ++point) {
    std::mt19937_64 rng(300 + point);
    const GridCase grid = random_grid(rng, 6);
    const EffectiveGraph g = full_graph(grid);
    const Eigen::MatrixXcd ytrue = assemble_admittance(grid).entries();
    std::uniform_real_distribution<double> dv(0.95, 1.05), dt(-0.2, 0.2);
    const int ns = 4;
    ObservedData d{Eigen::MatrixXd(ns, 6), Eigen::MatrixXd(ns, 6), Eigen::MatrixXd(ns, 6), Eigen::MatrixXd(ns, 6)};
    for (int s = 0; s < ns; ++s) {
      VoltageState st{Eigen::VectorXd(6), Eigen::VectorXd(6)};
      for (int i = 0; i < 6; ++i) {
        st.v[i] = dv(rng);
        st.theta[i] = dt(rng);
      }
      const PowerState pw = inverse_pf(ytrue, st);
      d.v.row(s) = st.v.transpose();
      d.theta.row(s) = st.theta.transpose();
      d.p.row(s) = pw.p.transpose();
      d.q.row(s) = pw.q.transpose();
    }
    std::uniform_real_distribution<double> ur(0.05, 0.5), ux(0.1, 1.0), us(-0.2, 0.2);
    PowerGnn m{g, PhysParams::uniform(g, 0, 0, 0, 0), std::nullopt};
    for (Eigen::Index k = 0; k < m.phys.r.size(); ++k) {
      m.phys.r[k] = ur(rng);
      m.phys.x[k] = ux(rng);
    }
    for (Eigen::Index i = 0; i < 6; ++i) {
      m.phys.gsh[i] = us(rng);
      m.phys.bsh[i] = us(rng);
    }
    m.net = CorrectionNet::init(3, 4, Activation::SoftSign, rng);
    const PFDesign design = pf_design(g, d);
    const NetInputs in = net_inputs(g, d);
    const double alpha = 0.01;
    const LossValue lv = pgnn_loss(m, design, in, alpha);

    Eigen::VectorXd theta(m.phys.size() + m.net->flat().size());
    theta << m.phys.pack(), m.net->flat();
    const Eigen::VectorXd grad = (Eigen::VectorXd(theta.size()) << lv.grad_phys, lv.grad_net).finished();
    auto loss_at = [&](const Eigen::VectorXd& th) {
      PowerGnn c = m;
      c.phys.unpack(th.head(m.phys.size()));
      unpack(th.tail(th.size() - m.phys.size()), c.net->params());
      return pgnn_loss(c, design, in, alpha, false).loss;
    };
    Eigen::VectorXd fd(theta.size());
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      Eigen::VectorXd a = theta, b = theta;
      a[k] += h;
      b[k] -= h;
      fd[k] = (loss_at(a) - loss_at(b)) / (2 * h);
    }
    // relative error per parameter group: r, x, gsh, bsh, phi
    const Eigen::Index e = m.phys.r.size();
    const std::vector<std::pair<Eigen::Index, Eigen::Index>> groups{
        {0, e}, {e, e}, {2 * e, 6}, {2 * e + 6, 6}, {m.phys.size(), theta.size() - m.phys.size()}};
    for (auto [start, len] : groups) {
      const double scale = std::max(grad.segment(start, len).norm(), fd.segment(start, len).norm());
      if (scale > 0) worst = std::max(worst, (grad.segment(start, len) - fd.segment(start, len)).norm() / scale);
    }
  }
  const double t = seconds_since(t0);
  return {worst < 1e-5 && t < 30.0,
          "10 points, groups r/x/gsh/bsh/phi: max relative error " + sci(worst) + ", " + sci(t) + " s"};
}

// Shared by criteria 4 and 5.
struct TableRun {
  Table1 table = Table1::empty({"pgnn", "vanilla"}, {"c1", "c2", "c3", "c4", "c5", "c6"});
  std::optional<PowerGnn> pgnn_c1;
  std::optional<VanillaNet> vanilla_c1;
  double vanilla_c1_train = 0.0;
  ObservedData c1_valid;
  double seconds = 0.0;
};

TableRun& table_run() {
  static std::optional<TableRun> cache;
  if (cache) return *cache;
  cache.emplace();
  TableRun& tr = *cache;
  const auto t0 = Clock::now();
  const GridCase g = ieee14();
  const EffectiveGraph full = full_graph(g);
  for (int c = 1; c <= 5; ++c) {
    const auto cid = static_cast<ScenarioCase>(c);
    const std::string name = case_name(cid);
    const Split parts = split(dataset(g, cid, 2000), 0.2);
    const ObservedData train = restrict_to(parts.train, full.observed);
    const ObservedData valid = restrict_to(parts.validation, full.observed);

    const PgnnResult pg = train_pgnn(full, train, TrainConfig::pgnn_full());
    tr.table.set("pgnn", name, mismatch(pg.model, valid), mismatch(pg.model, train));
    const VanillaResult va = train_vanilla(train, vanilla_desk());
    tr.table.set("vanilla", name, mismatch(va.net, valid), va.report.final_loss);
    std::cerr << "  " << name << ": pgnn " << sci(tr.table.validation[0][c - 1]) << ", vanilla train "
              << sci(va.report.final_loss) << " validation " << sci(tr.table.validation[1][c - 1]) << " ("
              << sci(seconds_since(t0)) << " s)\n";
    if (c == 1) {
      tr.pgnn_c1 = pg.model;
      tr.vanilla_c1 = va.net;
      tr.vanilla_c1_train = va.report.final_loss;
      tr.c1_valid = valid;
    }
  }
  const ObservedData c6 = restrict_to(dataset(g, ScenarioCase::C6, 2000), full.observed);
  tr.table.set("pgnn", "c6", mismatch(*tr.pgnn_c1, c6), tr.table.train[0][0]);
  tr.table.set("vanilla", "c6", mismatch(*tr.vanilla_c1, c6), tr.table.train[1][0]);
  tr.seconds = seconds_since(t0);
  cli::write_text(kOut / "table1.csv", table1_csv(tr.table));
  cli::write_text(kOut / "table1_train.csv", table1_train_csv(tr.table));
  return tr;
}

Verdict full_observability() {
  TableRun& tr = table_run();
  const auto& pg = tr.table.validation[0];
  const auto& va = tr.table.validation[1];
  double worst = 0.0;
  for (int c = 0; c < 5; ++c) worst = std::max(worst, pg[c]);
  const double ratio = va[3] / va[0];
  std::string cells;
  for (int c = 0; c < 5; ++c) cells += (c ? "/" : "") + sci(pg[c]);
  return {worst < 1e-4 && tr.vanilla_c1_train <= 1e-4 && ratio >= 10.0 && tr.seconds < 1800.0,
          "pgnn validation c1-c5 " + cells + "; vanilla c1 train " + sci(tr.vanilla_c1_train) + ", c4/c1 validation " +
              sci(ratio) + "x; " + sci(tr.seconds) + " s"};
}

Verdict phase_shift() {
  TableRun& tr = table_run();
  const double shift = 20.0 * std::numbers::pi / 180.0;
  ObservedData shifted = tr.c1_valid;
  shifted.theta.array() += shift;
  auto change = [&](const PowerGnn& m) {
    const Prediction a = predict_injections(m, tr.c1_valid), b = predict_injections(m, shifted);
    return std::max((a.p - b.p).cwiseAbs().maxCoeff(), (a.q - b.q).cwiseAbs().maxCoeff());
  };
  double worst = change(*tr.pgnn_c1);

  // the correction net must be invariant too: a partial-observability model over the generator buses
  const GridCase g = ieee14();
  const ReducedModel rm = reduce_grid(g, ObservabilityMask(generator_buses(g), 14));
  const EffectiveGraph eg = effective_graph(rm);
  TrainConfig pc = partial_desk();
  pc.epochs = 200;
  const ObservedData obs_train = restrict_to(dataset(g, ScenarioCase::C1, 100), eg.observed);
  const PgnnResult partial = train_pgnn(eg, obs_train, pc);
  ObservedData po = obs_train, ps = obs_train;
  ps.theta.array() += shift;
  const Prediction a = predict_injections(partial.model, po), b = predict_injections(partial.model, ps);
  worst = std::max({worst, (a.p - b.p).cwiseAbs().maxCoeff(), (a.q - b.q).cwiseAbs().maxCoeff()});

  const double va_c1 = tr.table.validation[1][0], va_c6 = tr.table.validation[1][5];
  const double ratio = va_c6 / va_c1;
  return {worst < 1e-8 && ratio >= 100.0, "pgnn prediction change under 20 deg " + sci(worst) +
                                              " (with and without correction net); vanilla c6 " + sci(va_c6) +
                                              " vs c1 " + sci(va_c1) + " = " + sci(ratio) + "x"};
}

Verdict reconstruction_curve() {
  const auto t0 = Clock::now();
  const GridCase g = ieee14();
  ScenarioConfig sc;
  sc.case_id = ScenarioCase::C4;
  sc.seed = kDataSeed;
  ReconCurveOptions opts;
  opts.realizations = 10;
  const auto curve = recon_error_curve(g, sc, {10, 40, 100}, TrainConfig::pgnn_full(), opts);
  cli::write_text(kOut / "fig2.csv", fig2_csv(curve));
  cli::write_text(kOut / "fig2.gp", fig2_gp());
  const auto& lo = curve.front();
  const auto& hi = curve.back();
  const bool complete = lo.failures == 0 && hi.failures == 0;
  const bool pass = complete && hi.mean < 0.05 && hi.mean <= lo.mean && (hi.max - hi.min) <= (lo.max - lo.min);
  return {pass, "case c4, mean N=10 " + sci(lo.mean) + " N=40 " + sci(curve[1].mean) + " N=100 " + sci(hi.mean) +
                    "; spread N=10 " + sci(lo.max - lo.min) + " N=100 " + sci(hi.max - hi.min) + "; " +
                    std::to_string(lo.failures + curve[1].failures + hi.failures) + " diverged; " +
                    sci(seconds_since(t0)) + " s"};
}

struct PartialSetup {
  GridCase grid;
  ReducedModel ref;
  EffectiveGraph graph;
  ObservedData train;
};

PartialSetup partial_setup() {
  PartialSetup s{ieee14(), {}, {}, {}};
  s.ref = reduce_grid(s.grid, ObservabilityMask(generator_buses(s.grid), 14));
  s.graph = effective_graph(s.ref);
  s.train = restrict_to(split(dataset(s.grid, ScenarioCase::C4, 5 * kPartialTrain), 0.2).train, s.graph.observed);
  return s;
}

Verdict partial_observability() {
  const auto t0 = Clock::now();
  const PartialSetup s = partial_setup();
  TrainConfig cfg = partial_desk();
  cfg.reg_coeff = kPartialReg;
  const PgnnResult res = train_pgnn(s.graph, s.train, cfg);
  const LineComparison c = line_param_compare(s.graph, res.model.phys, s.ref);
  cli::write_text(kOut / "fig3.csv", fig3_csv(c));
  cli::write_text(kOut / "fig3.gp", fig3_gp());
  const double frac = c.physical_fraction();
  const double corr = susceptance_correlation(c);
  const double median = c.median_abs_y();
  bool flagged_small = true;
  for (const auto& v : c.violations()) flagged_small = flagged_small && v.y_ref_abs < median;
  return {frac >= 0.8 && corr > 0.9 && flagged_small && c.est_only.empty() && c.ref_only.empty(),
          "case c4, " + std::to_string(c.rows.size()) + " effective lines, physical " + sci(100 * frac) +
              "%, b correlation " + sci(corr) + ", " + std::to_string(c.violations().size()) +
              " flagged (all below median |Y| " + sci(median) + ": " + (flagged_small ? "yes" : "no") + "); " +
              sci(seconds_since(t0)) + " s"};
}

Verdict regularization_sweep() {
  const auto t0 = Clock::now();
  const PartialSetup s = partial_setup();
  const std::vector<double> alphas{0.0, 1e-6, 1e-4, 1e-2, 1.0};
  std::string detail;
  bool pass = true;
  std::string csv;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TrainConfig cfg = partial_desk();
    cfg.seed = seed;
    const RegSweep sw = reg_sweep(s.ref, s.train, cfg, alphas);
    const int best = sw.argmin();
    pass = pass && sw.interior_minimum();
    detail += (seed ? "; " : "") + std::string("seed ") + std::to_string(seed) + " argmin " +
              (best >= 0 ? sci(alphas[best]) : "none") + " (";
    for (std::size_t i = 0; i < sw.points.size(); ++i)
      detail += (i ? " " : "") + (sw.points[i].failed ? std::string("fail") : sci(sw.points[i].quality));
    detail += ")";
    std::string part = fig4_csv(sw);
    if (seed == 0) {
      csv = "seed," + part.substr(0, part.find('\n') + 1);
    }
    std::istringstream lines(part.substr(part.find('\n') + 1));
    for (std::string line; std::getline(lines, line);) csv += std::to_string(seed) + "," + line + "\n";
    std::cerr << "  sweep seed " << seed << " done (" << sci(seconds_since(t0)) << " s)\n";
  }
  cli::write_text(kOut / "fig4.csv", csv);
  cli::write_text(kOut / "fig4.gp", fig4_gp());
  return {pass, "case c4, quality = relative Frobenius error of Y^(r): " + detail + "; " + sci(seconds_since(t0)) +
                    " s"};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = cli::read_text(e.path());
  return files;
}

Verdict determinism() {
  const auto t0 = Clock::now();
  const std::string case_path = (fs::path(POWERGNN_DATA_DIR) / "case14.m").string();
  std::map<std::string, std::string> first;
  bool pass = true;
  std::size_t files = 0;
  std::ostringstream sink;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path root = kOut / ("determinism_" + std::to_string(rep));
    fs::remove_all(root);
    const std::string r = root.string(), grid = (root / "grid/case14.json").string();
    const std::string jobs = rep == 0 ? "1" : "2";
    const std::vector<std::vector<std::string>> cmds{
        {"import", case_path},
        {"--jobs", jobs, "--seed", "5", "generate", "--grid", grid, "--case", "c4", "--n", "100"},
        {"--seed", "5", "generate", "--grid", grid, "--case", "c6", "--n", "50"},
        {"kron", "--grid", grid, "--obs", "generators"},
        {"--seed", "3", "train", "--model", "pgnn", "--grid", grid, "--data", (root / "data/c4_n100_s5.csv").string(),
         "--epochs", "2000"},
        {"--seed", "3", "train", "--model", "pgnn", "--grid", grid, "--data", (root / "data/c4_n100_s5.csv").string(),
         "--obs", "generators", "--epochs", "300", "--hidden", "16"},
        {"--seed", "3", "train", "--model", "vanilla", "--grid", grid, "--data",
         (root / "data/c4_n100_s5.csv").string(), "--epochs", "500"},
        {"--jobs", jobs, "sweep-reg", "--grid", grid, "--data", (root / "data/c4_n100_s5.csv").string(), "--epochs",
         "100", "--hidden", "8"},
        {"--jobs", jobs, "recon-curve", "--grid", grid, "--case", "c4", "--counts", "10,20", "--realizations", "3",
         "--epochs", "500"},
    };
    for (auto args : cmds) {
      args.insert(args.begin(), {"powergnn", "--out", r});
      std::vector<const char*> argv;
      for (auto& a : args) argv.push_back(a.c_str());
      if (cli::run(static_cast<int>(argv.size()), argv.data(), sink, std::cerr) != 0) pass = false;
    }
    for (const auto& e : fs::directory_iterator(root / "runs"))
      if (fs::exists(e.path() / "checkpoint.json")) {
        const std::string ck = (e.path() / "checkpoint.json").string();
        for (const char* data : {"data/c4_n100_s5.csv", "data/c6_n50_s5.csv"}) {
          std::vector<std::string> args{"powergnn", "--out", r, "evaluate", "--model", ck, "--data",
                                        (root / data).string()};
          std::vector<const char*> argv;
          for (auto& a : args) argv.push_back(a.c_str());
          if (cli::run(static_cast<int>(argv.size()), argv.data(), sink, std::cerr) != 0) pass = false;
        }
      }
    const auto files_now = tree(root);
    if (rep == 0) {
      first = files_now;
      files = first.size();
    } else {
      pass = pass && files_now == first;
    }
  }
  return {pass && files > 20, std::to_string(files) +
                                  " artifacts from import/generate/kron/train/evaluate/sweep-reg/recon-curve, "
                                  "byte-identical across reruns (job counts 1 and 2); " +
                                  sci(seconds_since(t0)) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"power-flow round trip", pf_round_trip},
      {"Kron identities", kron_identities},
      {"loss gradients", gradient_suite},
      {"full-observability mismatch", full_observability},
      {"phase-shift test", phase_shift},
      {"parameter reconstruction vs sample count", reconstruction_curve},
      {"partial observability lines", partial_observability},
      {"regularization sweep", regularization_sweep},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  fs::create_directories(kOut);

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[k].first << "): " << v.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
