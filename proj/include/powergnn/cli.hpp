#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "powergnn/datagen.hpp"
#include "powergnn/estimators.hpp"
#include "powergnn/grid_io.hpp"
#include "powergnn/kron.hpp"
#include "powergnn/metrics.hpp"

namespace powergnn::cli {

namespace fs = std::filesystem;

// Exit codes. Stable; documented in the README.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitParse = 3;
inline constexpr int kExitStalled = 4;
inline constexpr int kExitDivergence = 5;
inline constexpr int kExitSingular = 6;

class IoError : public Error {
 public:
  using Error::Error;
};

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out || !(out << text)) throw IoError("cannot write " + p.string());
}

inline std::string dump(const json& j) { return j.dump(1) + "\n"; }

inline json read_json(const fs::path& p) {
  json j = json::parse(read_text(p), nullptr, false);
  if (j.is_discarded()) throw ParseError(p.string() + ": not valid JSON");
  return j;
}

/// Sidecar of a dataset: x.csv -> x.meta.json.
inline fs::path meta_path(const fs::path& csv) {
  fs::path m = csv;
  m.replace_extension(".meta.json");
  return m;
}

inline GridCase load_grid_file(const fs::path& p) { return load_grid(read_text(p)); }

inline SampleSet load_dataset(const fs::path& csv) {
  const std::string text = read_text(csv);
  const fs::path mp = meta_path(csv);
  if (fs::exists(mp)) {
    const json meta = read_json(mp);
    return parse_dataset(text, &meta);
  }
  return parse_dataset(text);
}

/// "full", "generators" or a comma-separated list of bus ids.
inline std::vector<int> parse_observability(const std::string& spec, const GridCase& grid) {
  if (spec == "full") return full_graph(grid).observed;
  if (spec == "generators") return generator_buses(grid);
  std::vector<int> ids;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const int id = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      ids.push_back(id);
    } catch (const std::logic_error&) {
      throw ValidationError("obs", "expected 'full', 'generators' or bus ids, got '" + spec + "'");
    }
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  for (int id : ids)
    if (id < 0 || id >= static_cast<int>(grid.n_bus())) throw ValidationError("obs", "bus id out of range");
  if (ids.empty()) throw ValidationError("obs", "no observed buses");
  return ids;
}

inline bool is_full(const std::vector<int>& observed, const GridCase& grid) {
  return observed.size() == grid.n_bus();
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::istringstream ts(tok);
    T v;
    if (!(ts >> v) || !ts.eof()) throw ValidationError(what, "cannot parse '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError(what, "empty list");
  return out;
}

/// Settings resolved from defaults, then the JSON config file, then flags (flags win).
class Settings {
 public:
  explicit Settings(json config) : config_(std::move(config)) {}

  template <class T>
  T get(const std::string& key, const CLI::Option* flag, const T& flag_value, const T& fallback) const {
    if (flag && flag->count() > 0) return flag_value;
    if (config_.contains(key)) return config_.at(key).get<T>();
    return fallback;
  }

  json section(const std::string& key) const {
    return config_.contains(key) ? config_.at(key) : json::object();
  }

 private:
  json config_;
};

inline std::string run_id(const json& run_config) { return hex64(fnv1a(run_config.dump())); }

inline std::string content_hash(const fs::path& p) { return hex64(fnv1a(read_text(p))); }

/// Flags shared by the training commands.
struct TrainFlags {
  int epochs = 0;
  double lr = 0, lr_final = 0, reg = 0, init_r = 0, init_x = 0, init_gsh = 0, init_bsh = 0;
  int hidden = 0, layers = 0;
  bool correction = false;
  std::string activation;
  CLI::Option *o_epochs{}, *o_lr{}, *o_lr_final{}, *o_reg{}, *o_hidden{}, *o_layers{}, *o_correction{},
      *o_activation{}, *o_init_r{}, *o_init_x{}, *o_init_gsh{}, *o_init_bsh{};

  void add(CLI::App* app) {
    o_epochs = app->add_option("--epochs", epochs, "Training epochs");
    o_lr = app->add_option("--lr", lr, "Adam learning rate");
    o_lr_final = app->add_option("--lr-final", lr_final, "Learning rate at the last epoch (exponential decay)");
    o_reg = app->add_option("--reg", reg, "Regularization coefficient on the correction net");
    o_hidden = app->add_option("--hidden", hidden, "Hidden width");
    o_layers = app->add_option("--layers", layers, "Layer count");
    o_correction = app->add_option("--correction", correction, "Enable the correction net (true/false)");
    o_activation = app->add_option("--activation", activation, "relu, softsign or identity");
    o_init_r = app->add_option("--init-r", init_r, "Initial line resistance");
    o_init_x = app->add_option("--init-x", init_x, "Initial line reactance");
    o_init_gsh = app->add_option("--init-gsh", init_gsh, "Initial shunt conductance");
    o_init_bsh = app->add_option("--init-bsh", init_bsh, "Initial shunt susceptance");
  }

  TrainConfig apply(TrainConfig c, const json& section, std::uint64_t seed) const {
    if (!section.empty()) c = train_config_from_json(section, c);
    c.seed = seed;
    if (o_epochs->count()) c.epochs = epochs;
    if (o_lr->count()) c.lr = lr;
    if (o_lr_final->count()) c.lr_final = lr_final;
    if (o_reg->count()) c.reg_coeff = reg;
    if (o_hidden->count()) c.hidden = hidden;
    if (o_layers->count()) c.layers = layers;
    if (o_correction->count()) c.correction = correction;
    if (o_activation->count()) c.activation = parse_activation(activation);
    if (o_init_r->count()) c.init_r = init_r;
    if (o_init_x->count()) c.init_x = init_x;
    if (o_init_gsh->count()) c.init_gsh = init_gsh;
    if (o_init_bsh->count()) c.init_bsh = init_bsh;
    c.validate();
    return c;
  }
};

struct Globals {
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out = ".";
  std::string config;
  CLI::Option *o_seed{}, *o_jobs{}, *o_out{};
};

/// Effective graph for an observability choice: the grid itself, or the thresholded
/// Kron reference.
struct Topology {
  EffectiveGraph graph;
  std::optional<ReducedModel> reference;
};

inline Topology topology(const GridCase& grid, const std::vector<int>& observed, double threshold) {
  if (is_full(observed, grid)) return {full_graph(grid), std::nullopt};
  ReducedModel rm = reduce_grid(grid, ObservabilityMask(observed, static_cast<Eigen::Index>(grid.n_bus())), threshold);
  return {effective_graph(rm), std::move(rm)};
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Builds the application and runs it. stdout gets one summary line; diagnostics go to err.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Power-GNN toolkit: grids, power flow, Kron reduction, datasets and estimators"};
  app.require_subcommand(1);
  Globals g;
  g.o_seed = app.add_option("--seed", g.seed, "Seed for every random choice")->default_val(0);
  g.o_jobs = app.add_option("--jobs", g.jobs, "Worker cap")->default_val(1)->check(CLI::PositiveNumber);
  g.o_out = app.add_option("--out", g.out, "Output root")->default_val(".");
  app.add_option("--config", g.config, "JSON config; flags override its keys");

  // import
  auto* imp = app.add_subcommand("import", "Convert a MATPOWER case to the native grid format");
  std::string imp_case, imp_output;
  imp->add_option("case", imp_case, "MATPOWER .m file")->required();
  imp->add_option("-o,--output", imp_output, "Output file (default <out>/grid/<name>.json)");

  // generate
  auto* gen = app.add_subcommand("generate", "Sample a labeled dataset");
  std::string gen_grid, gen_case, gen_output;
  int gen_n = 0;
  double gen_shift = 0, gen_noise = 0;
  auto* o_gen_grid = gen->add_option("--grid", gen_grid, "Native grid file");
  auto* o_gen_case = gen->add_option("--case", gen_case, "Scenario case c1..c6");
  auto* o_gen_n = gen->add_option("--n", gen_n, "Number of samples");
  auto* o_gen_shift = gen->add_option("--phase-shift", gen_shift, "Global phase shift in degrees (case c6)");
  auto* o_gen_noise = gen->add_option("--noise", gen_noise, "Load noise fraction");
  gen->add_option("-o,--output", gen_output, "Output CSV (default <out>/data/<case>_n<N>_s<seed>.csv)");

  // kron
  auto* kr = app.add_subcommand("kron", "Kron-reduce a grid onto observed buses");
  std::string kr_grid, kr_obs, kr_output;
  double kr_thr = 0;
  auto* o_kr_grid = kr->add_option("--grid", kr_grid, "Native grid file");
  auto* o_kr_obs = kr->add_option("--obs", kr_obs, "full, generators or bus ids");
  auto* o_kr_thr = kr->add_option("--threshold", kr_thr, "Relative edge threshold");
  kr->add_option("-o,--output", kr_output, "Output file (default <out>/grid/<name>.<obs>.reduced.json)");

  // train
  auto* tr = app.add_subcommand("train", "Train Power-GNN or the vanilla net");
  std::string tr_model, tr_grid, tr_data, tr_obs;
  double tr_frac = 0, tr_thr = 0;
  auto* o_tr_model = tr->add_option("--model", tr_model, "pgnn or vanilla");
  auto* o_tr_grid = tr->add_option("--grid", tr_grid, "Native grid file");
  auto* o_tr_data = tr->add_option("--data", tr_data, "Dataset CSV");
  auto* o_tr_obs = tr->add_option("--obs", tr_obs, "full, generators or bus ids");
  auto* o_tr_frac = tr->add_option("--train-fraction", tr_frac, "Fraction of samples used for training");
  auto* o_tr_thr = tr->add_option("--threshold", tr_thr, "Relative edge threshold of the reduced graph");
  TrainFlags tr_flags;
  tr_flags.add(tr);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Injection mismatch of a checkpoint on a dataset");
  std::string ev_model, ev_data;
  auto* o_ev_model = ev->add_option("--model", ev_model, "Checkpoint file");
  auto* o_ev_data = ev->add_option("--data", ev_data, "Dataset CSV");

  // sweep-reg
  auto* sw = app.add_subcommand("sweep-reg", "Reconstruction quality against the regularization coefficient");
  std::string sw_grid, sw_data, sw_obs, sw_alphas;
  double sw_frac = 0, sw_thr = 0;
  auto* o_sw_grid = sw->add_option("--grid", sw_grid, "Native grid file");
  auto* o_sw_data = sw->add_option("--data", sw_data, "Dataset CSV");
  auto* o_sw_obs = sw->add_option("--obs", sw_obs, "generators or bus ids");
  auto* o_sw_alphas = sw->add_option("--alphas", sw_alphas, "Comma-separated coefficients");
  auto* o_sw_frac = sw->add_option("--train-fraction", sw_frac, "Fraction of samples used for training");
  auto* o_sw_thr = sw->add_option("--threshold", sw_thr, "Relative edge threshold");
  TrainFlags sw_flags;
  sw_flags.add(sw);

  // recon-curve
  auto* rc = app.add_subcommand("recon-curve", "Admittance reconstruction error against sample count");
  std::string rc_grid, rc_case, rc_counts;
  int rc_real = 0;
  bool rc_norm = false;
  auto* o_rc_grid = rc->add_option("--grid", rc_grid, "Native grid file");
  auto* o_rc_case = rc->add_option("--case", rc_case, "Scenario case c1..c6");
  auto* o_rc_counts = rc->add_option("--counts", rc_counts, "Comma-separated sample counts");
  auto* o_rc_real = rc->add_option("--realizations", rc_real, "Realizations per count");
  auto* o_rc_norm = rc->add_flag("--per-node", rc_norm, "Divide errors by the node count");
  TrainFlags rc_flags;
  rc_flags.add(rc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    const Settings cfg(g.config.empty() ? json::object() : read_json(g.config));
    const std::uint64_t seed = cfg.get<std::uint64_t>("seed", g.o_seed, g.seed, 0);
    const int jobs = cfg.get<int>("jobs", g.o_jobs, g.jobs, 1);
    const fs::path root = cfg.get<std::string>("out", g.o_out, g.out, ".");
    auto need = [](const std::string& v, const char* what) {
      if (v.empty()) throw ValidationError(what, "required");
      return v;
    };

    if (*imp) {
      const fs::path src = imp_case;
      const GridCase grid = import_matpower(read_text(src));
      const fs::path dst = imp_output.empty() ? root / "grid" / (src.stem().string() + ".json") : fs::path(imp_output);
      write_text(dst, export_grid(grid));
      out << "imported " << dst.string() << " buses=" << grid.n_bus() << " lines=" << grid.lines.size()
          << " generators=" << grid.generators.size() << "\n";
      return kExitOk;
    }

    if (*gen) {
      const fs::path grid_path = need(cfg.get<std::string>("grid", o_gen_grid, gen_grid, ""), "grid");
      const GridCase grid = load_grid_file(grid_path);
      ScenarioConfig sc = scenario_from_json(cfg.section("scenario"));
      if (o_gen_case->count() || cfg.section("scenario").value("case", "").empty())
        sc.case_id = parse_case(cfg.get<std::string>("case", o_gen_case, gen_case, case_name(sc.case_id)));
      sc.n_samples = cfg.get<int>("n", o_gen_n, gen_n, sc.n_samples);
      sc.phase_shift_deg = cfg.get<double>("phase_shift", o_gen_shift, gen_shift, sc.phase_shift_deg);
      sc.noise_frac = cfg.get<double>("noise", o_gen_noise, gen_noise, sc.noise_frac);
      sc.seed = seed;
      sc.validate();
      GenerateOptions go;
      go.jobs = jobs;
      go.log = &err;
      const SampleSet set = generate(grid, sc, go);
      const fs::path dst = gen_output.empty() ? root / "data" /
                                                    (case_name(sc.case_id) + "_n" + std::to_string(sc.n_samples) +
                                                     "_s" + std::to_string(sc.seed) + ".csv")
                                              : fs::path(gen_output);
      write_text(dst, dataset_csv(set));
      write_text(meta_path(dst), dump(dataset_metadata(set)));
      out << "generated " << dst.string() << " samples=" << set.size() << " rejected=" << set.rejected << "\n";
      return kExitOk;
    }

    if (*kr) {
      const fs::path grid_path = need(cfg.get<std::string>("grid", o_kr_grid, kr_grid, ""), "grid");
      const GridCase grid = load_grid_file(grid_path);
      const std::string obs = cfg.get<std::string>("obs", o_kr_obs, kr_obs, "generators");
      const double thr = cfg.get<double>("threshold", o_kr_thr, kr_thr, 0.02);
      const std::vector<int> observed = parse_observability(obs, grid);
      const ReducedModel rm =
          reduce_grid(grid, ObservabilityMask(observed, static_cast<Eigen::Index>(grid.n_bus())), thr);
      json j = reduced_to_json(rm, grid);
      const std::string tag = obs.find(',') == std::string::npos ? obs : "custom";
      const fs::path dst = kr_output.empty()
                               ? root / "grid" / (grid_path.stem().string() + "." + tag + ".reduced.json")
                               : fs::path(kr_output);
      write_text(dst, dump(j));
      out << "reduced " << dst.string() << " observed=" << rm.observed.size() << " edges=" << rm.edges.size()
          << " components=" << rm.components << "\n";
      return kExitOk;
    }

    if (*tr) {
      const std::string model = cfg.get<std::string>("model", o_tr_model, tr_model, "pgnn");
      if (model != "pgnn" && model != "vanilla") throw ValidationError("model", "expected pgnn or vanilla");
      const fs::path grid_path = need(cfg.get<std::string>("grid", o_tr_grid, tr_grid, ""), "grid");
      const fs::path data_path = need(cfg.get<std::string>("data", o_tr_data, tr_data, ""), "data");
      const GridCase grid = load_grid_file(grid_path);
      const SampleSet set = load_dataset(data_path);
      const std::string obs = cfg.get<std::string>("obs", o_tr_obs, tr_obs, "full");
      const double frac = cfg.get<double>("train_fraction", o_tr_frac, tr_frac, 0.2);
      const double thr = cfg.get<double>("threshold", o_tr_thr, tr_thr, 0.02);
      const std::vector<int> observed = parse_observability(obs, grid);
      const bool full = is_full(observed, grid);
      TrainConfig base = model == "vanilla" ? TrainConfig::vanilla(static_cast<int>(grid.n_bus()))
                                            : (full ? TrainConfig::pgnn_full() : TrainConfig::pgnn_partial());
      const TrainConfig tc = tr_flags.apply(base, cfg.section("train"), seed);

      const json run_cfg = {{"command", "train"},       {"model", model},
                            {"grid_hash", content_hash(grid_path)},
                            {"data_hash", content_hash(data_path)},
                            {"observed", observed},     {"threshold", thr},
                            {"train_fraction", frac},   {"train", to_json(tc)},
                            {"seed", seed}};
      const fs::path dir = root / "runs" / run_id(run_cfg);
      const Split parts = split(set, frac);
      const ObservedData train = restrict_to(parts.train, observed);
      const ObservedData valid = restrict_to(parts.validation, observed);

      json report;
      Checkpoint ck;
      if (model == "pgnn") {
        const Topology topo = topology(grid, observed, thr);
        const PgnnResult res = train_pgnn(topo.graph, train, tc);
        ck = to_checkpoint(res.model);
        report = to_json(res.report);
        report["train_mismatch"] = mismatch(res.model, train);
        report["validation_mismatch"] = mismatch(res.model, valid);
        if (topo.reference) {
          const LineComparison lc = line_param_compare(topo.graph, res.model.phys, *topo.reference);
          report["recon_error"] =
              recon_error(res.model.admittance().entries(), topo.reference->y_reduced.entries());
          report["physical_fraction"] = lc.physical_fraction();
          report["susceptance_correlation"] = lc.rows.size() >= 2 ? susceptance_correlation(lc) : 0.0;
          write_text(dir / "fig3.csv", fig3_csv(lc));
          write_text(dir / "fig3.gp", fig3_gp());
        } else {
          report["recon_error"] =
              recon_error(res.model.admittance().entries(), assemble_admittance(grid).entries());
        }
        write_text(dir / "trace.csv", trace_csv(res.report));
      } else {
        const VanillaResult res = train_vanilla(train, tc);
        ck = to_checkpoint(res.net);
        ck.meta["observed"] = observed;
        report = to_json(res.report);
        report["train_mismatch"] = mismatch(res.net, train);
        report["validation_mismatch"] = mismatch(res.net, valid);
        write_text(dir / "trace.csv", trace_csv(res.report));
      }
      ck.meta["grid_hash"] = run_cfg["grid_hash"];
      write_text(dir / "config.json", dump(run_cfg));
      write_text(dir / "checkpoint.json", dump(to_json(ck)));
      write_text(dir / "report.json", dump(report));
      out << "trained " << dir.string() << " model=" << model << " final_loss=" << fmt(report["final_loss"])
          << " validation_mismatch=" << fmt(report["validation_mismatch"]) << "\n";
      return kExitOk;
    }

    if (*ev) {
      const fs::path ck_path = need(cfg.get<std::string>("model", o_ev_model, ev_model, ""), "model");
      const fs::path data_path = need(cfg.get<std::string>("data", o_ev_data, ev_data, ""), "data");
      const Checkpoint ck = checkpoint_from_json(read_json(ck_path));
      const SampleSet set = load_dataset(data_path);
      const std::string kind = checkpoint_model(ck);
      double value = 0.0;
      if (kind == "pgnn") {
        const PowerGnn m = pgnn_from_checkpoint(ck);
        value = mismatch(m, restrict_to(set, m.graph.observed));
      } else if (kind == "vanilla") {
        const VanillaNet net = vanilla_from_checkpoint(ck);
        const auto observed = ck.meta.at("observed").get<std::vector<int>>();
        value = mismatch(net, restrict_to(set, observed));
      } else {
        throw ValidationError("meta.model", "unknown checkpoint kind '" + kind + "'");
      }
      const json run_cfg = {{"command", "evaluate"},
                            {"checkpoint_hash", content_hash(ck_path)},
                            {"data_hash", content_hash(data_path)}};
      const fs::path dir = root / "runs" / run_id(run_cfg);
      write_text(dir / "config.json", dump(run_cfg));
      write_text(dir / "evaluation.json",
                 dump({{"model", kind}, {"samples", set.size()}, {"mismatch", value}}));
      out << "mismatch=" << fmt(value) << " model=" << kind << " samples=" << set.size() << "\n";
      return kExitOk;
    }

    if (*sw) {
      const fs::path grid_path = need(cfg.get<std::string>("grid", o_sw_grid, sw_grid, ""), "grid");
      const fs::path data_path = need(cfg.get<std::string>("data", o_sw_data, sw_data, ""), "data");
      const GridCase grid = load_grid_file(grid_path);
      const SampleSet set = load_dataset(data_path);
      const std::string obs = cfg.get<std::string>("obs", o_sw_obs, sw_obs, "generators");
      const double frac = cfg.get<double>("train_fraction", o_sw_frac, sw_frac, 0.2);
      const double thr = cfg.get<double>("threshold", o_sw_thr, sw_thr, 0.02);
      std::vector<double> alphas{0.0, 1e-6, 1e-4, 1e-2, 1.0};
      if (o_sw_alphas->count())
        alphas = parse_list<double>(sw_alphas, "alphas");
      else if (cfg.section("alphas").is_array())
        alphas = cfg.section("alphas").get<std::vector<double>>();
      const std::vector<int> observed = parse_observability(obs, grid);
      if (is_full(observed, grid)) throw ValidationError("obs", "the sweep needs partial observability");
      const TrainConfig tc = sw_flags.apply(TrainConfig::pgnn_partial(), cfg.section("train"), seed);
      const json run_cfg = {{"command", "sweep-reg"},   {"grid_hash", content_hash(grid_path)},
                            {"data_hash", content_hash(data_path)},
                            {"observed", observed},     {"threshold", thr},
                            {"train_fraction", frac},   {"alphas", alphas},
                            {"train", to_json(tc)},     {"seed", seed}};
      const fs::path dir = root / "runs" / run_id(run_cfg);
      const ReducedModel ref =
          reduce_grid(grid, ObservabilityMask(observed, static_cast<Eigen::Index>(grid.n_bus())), thr);
      const RegSweep res = reg_sweep(ref, restrict_to(split(set, frac).train, observed), tc, alphas, jobs);
      const int best = res.argmin();
      write_text(dir / "config.json", dump(run_cfg));
      write_text(dir / "fig4.csv", fig4_csv(res));
      write_text(dir / "fig4.gp", fig4_gp());
      write_text(dir / "sweep.json",
                 dump({{"quality_indicator", "relative Frobenius error of the reduced admittance matrix"},
                       {"argmin", best},
                       {"interior_minimum", res.interior_minimum()}}));
      out << "swept " << dir.string() << " points=" << res.points.size();
      if (best >= 0)
        out << " best_reg=" << fmt(res.points[best].reg_coeff) << " quality=" << fmt(res.points[best].quality);
      out << " interior=" << (res.interior_minimum() ? "yes" : "no") << "\n";
      return kExitOk;
    }

    if (*rc) {
      const fs::path grid_path = need(cfg.get<std::string>("grid", o_rc_grid, rc_grid, ""), "grid");
      const GridCase grid = load_grid_file(grid_path);
      ScenarioConfig sc = scenario_from_json(cfg.section("scenario"));
      if (o_rc_case->count() || cfg.section("scenario").value("case", "").empty())
        sc.case_id = parse_case(cfg.get<std::string>("case", o_rc_case, rc_case, case_name(sc.case_id)));
      sc.seed = seed;
      std::vector<int> counts{10, 20, 40, 100, 200, 400};
      if (o_rc_counts->count())
        counts = parse_list<int>(rc_counts, "counts");
      else if (cfg.section("counts").is_array())
        counts = cfg.section("counts").get<std::vector<int>>();
      ReconCurveOptions opts;
      opts.realizations = cfg.get<int>("realizations", o_rc_real, rc_real, 10);
      opts.jobs = jobs;
      const bool per_node = cfg.get<bool>("per_node", o_rc_norm, rc_norm, false);
      opts.normalization = per_node ? ReconNormalization::PerNode : ReconNormalization::None;
      const TrainConfig tc = rc_flags.apply(TrainConfig::pgnn_full(), cfg.section("train"), seed);
      const json run_cfg = {{"command", "recon-curve"},
                            {"grid_hash", content_hash(grid_path)},
                            {"scenario", to_json(sc)},
                            {"counts", counts},
                            {"realizations", opts.realizations},
                            {"per_node", per_node},
                            {"train", to_json(tc)},
                            {"seed", seed}};
      const fs::path dir = root / "runs" / run_id(run_cfg);
      const auto curve = recon_error_curve(grid, sc, counts, tc, opts);
      write_text(dir / "config.json", dump(run_cfg));
      write_text(dir / "fig2.csv", fig2_csv(curve));
      write_text(dir / "fig2.gp", fig2_gp());
      out << "curve " << dir.string() << " counts=" << counts.size() << " mean_at_max_n=" << fmt(curve.back().mean)
          << "\n";
      return kExitOk;
    }
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const UnsupportedFeature& e) {
    err << "unsupported: " << e.what() << "\n";
    return kExitParse;
  } catch (const GenerationStalled& e) {
    err << "generation stalled: " << e.what() << "\n";
    return kExitStalled;
  } catch (const Divergence& e) {
    err << "diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const SingularInteriorBlock& e) {
    err << "singular reduction: " << e.what() << "\n";
    return kExitSingular;
  } catch (const json::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace powergnn::cli
