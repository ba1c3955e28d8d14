// nodelearn: validate, run, sweep and report simulation scenarios.
//
// Exit codes: 0 success, 1 validation or usage failure, 2 runtime fault.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "nodelearn/nodelearn.hpp"

namespace fs = std::filesystem;
using namespace nodelearn;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kFault = 2;

struct Invalid : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path default_root() {
  if (const char* env = std::getenv("NODELEARN_OUT"); env && *env) return env;
  return "runs";
}

// Load, apply the seed override, validate. Warnings go to stderr.
ScenarioConfig load_config(const std::string& path, bool lax, std::optional<std::int64_t> seed,
                           json* doc_out = nullptr) {
  json doc;
  try {
    doc = load_json_file(path);
  } catch (const ConfigError& e) {
    throw Invalid(e.what());
  }
  if (seed) doc["seed"] = *seed;
  auto parsed = parse_config(doc, !lax);
  for (const auto& w : parsed.diagnostics.warnings) std::cerr << "warning: " << w << '\n';
  if (!parsed.diagnostics.ok()) throw Invalid(join_errors(parsed.diagnostics.errors));
  if (doc_out) *doc_out = doc;
  return parsed.config;
}

struct RunRequest {
  fs::path out;
  bool force = false;
  int verbosity = 0;
  std::optional<Tick> checkpoint_at;
  bool stop_after_checkpoint = false;
  std::string resume;
};

void prepare_dir(const fs::path& out, bool force) {
  if (run_dir_complete(out)) {
    if (!force)
      throw Invalid("'" + out.string() + "' holds a completed run; pass --force to replace it");
    fs::remove_all(out);
  }
  fs::create_directories(out);
}

void execute(ScenarioConfig cfg, const RunInfo& info, const RunRequest& req) {
  if (req.verbosity >= 2) {
    cfg.output.packets = true;
    cfg.output.packet_payloads = true;
  }
  prepare_dir(req.out, req.force);
  SimState s = req.resume.empty() ? initial_state(cfg) : load_checkpoint(req.resume, cfg);
  if (req.checkpoint_at && *req.checkpoint_at >= s.tick) {
    run(s, cfg, *req.checkpoint_at);
    const fs::path ck = req.out / "checkpoint.json";
    save_checkpoint(ck.string(), s, cfg);
    if (req.verbosity) std::cerr << "checkpoint at tick " << s.tick << " -> " << fs::absolute(ck).string() << '\n';
    if (req.stop_after_checkpoint) return;
  }
  const Tick report_every = std::max<Tick>(1, cfg.ticks / 10);
  while (s.tick < cfg.ticks && !s.halted) {
    tick(s, cfg);
    if (req.verbosity && s.tick % report_every == 0)
      std::cerr << cfg.name << ": tick " << s.tick << "/" << cfg.ticks << '\n';
  }
  write_run(req.out, s, cfg, info);
  const auto audit = audit_energy(s);
  if (!audit.ok) std::cerr << "warning: energy audit failed: " << audit.message << '\n';
}

std::string cell_value(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

int cmd_validate(const std::string& path, bool lax) {
  load_config(path, lax, std::nullopt);
  std::cout << "ok\n";
  return kOk;
}

int cmd_sweep(const std::string& config_path, const std::string& sweep_path, fs::path out, bool force,
              bool lax, unsigned jobs, int verbosity) {
  json base;
  const ScenarioConfig base_cfg = load_config(config_path, lax, std::nullopt, &base);
  json spec;
  try {
    spec = load_json_file(sweep_path);
  } catch (const ConfigError& e) {
    throw Invalid(e.what());
  }
  if (!spec.is_object()) throw Invalid("sweep file must be an object with 'grid' and 'seeds'");
  for (auto it = spec.begin(); it != spec.end(); ++it)
    if (it.key() != "grid" && it.key() != "seeds") throw Invalid("sweep file: unknown key '" + it.key() + "'");
  const json grid = spec.value("grid", json::object());
  if (!grid.is_object()) throw Invalid("sweep file: 'grid' must be an object");
  std::vector<std::int64_t> seeds;
  if (spec.contains("seeds")) {
    try {
      seeds = spec.at("seeds").get<std::vector<std::int64_t>>();
    } catch (const json::exception&) {
      throw Invalid("sweep file: 'seeds' must be an array of integers");
    }
  }
  if (seeds.empty()) seeds.push_back(static_cast<std::int64_t>(base_cfg.seed));

  struct Cell {
    fs::path dir;
    json doc;
  };
  std::vector<std::pair<fs::path, json>> cells{{fs::path(), base}};
  for (auto it = grid.begin(); it != grid.end(); ++it) {
    if (!it.value().is_array() || it.value().empty())
      throw Invalid("sweep file: grid." + it.key() + " must be a nonempty array");
    std::vector<std::pair<fs::path, json>> next;
    for (const auto& [dir, doc] : cells)
      for (const auto& v : it.value()) {
        json d = doc;
        set_json_path(d, expand_grid_key(it.key()), v);
        next.push_back({dir / (it.key() + "=" + cell_value(v)), d});
      }
    cells = std::move(next);
  }
  std::vector<Cell> runs;
  for (const auto& [dir, doc] : cells)
    for (auto seed : seeds) {
      json d = doc;
      d["seed"] = seed;
      runs.push_back({out / dir / ("seed=" + std::to_string(seed)), d});
    }
  // Validate every cell before starting any run.
  std::vector<ScenarioConfig> cfgs;
  for (const auto& r : runs) {
    auto p = parse_config(r.doc, !lax);
    if (!p.diagnostics.ok())
      throw Invalid(r.dir.string() + ":\n" + join_errors(p.diagnostics.errors));
    cfgs.push_back(p.config);
  }

  std::mutex io;
  std::atomic<std::size_t> next{0};
  std::vector<std::string> failures(runs.size());
  auto worker = [&] {
    for (std::size_t k = next++; k < runs.size(); k = next++) {
      RunRequest req;
      req.out = runs[k].dir;
      req.force = force;
      req.verbosity = 0;
      try {
        execute(cfgs[k], RunInfo{config_path, true}, req);
        std::lock_guard lock(io);
        std::cerr << "[" << (k + 1) << "/" << runs.size() << "] " << runs[k].dir.string() << " done\n";
      } catch (const std::exception& e) {
        failures[k] = e.what();
        std::lock_guard lock(io);
        std::cerr << "[" << (k + 1) << "/" << runs.size() << "] " << runs[k].dir.string()
                  << " FAILED: " << e.what() << '\n';
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(runs.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  json status = json::array();
  std::size_t failed = 0;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    status.push_back({{"dir", fs::absolute(runs[k].dir).lexically_normal().string()},
                      {"ok", failures[k].empty()},
                      {"error", failures[k]}});
    failed += !failures[k].empty();
  }
  fs::create_directories(out);
  std::ofstream(out / "sweep-status.json") << status.dump(2) << '\n';
  if (verbosity) std::cerr << runs.size() - failed << "/" << runs.size() << " runs succeeded\n";
  return failed ? kFault : kOk;
}

std::vector<fs::path> expand_run_dirs(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    fs::path p(a);
    if (fs::exists(p / "manifest.json") || !fs::is_directory(p)) {
      out.push_back(p);
      continue;
    }
    std::vector<fs::path> found;
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file() && e.path().filename() == "manifest.json") found.push_back(e.path().parent_path());
    std::sort(found.begin(), found.end());
    if (found.empty()) out.push_back(p);
    out.insert(out.end(), found.begin(), found.end());
  }
  return out;
}

int cmd_report(const std::vector<std::string>& args, const std::string& baseline,
               const std::string& reference, const std::string& out_file) {
  const auto dirs = expand_run_dirs(args);
  auto result = report(dirs);
  std::string text = metrics::format_report(result.rows);
  if (!baseline.empty() || !reference.empty()) {
    text += "\nrun,metric,value\n";
    std::vector<MetricRecord> base, ref;
    if (!baseline.empty()) base = metrics::load_records((fs::path(baseline) / "metrics.csv").string());
    if (!reference.empty()) ref = metrics::load_records((fs::path(reference) / "metrics.csv").string());
    for (const auto& d : dirs) {
      if (!fs::exists(d / "metrics.csv")) continue;
      const auto recs = metrics::load_records((d / "metrics.csv").string());
      if (!baseline.empty()) {
        const auto v = metrics::ce(recs, base);
        text += csv::quote_if_needed(d.string()) + ",ce," + (v ? csv::format_double(*v) : "") + '\n';
      }
      if (!reference.empty()) {
        const auto v = metrics::rr(recs, ref);
        text += csv::quote_if_needed(d.string()) + ",rr," + (v ? csv::format_double(*v) : "") + '\n';
      }
    }
  }
  if (out_file.empty()) std::cout << text;
  else std::ofstream(out_file) << text;
  for (const auto& m : result.missing) std::cerr << "missing: " << m << '\n';
  return kOk;
}

int cmd_gen_data(std::size_t classes, std::size_t features, double bayes, double separation, double sigma,
                 std::size_t n, std::int64_t seed, const std::string& out) {
  if (bayes > 0.0) separation = separation_for_bayes_accuracy(classes, bayes);
  DataStreamSpec spec;
  spec.classes = classes;
  spec.features = features;
  spec.sigma = sigma;
  spec.prototypes = orthogonal_prototypes(classes, features, separation * sigma);
  Rng rng(static_cast<std::uint64_t>(seed), Stream::data);
  Dataset ds;
  ds.samples = sample_uniform(spec, n, rng);
  ds.features = features;
  ds.classes = classes;
  for (std::size_t f = 0; f < features; ++f) ds.feature_names.push_back("x" + std::to_string(f));
  for (std::size_t c = 0; c < classes; ++c) ds.label_names.push_back(std::to_string(c));
  save_csv_dataset(ds, out);
  std::cerr << "wrote " << n << " rows (separation " << csv::format_double(separation) << ") to " << out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Node learning simulator"};
  app.require_subcommand(1);

  std::string config, sweep_file, out, resume, baseline, reference, report_out, data_out;
  std::vector<std::string> report_dirs;
  std::optional<std::int64_t> seed;
  std::optional<Tick> checkpoint_at;
  bool force = false, lax = false, stop_after_checkpoint = false;
  int verbosity = 0;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  std::size_t classes = 5, features = 10, rows = 1000;
  double bayes = 0.0, separation = 3.0, sigma = 1.0;
  std::int64_t data_seed = 1;

  auto* validate = app.add_subcommand("validate", "Check a scenario config");
  validate->add_option("config", config, "Scenario JSON")->required();
  validate->add_flag("--lax", lax, "Warn on unknown keys instead of failing");

  auto* runc = app.add_subcommand("run", "Run one scenario");
  runc->add_option("config", config, "Scenario JSON")->required();
  runc->add_option("--seed", seed, "Override the master seed (recorded in the manifest)");
  runc->add_option("--out", out, "Output directory (default $NODELEARN_OUT/<name>/seed=<seed>)");
  runc->add_flag("--force", force, "Replace a completed run directory");
  runc->add_flag("-v,--verbose", verbosity, "Progress lines; twice adds packets.jsonl with payloads");
  runc->add_flag("--lax", lax, "Warn on unknown keys instead of failing");
  runc->add_option("--checkpoint-at", checkpoint_at, "Write <out>/checkpoint.json when this tick is reached");
  runc->add_flag("--stop-after-checkpoint", stop_after_checkpoint, "Exit right after writing the checkpoint");
  runc->add_option("--resume", resume, "Continue from a checkpoint file");

  auto* sweep = app.add_subcommand("sweep", "Run a parameter grid x seed list");
  sweep->add_option("config", config, "Base scenario JSON")->required();
  sweep->add_option("sweep", sweep_file, "Sweep JSON {\"grid\": {...}, \"seeds\": [...]}")->required();
  sweep->add_option("--out", out, "Output root (default $NODELEARN_OUT/<name>-sweep)");
  sweep->add_option("--jobs,-j", jobs, "Parallel runs");
  sweep->add_flag("--force", force, "Replace completed run directories");
  sweep->add_flag("--lax", lax, "Warn on unknown keys instead of failing");
  sweep->add_flag("-v,--verbose", verbosity, "Summary line at the end");

  auto* rep = app.add_subcommand("report", "Aggregate run directories into mean/std tables");
  rep->add_option("dirs", report_dirs, "Run directories (searched recursively)")->required();
  rep->add_option("--baseline", baseline, "Isolated baseline run for CE");
  rep->add_option("--reference", reference, "No-dropout reference run for RR");
  rep->add_option("--out", report_out, "Write the table to a file");

  auto* gen = app.add_subcommand("gen-data", "Write a Gaussian-prototype dataset as CSV");
  gen->add_option("--classes", classes)->check(CLI::Range(2, 1000));
  gen->add_option("--features", features)->check(CLI::Range(1, 100000));
  gen->add_option("--bayes", bayes, "Target Bayes accuracy (overrides --separation)");
  gen->add_option("--separation", separation);
  gen->add_option("--sigma", sigma);
  gen->add_option("--rows", rows);
  gen->add_option("--seed", data_seed);
  gen->add_option("--out", data_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInvalid;
  }

  try {
    if (*validate) return cmd_validate(config, lax);
    if (*runc) {
      const ScenarioConfig cfg = load_config(config, lax, seed);
      RunRequest req;
      req.out = out.empty() ? default_root() / cfg.name / ("seed=" + std::to_string(cfg.seed)) : fs::path(out);
      req.force = force;
      req.verbosity = verbosity;
      req.checkpoint_at = checkpoint_at;
      req.stop_after_checkpoint = stop_after_checkpoint;
      req.resume = resume;
      execute(cfg, RunInfo{config, seed.has_value()}, req);
      std::cout << fs::absolute(req.out).lexically_normal().string() << '\n';
      return kOk;
    }
    if (*sweep) {
      json doc;
      const ScenarioConfig cfg = load_config(config, lax, std::nullopt, &doc);
      const fs::path root = out.empty() ? default_root() / (cfg.name + "-sweep") : fs::path(out);
      return cmd_sweep(config, sweep_file, root, force, lax, jobs, verbosity);
    }
    if (*rep) return cmd_report(report_dirs, baseline, reference, report_out);
    if (*gen) return cmd_gen_data(classes, features, bayes, separation, sigma, rows, data_seed, data_out);
  } catch (const Invalid& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "fault: " << e.what() << '\n';
    return kFault;
  }
  return kOk;
}
