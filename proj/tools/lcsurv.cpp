// lcsurv command-line front end: fit, select, cv, bootstrap, simulate, report.

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lcsurv/io.hpp"

namespace fs = std::filesystem;
using namespace lcsurv;
using io::json;

namespace {

struct Flags {
  std::optional<std::string> config, data, out, scenario, x, z, time, event, id;
  std::optional<std::size_t> g, g_min, g_max, starts, k, bootstrap, replicates;
  std::optional<std::uint64_t> seed;
  std::optional<double> horizon;
  std::optional<unsigned> threads;
  bool write_data = false;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("LCSURV_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  std::uint64_t seed = 0;
  const std::string s(v);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorKind::InvalidArgument, "LCSURV_SEED is not an unsigned integer: '" + s + "'");
  return seed;
}

// Precedence: built-in defaults < LCSURV_SEED < config file < flags.
io::RunConfig resolve(const Flags& f) {
  io::RunConfig c;
  if (auto s = env_seed()) c.seed = *s;
  if (f.config) c = io::config_from_json(io::read_json_file(*f.config), c);
  if (f.data) c.data = *f.data;
  if (f.out) c.out = *f.out;
  if (f.scenario) c.scenario = *f.scenario;
  if (f.x) c.schema.x = split_list(*f.x);
  if (f.z) c.schema.z = split_list(*f.z);
  if (f.time) c.schema.time_col = *f.time;
  if (f.event) c.schema.event_col = *f.event;
  if (f.id) c.schema.id_col = *f.id;
  if (f.g) c.g = *f.g;
  if (f.g_min) c.g_min = *f.g_min;
  if (f.g_max) c.g_max = *f.g_max;
  if (f.starts) c.n_starts = *f.starts;
  if (f.k) c.k = *f.k;
  if (f.bootstrap) c.bootstrap = *f.bootstrap;
  if (f.replicates) c.replicates = *f.replicates;
  if (f.seed) c.seed = *f.seed;
  if (f.horizon) c.horizon = *f.horizon;
  if (f.threads) c.threads = *f.threads;
  c.schema.z_from_x = true;
  c.validate();
  return c;
}

Dataset load_data(const io::RunConfig& c) {
  if (c.data.empty()) throw Error(ErrorKind::InvalidArgument, "no data file given (--data or config key 'data')");
  if (!fs::exists(c.data)) throw Error(ErrorKind::EmptyFile, "data file '" + c.data + "' does not exist");
  return load_csv(c.data, c.schema);
}

fs::path prepare_out(const io::RunConfig& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec || !fs::is_directory(c.out))
    throw Error(ErrorKind::InvalidArgument, "output directory '" + c.out + "' is not writable");
  return fs::path(c.out);
}

template <class Fn>
void write_file(const fs::path& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write " + path.string());
  fn(out);
}

void write_json(const fs::path& path, const json& j) {
  write_file(path, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
}

void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& files) {
  write_json(dir / ("manifest_" + command + ".json"),
             {{"schema_version", io::kSchemaVersion}, {"command", command}, {"files", files}});
}

void warn_unreplicated(const LatentClassFit& fit) {
  if (fit.g > 1 && !fit.best_replicated)
    std::cerr << "warning: g=" << fit.g
              << ": the best log-likelihood was reached by a single start; increase --starts\n";
}

// ---------------------------------------------------------------- commands

int cmd_fit(const Flags& f) {
  const auto c = resolve(f);
  const auto ds = load_data(c);
  const auto dir = prepare_out(c);
  const auto fit = fit_latent_class(ds, c.g, c.em());
  warn_unreplicated(fit);
  const double h = c.horizon > 0.0 ? c.horizon : default_horizon(ds);
  const auto roc = time_dependent_auc(risk_scores(fit, ds, h), ds, h);
  write_json(dir / "fit_report.json", io::fit_report(fit, ds, roc));
  write_file(dir / "roc.csv", [&](std::ostream& o) { io::write_roc_csv(o, {{"g" + std::to_string(fit.g), roc}}); });
  write_manifest(dir, "fit", {"fit_report.json", "roc.csv"});
  const auto st = fit_statistics(fit.loglik, fit.n_params, fit.n);
  std::printf("g=%zu loglik=%.4f n_params=%zu BIC=%.2f AUC(t=%.4g)=%.4f\n", fit.g, fit.loglik, fit.n_params, st.bic, h,
              roc.auc);
  return 0;
}

int cmd_select(const Flags& f) {
  auto c = resolve(f);
  const std::size_t g_max = c.g_max.value_or(std::max<std::size_t>(3, c.g_min));
  const auto ds = load_data(c);
  const auto dir = prepare_out(c);
  const MixtureData data(ds);
  const auto sweep = class_sweep(data, c.g_min, g_max, c.em());
  for (const auto& fit : sweep.fits)
    if (fit) warn_unreplicated(*fit);
  write_file(dir / "sweep.csv", [&](std::ostream& o) { io::write_sweep_csv(o, sweep); });
  write_json(dir / "sweep.json", io::sweep_json(sweep));
  write_manifest(dir, "select", {"sweep.csv", "sweep.json"});
  for (const auto& r : sweep.rows)
    std::printf("g=%zu -2LL=%.2f N=%zu AIC=%.2f BIC=%.2f aBIC=%.2f%s\n", r.g, r.stats.neg2ll, r.stats.n_params,
                r.stats.aic, r.stats.bic, r.stats.abic, r.converged ? "" : " (not converged)");
  if (sweep.recommended_g) std::printf("recommended g=%zu\n", *sweep.recommended_g);
  return 0;
}

std::vector<std::size_t> compared_models(const io::RunConfig& c) {
  return c.g == 1 ? std::vector<std::size_t>{1} : std::vector<std::size_t>{1, c.g};
}

int run_validation(const Flags& f, ValidationMethod method) {
  const auto c = resolve(f);
  const auto ds = load_data(c);
  const auto dir = prepare_out(c);
  std::vector<ValidationSummary> runs;
  for (std::size_t g : compared_models(c)) {
    ValidationOptions opt;
    opt.g = g;
    opt.horizon = c.horizon;
    opt.em = c.em();
    opt.threads = c.threads;
    runs.push_back(method == ValidationMethod::KFold ? cross_validate(ds, c.k, opt, c.seed)
                                                     : bootstrap_validate(ds, c.bootstrap, opt, c.seed));
  }
  const std::string stem = method == ValidationMethod::KFold ? "cv" : "bootstrap";
  write_file(dir / (stem + ".csv"), [&](std::ostream& o) { io::write_validation_csv(o, runs); });
  json summary{{"schema_version", io::kSchemaVersion}, {"seed", c.seed}, {"runs", json::array()}};
  for (const auto& r : runs) summary["runs"].push_back(io::validation_json(r));
  write_json(dir / (stem + "_summary.json"), summary);
  write_manifest(dir, stem, {stem + ".csv", stem + "_summary.json"});
  for (const auto& r : runs)
    std::printf("%s g=%zu N=%zu mean AUC %.3f (%.3f-%.3f)%s\n", to_string(r.method), r.g, r.replicates, r.mean,
                r.ci_low, r.ci_high, r.pooled ? " [pooled]" : "");
  return 0;
}

int cmd_simulate(const Flags& f) {
  const auto c = resolve(f);
  SimulationScenario scn;
  bool scenario_seed = false;
  if (!c.scenario.empty()) {
    const auto j = io::read_json_file(c.scenario);
    scn = io::scenario_from_json(j);
    scenario_seed = j.contains("base_seed");
  }
  // the seed flag overrides the scenario; LCSURV_SEED only fills a missing one
  if (f.seed) {
    scn.base_seed = *f.seed;
  } else if (!scenario_seed) {
    if (auto s = env_seed()) scn.base_seed = *s;
  }
  if (c.horizon > 0.0) scn.horizon = c.horizon;
  if (c.replicates > 0) scn.replicates = c.replicates;
  scn.validate();
  const auto dir = prepare_out(c);

  if (f.write_data) {
    fs::create_directories(dir / "replicates");
    for (std::size_t r = 0; r < scn.replicates; ++r) {
      const auto rep = generate_replicate(scn, r);
      write_file(dir / "replicates" / ("replicate_" + std::to_string(r) + ".csv"),
                 [&](std::ostream& o) { write_csv(o, rep.data); });
    }
  }

  StudyOptions opt;
  opt.em = c.em();
  opt.threads = c.threads;
  const auto study = run_study(scn, opt);
  std::vector<double> one, two;
  for (const auto& r : study.rows)
    if (r.ok) {
      one.push_back(r.auc_one_class);
      two.push_back(r.auc_two_class);
    }
  write_file(dir / "study.csv", [&](std::ostream& o) { io::write_study_csv(o, study); });
  write_json(dir / "study_summary.json", io::study_json(study, scn));
  std::vector<std::string> files{"study.csv", "study_summary.json"};
  if (!one.empty()) {
    const auto dens = kernel_densities({one, two});
    write_file(dir / "density.csv", [&](std::ostream& o) { io::write_density_csv(o, dens, {"one_class", "two_class"}); });
    files.push_back("density.csv");
  }
  write_manifest(dir, "simulate", files);
  std::printf("replicates=%zu ok=%zu one-class AUC %.3f (%.3f) two-class AUC %.3f (%.3f) wins=%zu bic2=%zu recovery=%.3f\n",
              study.rows.size(), study.succeeded, study.one_class.mean, study.one_class.sd, study.two_class.mean,
              study.two_class.sd, study.two_class_wins, study.bic_prefers_two, study.mean_class_recovery_auc);
  return 0;
}

// ---------------------------------------------------------------- report

std::string num(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void report_fit(std::ostream& t, const json& r) {
  t << "== latent-class fit ==\n";
  t << "classes: " << r.at("g").get<std::size_t>() << "  n: " << r.at("n").get<std::size_t>() << '\n';
  const auto& st = r.at("fit_statistics");
  t << "loglik: " << num("%.3f", r.at("loglik").get<double>()) << "  parameters: " << r.at("n_params").get<std::size_t>()
    << '\n';
  t << "AIC: " << num("%.2f", st.at("aic").get<double>()) << "  BIC: " << num("%.2f", st.at("bic").get<double>())
    << "  aBIC: " << num("%.2f", st.at("abic").get<double>()) << '\n';
  t << "converged: " << (r.at("converged").get<bool>() ? "yes" : "no")
    << "  best loglik replicated: " << (r.at("best_replicated").get<bool>() ? "yes" : "no") << '\n';
  for (const auto& cls : r.at("classes")) {
    t << "class " << cls.at("class").get<std::size_t>() << ": pi " << num("%.3f", cls.at("pi_mean").get<double>())
      << ", modal size " << cls.at("modal_size").get<std::size_t>() << " ("
      << num("%.1f", cls.at("modal_percent").get<double>()) << "%)\n";
    for (const auto& [name, b] : cls.at("beta").items())
      t << "  beta[" << name << "] = " << num("%.4f", b.get<double>()) << " (HR " << num("%.3f", std::exp(b.get<double>()))
        << ")\n";
  }
  if (r.contains("roc")) {
    const auto& roc = r.at("roc");
    t << "apparent AUC at t=" << num("%.4g", roc.at("horizon").get<double>()) << ": "
      << num("%.3f", roc.at("auc").get<double>()) << " (" << roc.at("n_cases").get<std::size_t>() << " cases, "
      << roc.at("n_controls").get<std::size_t>() << " controls)\n";
  }
  t << '\n';
}

void report_select(std::ostream& t, const json& s) {
  t << "== class enumeration ==\n";
  t << "g      -2LL    N       AIC       BIC      aBIC  converged  replicated\n";
  for (const auto& r : s.at("rows")) {
    char line[160];
    std::snprintf(line, sizeof line, "%-2zu %9.2f %4zu %9.2f %9.2f %9.2f  %-9s  %s\n", r.at("g").get<std::size_t>(),
                  r.at("neg2ll").get<double>(), r.at("n_params").get<std::size_t>(), r.at("aic").get<double>(),
                  r.at("bic").get<double>(), r.at("abic").get<double>(), r.at("converged").get<bool>() ? "yes" : "no",
                  r.at("best_replicated").get<bool>() ? "yes" : "no");
    t << line;
  }
  const auto& rec = s.at("recommended_g");
  t << "recommended g (minimum BIC): " << (rec.is_null() ? std::string("none") : std::to_string(rec.get<std::size_t>()))
    << "\n\n";
}

void report_validation(std::ostream& t, const json& s) {
  for (const auto& r : s.at("runs")) {
    t << "== validation: " << r.at("method").get<std::string>() << ", g=" << r.at("g").get<std::size_t>() << " ==\n";
    t << "N: " << r.at("replicates").get<std::size_t>() << "  mean AUC " << num("%.3f", r.at("mean").get<double>()) << " ("
      << num("%.3f", r.at("ci_low").get<double>()) << "-" << num("%.3f", r.at("ci_high").get<double>()) << ")"
      << "  horizon " << num("%.4g", r.at("horizon").get<double>()) << (r.at("pooled").get<bool>() ? "  [pooled]" : "")
      << "  failures: " << r.at("failures").size() << "\n\n";
  }
}

void report_simulate(std::ostream& t, const json& s) {
  t << "== simulation study ==\n";
  t << "replicates: " << s.at("replicates").get<std::size_t>() << "  succeeded: " << s.at("succeeded").get<std::size_t>()
    << '\n';
  for (const char* m : {"one_class", "two_class"}) {
    const auto& d = s.at(m);
    t << m << ": mean AUC " << num("%.3f", d.at("mean").get<double>()) << " (SD " << num("%.3f", d.at("sd").get<double>())
      << "), median " << num("%.3f", d.at("median").get<double>()) << " (IQR " << num("%.3f", d.at("q1").get<double>())
      << "-" << num("%.3f", d.at("q3").get<double>()) << ")\n";
  }
  t << "two-class AUC higher: " << s.at("two_class_wins").get<std::size_t>() << '\n';
  t << "BIC prefers two classes: " << s.at("bic_prefers_two").get<std::size_t>() << '\n';
  t << "mean class recovery AUC: " << num("%.3f", s.at("mean_class_recovery_auc").get<double>()) << "\n\n";
}

int cmd_report(const Flags& f, const std::string& positional_dir) {
  std::string dir_s = !positional_dir.empty() ? positional_dir : f.out.value_or(".");
  const fs::path dir(dir_s);
  const std::vector<std::string> commands{"fit", "select", "cv", "bootstrap", "simulate"};
  std::vector<std::pair<std::string, json>> manifests;
  std::vector<std::string> missing;
  for (const auto& cmd : commands) {
    const auto path = dir / ("manifest_" + cmd + ".json");
    if (!fs::exists(path)) continue;
    auto m = io::read_json_file(path.string(), ErrorKind::MissingArtifacts);
    for (const auto& file : m.at("files"))
      if (!fs::exists(dir / file.get<std::string>())) missing.push_back(file.get<std::string>());
    manifests.emplace_back(cmd, std::move(m));
  }
  if (manifests.empty())
    throw Error(ErrorKind::MissingArtifacts, "no run outputs (manifest_*.json) in '" + dir_s + "'");
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw Error(ErrorKind::MissingArtifacts, "missing files: " + list);
  }

  std::ostringstream text;
  text << "lcsurv report (schema_version " << io::kSchemaVersion << ")\n\n";
  std::vector<std::string> plots;
  for (const auto& [cmd, m] : manifests) {
    if (cmd == "fit") {
      const auto r = io::read_json_file((dir / "fit_report.json").string(), ErrorKind::MissingArtifacts);
      report_fit(text, r);
      if (r.contains("roc")) {
        write_file(dir / "plot_roc.csv", [&](std::ostream& o) {
          io::write_schema_line(o);
          o << "model,fpr,tpr\n";
          const std::string name = "g" + std::to_string(r.at("g").get<std::size_t>());
          for (const auto& p : r.at("roc").at("points"))
            o << name << ',' << io::fmt(p.at(0).get<double>()) << ',' << io::fmt(p.at(1).get<double>()) << '\n';
        });
        plots.push_back("plot_roc.csv");
      }
    } else if (cmd == "select") {
      report_select(text, io::read_json_file((dir / "sweep.json").string(), ErrorKind::MissingArtifacts));
    } else if (cmd == "cv" || cmd == "bootstrap") {
      report_validation(text, io::read_json_file((dir / (cmd + "_summary.json")).string(), ErrorKind::MissingArtifacts));
    } else if (cmd == "simulate") {
      const auto s = io::read_json_file((dir / "study_summary.json").string(), ErrorKind::MissingArtifacts);
      report_simulate(text, s);
      std::vector<double> one, two;
      for (const auto& v : s.at("auc_one_class")) one.push_back(v.get<double>());
      for (const auto& v : s.at("auc_two_class")) two.push_back(v.get<double>());
      if (!one.empty()) {
        const auto dens = kernel_densities({one, two});
        write_file(dir / "plot_auc_density.csv",
                   [&](std::ostream& o) { io::write_density_csv(o, dens, {"one_class", "two_class"}); });
        plots.push_back("plot_auc_density.csv");
      }
    }
  }
  if (!plots.empty()) {
    text << "plot data:";
    for (const auto& p : plots) text << ' ' << p;
    text << '\n';
  }
  write_file(dir / "report.txt", [&](std::ostream& o) { o << text.str(); });
  std::cout << text.str();
  return 0;
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON run configuration");
  sub->add_option("--data", f.data, "survival CSV");
  sub->add_option("--x", f.x, "comma-separated survival covariates (default: all other columns)");
  sub->add_option("--z", f.z, "comma-separated class predictors (default: same as --x)");
  sub->add_option("--time", f.time, "time column name");
  sub->add_option("--event", f.event, "event column name");
  sub->add_option("--id", f.id, "id column name");
  sub->add_option("--g", f.g, "number of latent classes");
  sub->add_option("--starts", f.starts, "random EM starts per fit (default 30)");
  sub->add_option("--seed", f.seed, "base seed (fallback: LCSURV_SEED)");
  sub->add_option("--horizon", f.horizon, "AUC evaluation time (default: median follow-up)");
  sub->add_option("--threads", f.threads, "worker threads (default: hardware concurrency)");
  sub->add_option("--out", f.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-class Cox proportional-hazards models"};
  app.require_subcommand(1);
  Flags f;
  std::string report_dir;

  auto* fit = app.add_subcommand("fit", "fit a g-class model and write a report");
  add_common(fit, f);
  auto* select = app.add_subcommand("select", "fit g_min..g_max classes and tabulate AIC/BIC/aBIC");
  add_common(select, f);
  select->add_option("--g-min", f.g_min, "smallest number of classes (default 1)");
  select->add_option("--g-max", f.g_max, "largest number of classes (default 3)");
  auto* cv = app.add_subcommand("cv", "k-fold cross-validated AUC of one-class and g-class models");
  add_common(cv, f);
  cv->add_option("--k", f.k, "number of folds (default 10)");
  auto* boot = app.add_subcommand("bootstrap", "bootstrap AUC of one-class and g-class models");
  add_common(boot, f);
  boot->add_option("--bootstrap", f.bootstrap, "bootstrap replicates (default 30)");
  auto* sim = app.add_subcommand("simulate", "run the simulation study");
  add_common(sim, f);
  sim->add_option("--scenario", f.scenario, "scenario JSON (default: built-in lifecourse scenario)");
  sim->add_option("--replicates", f.replicates, "override the scenario's replicate count");
  sim->add_flag("--write-data", f.write_data, "also write every replicate dataset as CSV");
  auto* report = app.add_subcommand("report", "summarize the outputs found in a run directory");
  report->add_option("dir", report_dir, "run directory (default: --out or .)");
  report->add_option("--out", f.out, "run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const json err{{"error", "InvalidArgument"}, {"category", "config"}, {"exit_code", 2}, {"message", e.what()}};
    std::cerr << err.dump() << '\n';
    return 2;
  }

  try {
    if (*fit) return cmd_fit(f);
    if (*select) return cmd_select(f);
    if (*cv) return run_validation(f, ValidationMethod::KFold);
    if (*boot) return run_validation(f, ValidationMethod::Bootstrap);
    if (*sim) return cmd_simulate(f);
    if (*report) return cmd_report(f, report_dir);
  } catch (const Error& e) {
    const auto j = io::error_json(e);
    std::cerr << j.dump() << '\n';
    return j.at("exit_code").get<int>();
  } catch (const std::exception& e) {
    const json err{{"error", "Internal"}, {"category", "fit"}, {"exit_code", 4}, {"message", e.what()}};
    std::cerr << err.dump() << '\n';
    return 4;
  }
  return 1;
}
