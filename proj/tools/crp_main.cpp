// crp: staged pipeline driver.
//
//   synth     generate a synthetic world with a truth ledger
//   ingest    validate the input file set and snapshot the world
//   clusters  chain case events into workplace clusters and weekly series
//   smooth    fit the spatial case-rate smoother over residential tests
//   exposure  build the commuter exposure covariate frame
//   fit       run the tiered risk-factor models
//   report    render the descriptive and effect tables
//
// Every stage works inside one run directory, verifies the manifests of the
// stages it builds on, and leaves its own manifest behind. Analysis stages are
// deterministic; only synth draws random numbers, behind an explicit --seed.
//
// Exit codes: 0 ok; 2 invalid inputs or configuration (diagnostics on
// stderr); 3 stale or missing upstream outputs (rerun the stage or pass
// --force); 4 model non-convergence under --strict; 1 unexpected failure.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crp/clusters.hpp"
#include "crp/errors.hpp"
#include "crp/flows.hpp"
#include "crp/gam.hpp"
#include "crp/manifest.hpp"
#include "crp/parallel.hpp"
#include "crp/render.hpp"
#include "crp/study.hpp"
#include "crp/synthgen.hpp"
#include "crp/taxonomy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::string out_dir = ".";
  int threads = crp::default_threads();
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool strict = false;
  bool force = false;
  bool quiet = false;
  std::string format = "csv";

  fs::path dir() const { return fs::path(out_dir); }

  void say(const std::string& line) const {
    if (!quiet) std::cout << line << '\n';
  }
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw crp::Error(crp::ErrorKind::MissingFile, path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw crp::Error(crp::ErrorKind::InvalidConfig, path + ": " + e.what());
  }
}

// Section accessors consume keys as they parse so a typo in the config is an
// error, not a silently ignored setting.
class Section {
 public:
  Section(const json& cfg, const std::string& name) : name_(name) {
    if (cfg.contains(name)) {
      if (!cfg.at(name).is_object())
        throw crp::Error(crp::ErrorKind::InvalidConfig, "config section '" + name +
                                                            "' must be an object");
      obj_ = cfg.at(name);
    }
  }

  template <typename T>
  T take(const char* key, T fallback) {
    if (!obj_.contains(key)) return fallback;
    try {
      T v = obj_.at(key).get<T>();
      obj_.erase(key);
      return v;
    } catch (const json::exception& e) {
      throw crp::Error(crp::ErrorKind::InvalidConfig,
                       "config " + name_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }

  json take_raw(const char* key) {
    json v = obj_.at(key);
    obj_.erase(key);
    return v;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items())
      throw crp::Error(crp::ErrorKind::InvalidConfig,
                       "unknown key '" + key + "' in config section '" + name_ + "'");
  }

 private:
  std::string name_;
  json obj_ = json::object();
};

std::vector<crp::Sector> parse_sectors(const json& arr, const std::string& where) {
  std::vector<crp::Sector> out;
  for (const auto& name : arr) {
    const std::string n = name.get<std::string>();
    const auto s = crp::parse_sector(n);
    if (!s) throw crp::Error(crp::ErrorKind::InvalidConfig, where + ": unknown industry '" + n + "'");
    out.push_back(*s);
  }
  return out;
}

crp::GenSpec parse_gen_spec(const json& cfg) {
  Section s(cfg, "synth");
  crp::GenSpec spec;
  spec.n_msoas = s.take("n_msoas", spec.n_msoas);
  spec.workzones_per_msoa = s.take("workzones_per_msoa", spec.workzones_per_msoa);
  if (s.has("industries")) spec.industries = parse_sectors(s.take_raw("industries"), "synth.industries");
  spec.n_weeks = s.take("n_weeks", spec.n_weeks);
  spec.seed = s.take("seed", spec.seed);
  spec.workplaces_per_pair = s.take("workplaces_per_pair", spec.workplaces_per_pair);
  spec.workplace_jitter = s.take("workplace_jitter", spec.workplace_jitter);
  spec.unlinked_share = s.take("unlinked_share", spec.unlinked_share);
  spec.population_lo = s.take("population_lo", spec.population_lo);
  spec.population_hi = s.take("population_hi", spec.population_hi);
  spec.employees_lo = s.take("employees_lo", spec.employees_lo);
  spec.employees_hi = s.take("employees_hi", spec.employees_hi);
  spec.flow_decay = s.take("flow_decay", spec.flow_decay);
  spec.base_log_rate = s.take("base_log_rate", spec.base_log_rate);
  spec.slopes = s.take("slopes", spec.slopes);
  spec.theta = s.take("theta", spec.theta);
  spec.noise_rate = s.take("noise_rate", spec.noise_rate);
  spec.spatial_tilt = s.take("spatial_tilt", spec.spatial_tilt);
  spec.rate_center = s.take("rate_center", spec.rate_center);
  spec.rate_spatial_sd = s.take("rate_spatial_sd", spec.rate_spatial_sd);
  s.finish();
  return spec;
}

crp::SmoothOptions parse_smooth_options(const json& cfg, const Options& o) {
  Section s(cfg, "smooth");
  crp::SmoothOptions opt;
  opt.spec.k = s.take("k", opt.spec.k);
  opt.spec.lambda_time = s.take("lambda_time", opt.spec.lambda_time);
  opt.spec.lambda_mrf = s.take("lambda_mrf", opt.spec.lambda_mrf);
  opt.spec.lambda_dow = s.take("lambda_dow", opt.spec.lambda_dow);
  opt.spec.max_iter = s.take("max_iter", opt.spec.max_iter);
  opt.spec.tol = s.take("tol", opt.spec.tol);
  opt.spec.max_batch = s.take("max_batch", opt.spec.max_batch);
  opt.select = s.take("select", opt.select);
  opt.grid = s.take("penalty_grid", opt.grid);
  s.finish();
  opt.threads = o.threads;
  opt.strict = o.strict;
  opt.spec.validate();
  return opt;
}

crp::StudyConfig parse_study_config(const json& cfg) {
  Section s(cfg, "study");
  crp::StudyConfig c;
  c.periods = s.take("periods", c.periods);
  c.vaccination_periods = s.take("vaccination_periods", c.vaccination_periods);
  if (s.has("industries")) c.industries = parse_sectors(s.take_raw("industries"), "study.industries");
  if (s.has("proximity_permanence_industries"))
    c.proximity_permanence_industries = parse_sectors(
        s.take_raw("proximity_permanence_industries"), "study.proximity_permanence_industries");
  c.risk_factor_ids = s.take("risk_factors", c.risk_factor_ids);
  c.education_exclusion = s.take("education_exclusion", c.education_exclusion);
  c.ci_z = s.take("ci_z", c.ci_z);
  s.finish();
  return c;
}

// The world file set: what synth writes and ingest reads. periods.csv is an
// optional override of the built-in study periods.
crp::WorldPaths world_paths(const fs::path& dir) {
  crp::WorldPaths p;
  p.msoas = (dir / "msoas.csv").string();
  p.workzones = (dir / "workzones.csv").string();
  p.workplaces = (dir / "workplaces.csv").string();
  p.sic = (dir / "sic.csv").string();
  p.adjacency = (dir / "adjacency.csv").string();
  if (fs::exists(dir / "periods.csv")) p.periods = (dir / "periods.csv").string();
  return p;
}

void add_world_inputs(crp::RunManifest& m, const fs::path& dir) {
  for (const char* name : {"msoas.csv", "workzones.csv", "sic.csv", "workplaces.csv",
                           "adjacency.csv"})
    m.add_input(dir, name);
  if (fs::exists(dir / "periods.csv")) m.add_input(dir, "periods.csv");
}

crp::RunManifest start_manifest(const std::string& stage, const Options& o) {
  crp::RunManifest m;
  m.stage = stage;
  if (!o.config_path.empty()) m.config_digest = crp::digest_file(o.config_path);
  return m;
}

// ---------------------------------------------------------------------------
// stages

int run_synth(const Options& o) {
  crp::Stopwatch timer;
  crp::GenSpec spec = parse_gen_spec(load_config(o.config_path));
  if (o.seed_set) spec.seed = o.seed;
  fs::create_directories(o.dir());
  crp::RunManifest m = start_manifest("synth", o);
  const crp::GenResult gen = crp::generate(spec, o.out_dir);

  for (const std::string* path :
       {&gen.paths.msoas, &gen.paths.workzones, &gen.paths.sic, &gen.paths.workplaces,
        &gen.paths.adjacency, &gen.paths.periods, &gen.paths.flows, &gen.paths.industry_mix,
        &gen.paths.residential_profiles, &gen.paths.vaccination, &gen.paths.residential_weekly,
        &gen.paths.tests, &gen.paths.rates_true, &gen.paths.events, &gen.paths.ledger})
    m.add_output(o.dir(), fs::path(*path).filename().string());
  if (gen.ledger.n_truncated > 0)
    m.warnings.push_back(std::to_string(gen.ledger.n_truncated) +
                         " planted clusters truncated: no quiet workplace available");
  m.elapsed_seconds = timer.seconds();
  crp::save_manifest(m, o.dir());

  o.say("synth: " + std::to_string(spec.n_msoas) + " MSOAs, " +
        std::to_string(spec.industries.size()) + " industries, " + std::to_string(spec.n_weeks) +
        " weeks, seed " + std::to_string(spec.seed));
  o.say("synth: " + std::to_string(gen.ledger.n_clusters) + " clusters planted, " +
        std::to_string(gen.ledger.n_events) + " events written to " + o.out_dir);
  return 0;
}

int run_ingest(const Options& o) {
  crp::Stopwatch timer;
  crp::RunManifest m = start_manifest("ingest", o);
  const crp::World w = crp::load_world(world_paths(o.dir()));
  add_world_inputs(m, o.dir());

  long n_workplaces = 0;
  for (const auto& per_sector : w.workplaces_by_msoa_sector)
    for (long n : per_sector) n_workplaces += n;
  std::vector<std::string> industries;
  for (crp::Sector s : crp::all_sectors()) {
    long n = 0;
    for (const auto& per_sector : w.workplaces_by_msoa_sector) n += per_sector[static_cast<int>(s)];
    if (n > 0) industries.push_back(crp::to_string(s));
  }

  nlohmann::ordered_json snap;
  snap["n_msoas"] = w.msoas.size();
  snap["n_workzones"] = w.workzones.size();
  snap["n_uprns"] = w.ingest.n_uprns_total;
  snap["n_uprns_unlinked"] = w.ingest.n_uprns_unlinked;
  snap["n_workplaces_linked"] = n_workplaces;
  snap["n_weeks"] = w.n_weeks();
  snap["industries_present"] = industries;
  snap["periods"] = nlohmann::ordered_json::array();
  for (const crp::StudyPeriod* p : {&w.periods.overall, &w.periods.delta, &w.periods.omicron})
    snap["periods"].push_back({{"name", p->name},
                               {"first", crp::to_iso(p->range.first)},
                               {"last", crp::to_iso(p->range.last)}});
  crp::detail::write_json_atomic((o.dir() / "world.json").string(), snap);
  m.add_output(o.dir(), "world.json");

  if (w.ingest.n_uprns_unlinked > 0)
    m.warnings.push_back(std::to_string(w.ingest.n_uprns_unlinked) + " of " +
                         std::to_string(w.ingest.n_uprns_total) +
                         " UPRNs carry no industry link; their clusters will be counted and dropped");
  m.elapsed_seconds = timer.seconds();
  crp::save_manifest(m, o.dir());

  o.say("ingest: " + std::to_string(w.msoas.size()) + " MSOAs, " +
        std::to_string(w.workzones.size()) + " workzones, " +
        std::to_string(w.ingest.n_uprns_total) + " UPRNs, " + std::to_string(n_workplaces) +
        " linked workplaces");
  for (const std::string& warning : m.warnings) o.say("ingest: warning: " + warning);
  return 0;
}

int run_clusters(const Options& o) {
  crp::Stopwatch timer;
  crp::RunManifest m = start_manifest("clusters", o);
  crp::require_stage("ingest", o.dir(), o.force, &m.warnings);

  const crp::World w = crp::load_world(world_paths(o.dir()));
  add_world_inputs(m, o.dir());
  const auto events = crp::load_events((o.dir() / "events.csv").string(), w);
  m.add_input(o.dir(), "events.csv");

  const auto clusters = crp::detect_clusters(events, w, o.threads);
  const crp::ClusterSeries series = crp::weekly_series(clusters, w, w.periods.overall);
  crp::write_clusters_csv((o.dir() / "clusters.csv").string(), clusters, w);
  crp::write_cluster_series_csv((o.dir() / "cluster_series.csv").string(), series, w);
  m.add_output(o.dir(), "clusters.csv");
  m.add_output(o.dir(), "cluster_series.csv");

  if (series.n_unlinked_clusters > 0)
    m.warnings.push_back(std::to_string(series.n_unlinked_clusters) +
                         " clusters at unlinked UPRNs counted and dropped from the series");
  m.elapsed_seconds = timer.seconds();
  crp::save_manifest(m, o.dir());

  o.say("clusters: " + std::to_string(events.size()) + " events -> " +
        std::to_string(clusters.size()) + " clusters over " + std::to_string(series.n_weeks) +
        " weeks");
  for (const std::string& warning : m.warnings) o.say("clusters: warning: " + warning);
  return 0;
}

int run_smooth(const Options& o) {
  crp::Stopwatch timer;
  crp::RunManifest m = start_manifest("smooth", o);
  crp::require_stage("ingest", o.dir(), o.force, &m.warnings);

  const crp::World w = crp::load_world(world_paths(o.dir()));
  add_world_inputs(m, o.dir());
  const auto counts = crp::load_tests((o.dir() / "tests.csv").string(), w);
  m.add_input(o.dir(), "tests.csv");

  const crp::SmoothOptions opt = parse_smooth_options(load_config(o.config_path), o);
  const crp::SmoothResult r = crp::smooth_rates(counts, w, opt);
  crp::write_smoothed_rates_csv((o.dir() / "smoothed_rates.csv").string(), r.rates, w);
  crp::write_gam_diagnostics_csv((o.dir() / "gam_diagnostics.csv").string(), r.diagnostics);
  m.add_output(o.dir(), "smoothed_rates.csv");
  m.add_output(o.dir(), "gam_diagnostics.csv");

  int n_unconverged = 0;
  for (const auto& d : r.diagnostics) n_unconverged += d.converged ? 0 : 1;
  if (n_unconverged > 0)
    m.warnings.push_back(std::to_string(n_unconverged) + " of " +
                         std::to_string(r.diagnostics.size()) + " smoothing batches not converged");
  if (r.n_isolated > 0)
    m.warnings.push_back(std::to_string(r.n_isolated) +
                         " MSOAs have no neighbours; smoothed alone");
  m.elapsed_seconds = timer.seconds();
  crp::save_manifest(m, o.dir());

  o.say("smooth: " + std::to_string(counts.size()) + " test counts -> " +
        std::to_string(r.rates.size()) + " smoothed rate cells in " +
        std::to_string(r.diagnostics.size()) + " batches");
  for (const std::string& warning : m.warnings) o.say("smooth: warning: " + warning);
  return 0;
}

int run_exposure(const Options& o) {
  crp::Stopwatch timer;
  crp::RunManifest m = start_manifest("exposure", o);
  crp::require_stage("ingest", o.dir(), o.force, &m.warnings);
  crp::require_stage("clusters", o.dir(), o.force, &m.warnings);
  crp::require_stage("smooth", o.dir(), o.force, &m.warnings);

  const crp::World w = crp::load_world(world_paths(o.dir()));
  add_world_inputs(m, o.dir());
  const crp::FlowNetwork flows = crp::load_flows((o.dir() / "flows.csv").string(), w);
  const crp::MixTable mix = crp::load_industry_mix((o.dir() / "industry_mix.csv").string(), w);
  const auto profiles =
      crp::load_residential_profiles((o.dir() / "residential_profiles.csv").string(), w);
  const Eigen::MatrixXd vax2 = crp::load_vaccination((o.dir() / "vaccination.csv").string(), w);
  const crp::ResidentialWeekly residential =
      crp::load_residential_weekly((o.dir() / "residential_weekly.csv").string(), w);
  const crp::ClusterSeries series =
      crp::read_cluster_series_csv((o.dir() / "cluster_series.csv").string(), w, w.periods.overall);
  const Eigen::MatrixXd lambda = crp::rates_to_matrix(
      crp::read_smoothed_rates_csv((o.dir() / "smoothed_rates.csv").string(), w), w);
  for (const char* name : {"flows.csv", "industry_mix.csv", "residential_profiles.csv",
                           "vaccination.csv", "residential_weekly.csv", "cluster_series.csv",
                           "smoothed_rates.csv"})
    m.add_input(o.dir(), name);

  crp::ExposureInputs in;
  in.flows = &flows;
  in.mix = &mix;
  in.profiles = &profiles;
  in.lambda = &lambda;
  in.vax2 = &vax2;
  in.residential = &residential;
  in.series = &series;
  const crp::CovariateFrame frame = crp::build_covariates(w, in, {});
  crp::write_covariates_csv((o.dir() / "covariates.csv").string(), frame, w);
  m.add_output(o.dir(), "covariates.csv");

  for (const std::string& note : frame.report.notes) m.warnings.push_back(note);
  m.elapsed_seconds = timer.seconds();
  crp::save_manifest(m, o.dir());

  o.say("exposure: " + std::to_string(frame.rows.size()) + " covariate rows over weeks " +
        std::to_string(frame.first_week) + ".." + std::to_string(frame.n_weeks - 1));
  for (const std::string& warning : m.warnings) o.say("exposure: warning: " + warning);
  return 0;
}

int run_fit(const Options& o) {
  crp::Stopwatch timer;
  crp::RunManifest m = start_manifest("fit", o);
  crp::require_stage("exposure", o.dir(), o.force, &m.warnings);

  const crp::World w = crp::load_world(world_paths(o.dir()));
  add_world_inputs(m, o.dir());
  const crp::CovariateFrame frame =
      crp::read_covariates_csv((o.dir() / "covariates.csv").string(), w);
  const crp::ClusterSeries series =
      crp::read_cluster_series_csv((o.dir() / "cluster_series.csv").string(), w, w.periods.overall);
  m.add_input(o.dir(), "covariates.csv");
  m.add_input(o.dir(), "cluster_series.csv");

  const crp::StudyConfig cfg = parse_study_config(load_config(o.config_path));
  const crp::StudyResult res = crp::run_study(cfg, w, frame, series);
  crp::write_fits_csv((o.dir() / "fits.csv").string(), res);
  crp::write_study_cells_json((o.dir() / "study_cells.json").string(), res);
  m.add_output(o.dir(), "fits.csv");
  m.add_output(o.dir(), "study_cells.json");

  std::size_t n_fitted = 0, n_failed = 0, n_unconverged = 0;
  for (const crp::FitCell& c : res.cells) {
    n_fitted += c.status == crp::CellStatus::Fitted;
    n_failed += c.status == crp::CellStatus::Failed;
    if (c.status == crp::CellStatus::Failed &&
        c.note.find(crp::to_string(crp::ErrorKind::NonConvergence)) != std::string::npos)
      ++n_unconverged;
  }
  if (n_failed > 0)
    m.warnings.push_back(std::to_string(n_failed) + " of " + std::to_string(res.cells.size()) +
                         " model cells failed to fit");
  m.elapsed_seconds = timer.seconds();
  crp::save_manifest(m, o.dir());

  o.say("fit: " + std::to_string(n_fitted) + " fitted, " + std::to_string(n_failed) +
        " failed of " + std::to_string(res.cells.size()) + " cells");
  for (const std::string& warning : m.warnings) o.say("fit: warning: " + warning);
  if (o.strict && n_unconverged > 0) {
    std::cerr << "error: " << n_unconverged << " model cells did not converge (--strict)\n";
    return 4;
  }
  return 0;
}

int run_report(const Options& o) {
  crp::Stopwatch timer;
  crp::RunManifest m = start_manifest("report", o);
  crp::require_stage("fit", o.dir(), o.force, &m.warnings);

  const crp::World w = crp::load_world(world_paths(o.dir()));
  add_world_inputs(m, o.dir());
  const crp::CovariateFrame frame =
      crp::read_covariates_csv((o.dir() / "covariates.csv").string(), w);
  const crp::ClusterSeries series =
      crp::read_cluster_series_csv((o.dir() / "cluster_series.csv").string(), w, w.periods.overall);
  const crp::StudyResult res = crp::read_study_cells_json((o.dir() / "study_cells.json").string());
  for (const char* name : {"covariates.csv", "cluster_series.csv", "study_cells.json"})
    m.add_input(o.dir(), name);

  const crp::Table2 t2 = crp::descriptives(w, frame, series, res.config);

  crp::render_table2_csv((o.dir() / "table2.csv").string(), t2);
  crp::render_results_csv((o.dir() / "table3.csv").string(), res,
                          crp::AdjustmentTier::FullyAdjusted);
  crp::render_results_csv((o.dir() / "tableS1.csv").string(), res, crp::AdjustmentTier::Unadjusted);
  crp::render_results_csv((o.dir() / "tableS2.csv").string(), res, crp::AdjustmentTier::Minimal);
  for (const char* name : {"table2.csv", "table3.csv", "tableS1.csv", "tableS2.csv"})
    m.add_output(o.dir(), name);

  if (o.format == "md") {
    crp::render_table2_md((o.dir() / "table2.md").string(), t2);
    crp::render_results_md((o.dir() / "table3.md").string(), res,
                           crp::AdjustmentTier::FullyAdjusted);
    crp::render_results_md((o.dir() / "tableS1.md").string(), res,
                           crp::AdjustmentTier::Unadjusted);
    crp::render_results_md((o.dir() / "tableS2.md").string(), res, crp::AdjustmentTier::Minimal);
    for (const char* name : {"table2.md", "table3.md", "tableS1.md", "tableS2.md"})
      m.add_output(o.dir(), name);
  }

  m.elapsed_seconds = timer.seconds();
  crp::save_manifest(m, o.dir());

  o.say("report: " + std::to_string(res.config.industries.size()) + " industries, " +
        std::to_string(res.cells.size()) + " cells -> table2, table3, tableS1, tableS2" +
        (o.format == "md" ? " (csv + md)" : ""));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"workplace infection cluster risk pipeline"};
  app.require_subcommand(1);

  Options o;
  const char* env_out = std::getenv("CRP_OUT");
  if (env_out != nullptr && *env_out != '\0') o.out_dir = env_out;

  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON config file");
    sub->add_option("--out", o.out_dir, "run directory (default: $CRP_OUT or .)");
    sub->add_option("--threads", o.threads, "worker threads (default: all cores)")
        ->check(CLI::PositiveNumber);
    sub->add_flag("--strict", o.strict, "escalate model non-convergence to exit code 4");
    sub->add_flag("--force", o.force, "proceed past stale upstream outputs");
    sub->add_flag("--quiet", o.quiet, "suppress progress output");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic world with a truth ledger");
  add_common(synth);
  synth->add_option("--seed", o.seed, "RNG seed (overrides config)")
      ->each([&o](const std::string&) { o.seed_set = true; });

  CLI::App* ingest =
      app.add_subcommand("ingest", "validate the input file set and snapshot the world");
  CLI::App* clusters =
      app.add_subcommand("clusters", "chain case events into clusters and weekly series");
  CLI::App* smooth = app.add_subcommand("smooth", "smooth residential case rates over space");
  CLI::App* exposure = app.add_subcommand("exposure", "build the commuter exposure covariates");
  CLI::App* fit = app.add_subcommand("fit", "run the tiered risk-factor models");
  CLI::App* report = app.add_subcommand("report", "render the descriptive and effect tables");
  for (CLI::App* sub : {ingest, clusters, smooth, exposure, fit, report}) add_common(sub);
  report->add_option("--format", o.format, "table output format")
      ->check(CLI::IsMember({"csv", "md"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return run_synth(o);
    if (ingest->parsed()) return run_ingest(o);
    if (clusters->parsed()) return run_clusters(o);
    if (smooth->parsed()) return run_smooth(o);
    if (exposure->parsed()) return run_exposure(o);
    if (fit->parsed()) return run_fit(o);
    if (report->parsed()) return run_report(o);
  } catch (const crp::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (e.kind() == crp::ErrorKind::StaleInput) return 3;
    if (e.kind() == crp::ErrorKind::NonConvergence && o.strict) return 4;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
