// tdvar command-line driver. Every run writes manifest.json to the output
// directory; failures add error.json and exit with 2 (usage), 3 (invalid
// input) or 4 (solver).

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "tdvar/scenarios.hpp"

#ifndef TDVAR_VERSION
#define TDVAR_VERSION "0.0.0"
#endif
#ifndef TDVAR_DATA_DIR
#define TDVAR_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using namespace tdvar;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kInvalid = 3, kSolver = 4 };

struct Tolerances {
  std::optional<double> cosim_v, cosim_s, dist_pf, trans_pf;
  std::optional<int> oltc_intervals;
};

// All effective parameters of one run. Serialized into the manifest so that
// `replay` can rebuild the run without the original command line.
struct RunConfig {
  std::string command;
  fs::path config_path;
  ScenarioConfig scenario;
  fs::path feeder;  // pf only
  fs::path tcase;   // pf only
  double load = 1.0;
  double solar = 0.0;
  std::optional<double> hour;
  std::string dispatch = "max-support";
  double request_mvar = 0.0;
  double delay = 10.0;
  std::vector<double> levels{0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> curtailments{0.0, 0.4};
  double pv_step = 0.01;
  int threads = 0;
  Tolerances tol;

  Json to_json() const {
    Json t = Json::object();
    if (tol.cosim_v) t["cosim_v_pu"] = *tol.cosim_v;
    if (tol.cosim_s) t["cosim_s_mva"] = *tol.cosim_s;
    if (tol.dist_pf) t["dist_pf_pu"] = *tol.dist_pf;
    if (tol.trans_pf) t["trans_pf_pu"] = *tol.trans_pf;
    if (tol.oltc_intervals) t["oltc_intervals"] = *tol.oltc_intervals;
    Json j = {{"command", command},
              {"scenario", scenario.to_json()},
              {"load", load},
              {"solar", solar},
              {"dispatch", dispatch},
              {"request_mvar", request_mvar},
              {"delay_s", delay},
              {"levels", levels},
              {"curtailments", curtailments},
              {"pv_step", pv_step},
              {"threads", threads},
              {"tolerances", t}};
    if (!config_path.empty()) j["config"] = config_path.string();
    if (!feeder.empty()) j["feeder"] = feeder.string();
    if (!tcase.empty()) j["transmission"] = tcase.string();
    if (hour) j["hour"] = *hour;
    return j;
  }

  static RunConfig from_json(const Json& j) {
    RunConfig r;
    r.command = j.at("command").get<std::string>();
    r.scenario = parse_scenario_config(j.at("scenario"), fs::path());
    if (j.contains("config")) r.config_path = j["config"].get<std::string>();
    if (j.contains("feeder")) r.feeder = j["feeder"].get<std::string>();
    if (j.contains("transmission")) r.tcase = j["transmission"].get<std::string>();
    if (j.contains("hour")) r.hour = j["hour"].get<double>();
    r.load = j.value("load", r.load);
    r.solar = j.value("solar", r.solar);
    r.dispatch = j.value("dispatch", r.dispatch);
    r.request_mvar = j.value("request_mvar", r.request_mvar);
    r.delay = j.value("delay_s", r.delay);
    r.levels = j.value("levels", r.levels);
    r.curtailments = j.value("curtailments", r.curtailments);
    r.pv_step = j.value("pv_step", r.pv_step);
    r.threads = j.value("threads", r.threads);
    if (j.contains("tolerances")) {
      const auto& t = j["tolerances"];
      if (t.contains("cosim_v_pu")) r.tol.cosim_v = t["cosim_v_pu"].get<double>();
      if (t.contains("cosim_s_mva")) r.tol.cosim_s = t["cosim_s_mva"].get<double>();
      if (t.contains("dist_pf_pu")) r.tol.dist_pf = t["dist_pf_pu"].get<double>();
      if (t.contains("trans_pf_pu")) r.tol.trans_pf = t["trans_pf_pu"].get<double>();
      if (t.contains("oltc_intervals")) r.tol.oltc_intervals = t["oltc_intervals"].get<int>();
    }
    return r;
  }
};

// Outputs and the summary printed on stdout.
struct RunResult {
  std::vector<std::string> files;
  Json summary = Json::object();
  std::string text;
};

class Output {
 public:
  explicit Output(fs::path dir) : dir_(std::move(dir)) {}
  const fs::path& dir() const { return dir_; }

  std::ofstream open(const std::string& name, RunResult& r) const {
    fs::create_directories(dir_);
    std::ofstream os(dir_ / name);
    if (!os) throw ValidationError("cannot write " + (dir_ / name).string());
    r.files.push_back(name);
    return os;
  }

 private:
  fs::path dir_;
};

void apply_tolerances(const Tolerances& t, Scenario& s) {
  if (t.cosim_v) s.cosim.tol_v = *t.cosim_v;
  if (t.cosim_s) s.cosim.tol_s = *t.cosim_s;
  if (t.dist_pf) {
    s.cosim.dist.tolerance_pu = *t.dist_pf;
    s.dopf.pf.tolerance_pu = *t.dist_pf;
  }
  if (t.trans_pf) s.cosim.trans.tolerance = *t.trans_pf;
  if (t.oltc_intervals) s.max_oltc_intervals = *t.oltc_intervals;
}

DopfOptions dopf_options(const RunConfig& rc) {
  DopfOptions o;
  if (rc.tol.dist_pf) o.pf.tolerance_pu = *rc.tol.dist_pf;
  return o;
}

std::size_t step_for(const DailyProfile& p, const std::optional<double>& hour) {
  if (!hour) return p.peak_load_step();
  for (std::size_t k = 0; k < p.size(); ++k)
    if (std::abs(p.hours[k] - *hour) < 1e-9) return k;
  throw ValidationError("hour " + std::to_string(*hour) + " is not a profile step");
}

Scenario scenario_for(const RunConfig& rc) {
  Scenario s = build_scenario(rc.scenario);
  apply_tolerances(rc.tol, s);
  return s;
}

// ---------------------------------------------------------------------------

RunResult run_pf(const RunConfig& rc, const Output& out) {
  RunResult r;
  if (!rc.tcase.empty()) {
    const auto tc = load_transmission(rc.tcase);
    TransPfOptions o;
    if (rc.tol.trans_pf) o.tolerance = *rc.tol.trans_pf;
    const auto sol = solve_nr(tc, {}, o);
    auto os = out.open("bus_voltages.csv", r);
    write_bus_csv(os, tc, sol);
    r.summary = summary_json(tc, sol);
    std::ostringstream t;
    t << "transmission power flow converged in " << sol.iterations << " iterations, losses "
      << std::setprecision(5) << sol.loss_mw << " MW";
    r.text = t.str();
  }
  if (!rc.feeder.empty()) {
    const Feeder f = load_feeder(rc.feeder);
    DistPfOptions o;
    if (rc.tol.dist_pf) o.tolerance_pu = *rc.tol.dist_pf;
    const auto inj = operating_injections(f, rc.load, rc.solar, rc.scenario.curtailment);
    const auto sol = solve(f, balanced_voltage(rc.scenario.v0 * f.oltc.ratio()), inj, o);
    auto os = out.open("voltages.csv", r);
    write_voltage_csv(os, f, sol);
    const auto net = substation_net(sol);
    const auto range = voltage_range(f, sol);
    r.summary["feeder"] = summary_json(sol);
    r.summary["feeder"]["vmin_pu"] = range.vmin_pu;
    r.summary["feeder"]["vmax_pu"] = range.vmax_pu;
    std::ostringstream t;
    if (!r.text.empty()) t << r.text << '\n';
    t << f.name << ": P0 " << std::fixed << std::setprecision(1) << net.p_kw << " kW, Q0 " << net.q_kvar
      << " kVAr, V in [" << std::setprecision(4) << range.vmin_pu << ", " << range.vmax_pu << "] pu after "
      << sol.iterations << " sweeps";
    r.text = t.str();
  }
  if (rc.feeder.empty() && rc.tcase.empty()) throw ValidationError("pf needs --feeder and/or --case");
  return r;
}

RunResult run_dopf(const RunConfig& rc, const Output& out) {
  RunResult r;
  const Feeder f = build_feeder(rc.scenario);
  const auto profile = load_profile(rc.scenario.profiles);
  validate(profile);
  const auto k = step_for(profile, rc.hour);
  const OperatingPoint op{profile.load[k], profile.solar[k], rc.scenario.curtailment, rc.scenario.v0};
  const auto opt = dopf_options(rc);
  const auto no = no_support_dispatch(f, op, opt);
  const auto d = max_var_support(f, op, opt);
  {
    auto os = out.open("dispatch.csv", r);
    write_dispatch_csv(os, f, profile.hours[k], d);
  }
  {
    // Exact voltages under the accepted dispatch.
    const auto sol = solve_with(f, op, d.tap, &d.q_kvar, opt.pf);
    auto os = out.open("voltages.csv", r);
    write_voltage_csv(os, f, sol);
  }
  r.summary = dispatch_json(f, d);
  r.summary["hour"] = profile.hours[k];
  r.summary["q_no_support_kvar"] = no.achieved_q0_kvar;
  {
    auto os = out.open("dispatch.json", r);
    os << r.summary.dump(2) << '\n';
  }
  std::ostringstream t;
  t << std::fixed << std::setprecision(1) << "hour " << profile.hours[k] << ": Q0 no support " << no.achieved_q0_kvar
    << " kVAr, max support " << d.achieved_q0_kvar << " kVAr (predicted " << d.predicted_q0_kvar << "), tap "
    << d.tap << ", V in [" << std::setprecision(4) << d.vmin_pu << ", " << d.vmax_pu << "] pu";
  r.text = t.str();
  return r;
}

RunResult run_support_curve(const RunConfig& rc, const Output& out) {
  RunResult r;
  ScenarioConfig sized = rc.scenario;
  sized.penetration = 1.0;
  const Feeder f = build_feeder(sized);
  const auto profile = load_profile(rc.scenario.profiles);
  validate(profile);
  SupportCurveOptions o;
  o.penetration = rc.scenario.penetration;
  if (rc.scenario.curtailment > 0.0) o.curtailment = rc.scenario.curtailment;
  o.v0 = rc.scenario.v0;
  o.dopf = dopf_options(rc);
  o.threads = rc.threads;
  const auto curve = support_curve(f, profile, o);
  {
    auto os = out.open("support_curve.csv", r);
    write_curve_csv(os, curve);
  }
  {
    auto os = out.open("dispatch.csv", r);
    const Feeder scaled = scale_penetration(f, o.penetration);
    for (std::size_t k = 0; k < curve.dispatch.size(); ++k)
      write_dispatch_csv(os, scaled, curve.points[k].t, curve.dispatch[k], k == 0);
  }
  const auto stats = reduction_stats(curve, false);
  r.summary = {{"penetration", o.penetration},
               {"avg_reduction_pct", stats.average_pct},
               {"peak_reduction_pct", stats.peak_pct},
               {"excluded_hours", stats.excluded_hours}};
  std::ostringstream t;
  t << std::fixed << std::setprecision(2) << "penetration " << o.penetration << ": average reduction "
    << stats.average_pct << "%, solar-peak reduction " << stats.peak_pct << "%";
  if (o.curtailment) {
    const auto cs = reduction_stats(curve, true);
    r.summary["curtailment"] = *o.curtailment;
    r.summary["curtailed_peak_reduction_pct"] = cs.peak_pct;
    t << ", curtailed solar-peak reduction " << cs.peak_pct << "%";
  }
  r.text = t.str();
  return r;
}

RunResult run_timeseries_cmd(const RunConfig& rc, const Output& out) {
  RunResult r;
  Scenario s = scenario_for(rc);
  const auto recs = run_timeseries(s);
  {
    auto os = out.open("bus_timeseries.csv", r);
    write_bus_timeseries_csv(os, s.tcase, recs);
  }
  {
    auto os = out.open("feeder_timeseries.csv", r);
    write_feeder_timeseries_csv(os, s.feeder.name, recs);
  }
  {
    auto os = out.open("oltc.csv", r);
    os << "t,v_primary_pu,v_secondary_pu,v_setpoint_pu,tap,taps_moved,rounds\n" << std::setprecision(10);
    for (const auto& x : recs)
      os << x.t << ',' << x.v_primary_pu << ',' << x.v_secondary_pu << ',' << x.v_setpoint_pu << ',' << x.tap << ','
         << x.taps_moved << ',' << x.rounds << '\n';
  }
  const auto bi = *s.tcase.bus_index(s.boundary_bus);
  double vmin = 1e9, vmax = 0.0, fmin = 1e9, fmax = 0.0;
  for (const auto& x : recs) {
    vmin = std::min(vmin, x.bus_vm[bi]);
    vmax = std::max(vmax, x.bus_vm[bi]);
    fmin = std::min(fmin, x.vmin_pu);
    fmax = std::max(fmax, x.vmax_pu);
  }
  r.summary = {{"steps", recs.size()},
               {"boundary_vm_min", vmin},
               {"boundary_vm_max", vmax},
               {"feeder_vmin", fmin},
               {"feeder_vmax", fmax}};
  std::ostringstream t;
  t << std::fixed << std::setprecision(4) << recs.size() << " steps, bus " << s.boundary_bus << " V in [" << vmin
    << ", " << vmax << "] pu, feeder V in [" << fmin << ", " << fmax << "] pu";
  r.text = t.str();
  return r;
}

RunResult run_contingency_cmd(const RunConfig& rc, const Output& out) {
  RunResult r;
  Scenario s = scenario_for(rc);
  ContingencyScript script;
  script.mode = parse_dispatch_mode(rc.dispatch);
  script.request_mvar = rc.request_mvar;
  script.delay = rc.delay;
  const auto res = run_contingency(script, s);
  {
    auto os = out.open("contingency.csv", r);
    write_contingency_csv(os, s.tcase, res);
  }
  const auto bi = *s.tcase.bus_index(s.boundary_bus);
  const auto& pre = res.timeline[res.event_index - (res.event_index > 0 ? 1 : 0)];
  const auto& dip = res.timeline[res.event_index];
  const auto& end = res.timeline.back();
  r.summary = {{"hour", res.hour},
               {"pre_vm", pre.bus_vm[bi]},
               {"post_outage_vm", dip.bus_vm[bi]},
               {"final_vm", end.bus_vm[bi]},
               {"final_tap", end.tap},
               {"final_feeder_vmin", end.vmin_pu},
               {"final_feeder_vmax", end.vmax_pu}};
  std::ostringstream t;
  t << std::fixed << std::setprecision(4) << "bus " << s.boundary_bus << ": " << pre.bus_vm[bi] << " pu before, "
    << dip.bus_vm[bi] << " pu after the outage, " << end.bus_vm[bi] << " pu at the end (tap " << end.tap << ")";
  r.text = t.str();
  return r;
}

RunResult run_pv(const RunConfig& rc, const Output& out) {
  RunResult r;
  Scenario s = scenario_for(rc);
  PvOptions o;
  o.step = rc.pv_step;
  std::vector<DispatchMode> modes;
  if (rc.dispatch == "both") modes = {DispatchMode::None, DispatchMode::MaxSupport};
  else modes = {parse_dispatch_mode(rc.dispatch)};
  std::vector<PvTrace> traces;
  std::ostringstream t;
  for (auto m : modes) {
    traces.push_back(trace_pv(s, m, o));
    r.summary["lambda_max"][to_string(m)] = traces.back().lambda_max;
    r.summary["base_mw"] = traces.back().base_mw;
    if (!t.str().empty()) t << '\n';
    t << "lambda_max (" << to_string(m) << ") = " << std::fixed << std::setprecision(4) << traces.back().lambda_max;
  }
  auto os = out.open("pv_curve.csv", r);
  write_pv_csv(os, traces);
  r.text = t.str();
  return r;
}

RunResult run_sweep(const RunConfig& rc, const Output& out) {
  RunResult r;
  const auto profile = load_profile(rc.scenario.profiles);
  validate(profile);
  const auto cells = sweep_penetration(rc.levels, rc.curtailments, rc.scenario, profile, dopf_options(rc));
  {
    auto os = out.open("table1.csv", r);
    write_table1_csv(os, cells);
  }
  std::ostringstream t;
  t << std::fixed << std::setprecision(2) << "level  curtailment  average%  peak%";
  r.summary["cells"] = Json::array();
  for (const auto& c : cells) {
    t << '\n'
      << std::setw(5) << c.level << "  " << std::setw(11) << c.curtailment << "  " << std::setw(8)
      << c.stats.average_pct << "  " << std::setw(6) << c.stats.peak_pct;
    r.summary["cells"].push_back({{"level", c.level},
                                  {"curtailment", c.curtailment},
                                  {"avg_reduction_pct", c.stats.average_pct},
                                  {"peak_reduction_pct", c.stats.peak_pct}});
  }
  r.text = t.str();
  return r;
}

RunResult dispatch_run(const RunConfig& rc, const Output& out) {
  if (rc.command == "pf") return run_pf(rc, out);
  if (rc.command == "dopf") return run_dopf(rc, out);
  if (rc.command == "support-curve") return run_support_curve(rc, out);
  if (rc.command == "timeseries") return run_timeseries_cmd(rc, out);
  if (rc.command == "contingency") return run_contingency_cmd(rc, out);
  if (rc.command == "pv-curve") return run_pv(rc, out);
  if (rc.command == "sweep") return run_sweep(rc, out);
  throw ValidationError("unknown command '" + rc.command + "'");
}

Json scenario_details(const RunConfig& rc) {
  if (rc.command == "pf") return nullptr;
  try {
    if (rc.command == "timeseries" || rc.command == "contingency" || rc.command == "pv-curve")
      return scenario_manifest(scenario_for(rc));
  } catch (const Error&) {
  }
  return nullptr;
}

void write_json(const fs::path& p, const Json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p);
  os << j.dump(2) << '\n';
}

int execute(const RunConfig& rc, const fs::path& out_dir, bool json_out) {
  const Output out(out_dir);
  Json manifest = {{"tool", "tdvar"}, {"version", TDVAR_VERSION}, {"run", rc.to_json()}};
  int code = kOk;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    RunResult r = dispatch_run(rc, out);
    manifest["outputs"] = r.files;
    manifest["summary"] = r.summary;
    if (json_out) std::cout << r.summary.dump(2) << '\n';
    else std::cout << r.text << '\n';
  } catch (const Error& e) {
    const bool solver = dynamic_cast<const SolverError*>(&e) != nullptr;
    code = solver ? kSolver : kInvalid;
    Json err = {{"error", solver ? "solver" : (dynamic_cast<const ParseError*>(&e) ? "parse" : "validation")},
                {"message", e.what()},
                {"exit_code", code}};
    if (auto* se = dynamic_cast<const SolverError*>(&e)) {
      err["iterations"] = se->iterations();
      err["last_mismatch"] = se->last_mismatch();
    }
    write_json(out_dir / "error.json", err);
    manifest["error"] = err;
    std::cerr << "error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    // Filesystem and JSON library failures come from bad input.
    code = kInvalid;
    Json err = {{"error", "validation"}, {"message", e.what()}, {"exit_code", code}};
    write_json(out_dir / "error.json", err);
    manifest["error"] = err;
    std::cerr << "error: " << e.what() << '\n';
  }
  manifest["elapsed_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (code == kOk) {
    const Json details = scenario_details(rc);
    if (!details.is_null()) manifest["scenario"] = details;
  }
  write_json(out_dir / "manifest.json", manifest);
  return code;
}

fs::path default_out_dir() {
  if (const char* env = std::getenv("TDVAR_OUT_DIR"); env && *env) return env;
  return "tdvar_out";
}

fs::path absolute_if_set(const fs::path& p) { return p.empty() ? p : fs::absolute(p); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"T-D co-simulation of DER var support"};
  app.require_subcommand(1);
  app.set_version_flag("--version", TDVAR_VERSION);

  std::string config_path = std::string(TDVAR_DATA_DIR) + "/scenario.json";
  std::string out_dir;
  bool json_out = false;
  std::optional<double> penetration, curtailment, v0, load, solar, hour, request, delay, pv_step;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> dispatch;
  std::string feeder, tcase, manifest_path;
  std::vector<double> levels, curtailments;
  int threads = 0;
  double tol_v = 0, tol_s = 0, tol_dist = 0, tol_trans = 0;

  auto common = [&](CLI::App* sub, bool scenario) {
    sub->add_option("--out", out_dir, "Output directory (default $TDVAR_OUT_DIR or ./tdvar_out)");
    sub->add_flag("--json", json_out, "Print a machine-readable summary");
    if (!scenario) return;
    sub->add_option("--config", config_path, "Scenario config")->capture_default_str();
    sub->add_option("--penetration", penetration, "DER penetration level")->check(CLI::Range(0.0, 1.5));
    sub->add_option("--curtailment", curtailment, "Solar curtailment fraction")->check(CLI::Range(0.0, 0.999));
    sub->add_option("--seed", seed, "DER placement seed");
    sub->add_option("--v0", v0, "Primary voltage for standalone feeder runs, pu")->check(CLI::Range(0.5, 1.5));
    sub->add_option("--tol-cosim-v", tol_v, "Boundary voltage tolerance, pu")->check(CLI::PositiveNumber);
    sub->add_option("--tol-cosim-s", tol_s, "Boundary power tolerance, MVA")->check(CLI::PositiveNumber);
    sub->add_option("--tol-dist", tol_dist, "Sweep tolerance, pu")->check(CLI::PositiveNumber);
    sub->add_option("--tol-trans", tol_trans, "Newton mismatch tolerance, pu")->check(CLI::PositiveNumber);
  };

  auto* pf = app.add_subcommand("pf", "Exact power flow of a feeder and/or a transmission case");
  pf->add_option("--feeder", feeder, "Feeder JSON")->check(CLI::ExistingFile);
  pf->add_option("--case", tcase, "Transmission case JSON")->check(CLI::ExistingFile);
  pf->add_option("--v0", v0, "Primary voltage, pu")->check(CLI::Range(0.5, 1.5));
  pf->add_option("--load", load, "Load multiplier")->check(CLI::NonNegativeNumber);
  pf->add_option("--solar", solar, "Solar profile value")->check(CLI::Range(0.0, 1.0));
  pf->add_option("--curtailment", curtailment, "Solar curtailment fraction")->check(CLI::Range(0.0, 0.999));
  pf->add_option("--tol-dist", tol_dist, "Sweep tolerance, pu")->check(CLI::PositiveNumber);
  pf->add_option("--tol-trans", tol_trans, "Newton mismatch tolerance, pu")->check(CLI::PositiveNumber);
  common(pf, false);

  auto* dopf = app.add_subcommand("dopf", "Maximum var support dispatch at one hour");
  common(dopf, true);
  dopf->add_option("--hour", hour, "Profile hour (default: peak load)");

  auto* curve = app.add_subcommand("support-curve", "Daily maximum var support curve");
  common(curve, true);
  curve->add_option("--threads", threads, "Worker threads (0: all cores)")->check(CLI::NonNegativeNumber);

  auto* ts = app.add_subcommand("timeseries", "Hourly T-D co-simulation over the profile");
  common(ts, true);
  ts->add_option("--dispatch", dispatch, "none | max-support | fixed-request");
  ts->add_option("--request", request, "Requested var reduction, MVAr (fixed-request)");

  auto* cont = app.add_subcommand("contingency", "Line 5-6 outage timeline at peak load");
  common(cont, true);
  cont->add_option("--dispatch", dispatch, "none | max-support | fixed-request");
  cont->add_option("--request", request, "Requested var reduction, MVAr (fixed-request)");
  cont->add_option("--delay", delay, "Actuation delay, s")->check(CLI::NonNegativeNumber);

  auto* pv = app.add_subcommand("pv-curve", "Lambda-V load margin trace at the boundary bus");
  common(pv, true);
  pv->add_option("--dispatch", dispatch, "none | max-support | both");
  pv->add_option("--step", pv_step, "Lambda step")->check(CLI::PositiveNumber);

  auto* sweep = app.add_subcommand("sweep", "Penetration and curtailment sweep (reduction table)");
  common(sweep, true);
  sweep->add_option("--levels", levels, "Penetration levels")->delimiter(',');
  sweep->add_option("--curtailments", curtailments, "Curtailment fractions")->delimiter(',');

  auto* replay = app.add_subcommand("replay", "Re-run from a manifest.json");
  replay->add_option("manifest", manifest_path, "Manifest of an earlier run")->required()->check(CLI::ExistingFile);
  common(replay, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc == 0) return 0;  // --help, --version
    const fs::path out = out_dir.empty() ? default_out_dir() : fs::path(out_dir);
    Json err = {{"error", "usage"}, {"message", e.what()}, {"exit_code", kUsage}};
    write_json(out / "error.json", err);
    write_json(out / "manifest.json", {{"tool", "tdvar"}, {"version", TDVAR_VERSION}, {"error", err}});
    return kUsage;
  }

  const fs::path out = out_dir.empty() ? default_out_dir() : fs::path(out_dir);
  CLI::App* sub = app.get_subcommands().front();
  RunConfig rc;
  try {
    if (sub == replay) {
      const Json m = read_json(manifest_path);
      rc = RunConfig::from_json(m.at("run"));
    } else {
      rc.command = sub->get_name();
      if (sub != pf) {
        rc.config_path = fs::absolute(config_path);
        rc.scenario = load_scenario_config(rc.config_path);
        rc.scenario.transmission = fs::absolute(rc.scenario.transmission);
        rc.scenario.feeder = fs::absolute(rc.scenario.feeder);
        rc.scenario.profiles = fs::absolute(rc.scenario.profiles);
      }
      rc.feeder = absolute_if_set(feeder);
      rc.tcase = absolute_if_set(tcase);
      if (penetration) rc.scenario.penetration = *penetration;
      if (curtailment) rc.scenario.curtailment = *curtailment;
      if (seed) rc.scenario.der.seed = *seed;
      if (v0) rc.scenario.v0 = *v0;
      if (load) rc.load = *load;
      if (solar) rc.solar = *solar;
      rc.hour = hour;
      if (dispatch) {
        rc.dispatch = *dispatch;
        if (*dispatch != "both") rc.scenario.mode = parse_dispatch_mode(*dispatch);
      } else {
        rc.dispatch = sub == pv ? "both" : to_string(rc.scenario.mode);
      }
      if (request) rc.request_mvar = rc.scenario.request_mvar = *request;
      else rc.request_mvar = rc.scenario.request_mvar;
      if (delay) rc.delay = *delay;
      if (pv_step) rc.pv_step = *pv_step;
      if (!levels.empty()) rc.levels = levels;
      if (!curtailments.empty()) rc.curtailments = curtailments;
      rc.threads = threads;
      if (tol_v > 0) rc.tol.cosim_v = tol_v;
      if (tol_s > 0) rc.tol.cosim_s = tol_s;
      if (tol_dist > 0) rc.tol.dist_pf = tol_dist;
      if (tol_trans > 0) rc.tol.trans_pf = tol_trans;
    }
  } catch (const std::exception& e) {
    // Bad config or manifest: the run never started, but still leave a trace.
    const bool parse = dynamic_cast<const ParseError*>(&e) != nullptr;
    Json err = {{"error", parse ? "parse" : "validation"}, {"message", e.what()}, {"exit_code", kInvalid}};
    write_json(out / "error.json", err);
    write_json(out / "manifest.json", {{"tool", "tdvar"}, {"version", TDVAR_VERSION},
                                       {"command", sub->get_name()}, {"error", err}});
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  }
  return execute(rc, out, json_out);
}
