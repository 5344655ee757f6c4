#include "tdvar/scenarios.hpp"

#include <cmath>
#include <iomanip>
#include <map>

namespace tdvar {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

}  // namespace

ScenarioConfig parse_scenario_config(const Json& doc, const fs::path& base) {
  if (!doc.is_object()) throw ParseError("scenario config must be a JSON object");
  ScenarioConfig c;
  try {
    c.transmission = resolve(base, doc.at("transmission").get<std::string>());
    c.feeder = resolve(base, doc.at("feeder").get<std::string>());
    c.profiles = resolve(base, doc.at("profiles").get<std::string>());
    c.boundary_bus = doc.value("boundary_bus", c.boundary_bus);
    c.load_scale = doc.value("load_scale", c.load_scale);
    c.scale_capacitors = doc.value("scale_capacitors", c.scale_capacitors);
    c.replaced_mw = doc.value("replaced_mw", c.replaced_mw);
    if (doc.contains("count") && !(doc["count"].is_string() && doc["count"] == "auto"))
      c.count = doc["count"].get<int>();
    c.coupling_tolerance = doc.value("coupling_tolerance", c.coupling_tolerance);
    if (doc.contains("der")) {
      const auto& d = doc["der"];
      c.der.seed = d.value("seed", c.der.seed);
      c.der.site_probability = d.value("site_probability", c.der.site_probability);
      c.der.min_weight = d.value("min_weight", c.der.min_weight);
      c.der.max_weight = d.value("max_weight", c.der.max_weight);
      c.der.oversize = d.value("oversize", c.der.oversize);
    }
    c.penetration = doc.value("penetration", c.penetration);
    c.curtailment = doc.value("curtailment", c.curtailment);
    c.v0 = doc.value("v0", c.v0);
    if (doc.contains("dispatch")) c.mode = parse_dispatch_mode(doc["dispatch"].get<std::string>());
    c.request_mvar = doc.value("request_mvar", c.request_mvar);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scenario config: ") + e.what());
  }
  if (c.load_scale <= 0.0) throw ValidationError("load_scale must be positive");
  if (c.penetration < 0.0 || c.penetration > 1.5) throw ValidationError("penetration must lie in [0, 1.5]");
  if (c.curtailment < 0.0 || c.curtailment >= 1.0) throw ValidationError("curtailment must lie in [0, 1)");
  if (c.der.oversize < 1.0) throw ValidationError("DER oversize must be >= 1");
  if (c.count && *c.count < 1) throw ValidationError("replication count must be >= 1");
  return c;
}

ScenarioConfig load_scenario_config(const fs::path& path) {
  return parse_scenario_config(read_json(path), path.parent_path());
}

Json ScenarioConfig::to_json() const {
  Json j = {{"transmission", transmission.string()},
            {"feeder", feeder.string()},
            {"profiles", profiles.string()},
            {"boundary_bus", boundary_bus},
            {"load_scale", load_scale},
            {"scale_capacitors", scale_capacitors},
            {"replaced_mw", replaced_mw},
            {"coupling_tolerance", coupling_tolerance},
            {"der",
             {{"seed", der.seed},
              {"site_probability", der.site_probability},
              {"min_weight", der.min_weight},
              {"max_weight", der.max_weight},
              {"oversize", der.oversize}}},
            {"penetration", penetration},
            {"curtailment", curtailment},
            {"v0", v0},
            {"dispatch", to_string(mode)},
            {"request_mvar", request_mvar}};
  if (count) j["count"] = *count;
  else j["count"] = "auto";
  return j;
}

Feeder build_feeder(const ScenarioConfig& c) {
  Feeder f = scale_loads(load_feeder(c.feeder), c.load_scale, c.scale_capacitors);
  f = place_ders(f, c.der);
  return scale_penetration(f, c.penetration);
}

Scenario build_scenario(const ScenarioConfig& c) {
  Scenario s;
  s.tcase = load_transmission(c.transmission);
  s.boundary_bus = c.boundary_bus;
  if (!s.tcase.bus_index(c.boundary_bus))
    throw ValidationError("boundary bus " + std::to_string(c.boundary_bus) + " is not in the transmission case");
  s.feeder = build_feeder(c);
  s.count = c.count ? *c.count : replication_for(s.feeder, c.replaced_mw);
  Coupling cp{c.boundary_bus, {{s.feeder.name, s.count}}, s.feeder.kv_ll};
  validate(cp, {{s.feeder.name, s.feeder}}, c.replaced_mw, c.coupling_tolerance);
  s.profile = load_profile(c.profiles);
  validate(s.profile);
  s.curtailment = c.curtailment;
  s.mode = c.mode;
  s.request_mvar = c.request_mvar;
  s.seed = c.der.seed;
  return s;
}

// ---------------------------------------------------------------------------

void ContingencyScript::check() const {
  if (!(t_event < t_request)) throw ValidationError("contingency: t_event must precede t_request");
  if (delay < 0.0) throw ValidationError("contingency: delay must be >= 0");
  if (t_request + delay > duration) throw ValidationError("contingency: support lands after the end of the timeline");
}

namespace {

OperatingPoint peak_point(const Scenario& s, double v0) {
  const auto k = s.profile.peak_load_step();
  return {s.profile.load[k], s.profile.solar[k], s.curtailment, v0};
}

// Steady state at an operating point: boundary at q = 0, then the mode's
// dispatch with the OLTC allowed to settle.
struct Steady {
  OperatingPoint op;
  AppliedDispatch dispatch;
  SettledState state;
};

Steady steady_state(const Scenario& s, DispatchMode mode, int max_intervals) {
  Steady out;
  out.op = peak_point(s, 1.0);
  const auto inj = group_injections(s, out.op, nullptr);
  const auto first = converge_boundary(s.tcase, s.boundary_bus, {{&s.feeder, s.count, inj, s.feeder.oltc.tap}},
                                       s.cosim);
  out.op.v0 = first.vm;
  out.dispatch = plan_dispatch(s, out.op, mode, s.request_mvar, s.feeder.oltc.tap);
  out.state = settle(s, out.op, out.dispatch, s.feeder.oltc.tap, max_intervals, &first);
  if (std::abs(out.state.boundary.vm - out.op.v0) > 0.25 * s.feeder.oltc.step) {
    out.op.v0 = out.state.boundary.vm;
    out.dispatch = plan_dispatch(s, out.op, mode, s.request_mvar, out.state.tap);
    out.state = settle(s, out.op, out.dispatch, out.state.tap, max_intervals, &out.state.boundary);
  }
  return out;
}

}  // namespace

ContingencyResult run_contingency(const ContingencyScript& script, const Scenario& scenario) {
  script.check();
  Scenario s = scenario;
  ContingencyResult res;
  res.hour = s.profile.hours[s.profile.peak_load_step()];

  Steady pre = steady_state(s, DispatchMode::None, s.max_oltc_intervals);
  OperatingPoint op = pre.op;
  AppliedDispatch applied = pre.dispatch;
  int tap = pre.state.tap;
  BoundaryState last = pre.state.boundary;
  const double t_support = script.t_request + script.delay;
  const int ticks = static_cast<int>(std::floor(script.duration + 1e-9));

  for (int k = 0; k <= ticks; ++k) {
    const double t = k;
    ContingencyRecord rec;
    rec.t = t;
    if (std::abs(t - script.t_event) < 0.5) {
      s.tcase = apply_outage(s.tcase, script.from, script.to);
      rec.events.push_back("outage " + std::to_string(script.from) + "-" + std::to_string(script.to));
      res.event_index = static_cast<std::size_t>(k);
    }
    if (std::abs(t - script.t_request) < 0.5) rec.events.push_back("request");
    if (std::abs(t - t_support) < 0.5) {
      if (script.mode != DispatchMode::None) {
        op.v0 = last.vm;
        applied = plan_dispatch(s, op, script.mode, script.request_mvar, tap, &applied);
      }
      if (script.mode != DispatchMode::None) rec.events.push_back("support applied");
      res.support_index = static_cast<std::size_t>(k);
    }
    try {
      last = converge_boundary(s.tcase, s.boundary_bus,
                               {{&s.feeder, s.count, group_injections(s, op, &applied.q_kvar), tap}}, s.cosim, &last);
    } catch (const SolverError& e) {
      if (t >= script.t_event - 0.5)
        throw SolverError("post-outage collapse at t=" + std::to_string(t) + " s: " + e.what(), e.iterations(),
                          e.last_mismatch());
      throw;
    }
    rec.bus_vm = last.trans.vm;
    rec.q0_mvar = last.q_mvar;
    rec.tap = tap;
    const auto range = voltage_range(s.feeder, last.feeders[0]);
    rec.vmin_pu = range.vmin_pu;
    rec.vmax_pu = range.vmax_pu;
    res.timeline.push_back(std::move(rec));

    // One OLTC evaluation per tick; takes effect on the next tick.
    Oltc oltc = s.feeder.oltc;
    oltc.tap = tap;
    const double sec = last.vm * oltc.ratio();
    tap = oltc_step(oltc, sec * sec, applied.y0_set);
  }
  return res;
}

// ---------------------------------------------------------------------------

PvTrace trace_pv(const Scenario& s, DispatchMode mode, const PvOptions& opt) {
  if (!(opt.step > 0.0)) throw ValidationError("pv step must be positive");
  PvTrace tr;
  tr.mode = mode;
  Steady base = steady_state(s, mode, s.max_oltc_intervals);
  const int tap = base.state.tap;
  double load_kw = 0.0;
  for (const auto& n : s.feeder.nodes)
    for (const auto& d : n.load.demand_kva) load_kw += d.real();
  tr.base_mw = s.count * load_kw * base.op.load / 1000.0;

  BoundaryState last = base.state.boundary;
  tr.points.push_back({0.0, last.vm, true, false});
  double lambda = 0.0, h = opt.step;
  const double h_min = opt.step / std::pow(2.0, opt.halvings);
  const auto bi = *s.tcase.bus_index(s.boundary_bus);
  while (lambda + h <= opt.lambda_cap + 1e-12) {
    const double next = lambda + h;
    OperatingPoint op = base.op;
    op.load = base.op.load * (1.0 + opt.increment_mw * next / tr.base_mw);
    try {
      last = converge_boundary(s.tcase, s.boundary_bus,
                               {{&s.feeder, s.count, group_injections(s, op, &base.dispatch.q_kvar), tap}}, s.cosim,
                               &last);
      lambda = next;
      tr.points.push_back({lambda, last.trans.vm[bi], true, false});
    } catch (const SolverError&) {
      h *= 0.5;
      if (h < h_min * (1.0 - 1e-9)) break;
    }
  }
  tr.points.back().terminal = true;
  tr.lambda_max = lambda;
  return tr;
}

PvTrace trace_pv_static(const TransmissionCase& tc, int bus, double p_mw, double q_mvar, const PvOptions& opt) {
  PvTrace tr;
  tr.base_mw = p_mw;
  const auto bi = tc.bus_index(bus);
  if (!bi) throw ValidationError("bus " + std::to_string(bus) + " does not exist");
  TransPfSolution last = solve_nr(tc, {{bus, p_mw, q_mvar}});
  tr.points.push_back({0.0, last.vm[*bi], true, false});
  double lambda = 0.0, h = opt.step;
  const double h_min = opt.step / std::pow(2.0, opt.halvings);
  while (lambda + h <= opt.lambda_cap + 1e-12) {
    const double next = lambda + h;
    const double p = p_mw + opt.increment_mw * next;
    try {
      last = solve_nr(tc, {{bus, p, q_mvar * p / p_mw}}, {}, &last);
      lambda = next;
      tr.points.push_back({lambda, last.vm[*bi], true, false});
    } catch (const SolverError&) {
      h *= 0.5;
      if (h < h_min * (1.0 - 1e-9)) break;
    }
  }
  tr.points.back().terminal = true;
  tr.lambda_max = lambda;
  return tr;
}

// ---------------------------------------------------------------------------

std::vector<SweepCell> sweep_penetration(const std::vector<double>& levels, const std::vector<double>& curtailments,
                                         const ScenarioConfig& config, const DailyProfile& profile,
                                         const DopfOptions& dopf) {
  for (double l : levels)
    if (l < 0.0 || l > 1.5) throw ValidationError("sweep level " + std::to_string(l) + " outside [0, 1.5]");
  for (double c : curtailments)
    if (c < 0.0 || c >= 1.0) throw ValidationError("sweep curtailment " + std::to_string(c) + " outside [0, 1)");
  ScenarioConfig sized = config;
  sized.penetration = 1.0;  // relative sizes only; each cell rescales
  const Feeder f = build_feeder(sized);
  std::vector<SweepCell> cells;
  for (double level : levels)
    for (double c : curtailments) {
      SweepCell cell;
      cell.level = level;
      cell.curtailment = c;
      SupportCurveOptions o;
      o.penetration = level;
      if (c > 0.0) o.curtailment = c;
      o.v0 = config.v0;
      o.dopf = dopf;
      try {
        cell.curve = support_curve(f, profile, o);
      } catch (const SolverError& e) {
        throw SolverError("sweep cell level=" + std::to_string(level) + " c=" + std::to_string(c) + ": " + e.what(),
                          e.iterations(), e.last_mismatch());
      }
      cell.stats = reduction_stats(cell.curve, c > 0.0);
      cells.push_back(std::move(cell));
    }
  return cells;
}

void write_table1_csv(std::ostream& os, const std::vector<SweepCell>& cells) {
  os << "level,curtailment,avg_reduction_pct,peak_reduction_pct\n" << std::setprecision(8);
  for (const auto& c : cells)
    os << c.level << ',' << c.curtailment << ',' << c.stats.average_pct << ',' << c.stats.peak_pct << '\n';
}

void write_pv_csv(std::ostream& os, const std::vector<PvTrace>& traces) {
  os << "lambda,vm_pu,dispatch_mode\n" << std::setprecision(10);
  for (const auto& tr : traces)
    for (const auto& p : tr.points) os << p.lambda << ',' << p.vm << ',' << to_string(tr.mode) << '\n';
}

void write_contingency_csv(std::ostream& os, const TransmissionCase& tc, const ContingencyResult& r) {
  os << "t_s,bus,vm_pu,q0_mvar,tap\n" << std::setprecision(10);
  for (const auto& rec : r.timeline)
    for (std::size_t b = 0; b < tc.buses.size(); ++b)
      os << rec.t << ',' << tc.buses[b].id << ',' << rec.bus_vm[b] << ',' << rec.q0_mvar << ',' << rec.tap << '\n';
}

}  // namespace tdvar
