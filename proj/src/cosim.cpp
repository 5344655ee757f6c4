#include "tdvar/cosim.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

namespace tdvar {

BoundaryState converge_boundary(const TransmissionCase& tc, int bus, const std::vector<FeederGroup>& groups,
                                const CosimOptions& opt, const BoundaryState* warm) {
  const auto bi = tc.bus_index(bus);
  if (!bi) throw ValidationError("boundary bus " + std::to_string(bus) + " does not exist");
  for (const auto& g : groups)
    if (!g.feeder || g.count < 1) throw ValidationError("feeder group needs a feeder and count >= 1");

  BoundaryState st;
  st.bus = bus;
  if (warm) {
    st.vm = warm->vm;
    st.va = warm->va;
    st.trans = warm->trans;
  }
  auto solve_feeders = [&](double vm, double va, int round, double& p_mw, double& q_mvar) {
    std::vector<DistPfSolution> out;
    p_mw = q_mvar = 0.0;
    for (const auto& g : groups) {
      try {
        out.push_back(solve(*g.feeder, balanced_voltage(vm * g.feeder->oltc.ratio_at(g.tap), va), g.injections,
                            opt.dist));
      } catch (const SolverError& e) {
        throw SolverError("feeder '" + g.feeder->name + "' failed in boundary round " + std::to_string(round) + ": " +
                              e.what(),
                          e.iterations(), e.last_mismatch());
      }
      const auto net = substation_net(out.back());
      p_mw += g.count * net.p_kw / 1000.0;
      q_mvar += g.count * net.q_kvar / 1000.0;
    }
    return out;
  };

  double p = 0.0, q = 0.0;
  st.feeders = solve_feeders(st.vm, st.va, 0, p, q);
  const TransPfSolution* seed = warm ? &warm->trans : nullptr;
  for (int round = 1; round <= opt.max_rounds; ++round) {
    TransPfSolution ts;
    try {
      ts = solve_nr(tc, {{bus, p, q}}, opt.trans, seed);
    } catch (const SolverError& e) {
      throw SolverError("transmission failed in boundary round " + std::to_string(round) + ": " + e.what(),
                        e.iterations(), e.last_mismatch());
    }
    st.trans = ts;
    seed = &st.trans;
    st.p_mw = p;
    st.q_mvar = q;
    st.rounds = round;
    const double vm = ts.vm[*bi], va = ts.va[*bi];
    const double dv = std::abs(vm - st.vm);
    st.dv_history.push_back(dv);
    double p_new, q_new;
    auto sols = solve_feeders(vm, va, round, p_new, q_new);
    const bool done = dv <= opt.tol_v && std::abs(p_new - p) <= opt.tol_s && std::abs(q_new - q) <= opt.tol_s;
    if (done) {
      // The transmission side carries exactly (p, q); the feeders stay at the
      // voltage they were solved at, which is within tol_v of the final one.
      return st;
    }
    st.vm = vm;
    st.va = va;
    st.feeders = std::move(sols);
    p = p_new;
    q = q_new;
  }
  throw SolverError("boundary iteration did not converge in " + std::to_string(opt.max_rounds) + " rounds",
                    opt.max_rounds, st.dv_history.empty() ? 0.0 : st.dv_history.back());
}

int oltc_step(const Oltc& oltc, double measured_y, double setpoint_y) {
  if (!(measured_y > 0.0) || !(setpoint_y > 0.0)) throw std::invalid_argument("oltc_step needs positive voltages");
  const double err = std::sqrt(setpoint_y) - std::sqrt(measured_y);
  if (std::abs(err) <= 0.5 * oltc.bandwidth + 1e-12) return oltc.clamp(oltc.tap);
  return oltc.clamp(oltc.tap + (err > 0.0 ? 1 : -1));
}

DispatchMode parse_dispatch_mode(const std::string& s) {
  if (s == "none") return DispatchMode::None;
  if (s == "max-support") return DispatchMode::MaxSupport;
  if (s == "fixed-request") return DispatchMode::FixedRequest;
  throw ValidationError("unknown dispatch mode '" + s + "' (expected none, max-support or fixed-request)");
}

std::string to_string(DispatchMode m) {
  switch (m) {
    case DispatchMode::None: return "none";
    case DispatchMode::MaxSupport: return "max-support";
    case DispatchMode::FixedRequest: return "fixed-request";
  }
  return "none";
}

Injections group_injections(const Scenario& s, const OperatingPoint& op, const VarSetpoints* q) {
  return operating_injections(s.feeder, op.load, op.solar, op.curtailment, q);
}

AppliedDispatch plan_dispatch(const Scenario& s, const OperatingPoint& op, DispatchMode mode, double request_mvar,
                              int tap, const AppliedDispatch* current) {
  Feeder f = s.feeder;
  f.oltc.tap = tap;
  AppliedDispatch out;
  out.v0_used = op.v0;
  out.q_kvar.assign(f.ders.size(), {0.0, 0.0, 0.0});
  if (mode == DispatchMode::None) {
    const auto d = no_support_dispatch(f, op, s.dopf);
    out.y0_set = d.y0;
    out.q_no_kvar = out.q_max_kvar = d.achieved_q0_kvar;
    return out;
  }
  const auto dmax = max_var_support(f, op, s.dopf);
  out.q_max_kvar = dmax.achieved_q0_kvar;
  if (mode == DispatchMode::MaxSupport) {
    out.q_kvar = dmax.q_kvar;
    out.y0_set = dmax.y0;
    return out;
  }
  AppliedDispatch from;
  if (current) {
    from = *current;
  } else {
    const auto d = no_support_dispatch(f, op, s.dopf);
    from.q_kvar = out.q_kvar;
    from.y0_set = d.y0;
    from.q_no_kvar = d.achieved_q0_kvar;
  }
  if (!current) out.q_no_kvar = from.q_no_kvar;
  else out.q_no_kvar = substation_net(solve_with(f, op, tap, &from.q_kvar, s.dopf.pf)).q_kvar;
  const double range = out.q_no_kvar - out.q_max_kvar;
  const double want = request_mvar * 1000.0 / s.count;
  const double alpha = range > 0.0 ? std::clamp(want / range, 0.0, 1.0) : 0.0;
  for (std::size_t d = 0; d < f.ders.size(); ++d)
    for (int p = 0; p < 3; ++p)
      out.q_kvar[d][p] = (1.0 - alpha) * from.q_kvar[d][p] + alpha * dmax.q_kvar[d][p];
  out.y0_set = alpha == 0.0 ? from.y0_set : (1.0 - alpha) * from.y0_set + alpha * dmax.y0;
  return out;
}

SettledState settle(const Scenario& s, const OperatingPoint& op, const AppliedDispatch& d, int tap,
                    int max_intervals, const BoundaryState* warm) {
  SettledState out;
  out.tap = tap;
  const Injections inj = group_injections(s, op, &d.q_kvar);
  std::vector<FeederGroup> groups{{&s.feeder, s.count, inj, tap}};
  out.boundary = converge_boundary(s.tcase, s.boundary_bus, groups, s.cosim, warm);
  Oltc oltc = s.feeder.oltc;
  for (int k = 0; k < max_intervals; ++k) {
    oltc.tap = out.tap;
    const double sec = out.boundary.vm * oltc.ratio();
    const int next = oltc_step(oltc, sec * sec, d.y0_set);
    if (next == out.tap) break;
    out.tap = next;
    ++out.taps_moved;
    groups[0].tap = next;
    const BoundaryState prev = out.boundary;
    out.boundary = converge_boundary(s.tcase, s.boundary_bus, groups, s.cosim, &prev);
  }
  return out;
}

namespace {

[[noreturn]] void rethrow_at(const std::exception& e, double t, const std::string& stage) {
  const std::string msg = "timestep t=" + std::to_string(t) + ", " + stage + ": " + e.what();
  if (auto se = dynamic_cast<const SolverError*>(&e)) throw SolverError(msg, se->iterations(), se->last_mismatch());
  if (dynamic_cast<const ValidationError*>(&e)) throw ValidationError(msg);
  throw Error(msg);
}

}  // namespace

std::vector<TimeseriesRecord> run_timeseries(const Scenario& s) {
  validate(s.profile);
  std::vector<TimeseriesRecord> out;
  int tap = s.feeder.oltc.tap;
  std::optional<BoundaryState> last;

  // Boundary voltage before any control, used by the first D-OPF.
  double v0 = 1.0;
  if (s.profile.size()) {
    const OperatingPoint op{s.profile.load[0], s.profile.solar[0], s.curtailment, 1.0};
    try {
      AppliedDispatch none;
      none.q_kvar.assign(s.feeder.ders.size(), {0.0, 0.0, 0.0});
      const auto st = converge_boundary(s.tcase, s.boundary_bus,
                                        {{&s.feeder, s.count, group_injections(s, op, &none.q_kvar), tap}}, s.cosim);
      v0 = st.vm;
      last = st;
    } catch (const std::exception& e) {
      rethrow_at(e, s.profile.hours[0], "initial boundary solve");
    }
  }

  for (std::size_t i = 0; i < s.profile.size(); ++i) {
    const double t = s.profile.hours[i];
    OperatingPoint op{s.profile.load[i], s.profile.solar[i], s.curtailment, v0};
    TimeseriesRecord rec;
    rec.t = t;
    SettledState st;
    AppliedDispatch disp;
    for (int pass = 0; pass < std::max(1, s.dopf_passes); ++pass) {
      try {
        disp = plan_dispatch(s, op, s.mode, s.request_mvar, tap);
      } catch (const std::exception& e) {
        rethrow_at(e, t, "D-OPF");
      }
      try {
        st = settle(s, op, disp, tap, s.max_oltc_intervals, last ? &*last : nullptr);
      } catch (const std::exception& e) {
        rethrow_at(e, t, "co-simulation");
      }
      const auto bad = voltage_violations(s.feeder, st.boundary.feeders[0], s.dopf.v_lo * s.dopf.v_lo,
                                          s.dopf.v_hi * s.dopf.v_hi);
      const bool moved = std::abs(st.boundary.vm - op.v0) > 0.25 * s.feeder.oltc.step;
      if (bad.empty() && !moved) break;
      op.v0 = st.boundary.vm;
      if (pass + 1 < s.dopf_passes) rec.events.push_back("dopf-rerun");
    }
    rec.taps_moved = st.taps_moved;
    tap = st.tap;
    last = st.boundary;
    v0 = st.boundary.vm;

    rec.bus_vm = st.boundary.trans.vm;
    rec.p0_mw = st.boundary.p_mw;
    rec.q0_mvar = st.boundary.q_mvar;
    rec.tap = tap;
    const auto range = voltage_range(s.feeder, st.boundary.feeders[0]);
    rec.vmin_pu = range.vmin_pu;
    rec.vmax_pu = range.vmax_pu;
    rec.rounds = st.boundary.rounds;
    rec.v_primary_pu = st.boundary.vm;
    rec.v_secondary_pu = st.boundary.feeders[0].vmag_pu(0, 0);
    rec.v_setpoint_pu = std::sqrt(disp.y0_set);
    out.push_back(std::move(rec));
  }
  return out;
}

void write_bus_timeseries_csv(std::ostream& os, const TransmissionCase& tc, const std::vector<TimeseriesRecord>& rs) {
  os << "t,bus,vm_pu\n" << std::setprecision(10);
  for (const auto& r : rs)
    for (std::size_t b = 0; b < tc.buses.size(); ++b) os << r.t << ',' << tc.buses[b].id << ',' << r.bus_vm[b] << '\n';
}

void write_feeder_timeseries_csv(std::ostream& os, const std::string& feeder, const std::vector<TimeseriesRecord>& rs) {
  os << "t,feeder,p0_mw,q0_mvar,tap,vmin_pu,vmax_pu\n" << std::setprecision(10);
  for (const auto& r : rs)
    os << r.t << ',' << feeder << ',' << r.p0_mw << ',' << r.q0_mvar << ',' << r.tap << ',' << r.vmin_pu << ','
       << r.vmax_pu << '\n';
}

Json scenario_manifest(const Scenario& s) {
  return {{"boundary_bus", s.boundary_bus},
          {"feeder", s.feeder.name},
          {"replicas", s.count},
          {"ders", s.feeder.ders.size()},
          {"peak_load_kw", s.feeder.peak_load_kw()},
          {"peak_generation_kw", s.feeder.peak_generation_kw()},
          {"curtailment", s.curtailment},
          {"dispatch", to_string(s.mode)},
          {"request_mvar", s.request_mvar},
          {"seed", s.seed},
          {"cosim",
           {{"tol_v_pu", s.cosim.tol_v},
            {"tol_s_mva", s.cosim.tol_s},
            {"max_rounds", s.cosim.max_rounds},
            {"angle_exchanged", true}}},
          {"trans_pf",
           {{"tolerance_pu", s.cosim.trans.tolerance},
            {"max_iterations", s.cosim.trans.max_iterations},
            {"q_limits", s.cosim.trans.enforce_q_limits}}},
          {"dist_pf",
           {{"tolerance_pu", s.cosim.dist.tolerance_pu},
            {"max_iterations", s.cosim.dist.max_iterations},
            {"collapse_pu", s.cosim.dist.collapse_pu}}},
          {"dopf",
           {{"v_lo", s.dopf.v_lo},
            {"v_hi", s.dopf.v_hi},
            {"calibration_passes", s.dopf.calibration_passes},
            {"regularization", s.dopf.regularization},
            {"qp_max_iterations", s.dopf.qp.max_iterations}}},
          {"oltc",
           {{"step", s.feeder.oltc.step},
            {"bandwidth", s.feeder.oltc.bandwidth},
            {"tap_min", s.feeder.oltc.tap_min},
            {"tap_max", s.feeder.oltc.tap_max},
            {"max_intervals_per_step", s.max_oltc_intervals}}},
          {"dopf_passes", s.dopf_passes}};
}

}  // namespace tdvar
