#include <doctest.h>

#include <chrono>
#include <cmath>

#include "support.hpp"

using namespace tdvar;

namespace {

Scenario bundled_scenario(double penetration = 0.8, DispatchMode mode = DispatchMode::MaxSupport) {
  auto cfg = load_scenario_config(testing::data("scenario.json"));
  cfg.penetration = penetration;
  cfg.mode = mode;
  return build_scenario(cfg);
}

OperatingPoint peak_op(const Scenario& s, double v0) {
  const auto i = s.profile.peak_load_step();
  return {s.profile.load[i], s.profile.solar[i], s.curtailment, v0};
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("OLTC control step") {
  Oltc o;
  SUBCASE("inside the deadband") { CHECK(oltc_step(o, 1.0, 1.005 * 1.005) == 0); }
  SUBCASE("one tap per interval toward the set-point") {
    const double set = 1.02 * 1.02;
    o.tap = oltc_step(o, 1.0, set);
    CHECK(o.tap == 1);
    o.tap = oltc_step(o, std::pow(o.ratio(), 2), set);
    CHECK(o.tap == 2);
    CHECK(oltc_step(o, std::pow(o.ratio(), 2), set) == 2);
  }
  SUBCASE("saturates at the top tap") {
    const double set = 1.15 * 1.15;
    for (int k = 0; k < 30; ++k) {
      const int next = oltc_step(o, std::pow(o.ratio(), 2), set);
      CHECK(std::abs(next - o.tap) <= 1);
      o.tap = next;
    }
    CHECK(o.tap == 10);
    CHECK(o.ratio() == doctest::Approx(1.10));
  }
  SUBCASE("and at the bottom") {
    o.tap = -10;
    CHECK(oltc_step(o, 0.81, 0.5) == -10);
  }
  SUBCASE("moves down when high") { CHECK(oltc_step(o, 1.03 * 1.03, 1.0) == -1); }
  SUBCASE("bad input") { CHECK_THROWS(oltc_step(o, 0.0, 1.0)); }
}

TEST_CASE("dispatch mode names") {
  for (auto m : {DispatchMode::None, DispatchMode::MaxSupport, DispatchMode::FixedRequest})
    CHECK(parse_dispatch_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_dispatch_mode("all"), ValidationError);
}

TEST_CASE("empty feeders leave the transmission no-load solution") {
  const auto s = bundled_scenario();
  Feeder empty = scale_loads(s.feeder, 0.0, true);
  empty.ders.clear();
  const auto st = converge_boundary(s.tcase, s.boundary_bus, {{&empty, s.count, Injections(empty.size()), 0}});
  CHECK(st.rounds <= 2);
  const auto ref = solve_nr(s.tcase, {{s.boundary_bus, 0.0, 0.0}});
  const auto bi = *s.tcase.bus_index(s.boundary_bus);
  CHECK(st.vm == doctest::Approx(ref.vm[bi]).epsilon(1e-10));
  CHECK(st.p_mw == 0.0);
  CHECK(st.q_mvar == 0.0);
}

TEST_CASE("boundary fixed point at peak load") {
  const auto s = bundled_scenario();
  const auto bi = *s.tcase.bus_index(s.boundary_bus);
  auto op = peak_op(s, 1.0);
  AppliedDispatch none;
  none.q_kvar.assign(s.feeder.ders.size(), {0.0, 0.0, 0.0});
  const auto inj0 = group_injections(s, op, &none.q_kvar);
  const auto st = converge_boundary(s.tcase, s.boundary_bus, {{&s.feeder, s.count, inj0, 0}}, s.cosim);

  SUBCASE("re-substitution changes nothing beyond tolerance") {
    const auto f = solve(s.feeder, balanced_voltage(st.trans.vm[bi], st.trans.va[bi]), inj0, s.cosim.dist);
    const auto net = substation_net(f);
    CHECK(std::abs(s.count * net.q_kvar / 1000.0 - st.q_mvar) <= 1e-3);
    CHECK(std::abs(s.count * net.p_kw / 1000.0 - st.p_mw) <= 1e-3);
    const auto t = solve_nr(s.tcase, {{s.boundary_bus, s.count * net.p_kw / 1000.0, s.count * net.q_kvar / 1000.0}});
    CHECK(std::abs(t.vm[bi] - st.trans.vm[bi]) <= 1e-4);
  }
  SUBCASE("the boundary load is assigned, not approximated") {
    const auto t = solve_nr(s.tcase, {{s.boundary_bus, st.p_mw, st.q_mvar}}, s.cosim.trans, &st.trans);
    for (std::size_t i = 0; i < t.vm.size(); ++i) CHECK(t.vm[i] == doctest::Approx(st.trans.vm[i]).epsilon(1e-9));
  }
  SUBCASE("successive voltage changes shrink") {
    for (std::size_t k = 1; k < st.dv_history.size(); ++k) CHECK(st.dv_history[k] <= st.dv_history[k - 1] + 1e-12);
  }
  SUBCASE("max support lowers the boundary var demand") {
    op.v0 = st.vm;
    const auto disp = plan_dispatch(s, op, DispatchMode::MaxSupport, 0.0, 0);
    const auto sup = converge_boundary(s.tcase, s.boundary_bus,
                                       {{&s.feeder, s.count, group_injections(s, op, &disp.q_kvar), 0}}, s.cosim);
    CHECK(sup.q_mvar < st.q_mvar);
    CHECK(sup.vm > st.vm);
  }
  SUBCASE("unknown bus") {
    CHECK_THROWS_AS(converge_boundary(s.tcase, 77, {{&s.feeder, 1, inj0, 0}}), ValidationError);
  }
}

TEST_CASE("fixed request interpolates between the two dispatches") {
  const auto s = bundled_scenario();
  const auto op = peak_op(s, 1.0);
  const auto none = plan_dispatch(s, op, DispatchMode::None, 0.0, 0);
  const auto full = plan_dispatch(s, op, DispatchMode::MaxSupport, 0.0, 0);
  const double range_mvar = s.count * (none.q_no_kvar - full.q_max_kvar) / 1000.0;
  const auto zero = plan_dispatch(s, op, DispatchMode::FixedRequest, 0.0, 0);
  const auto half = plan_dispatch(s, op, DispatchMode::FixedRequest, 0.5 * range_mvar, 0);
  const auto over = plan_dispatch(s, op, DispatchMode::FixedRequest, 10.0 * range_mvar, 0);
  for (std::size_t k = 0; k < s.feeder.ders.size(); ++k)
    for (int p = 0; p < 3; ++p) {
      CHECK(zero.q_kvar[k][p] == doctest::Approx(none.q_kvar[k][p]));
      CHECK(half.q_kvar[k][p] == doctest::Approx(0.5 * (none.q_kvar[k][p] + full.q_kvar[k][p])));
      CHECK(over.q_kvar[k][p] == doctest::Approx(full.q_kvar[k][p]));
    }
}

TEST_CASE("daily run without inverters follows the load") {
  auto cfg = load_scenario_config(testing::data("scenario.json"));
  cfg.penetration = 0.0;
  cfg.mode = DispatchMode::None;
  const auto s = build_scenario(cfg);
  const auto rec = run_timeseries(s);
  REQUIRE(rec.size() == s.profile.size());
  std::vector<double> q;
  for (const auto& r : rec) q.push_back(r.q0_mvar);
  CHECK(pearson(q, s.profile.load) > 0.99);
  const auto peak = s.profile.peak_load_step();
  CHECK(std::max_element(q.begin(), q.end()) - q.begin() == static_cast<long>(peak));
}

TEST_CASE("daily run at 80% penetration with max support") {
  const auto s = bundled_scenario(0.8, DispatchMode::MaxSupport);
  const auto t0 = std::chrono::steady_clock::now();
  const auto rec = run_timeseries(s);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 120.0);
  REQUIRE(rec.size() == 24);
  const double track = s.feeder.oltc.step + s.feeder.oltc.bandwidth;
  int prev_tap = s.feeder.oltc.tap;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    const auto& r = rec[i];
    CAPTURE(r.t);
    if (i) CHECK(r.t > rec[i - 1].t);
    CHECK(r.vmin_pu >= 0.95 - 1e-9);
    CHECK(r.vmax_pu <= 1.05 + 1e-9);
    CHECK(std::abs(r.v_secondary_pu - r.v_setpoint_pu) <= track);
    CHECK(r.tap >= -10);
    CHECK(r.tap <= 10);
    // Each move is one control interval.
    CHECK(std::abs(r.tap - prev_tap) <= r.taps_moved);
    CHECK(r.taps_moved <= s.max_oltc_intervals);
    prev_tap = r.tap;
    CHECK(r.bus_vm.size() == s.tcase.buses.size());
  }
  SUBCASE("deterministic") {
    const auto again = run_timeseries(s);
    for (std::size_t i = 0; i < rec.size(); ++i) {
      CHECK(again[i].q0_mvar == rec[i].q0_mvar);
      CHECK(again[i].tap == rec[i].tap);
      CHECK(again[i].bus_vm == rec[i].bus_vm);
    }
  }
  SUBCASE("support lowers the boundary var demand at every hour") {
    const auto base = run_timeseries(bundled_scenario(0.8, DispatchMode::None));
    for (std::size_t i = 0; i < rec.size(); ++i) CHECK(rec[i].q0_mvar < base[i].q0_mvar);
  }
  SUBCASE("csv") {
    std::ostringstream a, b;
    write_bus_timeseries_csv(a, s.tcase, rec);
    write_feeder_timeseries_csv(b, s.feeder.name, rec);
    CHECK(a.str().rfind("t,bus,vm_pu\n", 0) == 0);
    CHECK(b.str().rfind("t,feeder,p0_mw,q0_mvar,tap,vmin_pu,vmax_pu\n", 0) == 0);
  }
}

TEST_CASE("manifest records the tolerances") {
  const auto j = scenario_manifest(bundled_scenario());
  CHECK(j.dump().find("tol_v") != std::string::npos);
}
