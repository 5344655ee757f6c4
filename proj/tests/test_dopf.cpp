#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "support.hpp"

using namespace tdvar;
using testing::bundled;

namespace {

DailyProfile day() { return load_profile(testing::data("profiles.csv")); }

std::size_t step_at(const DailyProfile& p, double hour) {
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.hours[i] == hour) return i;
  throw std::runtime_error("hour not in profile");
}

OperatingPoint at(const DailyProfile& p, double hour, double c = 0.0) {
  const auto i = step_at(p, hour);
  return {p.load[i], p.solar[i], c, 1.0};
}

// The six-node feeder with inverters left on two phases only.
Feeder six_node_two_phases() {
  Json doc = serialize_feeder(bundled("six_node"));
  doc["ders"] = Json::array({Json{{"node", "b"}, {"s_inv_kva", {110, 0, 0}}, {"p_peak_kw", {100, 0, 0}}},
                             Json{{"node", "d"}, {"s_inv_kva", {0, 0, 66}}, {"p_peak_kw", {0, 0, 60}}}});
  return parse_feeder(doc);
}

bool ansi_feasible(const Feeder& f, const DistPfSolution& sol, double lo = 0.95, double hi = 1.05) {
  for (int i = 0; i < static_cast<int>(f.size()); ++i)
    for (int p = 0; p < 3; ++p)
      if (f.nodes[i].phases.has(p) && (sol.vmag_pu(i, p) < lo - 1e-9 || sol.vmag_pu(i, p) > hi + 1e-9)) return false;
  return true;
}

void check_dispatch(const Feeder& f, const OperatingPoint& op, const VarDispatch& d, const DopfOptions& o = {}) {
  CHECK(d.kkt.max() <= 1e-6);
  for (std::size_t k = 0; k < d.q_kvar.size(); ++k)
    for (int p = 0; p < 3; ++p) CHECK(std::abs(d.q_kvar[k][p]) <= d.q_bar_kvar[k][p] + 1e-9);
  CHECK(d.tap >= f.oltc.tap_min);
  CHECK(d.tap <= f.oltc.tap_max);
  const auto sol = solve_with(f, op, d.tap, &d.q_kvar);
  CHECK(ansi_feasible(f, sol, o.v_lo, o.v_hi));
  CHECK(substation_net(sol).q_kvar == doctest::Approx(d.achieved_q0_kvar).epsilon(1e-9));
}

}  // namespace

TEST_CASE("var envelope") {
  Der d;
  d.s_inv_kva = {5.0, 5.0, 0.0};
  d.p_peak_kw = {3.0, 5.0, 0.0};
  SUBCASE("3-4-5 and the rating boundary") {
    const auto q = var_envelope(d, 1.0, 0.0);
    CHECK(q[0] == doctest::Approx(4.0));
    CHECK(q[1] == doctest::Approx(0.0));
    CHECK(q[2] == 0.0);
  }
  SUBCASE("curtailment frees capacity") {
    const auto q = var_envelope(d, 1.0, 0.4);
    CHECK(q[1] == doctest::Approx(4.0));
  }
  SUBCASE("night gives the full rating") {
    const auto q = var_envelope(d, 0.0, 0.0);
    CHECK(q[0] == doctest::Approx(5.0));
    CHECK(q[1] == doctest::Approx(5.0));
  }
  SUBCASE("generation above the rating") {
    d.p_peak_kw[0] = 6.0;
    CHECK_THROWS_AS(var_envelope(d, 1.0, 0.0), ValidationError);
  }
  SUBCASE("monotone in curtailment") {
    double prev = -1.0;
    for (double c = 0.0; c <= 1.0; c += 0.05) {
      const double q = var_envelope(d, 1.0, c)[1];
      CHECK(q >= prev);
      prev = q;
    }
  }
}

TEST_CASE("feeder without inverters") {
  const Feeder f = bundled("four_node");
  Feeder bare = f;
  bare.ders.clear();
  const OperatingPoint op{1.0, 0.0, 0.0, 1.0};
  const auto m = build_lossless_model(bare);
  const auto p = assemble(bare, m, op);
  CHECK(p.vars.empty());
  CHECK(p.qp.variables() == 1);
  const auto d = max_var_support(bare, op);
  CHECK(d.q_kvar.empty());
  check_dispatch(bare, op, d);
  // Net demand is the load vars plus line losses.
  const auto sol = solve_with(bare, op, d.tap, nullptr);
  double load_q = 0.0, loss_q = 0.0;
  for (const auto& n : bare.nodes)
    for (int ph = 0; ph < 3; ++ph) load_q += n.load.net_kva(ph).imag();
  for (const auto& l : line_losses(bare, sol)) loss_q += l.sum().imag();
  CHECK(d.achieved_q0_kvar > 0.0);
  CHECK(d.achieved_q0_kvar == doctest::Approx(load_q + loss_q).epsilon(0.05));
}

TEST_CASE("single lossless inverter with no load exports its full rating") {
  const Feeder f = testing::single_phase_two_node({0.0, 0.0}, {0.0, 0.0}, 0.3, 0.0);
  const OperatingPoint op{0.0, 0.0, 0.0, 1.0};
  const auto p = assemble(f, build_lossless_model(f), op);
  REQUIRE(p.vars.size() == 1);
  const auto r = solve_qp(p.qp);
  REQUIRE(r.status == QpStatus::Optimal);
  CHECK(r.x(0) * p.s_base_kva == doctest::Approx(0.3));
  CHECK(p.predicted_q0_kvar(r.x) == doctest::Approx(-0.3));
  CHECK(kkt_residuals(p.qp, r.x, r.lambda).max() <= 1e-6);
}

TEST_CASE("tight upper voltage bound on a two-node feeder") {
  // Full export would lift the load node above 1.01 pu, so the optimum sits
  // strictly inside the envelope with the voltage row active.
  const Feeder f = testing::single_phase_two_node({0.01, 0.05}, {0.02, 0.0}, 0.5, 0.0);
  const OperatingPoint op{1.0, 0.0, 0.0, 1.0};
  DopfOptions o;
  o.v_hi = 1.01;
  o.fixed_y0 = 1.0;
  const auto d = max_var_support(f, op, o);
  const double q = d.q_kvar[0][0];
  CHECK(q > 0.0);
  CHECK(q < 0.5 - 1e-3);
  CHECK(d.kkt.max() <= 1e-6);

  // Dense exact search at 0.001 kVAr over [-qbar, qbar].
  double best_q = -1.0, best_q0 = 1e300;
  for (int k = -500; k <= 500; ++k) {
    VarSetpoints s(1, {k * 1e-3, 0.0, 0.0});
    const auto sol = solve_with(f, op, 0, &s);
    if (sol.vmag_pu(1, 0) > o.v_hi) continue;
    const double q0 = substation_net(sol).q_kvar;
    if (q0 < best_q0) {
      best_q0 = q0;
      best_q = k * 1e-3;
    }
  }
  CAPTURE(best_q);
  CHECK(std::abs(q - best_q) <= 0.01 * best_q);
  CHECK(d.achieved_q0_kvar == doctest::Approx(best_q0).epsilon(0.005));
}

TEST_CASE("exact grid search agrees on a two-phase fleet") {
  const Feeder f = six_node_two_phases();
  const auto p = day();
  for (double hour : {3.0, 12.0, 20.0}) {
    CAPTURE(hour);
    const auto op = at(p, hour);
    const auto d = max_var_support(f, op);
    check_dispatch(f, op, d);
    const auto g = oracle::grid_search(f, op, 61);
    REQUIRE(g.found);
    CAPTURE(g.q0_kvar);
    CAPTURE(d.achieved_q0_kvar);
    CHECK(std::abs(d.achieved_q0_kvar - g.q0_kvar) <= 0.005 * std::abs(g.q0_kvar));
  }
}

TEST_CASE("linear grid search matches the QP objective") {
  const Feeder f = six_node_two_phases();
  const auto op = at(day(), 12.0);
  const auto inj = operating_injections(f, op.load, op.solar, 0.0);
  const auto model = build_model(f, solve(f, balanced_voltage(1.0), inj), inj);
  const auto prob = assemble(f, model, op);
  const auto r = solve_qp(prob.qp);
  REQUIRE(r.status == QpStatus::Optimal);
  CHECK(kkt_residuals(prob.qp, r.x, r.lambda).max() <= 1e-6);
  const double qp_value = prob.predicted_q0_kvar(r.x);
  const double grid_value = oracle::grid_search_linear(prob, 201, 201);
  // The grid can only be worse, and not by much.
  CHECK(grid_value >= qp_value - 1e-6);
  CHECK(grid_value - qp_value <= 0.005 * std::abs(qp_value) + 0.5);
}

TEST_CASE("IEEE-13 at 80% penetration") {
  const Feeder f = testing::ieee13_with_ders(0.8);
  const auto p = day();
  SUBCASE("noon prediction within 5% of the verification solve") {
    const auto op = at(p, 12.0);
    const auto d = max_var_support(f, op);
    check_dispatch(f, op, d);
    CHECK(std::abs(d.predicted_q0_kvar - d.achieved_q0_kvar) <= 0.05 * std::abs(d.achieved_q0_kvar));
  }
  SUBCASE("every inverter at full rating in the evening") {
    const auto op = at(p, 20.0);
    const auto d = max_var_support(f, op);
    check_dispatch(f, op, d);
    for (std::size_t k = 0; k < d.q_kvar.size(); ++k)
      for (int ph = 0; ph < 3; ++ph) {
        CHECK(d.q_bar_kvar[k][ph] == doctest::Approx(f.ders[k].s_inv_kva[ph]));
        CHECK(d.q_kvar[k][ph] == doctest::Approx(d.q_bar_kvar[k][ph]).epsilon(1e-6));
      }
  }
  SUBCASE("curtailment enlarges noon support") {
    const auto d0 = max_var_support(f, at(p, 12.0, 0.0));
    const auto d4 = max_var_support(f, at(p, 12.0, 0.4));
    check_dispatch(f, at(p, 12.0, 0.4), d4);
    CHECK(d4.achieved_q0_kvar < d0.achieved_q0_kvar);
  }
  SUBCASE("support never worse than the baseline") {
    for (double hour : {0.0, 6.0, 12.0, 18.0}) {
      const auto op = at(p, hour);
      CHECK(max_var_support(f, op).achieved_q0_kvar <= no_support_dispatch(f, op).achieved_q0_kvar + 1e-6);
    }
  }
}

TEST_CASE("support curve") {
  const auto p = day();
  SupportCurveOptions o;
  o.curtailment = 0.4;
  o.penetration = 0.8;
  const Feeder f = testing::ieee13_with_ders(1.0);
  const auto curve = support_curve(f, p, o);
  REQUIRE(curve.points.size() == p.size());

  SUBCASE("every dispatch solves cleanly and is ANSI feasible") {
    for (std::size_t i = 0; i < p.size(); ++i) {
      CAPTURE(i);
      const auto& d = curve.dispatch[i];
      CHECK(d.kkt.max() <= 1e-6);
      CHECK(d.vmin_pu >= 0.95 - 1e-9);
      CHECK(d.vmax_pu <= 1.05 + 1e-9);
    }
  }
  SUBCASE("max support below no support; curtailment helps once the sun is up") {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto& pt = curve.points[i];
      CAPTURE(pt.t);
      CHECK(pt.q_max_kvar <= pt.q_no_kvar + 1e-6);
      REQUIRE(pt.q_max_curtailed_kvar);
      // At dawn and dusk the freed capacity is tiny and the lost local real
      // power raises line losses by more, so only require it in daylight.
      if (p.solar[i] == 0.0) CHECK(*pt.q_max_curtailed_kvar == doctest::Approx(pt.q_max_kvar).epsilon(1e-12));
      else if (p.solar[i] >= 0.2) CHECK(*pt.q_max_curtailed_kvar < pt.q_max_kvar);
    }
  }
  SUBCASE("support is smallest inside the solar window") {
    std::size_t arg = 0;
    double smallest = 1e300;
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
      const double s = curve.points[i].q_no_kvar - curve.points[i].q_max_kvar;
      if (s < smallest) {
        smallest = s;
        arg = i;
      }
    }
    CHECK(curve.points[arg].t >= kSolarWindowStart);
    CHECK(curve.points[arg].t <= kSolarWindowEnd);
  }
  SUBCASE("more penetration, more support") {
    SupportCurveOptions lo = o, hi = o;
    lo.penetration = 0.4;
    lo.curtailment.reset();
    hi.penetration = 1.0;
    hi.curtailment.reset();
    const auto a = support_curve(f, p, lo), b = support_curve(f, p, hi);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(b.points[i].q_max_kvar < a.points[i].q_max_kvar);
  }
  SUBCASE("zero penetration curves coincide") {
    SupportCurveOptions z = o;
    z.penetration = 0.0;
    z.curtailment.reset();
    const auto c = support_curve(f, p, z);
    for (const auto& pt : c.points) CHECK(pt.q_max_kvar == doctest::Approx(pt.q_no_kvar).epsilon(1e-9));
    CHECK(reduction_stats(c).average_pct == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("csv") {
    std::ostringstream os;
    write_curve_csv(os, curve);
    CHECK(os.str().rfind("t,q_no_support_kvar,q_max_support_kvar,q_max_support_curtailed_kvar\n", 0) == 0);
  }
}

TEST_CASE("reduction statistics") {
  VarSupportCurve c;
  for (int h = 0; h < 24; ++h) c.points.push_back({static_cast<double>(h), 100.0, -100.0, 0.0});
  auto s = reduction_stats(c);
  CHECK(s.average_pct == doctest::Approx(200.0));
  CHECK(s.peak_pct == doctest::Approx(200.0));
  CHECK(reduction_stats(c, true).average_pct == doctest::Approx(100.0));
  // Peak window only covers 11:00 to 15:00.
  for (auto& pt : c.points)
    if (pt.t >= 11 && pt.t <= 15) pt.q_max_kvar = 50.0;
  s = reduction_stats(c);
  CHECK(s.peak_pct == doctest::Approx(50.0));
  CHECK(s.average_pct == doctest::Approx((19 * 200.0 + 5 * 50.0) / 24.0));
  // Steps without positive demand are left out and reported.
  c.points[0].q_no_kvar = 0.0;
  s = reduction_stats(c);
  REQUIRE(s.excluded_hours.size() == 1);
  CHECK(s.excluded_hours[0] == 0.0);
}

TEST_CASE("nearest tap") {
  Oltc o;
  CHECK(nearest_tap(o, 1.0, 1.0) == 0);
  CHECK(nearest_tap(o, 1.0, 1.0304) == 2);  // 1.0152^2
  CHECK(nearest_tap(o, 1.0, 2.0) == o.tap_max);
  CHECK(nearest_tap(o, 1.0, 0.5) == o.tap_min);
}

TEST_CASE("random feasible moves never beat the D-OPF optimum") {
  const Feeder f = testing::ieee13_with_ders(0.8);
  const auto op = at(day(), 16.0);
  const auto inj = operating_injections(f, op.load, op.solar, 0.0);
  const auto model = build_model(f, solve(f, balanced_voltage(1.0), inj), inj);
  const auto prob = assemble(f, model, op);
  const auto r = solve_qp(prob.qp);
  REQUIRE(r.status == QpStatus::Optimal);
  CHECK(kkt_residuals(prob.qp, r.x, r.lambda).max() <= 1e-6);
  // Random box points that satisfy every row; the segment toward each stays
  // feasible, so a short step along it can only raise the objective.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int iy = prob.y0_index();
  int tried = 0;
  for (int trial = 0; trial < 20000 && tried < 200; ++trial) {
    Eigen::VectorXd z(r.x.size());
    for (int k = 0; k < iy; ++k) z(k) = (2.0 * u(rng) - 1.0) * prob.q_bar_kvar[k] / prob.s_base_kva;
    z(iy) = prob.y0_min + (prob.y0_max - prob.y0_min) * u(rng);
    const Eigen::VectorXd az = prob.qp.A * z;
    bool ok = true;
    for (int k = 0; k < az.size() && ok; ++k) ok = az(k) >= prob.qp.lower(k) && az(k) <= prob.qp.upper(k);
    if (!ok) continue;
    ++tried;
    for (double t : {1e-4, 1e-2, 1.0}) CHECK(prob.qp.objective(r.x + t * (z - r.x)) >= r.objective - 1e-12);
  }
  CHECK(tried > 0);
}

TEST_CASE("dispatch outputs") {
  const Feeder f = bundled("four_node");
  const OperatingPoint op{1.0, 0.5, 0.0, 1.0};
  const auto d = max_var_support(f, op);
  std::ostringstream os;
  write_dispatch_csv(os, f, 12.0, d);
  CHECK(os.str().rfind("t,node,phase,q_inv_kvar\n", 0) == 0);
  const auto j = dispatch_json(f, d);
  CHECK(j.contains("tap"));
}
