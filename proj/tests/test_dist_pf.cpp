#include <doctest.h>

#include <chrono>

#include "oracles.hpp"
#include "support.hpp"

using namespace tdvar;
using testing::bundled;

namespace {

const std::array<Complex, 3> kFlat = balanced_voltage(1.0);

double max_voltage_gap(const Feeder& f, const DistPfSolution& s, const oracle::NewtonResult& n) {
  double gap = 0.0;
  for (int i = 0; i < static_cast<int>(f.size()); ++i)
    for (int p = 0; p < 3; ++p)
      if (f.nodes[i].phases.has(p)) gap = std::max(gap, std::abs(s.voltage[i](p) / s.v_base - n.v_pu[i][p]));
  return gap;
}

// Head power from the Newton voltages: S = V0 conj(I0) over the root's lines.
std::array<Complex, 3> newton_head_power_kva(const Feeder& f, const oracle::NewtonResult& n) {
  std::array<Complex, 3> s{};
  const double vb = f.v_base_ln();
  for (const auto& ln : f.lines) {
    if (ln.from != 0) continue;
    std::vector<int> ph;
    for (int p = 0; p < 3; ++p)
      if (ln.phases.has(p)) ph.push_back(p);
    const int k = static_cast<int>(ph.size());
    Eigen::MatrixXcd z(k, k);
    Eigen::VectorXcd dv(k);
    for (int a = 0; a < k; ++a) {
      dv(a) = (n.v_pu[0][ph[a]] - n.v_pu[ln.to][ph[a]]) * vb;
      for (int b = 0; b < k; ++b) z(a, b) = ln.impedance(ph[a], ph[b]);
    }
    const Eigen::VectorXcd i = z.inverse() * dv;
    for (int a = 0; a < k; ++a) s[ph[a]] += n.v_pu[0][ph[a]] * vb * std::conj(i(a)) / 1000.0;
  }
  return s;
}

Injections peak(const Feeder& f) { return operating_injections(f, 1.0, 0.0, 0.0); }

}  // namespace

TEST_CASE("no-load network stays at the head voltage") {
  const Feeder f = bundled("ieee13");
  const auto sol = solve(f, kFlat, Injections(f.size()));
  for (int i = 0; i < static_cast<int>(f.size()); ++i)
    for (int p = 0; p < 3; ++p)
      if (f.nodes[i].phases.has(p)) CHECK(std::abs(sol.voltage[i](p) / sol.v_base - kFlat[p]) < 1e-12);
  const auto net = substation_net(sol);
  CHECK(net.p_kw == doctest::Approx(0.0));
  CHECK(net.q_kvar == doctest::Approx(0.0));
  CHECK(voltage_violations(f, sol).empty());
}

TEST_CASE("two-node closed form") {
  const Complex z(0.01, 0.02), s(0.1, 0.05);
  const Feeder f = testing::single_phase_two_node(z, s);
  const auto sol = solve(f, kFlat, peak(f));
  const auto ref = oracle::two_bus(1.0, z, s);
  CHECK(sol.vmag_pu(1, 0) == doctest::Approx(ref.vm).epsilon(1e-9));
  CHECK(std::arg(sol.voltage[1](0)) == doctest::Approx(ref.va).epsilon(1e-7));
  // Head draws the load plus |I|^2 z.
  const double i2 = std::norm(s) / (ref.vm * ref.vm);
  CHECK(sol.head_power_kva[0].real() == doctest::Approx(s.real() + i2 * z.real()).epsilon(1e-6));
  CHECK(sol.head_power_kva[0].imag() == doctest::Approx(s.imag() + i2 * z.imag()).epsilon(1e-6));
}

TEST_CASE("sweep matches the Newton oracle on every bundled feeder") {
  for (const char* name : {"two_node", "four_node", "six_node", "ieee13"}) {
    const std::string label = name;
    CAPTURE(label);
    Feeder f = bundled(name);
    for (double solar : {0.0, 1.0}) {
      CAPTURE(solar);
      if (solar > 0.0 && f.ders.empty()) continue;
      const auto inj = operating_injections(f, 1.0, solar, 0.0);
      const auto sol = solve(f, kFlat, inj, {1e-10, 200, 0.3});
      const auto ref = oracle::newton_three_phase(f, kFlat, inj);
      REQUIRE(ref.converged);
      CHECK(max_voltage_gap(f, sol, ref) <= 1e-6);
      const auto s_ref = newton_head_power_kva(f, ref);
      for (int p = 0; p < 3; ++p)
        CHECK(std::abs(sol.head_power_kva[p] - s_ref[p]) / f.s_base_phase_kva() <= 1e-6);
    }
  }
}

TEST_CASE("default tolerance still within the oracle band") {
  const Feeder f = bundled("ieee13");
  const auto inj = peak(f);
  const auto t0 = std::chrono::steady_clock::now();
  const auto sol = solve(f, kFlat, inj);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto ref = oracle::newton_three_phase(f, kFlat, inj);
  CHECK(max_voltage_gap(f, sol, ref) <= 1e-5);
  CHECK(sol.iterations <= 20);
  CHECK(secs < 1.0);
}

TEST_CASE("power balance") {
  for (const char* name : {"four_node", "six_node", "ieee13"}) {
    CAPTURE(name);
    const Feeder f = bundled(name);
    const auto inj = operating_injections(f, 1.0, f.ders.empty() ? 0.0 : 0.7, 0.0);
    const auto sol = solve(f, kFlat, inj, {1e-12, 300, 0.3});
    const auto loss = line_losses(f, sol);
    Complex total = 0.0;
    for (int p = 0; p < 3; ++p) total += sol.head_power_kva[p] + inj.total(p);
    for (const auto& l : loss) total -= l.sum();
    CHECK(std::abs(total) / f.base_kva <= 1e-8);
  }
}

TEST_CASE("sign of the substation net var demand") {
  const Feeder f = bundled("four_node");
  const auto load_only = solve(f, kFlat, peak(f));
  CHECK(substation_net(load_only).q_kvar > 0.0);
  // Spread twice the feeder's var demand over the DER phases.
  double demand = 0.0, phases = 0.0;
  for (const auto& n : f.nodes)
    for (int p = 0; p < 3; ++p) demand += n.load.net_kva(p).imag();
  for (const auto& d : f.ders)
    for (int p = 0; p < 3; ++p) phases += d.s_inv_kva[p] > 0.0;
  VarSetpoints q(f.ders.size());
  for (std::size_t d = 0; d < f.ders.size(); ++d)
    for (int p = 0; p < 3; ++p) q[d][p] = f.ders[d].s_inv_kva[p] > 0.0 ? 2.0 * demand / phases : 0.0;
  const auto supported = solve(f, kFlat, operating_injections(f, 1.0, 0.0, 0.0, &q));
  CHECK(substation_net(supported).q_kvar < 0.0);
}

TEST_CASE("violations") {
  const Feeder f = bundled("six_node");
  SUBCASE("flat no-load solution") { CHECK(voltage_violations(f, solve(f, kFlat, Injections(f.size()))).empty()); }
  SUBCASE("head at 0.94 pu flags every energized phase") {
    const auto sol = solve(f, balanced_voltage(0.94), peak(f));
    int phases = 0;
    for (const auto& n : f.nodes) phases += n.phases.count();
    CHECK(static_cast<int>(voltage_violations(f, sol).size()) == phases);
  }
}

TEST_CASE("diagonal impedance and balanced load give equal phase magnitudes") {
  Json doc = serialize_feeder(bundled("four_node"));
  for (auto& l : doc["lines"]) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        if (r != c) l["r_matrix"][r][c] = l["x_matrix"][r][c] = 0.0;
    const double rd = l["r_matrix"][0][0], xd = l["x_matrix"][0][0];
    for (int r = 0; r < 3; ++r) {
      l["r_matrix"][r][r] = rd;
      l["x_matrix"][r][r] = xd;
    }
  }
  for (auto& n : doc["nodes"]) {
    if (!n.contains("load_kw")) continue;
    const double p = n["load_kw"][0], q = n["load_kvar"][0];
    n["load_kw"] = {p, p, p};
    n["load_kvar"] = {q, q, q};
    n.erase("cap_kvar");
  }
  doc["ders"] = Json::array();
  const Feeder f = parse_feeder(doc);
  const auto sol = solve(f, kFlat, peak(f), {1e-12, 200, 0.3});
  for (int i = 0; i < static_cast<int>(f.size()); ++i) {
    CHECK(sol.vmag_pu(i, 1) == doctest::Approx(sol.vmag_pu(i, 0)).epsilon(1e-9));
    CHECK(sol.vmag_pu(i, 2) == doctest::Approx(sol.vmag_pu(i, 0)).epsilon(1e-9));
  }
}

TEST_CASE("collapse is reported as a solver error") {
  const Feeder f = bundled("ieee13");
  const auto heavy = operating_injections(f, 25.0, 0.0, 0.0);
  try {
    solve(f, kFlat, heavy);
    FAIL("heavy load converged");
  } catch (const SolverError& e) {
    CHECK(e.iterations() > 0);
  }
}

TEST_CASE("voltage csv header") {
  const Feeder f = bundled("two_node");
  std::ostringstream os;
  write_voltage_csv(os, f, solve(f, kFlat, peak(f)));
  CHECK(os.str().rfind("node,phase,vmag_pu,vang_deg\n", 0) == 0);
}
