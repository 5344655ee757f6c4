#include "tdvar/dist_pf.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>

namespace tdvar {

Complex Injections::total(int phase) const {
  Complex s = 0.0;
  for (const auto& n : kva) s += n[phase];
  return s;
}

Injections load_injections(const Feeder& feeder, double load_scale) {
  Injections inj(feeder.size());
  for (std::size_t i = 0; i < feeder.size(); ++i) {
    const auto& load = feeder.nodes[i].load;
    for (int p = 0; p < 3; ++p)
      inj.kva[i][p] = -(load.demand_kva[p] * load_scale) + Complex(0.0, load.cap_kvar[p]);
  }
  return inj;
}

Injections operating_injections(const Feeder& feeder, double load_scale, double solar, double curtailment,
                                const VarSetpoints* q_inv_kvar) {
  Injections inj = load_injections(feeder, load_scale);
  for (std::size_t d = 0; d < feeder.ders.size(); ++d) {
    const Der& der = feeder.ders[d];
    for (int p = 0; p < 3; ++p) {
      inj.kva[der.node][p] += der.generation_kw(p, solar, curtailment);
      if (q_inv_kvar) inj.kva[der.node][p] += Complex(0.0, (*q_inv_kvar).at(d)[p]);
    }
  }
  return inj;
}

std::array<Complex, 3> balanced_voltage(double v, double angle_rad) {
  constexpr double shift = 2.0 * std::numbers::pi / 3.0;
  return {std::polar(v, angle_rad), std::polar(v, angle_rad - shift), std::polar(v, angle_rad + shift)};
}

double DistPfSolution::vang_deg(int node, int phase) const {
  return std::arg(voltage[node](phase)) * 180.0 / std::numbers::pi;
}

namespace {

// Current drawn by a constant-power injection: I = conj(-s / V).
Vector3c load_current(const std::array<Complex, 3>& s_kva, const Vector3c& v, PhaseSet phases) {
  Vector3c i = Vector3c::Zero();
  for (int p = 0; p < 3; ++p)
    if (phases.has(p) && s_kva[p] != Complex(0.0, 0.0)) i(p) = std::conj(-s_kva[p] * 1000.0 / v(p));
  return i;
}

// Accumulates node currents leaf-to-root; returns the current into each node
// (indexed by node, root entry = total drawn at the head).
std::vector<Vector3c> backward(const Feeder& f, const Injections& inj, const std::vector<Vector3c>& v) {
  const auto& order = f.topology.order;
  std::vector<Vector3c> into(f.size(), Vector3c::Zero());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int n = *it;
    into[n] += load_current(inj.kva[n], v[n], f.nodes[n].phases);
    if (n != 0) into[f.topology.parent[n]] += into[n];
  }
  return into;
}

}  // namespace

DistPfSolution solve(const Feeder& f, const std::array<Complex, 3>& head_pu, const Injections& inj,
                     const DistPfOptions& opt) {
  if (inj.size() != f.size()) throw std::invalid_argument("injection vector size does not match feeder");
  for (const auto& h : head_pu)
    if (!(std::abs(h) > 0.5 && std::abs(h) < 1.5))
      throw std::invalid_argument("head voltage magnitude must lie in (0.5, 1.5) pu");

  const double vb = f.v_base_ln();
  const auto& topo = f.topology;
  std::vector<Vector3c> v(f.size(), Vector3c::Zero());
  Vector3c head;
  for (int p = 0; p < 3; ++p) head(p) = head_pu[p] * vb;
  for (std::size_t n = 0; n < f.size(); ++n)
    for (int p = 0; p < 3; ++p)
      if (f.nodes[n].phases.has(p)) v[n](p) = head(p);

  DistPfSolution sol;
  sol.v_base = vb;
  double delta = 0.0;
  bool converged = false;
  for (int it = 1; it <= opt.max_iterations; ++it) {
    const auto into = backward(f, inj, v);
    delta = 0.0;
    bool collapsed = false;
    for (std::size_t k = 1; k < topo.order.size(); ++k) {
      const int n = topo.order[k];
      const auto& line = f.lines[topo.parent_line[n]];
      const Vector3c drop = line.impedance * into[n];
      for (int p = 0; p < 3; ++p) {
        if (!line.phases.has(p)) continue;
        const Complex nv = v[topo.parent[n]](p) - drop(p);
        delta = std::max(delta, std::abs(nv - v[n](p)) / vb);
        v[n](p) = nv;
        if (!(std::abs(nv) >= opt.collapse_pu * vb)) collapsed = true;
      }
    }
    sol.iterations = it;
    if (collapsed || !std::isfinite(delta))
      throw SolverError("distribution sweep diverged: voltage collapse", it, delta);
    if (delta < opt.tolerance_pu) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw SolverError("distribution sweep did not converge in " + std::to_string(opt.max_iterations) +
                          " iterations",
                      sol.iterations, delta);

  // Currents consistent with the final voltages.
  const auto into = backward(f, inj, v);
  sol.voltage = v;
  sol.current.assign(f.lines.size(), Vector3c::Zero());
  for (std::size_t n = 1; n < f.size(); ++n) sol.current[topo.parent_line[n]] = into[n];
  for (int p = 0; p < 3; ++p) sol.head_power_kva[p] = v[0](p) * std::conj(into[0](p)) / 1000.0;
  sol.max_mismatch_pu = delta;
  return sol;
}

NetPower substation_net(const DistPfSolution& sol) {
  NetPower out;
  for (const auto& s : sol.head_power_kva) {
    out.p_kw += s.real();
    out.q_kvar += s.imag();
  }
  return out;
}

std::vector<Vector3c> line_losses(const Feeder& f, const DistPfSolution& sol) {
  std::vector<Vector3c> out(f.lines.size(), Vector3c::Zero());
  for (std::size_t e = 0; e < f.lines.size(); ++e) {
    const auto& line = f.lines[e];
    for (int p = 0; p < 3; ++p)
      if (line.phases.has(p))
        out[e](p) = (sol.voltage[line.from](p) - sol.voltage[line.to](p)) * std::conj(sol.current[e](p)) / 1000.0;
  }
  return out;
}

std::vector<VoltageViolation> voltage_violations(const Feeder& f, const DistPfSolution& sol, double y_lo,
                                                 double y_hi) {
  std::vector<VoltageViolation> out;
  for (int n = 0; n < static_cast<int>(f.size()); ++n)
    for (int p = 0; p < 3; ++p) {
      if (!f.nodes[n].phases.has(p)) continue;
      const double m = sol.vmag_pu(n, p);
      if (m * m < y_lo || m * m > y_hi) out.push_back({n, p, m});
    }
  return out;
}

VoltageRange voltage_range(const Feeder& f, const DistPfSolution& sol) {
  VoltageRange r{1e300, -1e300};
  for (int n = 0; n < static_cast<int>(f.size()); ++n)
    for (int p = 0; p < 3; ++p) {
      if (!f.nodes[n].phases.has(p)) continue;
      const double m = sol.vmag_pu(n, p);
      r.vmin_pu = std::min(r.vmin_pu, m);
      r.vmax_pu = std::max(r.vmax_pu, m);
    }
  return r;
}

void write_voltage_csv(std::ostream& os, const Feeder& f, const DistPfSolution& sol) {
  os << "node,phase,vmag_pu,vang_deg\n";
  os << std::setprecision(10);
  for (int n = 0; n < static_cast<int>(f.size()); ++n)
    for (int p = 0; p < 3; ++p)
      if (f.nodes[n].phases.has(p))
        os << f.nodes[n].name << ',' << phase_letter(p) << ',' << sol.vmag_pu(n, p) << ',' << sol.vang_deg(n, p)
           << '\n';
}

Json summary_json(const DistPfSolution& sol) {
  const auto net = substation_net(sol);
  return {{"p0_kw", net.p_kw}, {"q0_kvar", net.q_kvar}, {"iterations", sol.iterations}};
}

}  // namespace tdvar
