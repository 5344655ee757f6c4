#include "tdvar/lindist.hpp"

#include <cmath>
#include <numbers>

namespace tdvar {

LineSensitivity build_sensitivities(const LineSegment& line, double z_base) {
  const Complex alpha = std::polar(1.0, 2.0 * std::numbers::pi / 3.0);
  LineSensitivity s;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (!line.phases.has(r) || !line.phases.has(c)) continue;
      const int k = ((c - r) % 3 + 3) % 3;
      const Complex gamma = std::pow(alpha, k);
      const Complex w = gamma * std::conj(line.impedance(r, c) / z_base);
      // 2 Re{gamma conj(Z) (P + jQ)} split into its P and Q coefficients.
      s.mp(r, c) = 2.0 * w.real();
      s.mq(r, c) = -2.0 * w.imag();
    }
  }
  return s;
}

LinModel build_lossless_model(const Feeder& f) {
  LinModel m;
  m.topology = f.topology;
  m.s_base_kva = f.s_base_phase_kva();
  const double zb = f.z_base();
  for (const auto& n : f.nodes) m.phases.push_back(n.phases);
  for (const auto& line : f.lines) {
    m.sens.push_back(build_sensitivities(line, zb));
    Eigen::Vector3d xd = Eigen::Vector3d::Zero();
    for (int p = 0; p < 3; ++p)
      if (line.phases.has(p)) xd(p) = line.impedance(p, p).imag() / zb;
    m.x_diag.push_back(xd);
  }
  m.loss.assign(f.size(), Vector3c::Zero());
  m.y_base.assign(f.size(), Eigen::Vector3d::Zero());
  m.y_bias.assign(f.size(), Eigen::Vector3d::Zero());
  for (std::size_t n = 0; n < f.size(); ++n)
    for (int p = 0; p < 3; ++p)
      if (f.nodes[n].phases.has(p)) m.y_base[n](p) = 1.0;
  return m;
}

LinModel build_model(const Feeder& f, const DistPfSolution& base, const Injections& inj) {
  LinModel m = build_lossless_model(f);
  const auto losses = line_losses(f, base);
  double q_exact = 0.0;
  for (std::size_t n = 1; n < f.size(); ++n) {
    m.loss[n] = losses[f.topology.parent_line[n]] / m.s_base_kva;
    q_exact += m.loss[n].imag().sum();
  }
  const double vb2 = base.v_base * base.v_base;
  for (std::size_t n = 0; n < f.size(); ++n)
    for (int p = 0; p < 3; ++p)
      if (f.nodes[n].phases.has(p)) m.y_base[n](p) = std::norm(base.voltage[n](p)) / vb2;

  Eigen::Vector3d y_head = Eigen::Vector3d::Zero();
  for (int p = 0; p < 3; ++p) y_head(p) = m.y_base[0](p);
  const auto flows = lin_solve(m, y_head, inj);
  m.q_loss_offset = q_exact - reactive_loss_estimate_pu(m, flows);
  for (std::size_t n = 0; n < f.size(); ++n)
    for (int p = 0; p < 3; ++p)
      if (f.nodes[n].phases.has(p)) m.y_bias[n](p) = m.y_base[n](p) - flows.y[n](p);
  return m;
}

LinModel calibrate_losses(const Feeder& f, const std::array<Complex, 3>& head, const Injections& inj,
                          const DistPfOptions& opt) {
  return build_model(f, solve(f, head, inj, opt), inj);
}

LinSolution lin_solve(const LinModel& m, double y0, const Injections& inj) {
  return lin_solve(m, Eigen::Vector3d::Constant(y0), inj);
}

LinSolution lin_solve(const LinModel& m, const Eigen::Vector3d& y0, const Injections& inj) {
  if (inj.size() != m.size()) throw std::invalid_argument("injection vector size does not match model");
  const auto& topo = m.topology;
  const std::size_t n_nodes = m.size();
  LinSolution s;
  s.y.assign(n_nodes, Eigen::Vector3d::Zero());
  s.p.assign(n_nodes, Eigen::Vector3d::Zero());
  s.q.assign(n_nodes, Eigen::Vector3d::Zero());

  std::vector<Eigen::Vector3d> acc_p(n_nodes, Eigen::Vector3d::Zero()), acc_q(n_nodes, Eigen::Vector3d::Zero());
  for (auto it = topo.order.rbegin(); it != topo.order.rend(); ++it) {
    const int n = *it;
    for (int p = 0; p < 3; ++p) {
      if (!m.phases[n].has(p)) continue;
      const Complex sn = inj.kva[n][p] / m.s_base_kva;
      acc_p[n](p) += -sn.real() + m.loss[n](p).real();
      acc_q[n](p) += -sn.imag() + m.loss[n](p).imag();
    }
    if (n != 0) {
      s.p[n] = acc_p[n];
      s.q[n] = acc_q[n];
      acc_p[topo.parent[n]] += acc_p[n];
      acc_q[topo.parent[n]] += acc_q[n];
    }
  }
  s.p_head = acc_p[0];
  s.q_head = acc_q[0];

  for (int p = 0; p < 3; ++p)
    if (m.phases[0].has(p)) s.y[0](p) = y0(p);
  for (std::size_t k = 1; k < topo.order.size(); ++k) {
    const int n = topo.order[k];
    const auto& sens = m.sens[topo.parent_line[n]];
    const Eigen::Vector3d drop = sens.mp * s.p[n] + sens.mq * s.q[n];
    for (int p = 0; p < 3; ++p)
      if (m.phases[n].has(p)) s.y[n](p) = s.y[topo.parent[n]](p) - drop(p);
  }
  return s;
}

double reactive_loss_estimate_pu(const LinModel& m, const LinSolution& flows) {
  // Each line's loss uses the sending-end flow over the sending-end y_base.
  double total = 0.0;
  for (std::size_t n = 1; n < m.size(); ++n) {
    const int e = m.topology.parent_line[n];
    const int up = m.topology.parent[n];
    for (int p = 0; p < 3; ++p) {
      if (!m.phases[n].has(p)) continue;
      const double sq = flows.p[n](p) * flows.p[n](p) + flows.q[n](p) * flows.q[n](p);
      total += sq / m.y_base[up](p) * m.x_diag[e](p);
    }
  }
  return total;
}

double reactive_loss_estimate(const LinModel& m, const LinSolution& flows) {
  return reactive_loss_estimate_pu(m, flows) * m.s_base_kva;
}

Json sensitivities_json(const Feeder& f, const LinModel& m) {
  auto mat = [](const Eigen::Matrix3d& a) {
    Json rows = Json::array();
    for (int r = 0; r < 3; ++r) rows.push_back(Json::array({a(r, 0), a(r, 1), a(r, 2)}));
    return rows;
  };
  Json lines = Json::array();
  for (std::size_t e = 0; e < f.lines.size(); ++e)
    lines.push_back({{"from", f.nodes[f.lines[e].from].name},
                     {"to", f.nodes[f.lines[e].to].name},
                     {"mp", mat(m.sens[e].mp)},
                     {"mq", mat(m.sens[e].mq)}});
  return {{"feeder", f.name}, {"lines", lines}};
}

}  // namespace tdvar
