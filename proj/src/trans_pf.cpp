#include "tdvar/trans_pf.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>

#include "tdvar/types.hpp"

namespace tdvar {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

namespace {

MatrixXcd build_ybus(const TransmissionCase& c) {
  const auto n = c.buses.size();
  MatrixXcd Y = MatrixXcd::Zero(n, n);
  for (const auto& br : c.branches) {
    if (!br.in_service) continue;
    const auto f = *c.bus_index(br.from), t = *c.bus_index(br.to);
    const Complex y = 1.0 / Complex(br.r, br.x);
    const Complex sh(0.0, br.b / 2.0);
    Y(f, f) += y + sh;
    Y(t, t) += y + sh;
    Y(f, t) -= y;
    Y(t, f) -= y;
  }
  return Y;
}

}  // namespace

TransPfSolution solve_nr(const TransmissionCase& c, const std::vector<BoundaryLoad>& boundary,
                         const TransPfOptions& opt, const TransPfSolution* warm) {
  const int n = static_cast<int>(c.buses.size());
  const double base = c.mva_base;

  std::vector<BusKind> kind(n);
  VectorXd pd(n), qd(n), pg = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    kind[i] = c.buses[i].kind;
    pd(i) = c.buses[i].pd;
    qd(i) = c.buses[i].qd;
  }
  for (const auto& b : boundary) {
    const auto i = c.bus_index(b.bus);
    if (!i) throw ValidationError("boundary bus " + std::to_string(b.bus) + " does not exist");
    pd(*i) = b.p_mw / base;
    qd(*i) = b.q_mvar / base;
  }
  for (const auto& g : c.gens) pg(*c.bus_index(g.bus)) += g.p;

  const MatrixXcd Y = build_ybus(c);
  VectorXd vm(n), va = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) vm(i) = kind[i] == BusKind::PQ ? 1.0 : c.buses[i].vset;
  if (warm && static_cast<int>(warm->vm.size()) == n) {
    for (int i = 0; i < n; ++i) {
      va(i) = warm->va[i];
      if (kind[i] == BusKind::PQ) vm(i) = warm->vm[i];
    }
  }
  const int slack = static_cast<int>(c.slack_index());
  va(slack) = c.buses[slack].kind == BusKind::Slack ? 0.0 : va(slack);

  // PV buses converted to PQ by the Q-limit loop hold their limit here.
  std::vector<double> q_fixed(n, 0.0);
  auto gen_q_limits = [&](int bus, double& lo, double& hi) {
    lo = 0.0;
    hi = 0.0;
    for (const auto& g : c.gens)
      if (*c.bus_index(g.bus) == static_cast<std::size_t>(bus)) {
        lo += g.qmin;
        hi += g.qmax;
      }
  };

  TransPfSolution sol;
  int total_iter = 0;
  for (int outer = 0; outer < 2 * n + 1; ++outer) {
    std::vector<int> pvpq, pq;
    for (int i = 0; i < n; ++i) {
      if (i == slack) continue;
      pvpq.push_back(i);
      if (kind[i] == BusKind::PQ) pq.push_back(i);
    }
    VectorXcd sspec(n);
    for (int i = 0; i < n; ++i) {
      const bool converted = kind[i] == BusKind::PQ && c.buses[i].kind == BusKind::PV;
      sspec(i) = Complex(pg(i) - pd(i), (converted ? q_fixed[i] : 0.0) - qd(i));
    }
    const int npv = static_cast<int>(pvpq.size()), npq = static_cast<int>(pq.size());

    double mis = 0.0;
    int it = 0;
    while (true) {
      VectorXcd V(n);
      for (int i = 0; i < n; ++i) V(i) = std::polar(vm(i), va(i));
      const VectorXcd I = Y * V;
      const VectorXcd S = V.cwiseProduct(I.conjugate());
      const VectorXcd F = S - sspec;
      VectorXd f(npv + npq);
      for (int k = 0; k < npv; ++k) f(k) = F(pvpq[k]).real();
      for (int k = 0; k < npq; ++k) f(npv + k) = F(pq[k]).imag();
      mis = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
      if (!std::isfinite(mis))
        throw SolverError("transmission Newton-Raphson diverged (non-finite mismatch)", total_iter + it, mis);
      if (mis <= opt.tolerance) break;
      if (it >= opt.max_iterations)
        throw SolverError("transmission Newton-Raphson did not converge in " + std::to_string(opt.max_iterations) +
                              " iterations",
                          total_iter + it, mis);

      // dS/dVa and dS/dVm in complex form.
      const VectorXcd Vn = V.cwiseQuotient(vm.cast<Complex>());
      const MatrixXcd dVa = Complex(0.0, 1.0) * V.asDiagonal() * (MatrixXcd(I.asDiagonal()) - Y * V.asDiagonal()).conjugate();
      const MatrixXcd dVm = MatrixXcd(V.asDiagonal()) * (Y * Vn.asDiagonal()).conjugate() +
                            MatrixXcd(I.conjugate().asDiagonal()) * Vn.asDiagonal();
      MatrixXd Jm(npv + npq, npv + npq);
      for (int r = 0; r < npv; ++r) {
        for (int k = 0; k < npv; ++k) Jm(r, k) = dVa(pvpq[r], pvpq[k]).real();
        for (int k = 0; k < npq; ++k) Jm(r, npv + k) = dVm(pvpq[r], pq[k]).real();
      }
      for (int r = 0; r < npq; ++r) {
        for (int k = 0; k < npv; ++k) Jm(npv + r, k) = dVa(pq[r], pvpq[k]).imag();
        for (int k = 0; k < npq; ++k) Jm(npv + r, npv + k) = dVm(pq[r], pq[k]).imag();
      }
      Eigen::FullPivLU<MatrixXd> lu(Jm);
      if (!lu.isInvertible()) throw SolverError("transmission Jacobian is singular", total_iter + it, mis);
      const VectorXd dx = -lu.solve(f);
      for (int k = 0; k < npv; ++k) va(pvpq[k]) += dx(k);
      for (int k = 0; k < npq; ++k) vm(pq[k]) += dx(npv + k);
      ++it;
      for (int k = 0; k < npq; ++k)
        if (!(vm(pq[k]) > 0.05)) throw SolverError("transmission voltage collapsed", total_iter + it, mis);
    }
    total_iter += it;
    sol.max_mismatch = mis;

    if (!opt.enforce_q_limits) break;
    VectorXcd V(n);
    for (int i = 0; i < n; ++i) V(i) = std::polar(vm(i), va(i));
    const VectorXcd S = V.cwiseProduct((Y * V).conjugate());
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      if (kind[i] != BusKind::PV) continue;
      double lo, hi;
      gen_q_limits(i, lo, hi);
      const double qg = S(i).imag() + qd(i);
      if (qg > hi + 1e-9 || qg < lo - 1e-9) {
        kind[i] = BusKind::PQ;
        q_fixed[i] = qg > hi ? hi : lo;
        changed = true;
      }
    }
    if (!changed) break;
  }

  sol.iterations = total_iter;
  sol.vm.assign(vm.data(), vm.data() + n);
  sol.va.assign(va.data(), va.data() + n);
  VectorXcd V(n);
  for (int i = 0; i < n; ++i) V(i) = std::polar(vm(i), va(i));
  const VectorXcd S = V.cwiseProduct((Y * V).conjugate());
  sol.slack_p_mw = (S(slack).real() + pd(slack)) * base;
  sol.slack_q_mvar = (S(slack).imag() + qd(slack)) * base;
  for (const auto& g : c.gens) {
    const int i = static_cast<int>(*c.bus_index(g.bus));
    int share = 0;
    for (const auto& h : c.gens) share += h.bus == g.bus;
    sol.gen_q_mvar.push_back((S(i).imag() + qd(i)) * base / share);
  }
  for (const auto& br : c.branches) {
    if (!br.in_service) continue;
    const auto f = *c.bus_index(br.from), t = *c.bus_index(br.to);
    const Complex y = 1.0 / Complex(br.r, br.x);
    const Complex sh(0.0, br.b / 2.0);
    const Complex sf = V(f) * std::conj((y + sh) * V(f) - y * V(t)) * base;
    const Complex st = V(t) * std::conj((y + sh) * V(t) - y * V(f)) * base;
    sol.flows.push_back({br.from, br.to, sf.real(), sf.imag(), st.real(), st.imag()});
    sol.loss_mw += (sf + st).real();
  }
  return sol;
}

TransmissionCase apply_outage(const TransmissionCase& c, int from, int to) {
  TransmissionCase out = c;
  for (auto& br : out.branches) {
    if (!((br.from == from && br.to == to) || (br.from == to && br.to == from)) || !br.in_service) continue;
    br.in_service = false;
    if (!is_connected(out))
      throw ValidationError("outage of branch " + std::to_string(from) + "-" + std::to_string(to) +
                            " islands part of the network");
    return out;
  }
  throw ValidationError("no in-service branch " + std::to_string(from) + "-" + std::to_string(to));
}

void write_bus_csv(std::ostream& os, const TransmissionCase& c, const TransPfSolution& s) {
  os << "bus,vm_pu,va_deg\n" << std::setprecision(10);
  for (std::size_t i = 0; i < c.buses.size(); ++i)
    os << c.buses[i].id << ',' << s.vm[i] << ',' << s.va[i] * 180.0 / std::numbers::pi << '\n';
}

Json summary_json(const TransmissionCase& c, const TransPfSolution& s) {
  Json buses = Json::array();
  for (std::size_t i = 0; i < c.buses.size(); ++i)
    buses.push_back({{"bus", c.buses[i].id}, {"vm_pu", s.vm[i]}, {"va_deg", s.va[i] * 180.0 / std::numbers::pi}});
  return {{"iterations", s.iterations},
          {"max_mismatch", s.max_mismatch},
          {"slack_p_mw", s.slack_p_mw},
          {"slack_q_mvar", s.slack_q_mvar},
          {"loss_mw", s.loss_mw},
          {"buses", buses}};
}

}  // namespace tdvar
