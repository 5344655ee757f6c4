#include "tdvar/dopf.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "tdvar/parallel.hpp"

namespace tdvar {

std::array<double, 3> var_envelope(const Der& der, double solar, double curtailment) {
  if (curtailment < 0.0 || curtailment > 1.0) throw ValidationError("curtailment must lie in [0, 1]");
  std::array<double, 3> out{};
  for (int p = 0; p < 3; ++p) {
    const double s = der.s_inv_kva[p];
    const double gen = der.generation_kw(p, solar, curtailment);
    if (gen > s * (1.0 + 1e-12))
      throw ValidationError("DER at node index " + std::to_string(der.node) + " phase " + phase_letter(p) +
                            ": generation " + std::to_string(gen) + " kW exceeds rating " + std::to_string(s) +
                            " kVA");
    out[p] = std::sqrt(std::max(0.0, s * s - gen * gen));
  }
  return out;
}

double DopfProblem::predicted_q0_kvar(const Eigen::VectorXd& x) const {
  const double y0 = x(y0_index());
  double reg = regularization * (x.head(vars.size()).squaredNorm() + y0 * y0 - 2.0 * y0_ref * y0);
  return (qp.objective(x) - reg + objective_constant) * s_base_kva;
}

int nearest_tap(const Oltc& oltc, double v0, double y0) {
  const double ratio = std::sqrt(std::max(y0, 0.0)) / v0;
  return oltc.clamp(static_cast<int>(std::lround((ratio - 1.0) / oltc.step)));
}

DopfProblem assemble(const Feeder& f, const LinModel& model, const OperatingPoint& op, const DopfOptions& opt) {
  if (model.size() != f.size()) throw ValidationError("linear model was built for a different feeder");
  DopfProblem prob;
  prob.s_base_kva = model.s_base_kva;
  const double sb = model.s_base_kva;

  for (int d = 0; d < static_cast<int>(f.ders.size()); ++d) {
    const auto& der = f.ders[d];
    const auto qbar = var_envelope(der, op.solar, op.curtailment);
    for (int p = 0; p < 3; ++p) {
      if (!f.nodes[der.node].phases.has(p) || der.s_inv_kva[p] <= 0.0) continue;
      prob.vars.emplace_back(d, p);
      prob.q_bar_kvar.push_back(opt.zero_var ? 0.0 : qbar[p]);
    }
  }
  const int nq = static_cast<int>(prob.vars.size());
  const int n = nq + 1;
  const int iy = nq;

  const Injections inj = operating_injections(f, op.load, op.solar, op.curtailment, nullptr);
  const LinSolution base = lin_solve(model, Eigen::Vector3d::Zero(), inj);

  // Unit-var responses of squared voltages and reactive flows.
  std::vector<LinSolution> unit;
  unit.reserve(nq);
  for (const auto& [d, p] : prob.vars) {
    Injections ik = inj;
    ik.kva[f.ders[d].node][p] += Complex(0.0, sb);
    unit.push_back(lin_solve(model, Eigen::Vector3d::Zero(), ik));
  }

  for (int node = 0; node < static_cast<int>(f.size()); ++node)
    for (int p = 0; p < 3; ++p)
      if (f.nodes[node].phases.has(p)) prob.y_rows.emplace_back(node, p);
  const int ny = static_cast<int>(prob.y_rows.size());
  prob.y_map = Eigen::MatrixXd::Zero(ny, n);
  prob.y_offset = Eigen::VectorXd::Zero(ny);
  for (int r = 0; r < ny; ++r) {
    const auto [node, p] = prob.y_rows[r];
    // The bias makes the rows exact at the calibration point.
    prob.y_offset(r) = base.y[node](p) + (model.y_bias.empty() ? 0.0 : model.y_bias[node](p));
    for (int k = 0; k < nq; ++k) prob.y_map(r, k) = unit[k].y[node](p) - base.y[node](p);
    prob.y_map(r, iy) = 1.0;
  }

  // Objective: sum of reactive demand minus inverter var, plus the frozen-y loss quadratic.
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  double c = model.q_loss_offset;
  for (int node = 0; node < static_cast<int>(f.size()); ++node)
    for (int p = 0; p < 3; ++p) c += -inj.kva[node][p].imag() / sb;
  for (int k = 0; k < nq; ++k) g(k) = -1.0;
  Eigen::VectorXd col(nq);
  for (int node = 1; node < static_cast<int>(f.size()); ++node) {
    const int e = model.topology.parent_line[node];
    const int up = model.topology.parent[node];
    for (int p = 0; p < 3; ++p) {
      if (!f.nodes[node].phases.has(p)) continue;
      const double w = model.x_diag[e](p) / model.y_base[up](p);
      if (w == 0.0) continue;
      const double pb = base.p[node](p), qb = base.q[node](p);
      for (int k = 0; k < nq; ++k) col(k) = unit[k].q[node](p) - qb;
      H.topLeftCorner(nq, nq) += 2.0 * w * col * col.transpose();
      g.head(nq) += 2.0 * w * qb * col;
      c += w * (pb * pb + qb * qb);
    }
  }

  // Raising the head voltage by dy scales every loss by about 1 - dy / y, a
  // linear term in y0 around the calibration point.
  double dloss = 0.0;
  for (int node = 1; node < static_cast<int>(f.size()); ++node) {
    const int up = model.topology.parent[node];
    for (int p = 0; p < 3; ++p)
      if (f.nodes[node].phases.has(p) && model.y_base[up](p) > 0.0) dloss += model.loss[node](p).imag() / model.y_base[up](p);
  }
  g(iy) -= dloss;
  c += dloss * model.y_base[0].maxCoeff();

  prob.y0_ref = op.v0 * op.v0;
  prob.y0_min = std::pow(op.v0 * f.oltc.ratio_at(f.oltc.tap_min), 2);
  prob.y0_max = std::pow(op.v0 * f.oltc.ratio_at(f.oltc.tap_max), 2);
  const double eps = opt.regularization * std::max(1.0, H.cwiseAbs().maxCoeff());
  prob.regularization = eps;
  H.diagonal().array() += 2.0 * eps;
  g(iy) += -2.0 * eps * prob.y0_ref;
  prob.objective_constant = c;

  const int rows = ny + nq + 1;
  QpProblem& qp = prob.qp;
  qp.H = H;
  qp.g = g;
  qp.A = Eigen::MatrixXd::Zero(rows, n);
  qp.lower.resize(rows);
  qp.upper.resize(rows);
  const double ylo = opt.v_lo * opt.v_lo, yhi = opt.v_hi * opt.v_hi;
  for (int r = 0; r < ny; ++r) {
    qp.A.row(r) = prob.y_map.row(r);
    qp.lower(r) = ylo - prob.y_offset(r);
    qp.upper(r) = yhi - prob.y_offset(r);
    qp.labels.push_back("voltage " + f.nodes[prob.y_rows[r].first].name + "." + phase_letter(prob.y_rows[r].second));
  }
  for (int k = 0; k < nq; ++k) {
    const int r = ny + k;
    qp.A(r, k) = 1.0;
    qp.lower(r) = -prob.q_bar_kvar[k] / sb;
    qp.upper(r) = prob.q_bar_kvar[k] / sb;
    qp.labels.push_back("var " + f.nodes[f.ders[prob.vars[k].first].node].name + "." +
                        phase_letter(prob.vars[k].second));
  }
  qp.A(rows - 1, iy) = 1.0;
  qp.lower(rows - 1) = opt.fixed_y0 ? *opt.fixed_y0 : prob.y0_min;
  qp.upper(rows - 1) = opt.fixed_y0 ? *opt.fixed_y0 : prob.y0_max;
  qp.labels.push_back("head y0");
  return prob;
}

DistPfSolution solve_with(const Feeder& f, const OperatingPoint& op, int tap, const VarSetpoints* q,
                          const DistPfOptions& pf) {
  const auto inj = operating_injections(f, op.load, op.solar, op.curtailment, q);
  return solve(f, balanced_voltage(op.v0 * f.oltc.ratio_at(tap)), inj, pf);
}

namespace {

struct Stage {
  DopfProblem prob;
  QpResult res;
  Eigen::VectorXd x;  // after re-centring y0
};

VarSetpoints setpoints(const Feeder& f, const DopfProblem& prob, const Eigen::VectorXd& x) {
  VarSetpoints q(f.ders.size(), {0.0, 0.0, 0.0});
  for (std::size_t k = 0; k < prob.vars.size(); ++k) {
    const double v = x(k) * prob.s_base_kva;
    const double cap = prob.q_bar_kvar[k];
    q[prob.vars[k].first][prob.vars[k].second] = std::clamp(v, -cap, cap);  // bound is exact, not a tolerance
  }
  return q;
}

// With q fixed, y0 only shifts every voltage. Keep the optimizer's value but
// at least half a tap inside the feasible interval so that the nearest
// discrete tap stays feasible in the linear model.
double place_y0(const DopfProblem& prob, const Eigen::VectorXd& x, double v_lo, double v_hi, double half_tap) {
  const int iy = prob.y0_index();
  const Eigen::VectorXd y = prob.y_map * x + prob.y_offset;
  double lo = prob.y0_min, hi = prob.y0_max;
  for (int r = 0; r < y.size(); ++r) {
    const double rest = y(r) - x(iy);
    lo = std::max(lo, v_lo * v_lo - rest);
    hi = std::min(hi, v_hi * v_hi - rest);
  }
  if (lo > hi) return x(iy);
  const double vl = std::sqrt(lo), vh = std::sqrt(hi), vx = std::sqrt(std::max(x(iy), 0.0));
  double v;
  if (vh - vl < 2.0 * half_tap) v = 0.5 * (vl + vh);
  else v = std::clamp(vx, vl + half_tap, vh - half_tap);
  return v * v;
}

Stage run_stage(const Feeder& f, const LinModel& model, const OperatingPoint& op, const DopfOptions& opt) {
  Stage st{assemble(f, model, op, opt), {}, {}};
  st.res = solve_qp(st.prob.qp, opt.qp);
  if (st.res.status != QpStatus::Optimal) {
    const std::string why = st.res.status == QpStatus::Infeasible ? "infeasible" : "iteration cap reached";
    throw SolverError("D-OPF " + why + "; most violated constraint: " + st.prob.qp.label(st.res.worst_row),
                      st.res.iterations, st.res.worst_violation);
  }
  st.x = st.res.x;
  if (!opt.fixed_y0)
    st.x(st.prob.y0_index()) = place_y0(st.prob, st.x, opt.v_lo, opt.v_hi, 0.5 * f.oltc.step * op.v0);
  return st;
}

VarDispatch dispatch_impl(const Feeder& f, const OperatingPoint& op, const DopfOptions& opt) {
  const int start_tap = f.oltc.tap;
  LinModel model = build_model(f, solve_with(f, op, start_tap, nullptr, opt.pf),
                               operating_injections(f, op.load, op.solar, op.curtailment, nullptr));

  auto attempt = [&](DopfOptions o, bool corrected, std::string* diag) -> std::optional<VarDispatch> {
    Stage st;
    for (int pass = 0; pass < std::max(1, o.calibration_passes); ++pass) {
      if (pass > 0) {
        const auto q = setpoints(f, st.prob, st.x);
        const int tap = o.fixed_y0 ? start_tap : nearest_tap(f.oltc, op.v0, st.x(st.prob.y0_index()));
        const auto inj = operating_injections(f, op.load, op.solar, op.curtailment, &q);
        model = build_model(f, solve(f, balanced_voltage(op.v0 * f.oltc.ratio_at(tap)), inj, o.pf), inj);
      }
      st = run_stage(f, model, op, o);
    }
    VarDispatch d;
    d.q_kvar = setpoints(f, st.prob, st.x);
    d.q_bar_kvar.assign(f.ders.size(), {0.0, 0.0, 0.0});
    for (std::size_t k = 0; k < st.prob.vars.size(); ++k)
      d.q_bar_kvar[st.prob.vars[k].first][st.prob.vars[k].second] = st.prob.q_bar_kvar[k];
    d.y0 = st.x(st.prob.y0_index());
    d.tap_continuous = (std::sqrt(d.y0) / op.v0 - 1.0) / f.oltc.step;
    d.tap = o.fixed_y0 ? start_tap : nearest_tap(f.oltc, op.v0, d.y0);
    d.predicted_q0_kvar = st.prob.predicted_q0_kvar(st.x);
    d.kkt = kkt_residuals(st.prob.qp, st.res.x, st.res.lambda);
    d.qp_iterations = st.res.iterations;
    d.corrected = corrected;

    // Exact verification at the discrete tap, against the nominal band.
    const auto sol = solve_with(f, op, d.tap, &d.q_kvar, o.pf);
    const auto net = substation_net(sol);
    d.achieved_q0_kvar = net.q_kvar;
    d.achieved_p0_kw = net.p_kw;
    const auto range = voltage_range(f, sol);
    d.vmin_pu = range.vmin_pu;
    d.vmax_pu = range.vmax_pu;
    const auto bad = voltage_violations(f, sol, opt.v_lo * opt.v_lo, opt.v_hi * opt.v_hi);
    if (bad.empty()) return d;
    if (diag) {
      std::ostringstream os;
      os << bad.size() << " violation(s) at tap " << d.tap << ", first " << f.nodes[bad.front().node].name << '.'
         << phase_letter(bad.front().phase) << " = " << bad.front().magnitude_pu << " pu";
      *diag = os.str();
    }
    return std::nullopt;
  };

  std::string diag;
  if (auto d = attempt(opt, false, &diag)) return *d;
  DopfOptions tight = opt;
  tight.v_lo += f.oltc.step;
  tight.v_hi -= f.oltc.step;
  if (auto d = attempt(tight, true, &diag)) return *d;
  throw SolverError("D-OPF dispatch failed exact verification after the tightened re-solve: " + diag, 0, 0.0);
}

}  // namespace

VarDispatch max_var_support(const Feeder& f, const OperatingPoint& op, const DopfOptions& opt) {
  return dispatch_impl(f, op, opt);
}

VarDispatch no_support_dispatch(const Feeder& f, const OperatingPoint& op, const DopfOptions& opt) {
  DopfOptions o = opt;
  o.zero_var = true;
  return dispatch_impl(f, op, o);
}

VarSupportCurve support_curve(const Feeder& feeder, const DailyProfile& profile, const SupportCurveOptions& opt) {
  validate(profile);
  Feeder f = feeder.ders.empty() && opt.penetration == 0.0 ? feeder : scale_penetration(feeder, opt.penetration);
  VarSupportCurve curve;
  curve.points.resize(profile.size());
  curve.dispatch.resize(profile.size());
  parallel_for(profile.size(), opt.threads, [&](std::size_t i) {
    OperatingPoint op{profile.load[i], profile.solar[i], 0.0, opt.v0};
    SupportPoint pt;
    pt.t = profile.hours[i];
    pt.q_no_kvar = no_support_dispatch(f, op, opt.dopf).achieved_q0_kvar;
    curve.dispatch[i] = max_var_support(f, op, opt.dopf);
    pt.q_max_kvar = curve.dispatch[i].achieved_q0_kvar;
    if (opt.curtailment) {
      op.curtailment = *opt.curtailment;
      pt.q_max_curtailed_kvar = max_var_support(f, op, opt.dopf).achieved_q0_kvar;
    }
    curve.points[i] = pt;
  });
  return curve;
}

ReductionStats reduction_stats(const VarSupportCurve& curve, bool curtailed) {
  ReductionStats st;
  double sum = 0.0, sum_peak = 0.0;
  int n = 0, n_peak = 0;
  for (const auto& pt : curve.points) {
    if (!(pt.q_no_kvar > 0.0)) {
      st.excluded_hours.push_back(pt.t);
      continue;
    }
    double qmax = pt.q_max_kvar;
    if (curtailed) {
      if (!pt.q_max_curtailed_kvar) throw ValidationError("curve has no curtailed column");
      qmax = *pt.q_max_curtailed_kvar;
    }
    const double r = 100.0 * (pt.q_no_kvar - qmax) / pt.q_no_kvar;
    sum += r;
    ++n;
    if (pt.t >= kSolarWindowStart - 1e-9 && pt.t <= kSolarWindowEnd + 1e-9) {
      sum_peak += r;
      ++n_peak;
    }
  }
  st.average_pct = n ? sum / n : 0.0;
  st.peak_pct = n_peak ? sum_peak / n_peak : 0.0;
  return st;
}

void write_dispatch_csv(std::ostream& os, const Feeder& f, double t, const VarDispatch& d, bool header) {
  if (header) os << "t,node,phase,q_inv_kvar\n";
  os << std::setprecision(10);
  for (std::size_t k = 0; k < f.ders.size(); ++k)
    for (int p = 0; p < 3; ++p)
      if (f.ders[k].s_inv_kva[p] > 0.0)
        os << t << ',' << f.nodes[f.ders[k].node].name << ',' << phase_letter(p) << ',' << d.q_kvar[k][p] << '\n';
}

void write_curve_csv(std::ostream& os, const VarSupportCurve& curve) {
  os << "t,q_no_support_kvar,q_max_support_kvar,q_max_support_curtailed_kvar\n";
  os << std::setprecision(10);
  for (const auto& pt : curve.points) {
    os << pt.t << ',' << pt.q_no_kvar << ',' << pt.q_max_kvar << ',';
    if (pt.q_max_curtailed_kvar) os << *pt.q_max_curtailed_kvar;
    os << '\n';
  }
}

Json dispatch_json(const Feeder& f, const VarDispatch& d) {
  Json q = Json::array();
  for (std::size_t k = 0; k < f.ders.size(); ++k)
    for (int p = 0; p < 3; ++p)
      if (f.ders[k].s_inv_kva[p] > 0.0)
        q.push_back({{"node", f.nodes[f.ders[k].node].name},
                     {"phase", std::string(1, phase_letter(p))},
                     {"q_inv_kvar", d.q_kvar[k][p]},
                     {"q_bar_kvar", d.q_bar_kvar[k][p]}});
  return {{"y0", d.y0},
          {"tap", d.tap},
          {"tap_continuous", d.tap_continuous},
          {"predicted_q0_kvar", d.predicted_q0_kvar},
          {"achieved_q0_kvar", d.achieved_q0_kvar},
          {"achieved_p0_kw", d.achieved_p0_kw},
          {"vmin_pu", d.vmin_pu},
          {"vmax_pu", d.vmax_pu},
          {"corrected", d.corrected},
          {"kkt_residual", d.kkt.max()},
          {"setpoints", q}};
}

}  // namespace tdvar
