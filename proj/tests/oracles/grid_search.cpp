#include <cmath>
#include <limits>

#include "oracles.hpp"

namespace oracle {

using namespace tdvar;

namespace {

// Visits every point of a grid with `n` values per axis on [lo_i, hi_i].
template <class Fn>
void for_each_point(const std::vector<double>& lo, const std::vector<double>& hi, const std::vector<int>& n, Fn fn) {
  const std::size_t d = lo.size();
  std::vector<int> idx(d, 0);
  std::vector<double> x(d);
  while (true) {
    for (std::size_t i = 0; i < d; ++i)
      x[i] = n[i] == 1 ? 0.5 * (lo[i] + hi[i]) : lo[i] + (hi[i] - lo[i]) * idx[i] / (n[i] - 1);
    fn(x);
    std::size_t i = 0;
    while (i < d && ++idx[i] == n[i]) idx[i++] = 0;
    if (i == d) break;
  }
}

}  // namespace

GridOptimum grid_search(const Feeder& f, const OperatingPoint& op, int points, double v_lo, double v_hi) {
  std::vector<std::pair<int, int>> vars;
  std::vector<double> lo, hi;
  std::vector<int> n;
  for (int d = 0; d < static_cast<int>(f.ders.size()); ++d) {
    const auto qb = var_envelope(f.ders[d], op.solar, op.curtailment);
    for (int p = 0; p < 3; ++p)
      if (f.ders[d].s_inv_kva[p] > 0.0) {
        vars.push_back({d, p});
        lo.push_back(-qb[p]);
        hi.push_back(qb[p]);
        n.push_back(points);
      }
  }
  GridOptimum best;
  best.q0_kvar = std::numeric_limits<double>::infinity();
  for (int tap = f.oltc.tap_min; tap <= f.oltc.tap_max; ++tap) {
    for_each_point(lo, hi, n, [&](const std::vector<double>& x) {
      VarSetpoints q(f.ders.size(), {0.0, 0.0, 0.0});
      for (std::size_t k = 0; k < vars.size(); ++k) q[vars[k].first][vars[k].second] = x[k];
      ++best.evaluated;
      DistPfSolution sol;
      try {
        sol = solve_with(f, op, tap, &q);
      } catch (const SolverError&) {
        return;
      }
      for (int node = 0; node < static_cast<int>(f.size()); ++node)
        for (int p = 0; p < 3; ++p) {
          if (!f.nodes[node].phases.has(p)) continue;
          const double v = sol.vmag_pu(node, p);
          if (v < v_lo || v > v_hi) return;
        }
      const double q0 = substation_net(sol).q_kvar;
      if (q0 < best.q0_kvar) {
        best.q0_kvar = q0;
        best.q_kvar = q;
        best.tap = tap;
        best.found = true;
      }
    });
  }
  return best;
}

double grid_search_linear(const DopfProblem& p, int points, int y0_points) {
  const int nv = p.qp.variables();
  std::vector<double> lo(nv), hi(nv);
  std::vector<int> n(nv, points);
  for (int k = 0; k < static_cast<int>(p.vars.size()); ++k) {
    lo[k] = -p.q_bar_kvar[k] / p.s_base_kva;
    hi[k] = p.q_bar_kvar[k] / p.s_base_kva;
  }
  lo[p.y0_index()] = p.y0_min;
  hi[p.y0_index()] = p.y0_max;
  n[p.y0_index()] = y0_points;
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd xv(nv);
  for_each_point(lo, hi, n, [&](const std::vector<double>& x) {
    for (int i = 0; i < nv; ++i) xv(i) = x[i];
    const Eigen::VectorXd ax = p.qp.A * xv;
    for (int r = 0; r < ax.size(); ++r)
      if (ax(r) < p.qp.lower(r) - 1e-12 || ax(r) > p.qp.upper(r) + 1e-12) return;
    best = std::min(best, p.predicted_q0_kvar(xv));
  });
  return best;
}

}  // namespace oracle
