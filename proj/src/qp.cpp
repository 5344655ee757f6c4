#include "tdvar/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tdvar/types.hpp"

namespace tdvar {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string QpProblem::label(int row) const {
  if (row >= 0 && row < static_cast<int>(labels.size())) return labels[row];
  return "row " + std::to_string(row);
}

double KktResiduals::max() const { return std::max({stationarity, primal, dual, complementarity}); }

void check_shapes(const QpProblem& p) {
  const auto n = p.g.size();
  if (p.H.rows() != n || p.H.cols() != n) throw ValidationError("qp: Hessian shape does not match g");
  if (p.A.cols() != n && p.A.rows() > 0) throw ValidationError("qp: constraint matrix has wrong column count");
  if (p.lower.size() != p.A.rows() || p.upper.size() != p.A.rows())
    throw ValidationError("qp: bound vectors do not match constraint rows");
  if (!p.H.allFinite() || !p.g.allFinite() || !p.A.allFinite()) throw ValidationError("qp: non-finite data");
  for (int i = 0; i < p.rows(); ++i) {
    if (std::isnan(p.lower(i)) || std::isnan(p.upper(i))) throw ValidationError("qp: NaN bound on " + p.label(i));
    if (p.lower(i) > p.upper(i)) throw ValidationError("qp: lower bound exceeds upper on " + p.label(i));
  }
}

namespace {

// One-sided constraint  sign * a_row' x >= rhs.
struct Side {
  int row;
  double sign;
  double rhs;
  bool equality;
};

}  // namespace

// Uses the Goldfarb-Idnani notation: J = L^-T, the active normals N are
// carried through J, and the step directions come from a fresh QR of J'N on
// each iteration. The sets are small, so refactoring is cheaper than updating.
QpResult solve_qp(const QpProblem& p, const QpOptions& opt) {
  check_shapes(p);
  const int n = p.variables();
  QpResult res;

  Eigen::LLT<MatrixXd> llt(p.H);
  if (llt.info() != Eigen::Success) throw ValidationError("qp: Hessian is not positive definite");
  const MatrixXd L = llt.matrixL();
  const MatrixXd J = L.transpose().triangularView<Eigen::Upper>().solve(MatrixXd::Identity(n, n));

  std::vector<Side> sides;
  for (int i = 0; i < p.rows(); ++i) {
    if (p.lower(i) == p.upper(i)) {
      sides.push_back({i, 1.0, p.lower(i), true});
      continue;
    }
    if (std::isfinite(p.lower(i))) sides.push_back({i, 1.0, p.lower(i), false});
    if (std::isfinite(p.upper(i))) sides.push_back({i, -1.0, -p.upper(i), false});
  }
  auto normal = [&](const Side& s) -> VectorXd { return s.sign * p.A.row(s.row).transpose(); };
  auto slack = [&](const Side& s, const VectorXd& x) { return s.sign * p.A.row(s.row).dot(x) - s.rhs; };

  VectorXd x = -llt.solve(p.g);
  std::vector<int> active;   // indices into sides
  std::vector<double> u;     // multipliers of the active sides, >= 0 for inequalities
  const double inf = std::numeric_limits<double>::infinity();

  // z: primal step, r: rate of change of the active multipliers, and whether
  // the new normal is (numerically) dependent on the active ones.
  auto directions = [&](const VectorXd& np, VectorXd& z, VectorXd& r) {
    const VectorXd d = J.transpose() * np;
    const int q = static_cast<int>(active.size());
    if (q == 0) {
      z = J * d;
      r.resize(0);
      return d.squaredNorm() <= 0.0;
    }
    MatrixXd JN(n, q);
    for (int k = 0; k < q; ++k) JN.col(k) = J.transpose() * normal(sides[active[k]]);
    Eigen::HouseholderQR<MatrixXd> qr(JN);
    const MatrixXd Q = qr.householderQ();
    const VectorXd qd = Q.transpose() * d;
    VectorXd d2 = qd;
    d2.head(q).setZero();
    z = J * (Q * d2);
    r = qr.matrixQR().topRows(q).triangularView<Eigen::Upper>().solve(qd.head(q));
    return d2.squaredNorm() <= 1e-20 * d.squaredNorm();
  };

  std::vector<char> in_active(sides.size(), 0);
  int iter = 0;
  auto drop_at = [&](int k) {
    in_active[active[k]] = 0;
    active.erase(active.begin() + k);
    u.erase(u.begin() + k);
  };

  while (true) {
    if (++iter > opt.max_iterations) {
      res.status = QpStatus::MaxIterations;
      break;
    }
    // Equalities enter first; afterwards the most violated inequality.
    int pick = -1;
    double worst = 0.0;
    for (int s = 0; s < static_cast<int>(sides.size()); ++s) {
      if (in_active[s] || !sides[s].equality) continue;
      pick = s;
      break;
    }
    if (pick >= 0) {
      if (slack(sides[pick], x) > 0.0) {
        sides[pick].sign = -sides[pick].sign;
        sides[pick].rhs = -sides[pick].rhs;
      }
    } else {
      for (int s = 0; s < static_cast<int>(sides.size()); ++s) {
        if (in_active[s]) continue;
        const double sl = slack(sides[s], x);
        const double tol = opt.feasibility_tol * std::max(1.0, std::abs(sides[s].rhs));
        if (sl < -tol && sl < worst) {
          worst = sl;
          pick = s;
        }
      }
    }
    if (pick < 0) break;

    const Side& sp = sides[pick];
    const VectorXd np = normal(sp);
    double u_new = 0.0;
    while (true) {
      VectorXd z, r;
      const bool dependent = directions(np, z, r);
      const double s_now = slack(sp, x);
      if (sp.equality && dependent && std::abs(s_now) <= opt.feasibility_tol * std::max(1.0, std::abs(sp.rhs))) {
        in_active[pick] = 1;  // redundant equality, never enters the basis
        break;
      }
      double t1 = inf;
      int drop = -1;
      for (int k = 0; k < static_cast<int>(active.size()); ++k) {
        if (sides[active[k]].equality) continue;
        if (r(k) > 0.0 && u[k] / r(k) < t1) {
          t1 = u[k] / r(k);
          drop = k;
        }
      }
      const double t2 = dependent ? inf : -s_now / z.dot(np);
      const double t = std::min(t1, t2);
      if (!std::isfinite(t)) {
        res.status = QpStatus::Infeasible;
        res.worst_row = sp.row;
        res.worst_violation = -s_now;
        res.x = x;
        res.iterations = iter;
        res.lambda = VectorXd::Zero(p.rows());
        res.objective = p.objective(x);
        return res;
      }
      if (!dependent) x += t * z;
      for (int k = 0; k < static_cast<int>(active.size()); ++k) u[k] -= t * r(k);
      u_new += t;
      if (t == t2) {
        active.push_back(pick);
        u.push_back(u_new);
        in_active[pick] = 1;
        break;
      }
      drop_at(drop);
    }
  }

  res.x = x;
  res.iterations = iter;
  res.objective = p.objective(x);
  // Side multipliers u >= 0 belong to sign*a'x >= rhs, i.e. contribute -sign*u to lambda.
  res.lambda = VectorXd::Zero(p.rows());
  for (std::size_t k = 0; k < active.size(); ++k) res.lambda(sides[active[k]].row) += -sides[active[k]].sign * u[k];
  if (res.status == QpStatus::Optimal) {
    // Final feasibility audit so callers never see a silently infeasible point.
    for (int i = 0; i < p.rows(); ++i) {
      const double ax = p.A.row(i).dot(x);
      const double v = std::max(p.lower(i) - ax, ax - p.upper(i));
      if (v > res.worst_violation) {
        res.worst_violation = v;
        res.worst_row = i;
      }
    }
  }
  return res;
}

KktResiduals kkt_residuals(const QpProblem& p, const VectorXd& x, const VectorXd& lambda) {
  KktResiduals k;
  const VectorXd grad = p.H * x + p.g + p.A.transpose() * lambda;
  k.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
  for (int i = 0; i < p.rows(); ++i) {
    const double ax = p.A.row(i).dot(x);
    k.primal = std::max({k.primal, p.lower(i) - ax, ax - p.upper(i)});
    const double li = lambda(i);
    if (p.lower(i) == p.upper(i)) continue;
    if (li > 0.0) {
      if (!std::isfinite(p.upper(i))) k.dual = std::max(k.dual, li);
      else k.complementarity = std::max(k.complementarity, li * std::abs(p.upper(i) - ax));
    } else if (li < 0.0) {
      if (!std::isfinite(p.lower(i))) k.dual = std::max(k.dual, -li);
      else k.complementarity = std::max(k.complementarity, -li * std::abs(ax - p.lower(i)));
    }
  }
  return k;
}

}  // namespace tdvar
