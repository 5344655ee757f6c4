#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace tdvar {

/// min 0.5 x'Hx + g'x  s.t.  lower <= A x <= upper.
/// Rows with lower == upper are equalities; use +-infinity for one-sided rows.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd A;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::vector<std::string> labels;  // optional, one per row, for diagnostics

  int variables() const { return static_cast<int>(g.size()); }
  int rows() const { return static_cast<int>(A.rows()); }
  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(H * x) + g.dot(x); }
  std::string label(int row) const;
};

enum class QpStatus { Optimal, Infeasible, MaxIterations };

struct QpResult {
  QpStatus status = QpStatus::Optimal;
  Eigen::VectorXd x;
  /// Row multipliers with H x + g + A' lambda = 0; lambda > 0 on an active
  /// upper bound, lambda < 0 on an active lower bound.
  Eigen::VectorXd lambda;
  double objective = 0.0;
  int iterations = 0;
  int worst_row = -1;  // most violated row when infeasible
  double worst_violation = 0.0;
};

struct QpOptions {
  int max_iterations = 1000;
  double feasibility_tol = 1e-9;
};

/// Dual active-set method of Goldfarb and Idnani. Requires H positive definite
/// (throws ValidationError otherwise) and finite data.
QpResult solve_qp(const QpProblem& problem, const QpOptions& options = {});

struct KktResiduals {
  double stationarity = 0.0;     // |H x + g + A' lambda|_inf
  double primal = 0.0;           // largest bound violation
  double dual = 0.0;             // largest multiplier with the wrong sign for its row
  double complementarity = 0.0;  // largest |lambda_i| * slack_i
  double max() const;
};

KktResiduals kkt_residuals(const QpProblem& problem, const Eigen::VectorXd& x, const Eigen::VectorXd& lambda);

/// Throws ValidationError if the dimensions disagree or data is not finite.
void check_shapes(const QpProblem& problem);

}  // namespace tdvar
