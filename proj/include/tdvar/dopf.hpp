#pragma once

#include <array>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "tdvar/dist_pf.hpp"
#include "tdvar/lindist.hpp"
#include "tdvar/qp.hpp"

namespace tdvar {

/// Largest reactive output per phase, kVAr: sqrt(S^2 - ((1-c) p_peak solar)^2).
/// Throws ValidationError when generation exceeds the rating.
std::array<double, 3> var_envelope(const Der& der, double solar, double curtailment);

/// Loading and primary-side voltage for one D-OPF solve.
struct OperatingPoint {
  double load = 1.0;         // load profile value
  double solar = 0.0;        // solar profile value
  double curtailment = 0.0;
  double v0 = 1.0;           // primary (transmission side) voltage magnitude, pu
};

struct DopfOptions {
  double v_lo = 0.95;
  double v_hi = 1.05;
  int calibration_passes = 2;
  double regularization = 1e-8;   // relative to the largest Hessian entry
  std::optional<double> fixed_y0;  // pin the head voltage instead of optimizing it
  bool zero_var = false;           // inverters held at q = 0; only the head voltage is chosen
  DistPfOptions pf;
  QpOptions qp;
};

/// The QP in decisions x = [q_inv per DER phase (pu), y0].
struct DopfProblem {
  QpProblem qp;
  std::vector<std::pair<int, int>> vars;  // (der index, phase) for each q entry
  std::vector<double> q_bar_kvar;
  std::vector<std::pair<int, int>> y_rows;  // (node, phase) of each voltage row
  Eigen::MatrixXd y_map;      // squared voltages = y_map * x + y_offset
  Eigen::VectorXd y_offset;
  double objective_constant = 0.0;  // pu; Q0 estimate = (qp objective + constant) * s_base
  double s_base_kva = 1.0;
  double y0_ref = 1.0;
  double y0_min = 0.81;
  double y0_max = 1.21;
  double regularization = 0.0;

  int y0_index() const { return static_cast<int>(vars.size()); }
  /// Q0 estimate in kVAr without the regularization terms.
  double predicted_q0_kvar(const Eigen::VectorXd& x) const;
};

/// Builds the D-OPF around `model`. The head range follows the feeder's OLTC.
DopfProblem assemble(const Feeder& feeder, const LinModel& model, const OperatingPoint& op,
                     const DopfOptions& options = {});

struct VarDispatch {
  VarSetpoints q_kvar;        // per DER, per phase
  VarSetpoints q_bar_kvar;
  double y0 = 1.0;            // optimal squared secondary voltage
  double tap_continuous = 0.0;
  int tap = 0;
  double predicted_q0_kvar = 0.0;
  double achieved_q0_kvar = 0.0;
  double achieved_p0_kw = 0.0;
  double vmin_pu = 0.0;
  double vmax_pu = 0.0;
  bool corrected = false;     // verification needed the tightened band
  int qp_iterations = 0;
  KktResiduals kkt;
};

/// Calibrate, solve, recalibrate at the dispatch and re-solve, then verify with
/// the exact solver at the nearest tap. Throws SolverError when neither the
/// nominal nor the tightened band verifies, or when the QP fails.
VarDispatch max_var_support(const Feeder& feeder, const OperatingPoint& op, const DopfOptions& options = {});

/// Same machinery with every inverter at zero var: the no-support baseline.
VarDispatch no_support_dispatch(const Feeder& feeder, const OperatingPoint& op, const DopfOptions& options = {});

/// Exact solve at the given taps and setpoints.
DistPfSolution solve_with(const Feeder& feeder, const OperatingPoint& op, int tap, const VarSetpoints* q_kvar,
                          const DistPfOptions& options = {});

/// Tap whose secondary voltage is nearest to sqrt(y0).
int nearest_tap(const Oltc& oltc, double v0, double y0);

struct SupportPoint {
  double t = 0.0;
  double q_no_kvar = 0.0;
  double q_max_kvar = 0.0;
  std::optional<double> q_max_curtailed_kvar;
};

struct VarSupportCurve {
  std::vector<SupportPoint> points;
  std::vector<VarDispatch> dispatch;  // max-support dispatch per step
};

struct SupportCurveOptions {
  double penetration = 0.8;
  std::optional<double> curtailment;  // adds the curtailed column
  double v0 = 1.0;
  DopfOptions dopf;
  int threads = 0;                    // 0: hardware concurrency
};

/// Scales `feeder` to the penetration level and solves every profile step.
VarSupportCurve support_curve(const Feeder& feeder, const DailyProfile& profile, const SupportCurveOptions& options);

struct ReductionStats {
  double average_pct = 0.0;
  double peak_pct = 0.0;
  std::vector<double> excluded_hours;  // steps with no positive no-support demand
};

inline constexpr double kSolarWindowStart = 11.0;
inline constexpr double kSolarWindowEnd = 15.0;

/// 100 (Q_no - Q_max) / Q_no averaged over the day and over 11:00-15:00.
ReductionStats reduction_stats(const VarSupportCurve& curve, bool curtailed = false);

/// `t,node,phase,q_inv_kvar`
void write_dispatch_csv(std::ostream& os, const Feeder& feeder, double t, const VarDispatch& dispatch,
                        bool header = true);
/// `t,q_no_support_kvar,q_max_support_kvar,q_max_support_curtailed_kvar`
void write_curve_csv(std::ostream& os, const VarSupportCurve& curve);
Json dispatch_json(const Feeder& feeder, const VarDispatch& dispatch);

}  // namespace tdvar
