#pragma once

#include <vector>

#include "dist_pf.hpp"
#include "io.hpp"
#include "netmodel.hpp"

namespace tdvar {

/// Squared-voltage sensitivities of one line segment (per unit):
/// y_child = y_parent - mp * P - mq * Q, with P, Q the sending-end flows.
struct LineSensitivity {
  Eigen::Matrix3d mp = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d mq = Eigen::Matrix3d::Zero();
};

/// Builds (mp, mq) from the line impedance in per unit (`z_base` ohms) under
/// the fixed phase-ratio approximation V_phi / V_psi = alpha^(psi - phi).
LineSensitivity build_sensitivities(const LineSegment& line, double z_base);

/// Linearized feeder model calibrated at a base operating point.
/// Immutable after construction; all power quantities are per unit on the
/// per-phase base.
struct LinModel {
  Topology topology;
  std::vector<PhaseSet> phases;            // per node
  std::vector<LineSensitivity> sens;       // per line
  std::vector<Eigen::Vector3d> x_diag;     // per line, self reactance pu
  std::vector<Vector3c> loss;              // per node: loss of its supply line, pu
  std::vector<Eigen::Vector3d> y_base;     // per node, squared magnitude at base
  std::vector<Eigen::Vector3d> y_bias;     // per node, exact minus linear squared magnitude at base
  double q_loss_offset = 0.0;              // exact reactive loss minus the estimate at base, pu
  double s_base_kva = 1.0;                 // per-phase power base

  std::size_t size() const { return phases.size(); }
};

/// Flows and squared voltages from one backward and one forward pass.
struct LinSolution {
  std::vector<Eigen::Vector3d> y;  // per node
  std::vector<Eigen::Vector3d> p;  // per node: sending-end flow on its supply line, pu
  std::vector<Eigen::Vector3d> q;
  Eigen::Vector3d p_head = Eigen::Vector3d::Zero();  // flow drawn from the substation, pu
  Eigen::Vector3d q_head = Eigen::Vector3d::Zero();
};

/// Sensitivities only; losses zero and y_base = 1.
LinModel build_lossless_model(const Feeder& feeder);

/// Calibrates losses, y_base and the loss offset from an exact solution at the
/// base point; `base_injections` must be the injections that produced it.
LinModel build_model(const Feeder& feeder, const DistPfSolution& base, const Injections& base_injections);

/// Runs the exact solver at the base point, then calibrates. Propagates SolverError.
LinModel calibrate_losses(const Feeder& feeder, const std::array<Complex, 3>& head_voltage_pu,
                          const Injections& base_injections, const DistPfOptions& options = {});

/// `y0` is the squared head magnitude per phase; injections in kVA.
LinSolution lin_solve(const LinModel& model, const Eigen::Vector3d& y0, const Injections& injections);
LinSolution lin_solve(const LinModel& model, double y0, const Injections& injections);

/// Diagonal-reactance loss estimate with y frozen at y_base, per unit.
double reactive_loss_estimate_pu(const LinModel& model, const LinSolution& flows);
/// Same in kVAr.
double reactive_loss_estimate(const LinModel& model, const LinSolution& flows);

/// {lines: [{from, to, mp, mq}]} for inspection.
Json sensitivities_json(const Feeder& feeder, const LinModel& model);

}  // namespace tdvar
