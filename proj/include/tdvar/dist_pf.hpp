#pragma once

#include <array>
#include <ostream>
#include <vector>

#include "io.hpp"
#include "netmodel.hpp"

namespace tdvar {

/// Net complex power injected at each node and phase, kW + j kVAr.
/// Generation is positive, consumption negative. Absent phases stay zero.
struct Injections {
  std::vector<std::array<Complex, 3>> kva;

  explicit Injections(std::size_t nodes = 0) : kva(nodes) {}
  std::size_t size() const { return kva.size(); }
  Complex total(int phase) const;
};

/// Per-DER per-phase inverter reactive injection, kVAr (positive = supplies vars).
using VarSetpoints = std::vector<std::array<double, 3>>;

/// Loads scaled by `load_scale` plus capacitors.
Injections load_injections(const Feeder& feeder, double load_scale = 1.0);

/// Loads, DER real power at `solar` after `curtailment`, and optional inverter vars.
Injections operating_injections(const Feeder& feeder, double load_scale, double solar, double curtailment,
                                const VarSetpoints* q_inv_kvar = nullptr);

struct DistPfOptions {
  double tolerance_pu = 1e-6;  // max per-phase voltage change between sweeps
  int max_iterations = 100;
  double collapse_pu = 0.3;    // any |V| below this is treated as divergence
};

struct DistPfSolution {
  std::vector<Vector3c> voltage;  // volts line-to-neutral, per node
  std::vector<Vector3c> current;  // amps, per line (feeder.lines order), parent -> child
  std::array<Complex, 3> head_power_kva{};  // power drawn from the substation per phase
  int iterations = 0;
  double max_mismatch_pu = 0.0;
  double v_base = 1.0;

  double vmag_pu(int node, int phase) const { return std::abs(voltage[node](phase)) / v_base; }
  double vang_deg(int node, int phase) const;
};

/// Backward/forward sweep. `head_voltage_pu` holds the three phasors at node 0.
/// Throws SolverError on iteration cap, collapse below `collapse_pu`, or NaN.
DistPfSolution solve(const Feeder& feeder, const std::array<Complex, 3>& head_voltage_pu,
                     const Injections& injections, const DistPfOptions& options = {});

/// Balanced phasors of magnitude `v` at angle `angle_rad` for phase A.
std::array<Complex, 3> balanced_voltage(double v, double angle_rad = 0.0);

struct NetPower {
  double p_kw = 0.0;
  double q_kvar = 0.0;
};

/// Totals over phases; positive means the feeder consumes from the grid.
NetPower substation_net(const DistPfSolution& solution);

/// Series losses of each line, per phase, kVA.
std::vector<Vector3c> line_losses(const Feeder& feeder, const DistPfSolution& solution);

struct VoltageViolation {
  int node;
  int phase;
  double magnitude_pu;
};

/// Every energized phase whose squared magnitude lies outside [y_lo, y_hi].
std::vector<VoltageViolation> voltage_violations(const Feeder& feeder, const DistPfSolution& solution,
                                                 double y_lo = 0.95 * 0.95, double y_hi = 1.05 * 1.05);

struct VoltageRange {
  double vmin_pu = 0.0;
  double vmax_pu = 0.0;
};
VoltageRange voltage_range(const Feeder& feeder, const DistPfSolution& solution);

/// CSV `node,phase,vmag_pu,vang_deg`.
void write_voltage_csv(std::ostream& os, const Feeder& feeder, const DistPfSolution& solution);
/// {p0_kw, q0_kvar, iterations}
Json summary_json(const DistPfSolution& solution);

}  // namespace tdvar
