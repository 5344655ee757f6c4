#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tdvar/types.hpp"

namespace tdvar {

using Matrix3c = Eigen::Matrix3cd;
using Vector3c = Eigen::Vector3cd;

// ---------------------------------------------------------------------------
// Distribution feeder
// ---------------------------------------------------------------------------

struct LineSegment {
  int from = 0;  // node index (parent side)
  int to = 0;    // node index (child side)
  PhaseSet phases;
  Matrix3c impedance = Matrix3c::Zero();  // total series impedance, ohms
};

/// Constant-power demand. Capacitors are reactive loads of negative sign.
struct NodeLoad {
  std::array<Complex, 3> demand_kva{};  // p + jq consumed
  std::array<double, 3> cap_kvar{};     // nameplate var delivered by shunt caps

  /// Net consumption on a phase: demand minus capacitor var.
  Complex net_kva(int phase) const { return demand_kva[phase] - Complex(0.0, cap_kvar[phase]); }
};

/// Inverter-interfaced PV unit. Per-phase ratings; absent phases are zero.
struct Der {
  int node = 0;
  std::array<double, 3> s_inv_kva{};
  std::array<double, 3> p_peak_kw{};  // generation at solar profile value 1.0

  /// Available real power after curtailment `c` at solar profile value `solar`.
  double generation_kw(int phase, double solar, double curtailment = 0.0) const {
    return (1.0 - curtailment) * p_peak_kw[phase] * solar;
  }
};

/// Substation on-load tap changer at node 0.
struct Oltc {
  int tap = 0;
  int tap_min = -10;
  int tap_max = 10;
  double step = 0.01;       // pu per tap
  double bandwidth = 0.01;  // pu, full width of the deadband

  double ratio() const { return ratio_at(tap); }
  double ratio_at(int t) const { return 1.0 + t * step; }
  int clamp(int t) const { return t < tap_min ? tap_min : (t > tap_max ? tap_max : t); }
};

struct FeederNode {
  std::string name;
  PhaseSet phases;
  NodeLoad load;
};

/// Parent/child structure of a validated radial feeder.
struct Topology {
  std::vector<int> order;        // breadth-first from the root; order[0] == 0
  std::vector<int> parent;       // parent[0] == -1
  std::vector<int> parent_line;  // index into Feeder::lines, -1 for the root
  std::vector<std::vector<int>> children;
};

/// Radial three-phase feeder rooted at node 0.
///
/// Quantities are kept in physical units (kW, kVAr, ohms); the per-unit system
/// defined by `kv_ll` and `base_kva` applies only where a solver needs it.
struct Feeder {
  std::string name;
  double kv_ll = 4.16;      // nominal line-to-line voltage at node 0
  double base_kva = 5000.0;  // three-phase power base
  std::vector<FeederNode> nodes;
  std::vector<LineSegment> lines;
  std::vector<Der> ders;
  Oltc oltc;
  Topology topology;

  std::size_t size() const { return nodes.size(); }
  double v_base_ln() const;          // volts
  double s_base_phase_kva() const { return base_kva / 3.0; }
  double z_base() const;             // ohms
  std::optional<int> find_node(const std::string& name) const;

  double peak_load_kw() const;       // sum of real demand over all nodes and phases
  double peak_generation_kw() const; // sum of DER p_peak
};

/// Checks every structural invariant and rebuilds `feeder.topology`.
/// Throws ValidationError naming the offending node, line or DER.
void validate(Feeder& feeder);

/// Returns a copy with DER sizes scaled so that total peak generation equals
/// `level` times total peak load. Inverter ratings scale with generation.
Feeder scale_penetration(const Feeder& feeder, double level);

/// Returns a copy with every load multiplied by `factor`; capacitors too when asked.
Feeder scale_loads(const Feeder& feeder, double factor, bool include_capacitors = false);

struct DerPlacement {
  std::uint64_t seed = 1;
  double site_probability = 1.0;  // chance that an eligible node receives a DER
  double min_weight = 0.25;       // per-phase size drawn uniformly in [min, max]
  double max_weight = 1.0;
  double oversize = 1.1;          // inverter kVA over peak kW
};

/// Replaces the DER fleet with seeded random units on non-root nodes that
/// carry load. Sizes are relative; follow with scale_penetration.
Feeder place_ders(const Feeder& feeder, const DerPlacement& placement);

// ---------------------------------------------------------------------------
// Transmission case
// ---------------------------------------------------------------------------

enum class BusKind { Slack, PV, PQ };

struct TransBus {
  int id = 0;
  BusKind kind = BusKind::PQ;
  double pd = 0.0;  // pu on the case MVA base
  double qd = 0.0;
  double vset = 1.0;
};

struct TransBranch {
  int from = 0;  // bus ids
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b = 0.0;  // total line charging
  bool in_service = true;
};

struct TransGen {
  int bus = 0;
  double p = 0.0;  // pu
  double qmin = -1e9;
  double qmax = 1e9;
};

struct TransmissionCase {
  double mva_base = 100.0;
  std::vector<TransBus> buses;
  std::vector<TransBranch> branches;
  std::vector<TransGen> gens;

  std::optional<std::size_t> bus_index(int id) const;
  std::size_t slack_index() const;
  std::optional<std::size_t> find_branch(int from, int to) const;
};

/// Checks the single-slack rule, branch endpoints and connectivity.
void validate(const TransmissionCase& tcase);
bool is_connected(const TransmissionCase& tcase);

// ---------------------------------------------------------------------------
// Coupling and profiles
// ---------------------------------------------------------------------------

struct FeederAttachment {
  std::string feeder_id;
  int count = 1;
};

/// Feeders replacing the aggregate load at one transmission bus.
struct Coupling {
  int boundary_bus = 0;
  std::vector<FeederAttachment> feeders;
  double dist_kv = 4.16;
};

/// Checks count >= 1 and that replicated peak load matches `replaced_mw`
/// within `rel_tolerance`.
void validate(const Coupling& coupling, const std::map<std::string, Feeder>& feeders,
              double replaced_mw, double rel_tolerance);

/// Replication count whose total peak load is nearest to `replaced_mw`.
int replication_for(const Feeder& feeder, double replaced_mw);

/// Normalized 24 h load and solar curves sampled every `step_hours`.
struct DailyProfile {
  double step_hours = 1.0;
  std::vector<double> hours;
  std::vector<double> load;
  std::vector<double> solar;

  std::size_t size() const { return hours.size(); }
  std::size_t peak_load_step() const;
};

void validate(const DailyProfile& profile);

}  // namespace tdvar
