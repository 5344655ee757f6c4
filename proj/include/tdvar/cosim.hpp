#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tdvar/dist_pf.hpp"
#include "tdvar/dopf.hpp"
#include "tdvar/trans_pf.hpp"

namespace tdvar {

struct CosimOptions {
  double tol_v = 1e-4;      // pu, successive boundary magnitudes
  double tol_s = 1e-3;      // MW / MVAr, successive boundary powers
  int max_rounds = 50;
  TransPfOptions trans;
  DistPfOptions dist;
};

/// One group of identical feeders hanging off the boundary bus. Only the
/// first copy is solved; its head power is multiplied by `count`.
struct FeederGroup {
  const Feeder* feeder = nullptr;
  int count = 1;
  Injections injections;  // kVA per node and phase for one copy
  int tap = 0;
};

struct BoundaryState {
  int bus = 0;
  double vm = 1.0;       // boundary magnitude, pu
  double va = 0.0;       // rad
  double p_mw = 0.0;     // aggregate feeder net power assigned to the bus
  double q_mvar = 0.0;
  int rounds = 0;
  std::vector<double> dv_history;  // |dV0| per round
  TransPfSolution trans;
  std::vector<DistPfSolution> feeders;  // one per group, at the reported vm
};

/// Gauss-Seidel master-slave iteration: transmission with the current
/// boundary load, then every feeder group at the new boundary voltage.
/// Throws SolverError after `max_rounds` or when either side fails.
BoundaryState converge_boundary(const TransmissionCase& tcase, int boundary_bus, const std::vector<FeederGroup>& groups,
                                const CosimOptions& options = {}, const BoundaryState* warm = nullptr);

/// One control action: unchanged inside the deadband, else one tap toward the
/// setpoint, saturating at the limits.
int oltc_step(const Oltc& oltc, double measured_y, double setpoint_y);

enum class DispatchMode { None, MaxSupport, FixedRequest };
DispatchMode parse_dispatch_mode(const std::string& text);
std::string to_string(DispatchMode mode);

/// A complete single-boundary T-D arrangement.
struct Scenario {
  TransmissionCase tcase;
  int boundary_bus = 5;
  Feeder feeder;  // DERs placed and scaled
  int count = 1;
  DailyProfile profile;
  double curtailment = 0.0;
  DispatchMode mode = DispatchMode::MaxSupport;
  double request_mvar = 0.0;  // FixedRequest: reduction of boundary var demand asked by the grid
  CosimOptions cosim;
  DopfOptions dopf;
  int max_oltc_intervals = 20;  // control intervals allowed per timestep
  int dopf_passes = 3;          // D-OPF re-runs when the boundary voltage moves
  std::uint64_t seed = 0;       // recorded only
};

/// Setpoints currently applied to the feeder group.
struct AppliedDispatch {
  VarSetpoints q_kvar;
  double y0_set = 1.0;
  double v0_used = 1.0;  // primary voltage the D-OPF assumed
  double q_no_kvar = 0.0;
  double q_max_kvar = 0.0;
};

/// Builds the dispatch for a mode at one operating point (single feeder copy),
/// calibrating from the OLTC at `tap`. FixedRequest moves from `current` (or
/// the no-support dispatch) toward the max-support dispatch by the fraction
/// of the available range that the request asks for.
AppliedDispatch plan_dispatch(const Scenario& scenario, const OperatingPoint& op, DispatchMode mode,
                              double request_mvar, int tap, const AppliedDispatch* current = nullptr);

struct TimeseriesRecord {
  double t = 0.0;
  std::vector<double> bus_vm;
  double p0_mw = 0.0;  // aggregate over the replicas
  double q0_mvar = 0.0;
  int tap = 0;
  double vmin_pu = 0.0;
  double vmax_pu = 0.0;
  double v_primary_pu = 0.0;
  double v_secondary_pu = 0.0;
  double v_setpoint_pu = 0.0;
  int rounds = 0;
  int taps_moved = 0;
  std::vector<std::string> events;
};

/// Hourly run over the profile: D-OPF, dispatch, OLTC control, boundary fixed
/// point, record. Solver failures are rethrown with the timestep and stage.
std::vector<TimeseriesRecord> run_timeseries(const Scenario& scenario);

/// Group injections for a copy at an operating point and dispatch.
Injections group_injections(const Scenario& scenario, const OperatingPoint& op, const VarSetpoints* q);

struct SettledState {
  BoundaryState boundary;
  int tap = 0;
  int taps_moved = 0;
};

/// Converges the boundary with `dispatch` applied, then lets the OLTC act for
/// up to `max_intervals` control intervals, re-converging after every move.
SettledState settle(const Scenario& scenario, const OperatingPoint& op, const AppliedDispatch& dispatch, int tap,
                    int max_intervals, const BoundaryState* warm = nullptr);

/// `t,bus,vm_pu`
void write_bus_timeseries_csv(std::ostream& os, const TransmissionCase& tcase,
                              const std::vector<TimeseriesRecord>& records);
/// `t,feeder,p0_mw,q0_mvar,tap,vmin_pu,vmax_pu`
void write_feeder_timeseries_csv(std::ostream& os, const std::string& feeder,
                                 const std::vector<TimeseriesRecord>& records);

/// Every effective tolerance and parameter, for the run manifest.
Json scenario_manifest(const Scenario& scenario);

}  // namespace tdvar
