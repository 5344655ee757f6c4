#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tdvar/cosim.hpp"

namespace tdvar {

/// Everything needed to rebuild a Scenario, as read from a config file.
struct ScenarioConfig {
  std::filesystem::path transmission;
  std::filesystem::path feeder;
  std::filesystem::path profiles;
  int boundary_bus = 5;
  double load_scale = 1.0;        // applied to spot loads of the feeder file
  bool scale_capacitors = true;
  double replaced_mw = 90.0;
  std::optional<int> count;       // empty: nearest replication to replaced_mw
  double coupling_tolerance = 0.05;
  DerPlacement der;
  double penetration = 0.8;
  double curtailment = 0.0;
  double v0 = 1.0;                // primary voltage for standalone feeder studies
  DispatchMode mode = DispatchMode::MaxSupport;
  double request_mvar = 0.0;

  Json to_json() const;
};

/// Reads a scenario config; relative paths resolve against the file's directory.
ScenarioConfig load_scenario_config(const std::filesystem::path& path);
ScenarioConfig parse_scenario_config(const Json& doc, const std::filesystem::path& base_dir);

/// Feeder with loads scaled and DERs placed and sized per the config.
Feeder build_feeder(const ScenarioConfig& config);
/// Loads every file, checks the coupling, and assembles the scenario.
Scenario build_scenario(const ScenarioConfig& config);

struct ContingencyScript {
  int from = 5;
  int to = 6;
  double t_event = 20.0;    // s
  double t_request = 21.0;  // s
  double delay = 10.0;      // s
  double duration = 90.0;   // s
  DispatchMode mode = DispatchMode::MaxSupport;  // or FixedRequest with request_mvar
  double request_mvar = 0.0;

  void check() const;
};

struct ContingencyRecord {
  double t = 0.0;
  std::vector<double> bus_vm;
  double q0_mvar = 0.0;
  int tap = 0;
  double vmin_pu = 0.0;
  double vmax_pu = 0.0;
  std::vector<std::string> events;
};

struct ContingencyResult {
  std::vector<ContingencyRecord> timeline;
  double hour = 0.0;
  std::size_t event_index = 0;    // first record after the outage
  std::size_t support_index = 0;  // first record with support applied
};

/// 1 s timeline at the peak-load hour: pre-event steady state, outage, scripted
/// var request after the delay, OLTC acting once per tick.
ContingencyResult run_contingency(const ContingencyScript& script, const Scenario& scenario);

struct PvCurvePoint {
  double lambda = 0.0;
  double vm = 0.0;
  bool converged = true;
  bool terminal = false;
};

struct PvTrace {
  std::vector<PvCurvePoint> points;
  double lambda_max = 0.0;
  double base_mw = 0.0;
  DispatchMode mode = DispatchMode::None;
};

struct PvOptions {
  double step = 0.01;
  int halvings = 5;       // smallest step = step / 2^halvings
  double lambda_cap = 5.0;
  double increment_mw = 100.0;  // load added at lambda = 1
};

/// Lambda-V trace at the boundary bus for the peak-load hour. Distribution
/// loads scale together; DER output, the dispatch and the taps stay at their
/// lambda = 0 values.
PvTrace trace_pv(const Scenario& scenario, DispatchMode mode, const PvOptions& options = {});

/// Same stepping on the bare transmission case with a constant-power load at
/// `bus` growing from (p_mw, q_mvar) at fixed power factor.
PvTrace trace_pv_static(const TransmissionCase& tcase, int bus, double p_mw, double q_mvar,
                        const PvOptions& options = {});

struct SweepCell {
  double level = 0.0;
  double curtailment = 0.0;
  ReductionStats stats;
  VarSupportCurve curve;
};

/// Table I: one support curve per (level, curtailment).
std::vector<SweepCell> sweep_penetration(const std::vector<double>& levels, const std::vector<double>& curtailments,
                                         const ScenarioConfig& config, const DailyProfile& profile,
                                         const DopfOptions& dopf = {});

/// `level,curtailment,avg_reduction_pct,peak_reduction_pct`
void write_table1_csv(std::ostream& os, const std::vector<SweepCell>& cells);
/// `lambda,vm_pu,dispatch_mode`
void write_pv_csv(std::ostream& os, const std::vector<PvTrace>& traces);
/// `t_s,bus,vm_pu,q0_mvar,tap`
void write_contingency_csv(std::ostream& os, const TransmissionCase& tcase, const ContingencyResult& result);

}  // namespace tdvar
