#pragma once

#include <optional>
#include <ostream>
#include <vector>

#include "tdvar/io.hpp"
#include "tdvar/netmodel.hpp"

namespace tdvar {

/// Aggregate load that replaces a bus's own demand, MW / MVAr.
struct BoundaryLoad {
  int bus = 0;
  double p_mw = 0.0;
  double q_mvar = 0.0;
};

struct TransPfOptions {
  double tolerance = 1e-8;  // max |mismatch|, pu
  int max_iterations = 30;
  bool enforce_q_limits = false;
};

struct BranchFlow {
  int from = 0;
  int to = 0;
  double p_from_mw = 0.0, q_from_mvar = 0.0;
  double p_to_mw = 0.0, q_to_mvar = 0.0;
};

struct TransPfSolution {
  std::vector<double> vm;  // pu, bus order of the case
  std::vector<double> va;  // rad
  std::vector<BranchFlow> flows;  // in-service branches
  std::vector<double> gen_q_mvar;  // per generator entry
  double slack_p_mw = 0.0;
  double slack_q_mvar = 0.0;
  double loss_mw = 0.0;
  int iterations = 0;
  double max_mismatch = 0.0;
};

/// Polar Newton-Raphson with a dense Jacobian. `warm` seeds angles and the
/// magnitudes of PQ buses. Throws SolverError on a singular Jacobian or when
/// the iteration cap is reached.
TransPfSolution solve_nr(const TransmissionCase& tcase, const std::vector<BoundaryLoad>& boundary = {},
                         const TransPfOptions& options = {}, const TransPfSolution* warm = nullptr);

/// Copy with the branch between `from` and `to` switched off. Throws
/// ValidationError if no such in-service branch exists or the outage islands a bus.
TransmissionCase apply_outage(const TransmissionCase& tcase, int from, int to);

/// `bus,vm_pu,va_deg`
void write_bus_csv(std::ostream& os, const TransmissionCase& tcase, const TransPfSolution& solution);
Json summary_json(const TransmissionCase& tcase, const TransPfSolution& solution);

}  // namespace tdvar
