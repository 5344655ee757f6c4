#pragma once

#include <filesystem>
#include <string>

#include "tdvar/scenarios.hpp"

#ifndef TDVAR_DATA_DIR
#define TDVAR_DATA_DIR "data"
#endif

namespace testing {

inline std::filesystem::path data(const std::string& rel) { return std::filesystem::path(TDVAR_DATA_DIR) / rel; }

inline tdvar::Feeder bundled(const std::string& name) { return tdvar::load_feeder(data("feeders/" + name + ".json")); }

// IEEE-13 loads as the bundled scenario scales them, no DERs.
inline tdvar::Feeder ieee13_base() {
  const auto cfg = tdvar::load_scenario_config(data("scenario.json"));
  return tdvar::scale_loads(tdvar::load_feeder(cfg.feeder), cfg.load_scale, cfg.scale_capacitors);
}

// Same feeder with every mutual impedance removed.
inline tdvar::Feeder without_mutuals(tdvar::Feeder f) {
  for (auto& l : f.lines)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        if (r != c) l.impedance(r, c) = 0.0;
  return f;
}

// IEEE-13 with the bundled scenario's load scaling and DER fleet.
inline tdvar::Feeder ieee13_with_ders(double penetration = 0.8) {
  auto cfg = tdvar::load_scenario_config(data("scenario.json"));
  cfg.penetration = penetration;
  return tdvar::build_feeder(cfg);
}

// Source plus one load node on phase A only, impedances given in per unit of
// the feeder base so closed forms apply directly.
inline tdvar::Feeder single_phase_two_node(tdvar::Complex z_pu, tdvar::Complex load_pu, double der_kva = 0.0,
                                           double der_kw = 0.0) {
  using namespace tdvar;
  nlohmann::json doc = {{"name", "two_node_pu"}, {"kv_ll", 1.7320508075688772}, {"base_kva", 3.0}, {"root", "0"}};
  // base_kva 3 gives 1 kVA per phase; kv_ll sqrt(3) gives 1 kV line-to-neutral, so z_base = 1000 ohm.
  const double zb = 1000.0;
  doc["nodes"] = {{{"id", "0"}, {"phases", "ABC"}},
                  {{"id", "1"},
                   {"phases", "A"},
                   {"load_kw", {load_pu.real(), 0.0, 0.0}},
                   {"load_kvar", {load_pu.imag(), 0.0, 0.0}}}};
  doc["lines"] = {{{"from", "0"},
                   {"to", "1"},
                   {"length", 1.0},
                   {"unit", "ohm"},
                   {"r_matrix", {{z_pu.real() * zb, 0, 0}, {0, 0, 0}, {0, 0, 0}}},
                   {"x_matrix", {{z_pu.imag() * zb, 0, 0}, {0, 0, 0}, {0, 0, 0}}}}};
  doc["ders"] = nlohmann::json::array();
  if (der_kva > 0.0)
    doc["ders"].push_back({{"node", "1"}, {"s_inv_kva", {der_kva, 0, 0}}, {"p_peak_kw", {der_kw, 0, 0}}});
  return parse_feeder(doc);
}

}  // namespace testing
