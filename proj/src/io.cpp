#include "tdvar/io.hpp"

#include <fstream>
#include <sstream>

namespace tdvar {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

namespace {

std::array<double, 3> triple(const Json& obj, const char* key) {
  std::array<double, 3> out{};
  if (!obj.contains(key)) return out;
  const Json& v = obj.at(key);
  if (!v.is_array() || v.size() != 3) throw ParseError(std::string("'") + key + "' must be an array of 3 numbers");
  for (int i = 0; i < 3; ++i) out[i] = v.at(i).get<double>();
  return out;
}

Eigen::Matrix3d matrix3(const Json& obj, const char* key) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  const Json& v = obj.at(key);
  if (!v.is_array() || v.size() != 3) throw ParseError(std::string("'") + key + "' must be 3x3");
  for (int r = 0; r < 3; ++r) {
    if (!v.at(r).is_array() || v.at(r).size() != 3) throw ParseError(std::string("'") + key + "' must be 3x3");
    for (int c = 0; c < 3; ++c) m(r, c) = v.at(r).at(c).get<double>();
  }
  return m;
}

double length_factor(const std::string& unit, double length) {
  // Impedance matrices are given per `unit`; "ohm" means the matrix is the total.
  if (unit == "ohm") return 1.0;
  if (unit == "mile" || unit == "ft" || unit == "km" || unit == "m") return length;
  throw ParseError("unknown impedance unit '" + unit + "'");
}

std::string id_string(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ParseError("node ids must be strings or integers");
}

BusKind parse_kind(const std::string& s) {
  if (s == "slack" || s == "ref") return BusKind::Slack;
  if (s == "PV" || s == "pv") return BusKind::PV;
  if (s == "PQ" || s == "pq") return BusKind::PQ;
  throw ParseError("unknown bus kind '" + s + "'");
}

const char* kind_name(BusKind k) {
  switch (k) {
    case BusKind::Slack: return "slack";
    case BusKind::PV: return "PV";
    case BusKind::PQ: return "PQ";
  }
  return "PQ";
}

}  // namespace

Feeder parse_feeder(const Json& doc) {
  Feeder f;
  try {
    f.name = doc.value("name", std::string("feeder"));
    f.kv_ll = doc.value("kv_ll", 4.16);
    f.base_kva = doc.value("base_kva", 5000.0);

    const Json& nodes = doc.at("nodes");
    if (!nodes.is_array() || nodes.empty()) throw ParseError("'nodes' must be a non-empty array");
    std::string root = doc.contains("root") ? id_string(doc.at("root")) : id_string(nodes.at(0).at("id"));

    // Root first, then file order.
    std::vector<const Json*> ordered;
    for (const auto& n : nodes)
      if (id_string(n.at("id")) == root) ordered.push_back(&n);
    if (ordered.empty()) throw ParseError("root node '" + root + "' not found");
    for (const auto& n : nodes)
      if (id_string(n.at("id")) != root) ordered.push_back(&n);

    for (const Json* pn : ordered) {
      const Json& n = *pn;
      FeederNode node;
      node.name = id_string(n.at("id"));
      try {
        node.phases = PhaseSet::parse(n.value("phases", std::string("ABC")));
      } catch (const std::invalid_argument& e) {
        throw ParseError("node '" + node.name + "': " + e.what());
      }
      const auto kw = triple(n, "load_kw");
      const auto kvar = triple(n, "load_kvar");
      node.load.cap_kvar = triple(n, "cap_kvar");
      for (int p = 0; p < 3; ++p) node.load.demand_kva[p] = Complex(kw[p], kvar[p]);
      f.nodes.push_back(node);
    }

    auto lookup = [&](const Json& v, const char* what) {
      const std::string id = id_string(v);
      auto idx = f.find_node(id);
      if (!idx) throw ValidationError(std::string(what) + " references missing node '" + id + "'");
      return *idx;
    };

    for (const auto& l : doc.value("lines", Json::array())) {
      LineSegment seg;
      seg.from = lookup(l.at("from"), "line");
      seg.to = lookup(l.at("to"), "line");
      if (l.contains("phases")) seg.phases = PhaseSet::parse(l.at("phases").get<std::string>());
      const double factor = length_factor(l.value("unit", std::string("ohm")), l.value("length", 1.0));
      const Eigen::Matrix3d r = matrix3(l, "r_matrix") * factor;
      const Eigen::Matrix3d x = matrix3(l, "x_matrix") * factor;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) seg.impedance(i, j) = Complex(r(i, j), x(i, j));
      f.lines.push_back(seg);
    }

    for (const auto& d : doc.value("ders", Json::array())) {
      Der der;
      der.node = lookup(d.at("node"), "DER");
      der.s_inv_kva = triple(d, "s_inv_kva");
      if (d.contains("p_peak_kw")) {
        der.p_peak_kw = triple(d, "p_peak_kw");
      } else {
        for (int p = 0; p < 3; ++p) der.p_peak_kw[p] = der.s_inv_kva[p] / 1.1;
      }
      f.ders.push_back(der);
    }

    if (doc.contains("oltc")) {
      const Json& o = doc.at("oltc");
      f.oltc.tap = o.value("tap", 0);
      f.oltc.tap_min = o.value("tap_min", -10);
      f.oltc.tap_max = o.value("tap_max", 10);
      f.oltc.step = o.value("step", 0.01);
      f.oltc.bandwidth = o.value("bandwidth", 0.01);
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("feeder: ") + e.what());
  }
  validate(f);
  return f;
}

Feeder load_feeder(const std::filesystem::path& path) {
  try {
    return parse_feeder(read_json(path));
  } catch (const ParseError& e) {
    throw ParseError(path.filename().string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.filename().string() + ": " + e.what());
  }
}

Json serialize_feeder(const Feeder& f) {
  Json doc;
  doc["name"] = f.name;
  doc["kv_ll"] = f.kv_ll;
  doc["base_kva"] = f.base_kva;
  doc["root"] = f.nodes.at(0).name;
  auto arr3 = [](const std::array<double, 3>& a) { return Json::array({a[0], a[1], a[2]}); };
  Json nodes = Json::array();
  for (const auto& n : f.nodes) {
    std::array<double, 3> kw{}, kvar{};
    for (int p = 0; p < 3; ++p) {
      kw[p] = n.load.demand_kva[p].real();
      kvar[p] = n.load.demand_kva[p].imag();
    }
    nodes.push_back({{"id", n.name},
                     {"phases", n.phases.to_string()},
                     {"load_kw", arr3(kw)},
                     {"load_kvar", arr3(kvar)},
                     {"cap_kvar", arr3(n.load.cap_kvar)}});
  }
  doc["nodes"] = nodes;
  Json lines = Json::array();
  for (const auto& l : f.lines) {
    Json r = Json::array(), x = Json::array();
    for (int i = 0; i < 3; ++i) {
      r.push_back(Json::array({l.impedance(i, 0).real(), l.impedance(i, 1).real(), l.impedance(i, 2).real()}));
      x.push_back(Json::array({l.impedance(i, 0).imag(), l.impedance(i, 1).imag(), l.impedance(i, 2).imag()}));
    }
    lines.push_back({{"from", f.nodes[l.from].name},
                     {"to", f.nodes[l.to].name},
                     {"phases", l.phases.to_string()},
                     {"length", 1.0},
                     {"unit", "ohm"},
                     {"r_matrix", r},
                     {"x_matrix", x}});
  }
  doc["lines"] = lines;
  Json ders = Json::array();
  for (const auto& d : f.ders)
    ders.push_back({{"node", f.nodes[d.node].name}, {"s_inv_kva", arr3(d.s_inv_kva)}, {"p_peak_kw", arr3(d.p_peak_kw)}});
  doc["ders"] = ders;
  doc["oltc"] = {{"tap", f.oltc.tap},
                 {"tap_min", f.oltc.tap_min},
                 {"tap_max", f.oltc.tap_max},
                 {"step", f.oltc.step},
                 {"bandwidth", f.oltc.bandwidth}};
  return doc;
}

// ---------------------------------------------------------------------------

TransmissionCase parse_transmission(const Json& doc) {
  TransmissionCase tc;
  try {
    tc.mva_base = doc.value("mva_base", 100.0);
    if (tc.mva_base <= 0.0) throw ValidationError("mva_base must be positive");
    for (const auto& b : doc.at("buses")) {
      TransBus bus;
      bus.id = b.at("id").get<int>();
      bus.kind = parse_kind(b.value("kind", std::string("PQ")));
      bus.pd = b.value("pd_mw", 0.0) / tc.mva_base;
      bus.qd = b.value("qd_mvar", 0.0) / tc.mva_base;
      bus.vset = b.value("vset", 1.0);
      tc.buses.push_back(bus);
    }
    for (const auto& b : doc.at("branches")) {
      TransBranch br;
      br.from = b.at("from").get<int>();
      br.to = b.at("to").get<int>();
      br.r = b.value("r_pu", 0.0);
      br.x = b.value("x_pu", 0.0);
      br.b = b.value("b_pu", 0.0);
      br.in_service = b.value("status", 1) != 0;
      tc.branches.push_back(br);
    }
    for (const auto& g : doc.value("gens", Json::array())) {
      TransGen gen;
      gen.bus = g.at("bus").get<int>();
      gen.p = g.value("p_mw", 0.0) / tc.mva_base;
      gen.qmin = g.value("qmin", -1e6) / tc.mva_base;
      gen.qmax = g.value("qmax", 1e6) / tc.mva_base;
      tc.gens.push_back(gen);
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("transmission case: ") + e.what());
  }
  validate(tc);
  return tc;
}

TransmissionCase load_transmission(const std::filesystem::path& path) {
  try {
    return parse_transmission(read_json(path));
  } catch (const ParseError& e) {
    throw ParseError(path.filename().string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.filename().string() + ": " + e.what());
  }
}

Json serialize_transmission(const TransmissionCase& tc) {
  Json doc;
  doc["mva_base"] = tc.mva_base;
  Json buses = Json::array();
  for (const auto& b : tc.buses)
    buses.push_back({{"id", b.id},
                     {"kind", kind_name(b.kind)},
                     {"pd_mw", b.pd * tc.mva_base},
                     {"qd_mvar", b.qd * tc.mva_base},
                     {"vset", b.vset}});
  doc["buses"] = buses;
  Json branches = Json::array();
  for (const auto& br : tc.branches)
    branches.push_back({{"from", br.from},
                        {"to", br.to},
                        {"r_pu", br.r},
                        {"x_pu", br.x},
                        {"b_pu", br.b},
                        {"status", br.in_service ? 1 : 0}});
  doc["branches"] = branches;
  Json gens = Json::array();
  for (const auto& g : tc.gens)
    gens.push_back({{"bus", g.bus}, {"p_mw", g.p * tc.mva_base}, {"qmin", g.qmin * tc.mva_base},
                    {"qmax", g.qmax * tc.mva_base}});
  doc["gens"] = gens;
  return doc;
}

// ---------------------------------------------------------------------------

DailyProfile parse_profile(const std::string& text) {
  DailyProfile p;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("profile: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,load,solar") throw ParseError("profile: header must be 't,load,solar'");
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream cells(line);
    std::string a, b, c, extra;
    if (!std::getline(cells, a, ',') || !std::getline(cells, b, ',') || !std::getline(cells, c, ',') ||
        std::getline(cells, extra, ','))
      throw ParseError("profile: row " + std::to_string(row) + " must have 3 columns");
    try {
      std::size_t used = 0;
      auto num = [&](const std::string& s) {
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      };
      p.hours.push_back(num(a));
      p.load.push_back(num(b));
      p.solar.push_back(num(c));
    } catch (const std::exception&) {
      throw ParseError("profile: row " + std::to_string(row) + " is not numeric");
    }
  }
  if (p.hours.size() >= 2) p.step_hours = p.hours[1] - p.hours[0];
  validate(p);
  return p;
}

DailyProfile load_profile(const std::filesystem::path& path) { return parse_profile(read_text(path)); }

}  // namespace tdvar
