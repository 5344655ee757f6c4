#include "tdvar/netmodel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>
#include <sstream>

namespace tdvar {

PhaseSet PhaseSet::parse(std::string_view letters) {
  PhaseSet out;
  for (char ch : letters) {
    switch (std::toupper(static_cast<unsigned char>(ch))) {
      case 'A': out.insert(Phase::A); break;
      case 'B': out.insert(Phase::B); break;
      case 'C': out.insert(Phase::C); break;
      case ' ': case ',': break;
      default: throw std::invalid_argument("bad phase letter '" + std::string(1, ch) + "'");
    }
  }
  return out;
}

std::string PhaseSet::to_string() const {
  std::string s;
  for (int i = 0; i < 3; ++i)
    if (has(i)) s.push_back(phase_letter(i));
  return s;
}

// ---------------------------------------------------------------------------

double Feeder::v_base_ln() const { return kv_ll * 1000.0 / std::sqrt(3.0); }

double Feeder::z_base() const {
  const double v = v_base_ln();
  return v * v / (s_base_phase_kva() * 1000.0);
}

std::optional<int> Feeder::find_node(const std::string& n) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].name == n) return static_cast<int>(i);
  return std::nullopt;
}

double Feeder::peak_load_kw() const {
  double sum = 0.0;
  for (const auto& n : nodes)
    for (int p = 0; p < 3; ++p) sum += n.load.demand_kva[p].real();
  return sum;
}

double Feeder::peak_generation_kw() const {
  double sum = 0.0;
  for (const auto& d : ders)
    for (int p = 0; p < 3; ++p) sum += d.p_peak_kw[p];
  return sum;
}

namespace {

std::string node_label(const Feeder& f, int i) {
  if (i >= 0 && static_cast<std::size_t>(i) < f.nodes.size()) return "'" + f.nodes[i].name + "'";
  return "#" + std::to_string(i);
}

std::string line_label(const Feeder& f, const LineSegment& l) {
  return node_label(f, l.from) + "-" + node_label(f, l.to);
}

void check_impedance(const Feeder& f, const LineSegment& line) {
  const Matrix3c& z = line.impedance;
  const double scale = std::max(1.0, z.cwiseAbs().maxCoeff());
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (!std::isfinite(z(r, c).real()) || !std::isfinite(z(r, c).imag()))
        throw ValidationError("line " + line_label(f, line) + ": non-finite impedance");
      if (std::abs(z(r, c) - z(c, r)) > 1e-9 * scale)
        throw ValidationError("line " + line_label(f, line) + ": impedance matrix is not symmetric");
      const bool present = line.phases.has(r) && line.phases.has(c);
      if (!present && z(r, c) != Complex(0.0, 0.0))
        throw ValidationError("line " + line_label(f, line) + ": impedance on absent phase " +
                              std::string(1, phase_letter(line.phases.has(r) ? c : r)));
    }
    if (line.phases.has(r) && z(r, r).real() < 0.0)
      throw ValidationError("line " + line_label(f, line) + ": negative resistance on phase " +
                            std::string(1, phase_letter(r)));
  }
}

}  // namespace

void validate(Feeder& f) {
  const int n = static_cast<int>(f.nodes.size());
  if (n == 0) throw ValidationError("feeder has no nodes");
  if (f.kv_ll <= 0.0 || f.base_kva <= 0.0) throw ValidationError("feeder bases must be positive");
  if (f.nodes[0].phases != PhaseSet::all())
    throw ValidationError("root node " + node_label(f, 0) + " must carry phases ABC");

  for (int i = 0; i < n; ++i) {
    const auto& node = f.nodes[i];
    if (node.phases.empty()) throw ValidationError("node " + node_label(f, i) + " has no phases");
    for (int j = i + 1; j < n; ++j)
      if (f.nodes[j].name == node.name) throw ValidationError("duplicate node id " + node_label(f, i));
    for (int p = 0; p < 3; ++p) {
      if (node.phases.has(p)) continue;
      if (node.load.demand_kva[p] != Complex(0.0, 0.0) || node.load.cap_kvar[p] != 0.0)
        throw ValidationError("node " + node_label(f, i) + ": load on absent phase " +
                              std::string(1, phase_letter(p)));
    }
  }

  for (const auto& line : f.lines) {
    if (line.from < 0 || line.from >= n || line.to < 0 || line.to >= n)
      throw ValidationError("line " + line_label(f, line) + " references a missing node");
    if (line.from == line.to) throw ValidationError("line " + line_label(f, line) + " is a self loop");
  }

  // Undirected breadth-first walk from the root. Any edge reaching an already
  // visited node closes a cycle.
  std::vector<std::vector<std::pair<int, int>>> adj(n);
  for (int e = 0; e < static_cast<int>(f.lines.size()); ++e) {
    adj[f.lines[e].from].push_back({f.lines[e].to, e});
    adj[f.lines[e].to].push_back({f.lines[e].from, e});
  }
  Topology topo;
  topo.parent.assign(n, -1);
  topo.parent_line.assign(n, -1);
  topo.children.assign(n, {});
  std::vector<bool> seen(n, false);
  std::vector<bool> used(f.lines.size(), false);
  std::deque<int> queue{0};
  seen[0] = true;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    topo.order.push_back(u);
    for (auto [v, e] : adj[u]) {
      if (used[e]) continue;
      used[e] = true;
      if (seen[v])
        throw ValidationError("cycle detected: line " + line_label(f, f.lines[e]) + " closes a loop at node " +
                              node_label(f, v));
      seen[v] = true;
      topo.parent[v] = u;
      topo.parent_line[v] = e;
      topo.children[u].push_back(v);
      queue.push_back(v);
    }
  }
  for (int i = 0; i < n; ++i)
    if (!seen[i]) throw ValidationError("node " + node_label(f, i) + " is not connected to the root");

  // Orient every line parent -> child and check phasing.
  for (int v = 1; v < n; ++v) {
    auto& line = f.lines[topo.parent_line[v]];
    if (line.to != v) std::swap(line.from, line.to);
    if (line.phases.empty()) line.phases = f.nodes[v].phases;
    if (!line.phases.subset_of(f.nodes[line.from].phases))
      throw ValidationError("line " + line_label(f, line) + " carries phases absent at its upstream node");
    if (line.phases != f.nodes[v].phases)
      throw ValidationError("node " + node_label(f, v) + " phases " + f.nodes[v].phases.to_string() +
                            " differ from its supply line phases " + line.phases.to_string());
    check_impedance(f, line);
  }

  for (const auto& der : f.ders) {
    if (der.node <= 0 || der.node >= n)
      throw ValidationError("DER on missing or root node " + node_label(f, der.node));
    for (int p = 0; p < 3; ++p) {
      const bool present = f.nodes[der.node].phases.has(p);
      if (der.s_inv_kva[p] < 0.0 || der.p_peak_kw[p] < 0.0)
        throw ValidationError("DER at node " + node_label(f, der.node) + ": negative rating");
      if (!present && (der.s_inv_kva[p] != 0.0 || der.p_peak_kw[p] != 0.0))
        throw ValidationError("DER at node " + node_label(f, der.node) + " on absent phase " +
                              std::string(1, phase_letter(p)));
      if (der.p_peak_kw[p] > der.s_inv_kva[p] * (1.0 + 1e-12) + 1e-12)
        throw ValidationError("DER at node " + node_label(f, der.node) + ": peak generation exceeds rating");
    }
  }

  if (f.oltc.tap_min > f.oltc.tap_max || f.oltc.tap < f.oltc.tap_min || f.oltc.tap > f.oltc.tap_max)
    throw ValidationError("OLTC tap outside its range");
  if (f.oltc.step <= 0.0 || f.oltc.bandwidth < 0.0) throw ValidationError("OLTC step/bandwidth invalid");

  f.topology = std::move(topo);
}

Feeder scale_penetration(const Feeder& feeder, double level) {
  if (!(level >= 0.0)) throw ValidationError("penetration level must be >= 0");
  Feeder out = feeder;
  const double gen = out.peak_generation_kw();
  if (gen <= 0.0) {
    if (level > 0.0) throw ValidationError("feeder has no DER generation to scale");
    return out;
  }
  // Inverter kVA keeps its per-phase oversize relative to peak kW.
  const double k = level * out.peak_load_kw() / gen;
  for (auto& d : out.ders)
    for (int p = 0; p < 3; ++p) {
      d.p_peak_kw[p] *= k;
      d.s_inv_kva[p] *= k;
    }
  return out;
}

Feeder scale_loads(const Feeder& feeder, double factor, bool include_capacitors) {
  Feeder out = feeder;
  for (auto& n : out.nodes) {
    for (auto& s : n.load.demand_kva) s *= factor;
    if (include_capacitors)
      for (auto& c : n.load.cap_kvar) c *= factor;
  }
  return out;
}

namespace {

// Portable uniform draw in [0, 1): std::uniform_real_distribution differs
// between standard libraries, and placements must be reproducible from a seed.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

Feeder place_ders(const Feeder& feeder, const DerPlacement& placement) {
  Feeder out = feeder;
  out.ders.clear();
  std::mt19937_64 rng(placement.seed);
  for (int i = 1; i < static_cast<int>(out.nodes.size()); ++i) {
    const auto& node = out.nodes[i];
    double load = 0.0;
    for (int p = 0; p < 3; ++p) load += std::abs(node.load.demand_kva[p]);
    const double draw_site = uniform01(rng);
    if (load <= 0.0 || draw_site >= placement.site_probability) continue;
    Der d;
    d.node = i;
    for (int p = 0; p < 3; ++p) {
      const double u = uniform01(rng);
      if (!node.phases.has(p)) continue;
      const double w = placement.min_weight + (placement.max_weight - placement.min_weight) * u;
      d.p_peak_kw[p] = w;
      d.s_inv_kva[p] = w * placement.oversize;
    }
    out.ders.push_back(d);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::optional<std::size_t> TransmissionCase::bus_index(int id) const {
  for (std::size_t i = 0; i < buses.size(); ++i)
    if (buses[i].id == id) return i;
  return std::nullopt;
}

std::size_t TransmissionCase::slack_index() const {
  for (std::size_t i = 0; i < buses.size(); ++i)
    if (buses[i].kind == BusKind::Slack) return i;
  throw ValidationError("case has no slack bus");
}

std::optional<std::size_t> TransmissionCase::find_branch(int from, int to) const {
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const auto& b = branches[i];
    if ((b.from == from && b.to == to) || (b.from == to && b.to == from)) return i;
  }
  return std::nullopt;
}

bool is_connected(const TransmissionCase& tc) {
  const std::size_t n = tc.buses.size();
  if (n == 0) return false;
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& br : tc.branches) {
    if (!br.in_service) continue;
    auto f = tc.bus_index(br.from), t = tc.bus_index(br.to);
    if (!f || !t) continue;
    adj[*f].push_back(*t);
    adj[*t].push_back(*f);
  }
  std::vector<bool> seen(n, false);
  std::deque<std::size_t> q{0};
  seen[0] = true;
  std::size_t count = 1;
  while (!q.empty()) {
    auto u = q.front();
    q.pop_front();
    for (auto v : adj[u])
      if (!seen[v]) {
        seen[v] = true;
        ++count;
        q.push_back(v);
      }
  }
  return count == n;
}

void validate(const TransmissionCase& tc) {
  if (tc.mva_base <= 0.0) throw ValidationError("mva_base must be positive");
  if (tc.buses.empty()) throw ValidationError("case has no buses");
  int slack = 0;
  for (std::size_t i = 0; i < tc.buses.size(); ++i) {
    if (tc.buses[i].kind == BusKind::Slack) ++slack;
    for (std::size_t j = i + 1; j < tc.buses.size(); ++j)
      if (tc.buses[i].id == tc.buses[j].id)
        throw ValidationError("duplicate bus id " + std::to_string(tc.buses[i].id));
  }
  if (slack != 1) throw ValidationError("case must have exactly one slack bus, found " + std::to_string(slack));
  for (const auto& br : tc.branches) {
    if (!tc.bus_index(br.from) || !tc.bus_index(br.to))
      throw ValidationError("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                            " references a missing bus");
    if (br.r == 0.0 && br.x == 0.0)
      throw ValidationError("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                            " has zero impedance");
  }
  for (const auto& g : tc.gens)
    if (!tc.bus_index(g.bus)) throw ValidationError("generator on missing bus " + std::to_string(g.bus));
  if (!is_connected(tc)) throw ValidationError("case is not connected");
}

// ---------------------------------------------------------------------------

int replication_for(const Feeder& feeder, double replaced_mw) {
  const double peak_mw = feeder.peak_load_kw() / 1000.0;
  if (peak_mw <= 0.0) throw ValidationError("feeder '" + feeder.name + "' has no load to replicate");
  return std::max(1, static_cast<int>(std::lround(replaced_mw / peak_mw)));
}

void validate(const Coupling& coupling, const std::map<std::string, Feeder>& feeders, double replaced_mw,
              double rel_tolerance) {
  if (coupling.feeders.empty()) throw ValidationError("coupling has no feeders");
  double total = 0.0;
  for (const auto& a : coupling.feeders) {
    if (a.count < 1) throw ValidationError("replication count for '" + a.feeder_id + "' must be >= 1");
    auto it = feeders.find(a.feeder_id);
    if (it == feeders.end()) throw ValidationError("coupling references unknown feeder '" + a.feeder_id + "'");
    total += a.count * it->second.peak_load_kw() / 1000.0;
  }
  if (std::abs(total - replaced_mw) > rel_tolerance * std::max(1e-9, std::abs(replaced_mw))) {
    std::ostringstream os;
    os << "replicated feeder load " << total << " MW does not match replaced load " << replaced_mw << " MW";
    throw ValidationError(os.str());
  }
}

std::size_t DailyProfile::peak_load_step() const {
  return static_cast<std::size_t>(std::distance(load.begin(), std::max_element(load.begin(), load.end())));
}

void validate(const DailyProfile& p) {
  if (p.hours.empty()) throw ValidationError("profile has no samples");
  if (p.load.size() != p.hours.size() || p.solar.size() != p.hours.size())
    throw ValidationError("profile columns differ in length");
  if (p.step_hours <= 0.0) throw ValidationError("profile step must be positive");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i > 0 && !(p.hours[i] > p.hours[i - 1])) throw ValidationError("profile times must increase");
    for (double v : {p.load[i], p.solar[i]})
      if (!(v >= 0.0 && v <= 1.0))
        throw ValidationError("profile value out of [0,1] at t=" + std::to_string(p.hours[i]));
  }
  for (const auto* col : {&p.load, &p.solar}) {
    const double mx = *std::max_element(col->begin(), col->end());
    if (std::abs(mx - 1.0) > 1e-9) throw ValidationError("profile is not normalized to a peak of 1");
  }
}

}  // namespace tdvar
