#pragma once

// Continuous-time interaction data: loading, time normalization, the
// prediction/completion split and labeled evaluation instances.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pivem/rng.hpp"

namespace pivem {

using NodeId = std::uint32_t;

/// Unordered node pair stored canonically with i < j.
struct Dyad {
  NodeId i = 0;
  NodeId j = 0;

  static Dyad make(NodeId a, NodeId b) { return a < b ? Dyad{a, b} : Dyad{b, a}; }
  std::uint64_t key() const { return (static_cast<std::uint64_t>(i) << 32) | j; }
  friend bool operator==(const Dyad&, const Dyad&) = default;
  friend auto operator<=>(const Dyad&, const Dyad&) = default;
};

struct Event {
  NodeId i = 0;
  NodeId j = 0;
  double t = 0.0;

  Dyad dyad() const { return {i, j}; }
  friend bool operator==(const Event&, const Event&) = default;
};

inline bool event_less(const Event& a, const Event& b) {
  if (a.i != b.i) return a.i < b.i;
  if (a.j != b.j) return a.j < b.j;
  return a.t < b.t;
}

/// Number of unordered pairs over n nodes.
inline std::uint64_t dyad_count(std::uint64_t n) { return n < 2 ? 0 : n * (n - 1) / 2; }

/// Row-major index of (i, j), i < j, among all dyads of n nodes.
inline std::uint64_t dyad_index(Dyad d, std::uint64_t n) {
  const std::uint64_t i = d.i;
  return i * n - i * (i + 1) / 2 + (d.j - i - 1);
}

inline Dyad dyad_from_index(std::uint64_t idx, std::uint64_t n) {
  std::uint64_t i = 0;
  std::uint64_t row = n - 1;
  while (idx >= row) {
    idx -= row;
    ++i;
    --row;
  }
  return {static_cast<NodeId>(i), static_cast<NodeId>(i + 1 + idx)};
}

inline std::vector<Dyad> all_dyads(std::uint64_t n) {
  std::vector<Dyad> out;
  out.reserve(dyad_count(n));
  for (NodeId i = 0; i < n; ++i)
    for (NodeId j = i + 1; j < n; ++j) out.push_back({i, j});
  return out;
}

/// Time-stamped undirected interactions on [0, horizon].
struct EventGraph {
  std::size_t num_nodes = 0;
  std::vector<Event> events;  // sorted by (i, j, t), i < j
  double horizon = 1.0;
  /// Original identifier of each dense node id (empty when ids were already dense).
  std::vector<std::int64_t> node_labels;

  /// Checks the structural invariants; throws std::invalid_argument on failure.
  void validate() const {
    for (std::size_t k = 0; k < events.size(); ++k) {
      const Event& e = events[k];
      if (!(e.i < e.j) || e.j >= num_nodes)
        throw std::invalid_argument("event " + std::to_string(k) + " has invalid endpoints");
      if (!(e.t >= 0.0 && e.t <= horizon))
        throw std::invalid_argument("event " + std::to_string(k) + " lies outside [0, horizon]");
      if (k > 0 && event_less(e, events[k - 1]))
        throw std::invalid_argument("events are not sorted by (i, j, t)");
    }
  }
};

/// Columns of the dataset statistics table: N, M, |E|, max |E_ij|.
struct GraphStats {
  std::size_t num_nodes = 0;
  std::size_t linked_pairs = 0;
  std::size_t num_events = 0;
  std::size_t max_pair_events = 0;

  std::string line() const {
    std::ostringstream os;
    os << "nodes=" << num_nodes << " pairs=" << linked_pairs << " events=" << num_events
       << " max_pair_events=" << max_pair_events;
    return os.str();
  }
};

inline GraphStats graph_stats(const EventGraph& g) {
  GraphStats s;
  s.num_nodes = g.num_nodes;
  s.num_events = g.events.size();
  std::size_t run = 0;
  for (std::size_t k = 0; k < g.events.size(); ++k) {
    if (k == 0 || g.events[k].dyad() != g.events[k - 1].dyad()) {
      ++s.linked_pairs;
      run = 0;
    }
    s.max_pair_events = std::max(s.max_pair_events, ++run);
  }
  return s;
}

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t k = 0;
  auto is_sep = [](char c) { return c == ',' || c == ' ' || c == '\t' || c == '\r'; };
  while (k < s.size()) {
    while (k < s.size() && is_sep(s[k])) ++k;
    std::size_t start = k;
    while (k < s.size() && !is_sep(s[k])) ++k;
    if (k > start) out.push_back(s.substr(start, k - start));
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if constexpr (std::is_floating_point_v<T>) {
    // std::from_chars for double is unavailable on older libstdc++.
    std::string buf(s);
    char* end = nullptr;
    out = std::strtod(buf.c_str(), &end);
    return end == buf.c_str() + buf.size() && !buf.empty();
  } else {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
  }
}

}  // namespace detail

/// Parses an edge list of "i j t" or "i j t w" records. Node ids are remapped
/// to 0..N-1 in increasing order of their original value. With `weighted`, a
/// record of integer weight w becomes w unit events at time t.
inline EventGraph parse_events(std::istream& in, bool weighted) {
  struct Raw {
    std::int64_t a, b;
    double t;
    std::int64_t w;
  };
  std::vector<Raw> raw;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    auto first = sv.find_first_not_of(" \t\r");
    if (first == std::string_view::npos || sv[first] == '#') continue;
    auto f = detail::split_fields(sv);
    if (f.size() != 3 && f.size() != 4)
      throw ParseError(lineno, "expected 3 or 4 fields, got " + std::to_string(f.size()));
    Raw r{};
    if (!detail::parse_number(f[0], r.a) || !detail::parse_number(f[1], r.b))
      throw ParseError(lineno, "node ids must be integers");
    if (!detail::parse_number(f[2], r.t) || !std::isfinite(r.t))
      throw ParseError(lineno, "malformed time '" + std::string(f[2]) + "'");
    if (r.t < 0.0) throw ParseError(lineno, "negative time");
    if (r.a == r.b) throw ParseError(lineno, "self-loop on node " + std::to_string(r.a));
    r.w = 1;
    if (f.size() == 4 && weighted) {
      if (!detail::parse_number(f[3], r.w)) {
        double w = 0;
        if (detail::parse_number(f[3], w))
          throw ParseError(lineno, "non-integer weight '" + std::string(f[3]) + "'");
        throw ParseError(lineno, "malformed weight '" + std::string(f[3]) + "'");
      }
      if (r.w < 1) throw ParseError(lineno, "weight must be a positive integer");
    }
    raw.push_back(r);
  }
  if (raw.empty()) throw std::runtime_error("edge list contains no records");

  std::vector<std::int64_t> ids;
  ids.reserve(raw.size() * 2);
  for (const auto& r : raw) {
    ids.push_back(r.a);
    ids.push_back(r.b);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  auto dense = [&](std::int64_t id) {
    return static_cast<NodeId>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
  };

  EventGraph g;
  g.num_nodes = ids.size();
  double tmax = 0.0;
  for (const auto& r : raw) {
    Dyad d = Dyad::make(dense(r.a), dense(r.b));
    for (std::int64_t k = 0; k < r.w; ++k) g.events.push_back({d.i, d.j, r.t});
    tmax = std::max(tmax, r.t);
  }
  std::sort(g.events.begin(), g.events.end(), event_less);
  g.horizon = tmax;
  bool identity = true;
  for (std::size_t k = 0; k < ids.size(); ++k) identity = identity && ids[k] == std::int64_t(k);
  if (!identity) g.node_labels = std::move(ids);
  return g;
}

inline EventGraph load_events(const std::string& path, bool weighted = false) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open edge list '" + path + "'");
  return parse_events(in, weighted);
}

inline void write_events(std::ostream& out, const EventGraph& g) {
  out << std::setprecision(17);
  for (const Event& e : g.events) out << e.i << ' ' << e.j << ' ' << e.t << '\n';
}

inline void save_events(const std::string& path, const EventGraph& g) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write edge list '" + path + "'");
  write_events(out, g);
}

/// Affinely maps event times onto [0, 1].
inline EventGraph normalize_time(const EventGraph& g) {
  if (g.events.empty()) throw std::invalid_argument("cannot normalize an empty event set");
  auto [lo, hi] = std::minmax_element(g.events.begin(), g.events.end(),
                                      [](const Event& a, const Event& b) { return a.t < b.t; });
  const double tmin = lo->t, tmax = hi->t;
  if (!(tmax > tmin)) throw std::invalid_argument("degenerate timeline: all events share one timestamp");
  EventGraph out = g;
  const double span = tmax - tmin;
  for (Event& e : out.events) e.t = std::clamp((e.t - tmin) / span, 0.0, 1.0);
  out.horizon = 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Split

struct SplitOptions {
  double train_fraction = 0.9;  // events after train_fraction * horizon are held out
  double hide_fraction = 0.1;   // of all dyads, for completion
  double mask_fraction = 0.2;   // of all dyads, for prior-scale selection
};

struct SplitResult {
  EventGraph residual;                  // training events, horizon = train_fraction * T
  std::vector<Event> prediction_events; // t > train_fraction * T, dense ids of `residual`
  std::vector<Event> hidden_events;     // training-window events on hidden dyads
  std::vector<Dyad> hidden_dyads;
  std::vector<Dyad> masked_dyads;
  std::vector<NodeId> node_map;         // residual id -> id in the input graph
  std::vector<Event> dropped_events;    // prediction events touching removed nodes (input ids)
  double horizon = 1.0;                 // horizon of the input graph
};

/// Holds out the last part of the timeline and a random set of dyads.
///
/// Nodes without any event in the training window are removed first (their
/// events can only lie in the prediction window). Hidden dyads are then drawn
/// in uniformly random order, skipping any dyad whose removal would leave an
/// endpoint without residual events.
inline SplitResult split(const EventGraph& g, std::uint64_t seed, const SplitOptions& opt = {}) {
  const double cut = opt.train_fraction * g.horizon;
  std::vector<std::size_t> train_count(g.num_nodes, 0);
  for (const Event& e : g.events)
    if (e.t <= cut) {
      ++train_count[e.i];
      ++train_count[e.j];
    }

  SplitResult out;
  out.horizon = g.horizon;
  std::vector<std::int64_t> to_new(g.num_nodes, -1);
  for (std::size_t n = 0; n < g.num_nodes; ++n)
    if (train_count[n] > 0) {
      to_new[n] = static_cast<std::int64_t>(out.node_map.size());
      out.node_map.push_back(static_cast<NodeId>(n));
    }
  const std::size_t n_kept = out.node_map.size();
  if (n_kept < 2) throw std::runtime_error("split leaves no training events");

  std::unordered_map<std::uint64_t, std::size_t> pair_count;
  std::vector<std::size_t> node_count(n_kept, 0);
  for (const Event& e : g.events)
    if (e.t <= cut) {
      Dyad d{static_cast<NodeId>(to_new[e.i]), static_cast<NodeId>(to_new[e.j])};
      ++pair_count[d.key()];
      ++node_count[d.i];
      ++node_count[d.j];
    }

  const std::uint64_t total = dyad_count(n_kept);
  const auto want_hidden = static_cast<std::uint64_t>(std::floor(opt.hide_fraction * double(total)));
  const auto want_masked = static_cast<std::uint64_t>(std::floor(opt.mask_fraction * double(total)));

  Rng rng = make_rng(seed, 1);
  std::vector<std::uint64_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  shuffle(order.begin(), order.end(), rng);

  std::vector<char> is_hidden(total, 0);
  std::vector<NodeId> blocked;
  for (std::uint64_t idx : order) {
    if (out.hidden_dyads.size() == want_hidden) break;
    Dyad d = dyad_from_index(idx, n_kept);
    auto it = pair_count.find(d.key());
    std::size_t c = it == pair_count.end() ? 0 : it->second;
    if (c > 0 && (node_count[d.i] <= c || node_count[d.j] <= c)) {
      if (node_count[d.i] <= c) blocked.push_back(out.node_map[d.i]);
      if (node_count[d.j] <= c) blocked.push_back(out.node_map[d.j]);
      continue;
    }
    node_count[d.i] -= c;
    node_count[d.j] -= c;
    is_hidden[idx] = 1;
    out.hidden_dyads.push_back(d);
  }
  if (out.hidden_dyads.size() < want_hidden) {
    std::sort(blocked.begin(), blocked.end());
    blocked.erase(std::unique(blocked.begin(), blocked.end()), blocked.end());
    std::string nodes;
    for (NodeId n : blocked) nodes += (nodes.empty() ? "" : ",") + std::to_string(n);
    throw std::runtime_error("cannot hide " + std::to_string(want_hidden) +
                             " dyads while keeping an event on every node; violating nodes: " + nodes);
  }
  std::sort(out.hidden_dyads.begin(), out.hidden_dyads.end());

  for (std::uint64_t idx : order) {
    if (out.masked_dyads.size() == want_masked) break;
    if (!is_hidden[idx]) out.masked_dyads.push_back(dyad_from_index(idx, n_kept));
  }
  std::sort(out.masked_dyads.begin(), out.masked_dyads.end());

  out.residual.num_nodes = n_kept;
  out.residual.horizon = cut;
  if (!g.node_labels.empty())
    for (NodeId n : out.node_map) out.residual.node_labels.push_back(g.node_labels[n]);
  for (const Event& e : g.events) {
    if (to_new[e.i] < 0 || to_new[e.j] < 0) {
      out.dropped_events.push_back(e);
      continue;
    }
    Event r{static_cast<NodeId>(to_new[e.i]), static_cast<NodeId>(to_new[e.j]), e.t};
    if (e.t > cut)
      out.prediction_events.push_back(r);
    else if (is_hidden[dyad_index(r.dyad(), n_kept)])
      out.hidden_events.push_back(r);
    else
      out.residual.events.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Labeled instances

struct LabeledInstance {
  NodeId i = 0;
  NodeId j = 0;
  double t_lower = 0.0;
  double t_upper = 0.0;
  bool positive = false;
};

struct LabeledInstanceSet {
  std::vector<LabeledInstance> instances;
  double half_width = 1e-3;

  std::size_t count(bool label) const {
    return static_cast<std::size_t>(std::count_if(instances.begin(), instances.end(),
                                                   [&](const auto& x) { return x.positive == label; }));
  }
};

struct InstanceOptions {
  double half_width = 1e-3;
  std::size_t max_per_class = 10000;
  int max_retries = 1000;
};

/// Positive instances are the events inside [lo, hi]; negatives are uniformly
/// drawn (dyad from `pool`, time from [lo, hi]) away from every positive
/// interval of their dyad. Each class is subsampled to `max_per_class`.
inline LabeledInstanceSet build_instances(const std::vector<Event>& events, double lo, double hi,
                                          const std::vector<Dyad>& pool, std::uint64_t seed,
                                          const InstanceOptions& opt = {}) {
  if (!(lo <= hi)) throw std::invalid_argument("instance window is empty");
  const double h = opt.half_width;
  std::vector<LabeledInstance> pos;
  std::unordered_map<std::uint64_t, std::vector<double>> times;
  for (const Event& e : events) {
    if (e.t < lo || e.t > hi) continue;
    pos.push_back({e.i, e.j, std::max(lo, e.t - h), std::min(hi, e.t + h), true});
    times[e.dyad().key()].push_back(e.t);
  }
  if (pos.empty()) throw std::runtime_error("no events inside the instance window");
  if (pool.empty()) throw std::invalid_argument("empty dyad pool for negative sampling");
  for (auto& [k, v] : times) std::sort(v.begin(), v.end());

  Rng rng = make_rng(seed, 2);
  std::vector<LabeledInstance> neg;
  neg.reserve(pos.size());
  for (std::size_t k = 0; k < pos.size(); ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < opt.max_retries && !placed; ++attempt) {
      const Dyad d = pool[uniform_index(rng, pool.size())];
      const double t = uniform(rng, lo, hi);
      auto it = times.find(d.key());
      if (it != times.end()) {
        const auto& v = it->second;
        auto p = std::lower_bound(v.begin(), v.end(), t - h);
        if (p != v.end() && *p <= t + h) continue;
      }
      neg.push_back({d.i, d.j, std::max(lo, t - h), std::min(hi, t + h), false});
      placed = true;
    }
    if (!placed) throw std::runtime_error("negative sampling exceeded the retry cap");
  }

  auto subsample = [&](std::vector<LabeledInstance>& v, std::uint64_t stream) {
    if (v.size() <= opt.max_per_class) return;
    Rng r = make_rng(seed, stream);
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t k = 0; k < opt.max_per_class; ++k)
      std::swap(idx[k], idx[k + uniform_index(r, idx.size() - k)]);
    idx.resize(opt.max_per_class);
    std::sort(idx.begin(), idx.end());
    std::vector<LabeledInstance> kept;
    kept.reserve(idx.size());
    for (std::size_t k : idx) kept.push_back(v[k]);
    v = std::move(kept);
  };
  subsample(pos, 3);
  subsample(neg, 4);

  LabeledInstanceSet out;
  out.half_width = h;
  out.instances = std::move(pos);
  out.instances.insert(out.instances.end(), neg.begin(), neg.end());
  return out;
}

/// Instances over [lo, hi] of g, with negatives drawn from all dyads of g.
inline LabeledInstanceSet build_instances(const EventGraph& g, double lo, double hi, std::uint64_t seed,
                                          const InstanceOptions& opt = {}) {
  if (lo < 0.0 || hi > g.horizon) throw std::invalid_argument("instance window outside [0, horizon]");
  return build_instances(g.events, lo, hi, all_dyads(g.num_nodes), seed, opt);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const LabeledInstanceSet& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& x : s.instances) rows.push_back({x.i, x.j, x.t_lower, x.t_upper, x.positive ? 1 : 0});
  return {{"half_width", s.half_width}, {"instances", std::move(rows)}};
}

inline LabeledInstanceSet instances_from_json(const nlohmann::json& j) {
  LabeledInstanceSet s;
  s.half_width = j.at("half_width").get<double>();
  for (const auto& r : j.at("instances"))
    s.instances.push_back({r.at(0).get<NodeId>(), r.at(1).get<NodeId>(), r.at(2).get<double>(),
                           r.at(3).get<double>(), r.at(4).get<int>() != 0});
  return s;
}

namespace detail {
inline nlohmann::json dyads_json(const std::vector<Dyad>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (const Dyad& d : v) a.push_back({d.i, d.j});
  return a;
}
inline std::vector<Dyad> dyads_from(const nlohmann::json& a) {
  std::vector<Dyad> v;
  for (const auto& r : a) v.push_back({r.at(0).get<NodeId>(), r.at(1).get<NodeId>()});
  return v;
}
inline nlohmann::json events_json(const std::vector<Event>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (const Event& e : v) a.push_back({e.i, e.j, e.t});
  return a;
}
inline std::vector<Event> events_from(const nlohmann::json& a) {
  std::vector<Event> v;
  for (const auto& r : a) v.push_back({r.at(0).get<NodeId>(), r.at(1).get<NodeId>(), r.at(2).get<double>()});
  return v;
}
}  // namespace detail

/// Full split manifest; round-trips through split_from_json.
inline nlohmann::json to_json(const SplitResult& s) {
  return {{"horizon", s.horizon},
          {"residual_horizon", s.residual.horizon},
          {"num_nodes", s.residual.num_nodes},
          {"node_map", s.node_map},
          {"residual_events", detail::events_json(s.residual.events)},
          {"prediction_events", detail::events_json(s.prediction_events)},
          {"hidden_events", detail::events_json(s.hidden_events)},
          {"hidden_dyads", detail::dyads_json(s.hidden_dyads)},
          {"masked_dyads", detail::dyads_json(s.masked_dyads)},
          {"dropped_events", detail::events_json(s.dropped_events)}};
}

inline SplitResult split_from_json(const nlohmann::json& j) {
  SplitResult s;
  s.horizon = j.at("horizon").get<double>();
  s.residual.horizon = j.at("residual_horizon").get<double>();
  s.residual.num_nodes = j.at("num_nodes").get<std::size_t>();
  s.node_map = j.at("node_map").get<std::vector<NodeId>>();
  s.residual.events = detail::events_from(j.at("residual_events"));
  s.prediction_events = detail::events_from(j.at("prediction_events"));
  s.hidden_events = detail::events_from(j.at("hidden_events"));
  s.hidden_dyads = detail::dyads_from(j.at("hidden_dyads"));
  s.masked_dyads = detail::dyads_from(j.at("masked_dyads"));
  s.dropped_events = detail::events_from(j.at("dropped_events"));
  return s;
}

}  // namespace pivem
