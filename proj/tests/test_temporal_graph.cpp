#include <algorithm>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "pivem/temporal_graph.hpp"

using namespace pivem;

namespace {

EventGraph parse(const std::string& text, bool weighted = false) {
  std::istringstream in(text);
  return parse_events(in, weighted);
}

EventGraph random_graph(std::size_t n, std::size_t events, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  EventGraph g;
  g.num_nodes = n;
  g.horizon = 1.0;
  for (std::size_t k = 0; k < events; ++k) {
    auto a = NodeId(uniform_index(rng, n));
    auto b = NodeId(uniform_index(rng, n - 1));
    if (b >= a) ++b;
    Dyad d = Dyad::make(a, b);
    g.events.push_back({d.i, d.j, uniform01(rng)});
  }
  std::sort(g.events.begin(), g.events.end(), event_less);
  return g;
}

std::multiset<std::tuple<NodeId, NodeId, double>> as_multiset(const std::vector<Event>& ev) {
  std::multiset<std::tuple<NodeId, NodeId, double>> s;
  for (const auto& e : ev) s.insert({e.i, e.j, e.t});
  return s;
}

}  // namespace

TEST(LoadEvents, ParsesPlainRecords) {
  EventGraph g = parse("0 1 0.5\n1 2 0.25");
  EXPECT_EQ(g.num_nodes, 3u);
  ASSERT_EQ(g.events.size(), 2u);
  EXPECT_EQ(g.events[0], (Event{0, 1, 0.5}));
  EXPECT_EQ(g.events[1], (Event{1, 2, 0.25}));
  EXPECT_NO_THROW(g.validate());
}

TEST(LoadEvents, WeightedRecordReplicates) {
  EventGraph g = parse("0 1 0.5 3", true);
  ASSERT_EQ(g.events.size(), 3u);
  for (const auto& e : g.events) EXPECT_EQ(e, (Event{0, 1, 0.5}));
}

TEST(LoadEvents, WeightIgnoredWithoutFlag) {
  EXPECT_EQ(parse("0 1 0.5 3").events.size(), 1u);
}

TEST(LoadEvents, RejectsSelfLoop) { EXPECT_THROW(parse("2 2 0.1"), ParseError); }

TEST(LoadEvents, CommentsCommasAndRemapping) {
  EventGraph g = parse("# header\n10,30,1.0\n\n30 20 2.0\n");
  EXPECT_EQ(g.num_nodes, 3u);
  EXPECT_EQ(g.node_labels, (std::vector<std::int64_t>{10, 20, 30}));
  EXPECT_EQ(g.events[0], (Event{0, 2, 1.0}));
  EXPECT_EQ(g.events[1], (Event{1, 2, 2.0}));
}

TEST(LoadEvents, ErrorsCarryLineNumbers) {
  try {
    parse("0 1 0.5\n0 1 abc\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse("0 1 -0.5"), ParseError);
  EXPECT_THROW(parse("0 1 0.5 1.5", true), ParseError);
  EXPECT_THROW(parse("0 1"), ParseError);
  EXPECT_THROW(parse("# only comments\n"), std::runtime_error);
}

TEST(LoadEvents, SerializeRoundTripKeepsMultiset) {
  EventGraph g = random_graph(12, 300, 5);
  g.events.push_back(g.events.front());  // duplicate timestamp
  std::sort(g.events.begin(), g.events.end(), event_less);
  std::ostringstream out;
  write_events(out, g);
  EventGraph back = parse(out.str());
  EXPECT_EQ(as_multiset(back.events), as_multiset(g.events));
}

TEST(NormalizeTime, AffineMap) {
  EventGraph g = parse("0 1 10\n0 1 20\n1 2 30");
  EventGraph n = normalize_time(g);
  EXPECT_EQ(n.events[0].t, 0.0);
  EXPECT_EQ(n.events[1].t, 0.5);
  EXPECT_EQ(n.events[2].t, 1.0);
  EXPECT_EQ(n.horizon, 1.0);
}

TEST(NormalizeTime, UnitSpanUnchanged) {
  EventGraph g = random_graph(6, 50, 2);
  g.events.push_back({0, 1, 0.0});
  g.events.push_back({0, 1, 1.0});
  std::sort(g.events.begin(), g.events.end(), event_less);
  EXPECT_EQ(normalize_time(g).events, g.events);
}

TEST(NormalizeTime, DegenerateTimeline) {
  EXPECT_THROW(normalize_time(parse("0 1 5\n1 2 5")), std::invalid_argument);
}

TEST(Dyads, IndexRoundTrip) {
  const std::size_t n = 9;
  auto all = all_dyads(n);
  ASSERT_EQ(all.size(), dyad_count(n));
  for (std::size_t k = 0; k < all.size(); ++k) {
    EXPECT_EQ(dyad_index(all[k], n), k);
    EXPECT_EQ(dyad_from_index(k, n), all[k]);
  }
}

TEST(Split, NoHidingIsNoOp) {
  EventGraph g = random_graph(8, 200, 3);
  for (auto& e : g.events) e.t *= 0.9;
  SplitOptions opt;
  opt.hide_fraction = 0.0;
  opt.mask_fraction = 0.0;
  SplitResult s = split(g, 1, opt);
  EXPECT_EQ(s.residual.events, g.events);
  EXPECT_TRUE(s.prediction_events.empty());
}

TEST(Split, AllEventsInPredictionWindowFails) {
  EventGraph g = parse("0 1 0.95\n0 2 0.95\n1 2 0.95");
  g.horizon = 1.0;
  EXPECT_THROW(split(g, 1), std::runtime_error);
}

TEST(Split, HiddenCountForHundredNodes) {
  EventGraph g = random_graph(100, 20000, 4);
  SplitResult s = split(g, 9);
  ASSERT_EQ(s.residual.num_nodes, 100u);
  EXPECT_EQ(s.hidden_dyads.size(), 495u);
  EXPECT_EQ(s.masked_dyads.size(), 990u);
}

TEST(Split, InvariantsAndPartition) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EventGraph g = random_graph(30, 1500, 100 + seed);
    SplitResult s = split(g, seed);
    const std::size_t n = s.residual.num_nodes;
    EXPECT_EQ(s.hidden_dyads.size(), dyad_count(n) / 10);
    EXPECT_EQ(s.masked_dyads.size(), std::size_t(std::floor(0.2 * double(dyad_count(n)))));
    for (const auto& e : s.prediction_events) EXPECT_GT(e.t, 0.9);

    std::vector<std::size_t> deg(n, 0);
    std::set<Dyad> residual_dyads;
    for (const auto& e : s.residual.events) {
      ++deg[e.i];
      ++deg[e.j];
      residual_dyads.insert(e.dyad());
    }
    for (std::size_t v = 0; v < n; ++v) EXPECT_GT(deg[v], 0u) << "node " << v;
    for (const auto& d : s.hidden_dyads) EXPECT_FALSE(residual_dyads.count(d));
    std::set<Dyad> hidden(s.hidden_dyads.begin(), s.hidden_dyads.end());
    for (const auto& d : s.masked_dyads) EXPECT_FALSE(hidden.count(d));

    auto to_input = [&](const Event& e) { return Event{s.node_map[e.i], s.node_map[e.j], e.t}; };
    std::vector<Event> joined;
    for (const auto* part : {&s.residual.events, &s.prediction_events, &s.hidden_events})
      for (const auto& e : *part) joined.push_back(to_input(e));
    joined.insert(joined.end(), s.dropped_events.begin(), s.dropped_events.end());
    EXPECT_EQ(as_multiset(joined), as_multiset(g.events));
    EXPECT_EQ(joined.size(), g.events.size());
  }
}

TEST(Split, Deterministic) {
  EventGraph g = random_graph(20, 600, 8);
  EXPECT_EQ(to_json(split(g, 42)), to_json(split(g, 42)));
  EXPECT_NE(to_json(split(g, 42))["hidden_dyads"], to_json(split(g, 43))["hidden_dyads"]);
}

TEST(Split, JsonRoundTrip) {
  EventGraph g = random_graph(15, 400, 12);
  SplitResult s = split(g, 3);
  EXPECT_EQ(to_json(split_from_json(to_json(s))), to_json(s));
}

TEST(Split, NodesOnlyInPredictionWindowAreRemoved) {
  EventGraph g = random_graph(10, 300, 6);
  for (auto& e : g.events) e.t *= 0.9;
  g.num_nodes = 11;
  g.events.push_back({3, 10, 0.97});
  std::sort(g.events.begin(), g.events.end(), event_less);
  SplitResult s = split(g, 1);
  EXPECT_EQ(s.residual.num_nodes, 10u);
  ASSERT_EQ(s.dropped_events.size(), 1u);
  EXPECT_EQ(s.dropped_events[0].j, 10u);
}

TEST(Split, ReportsBlockingNodes) {
  // A star: every dyad carries the only events of its leaf.
  EventGraph g;
  g.num_nodes = 12;
  for (NodeId v = 1; v < 12; ++v) g.events.push_back({0, v, 0.5});
  try {
    SplitOptions opt;
    opt.hide_fraction = 0.9;
    split(g, 1, opt);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("violating nodes"), std::string::npos);
  }
}

TEST(Instances, SingleEventInterval) {
  std::vector<Event> ev{{0, 1, 0.5}};
  auto set = build_instances(ev, 0.0, 1.0, all_dyads(3), 1);
  ASSERT_EQ(set.count(true), 1u);
  const auto& p = set.instances.front();
  EXPECT_TRUE(p.positive);
  EXPECT_DOUBLE_EQ(p.t_lower, 0.499);
  EXPECT_DOUBLE_EQ(p.t_upper, 0.501);
}

TEST(Instances, ClassesBalancedAndClamped) {
  EventGraph g = random_graph(10, 500, 21);
  g.events.push_back({0, 1, 0.0});
  g.events.push_back({0, 1, 1.0});
  std::sort(g.events.begin(), g.events.end(), event_less);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto set = build_instances(g, 0.0, 1.0, seed);
    EXPECT_EQ(set.count(true), set.count(false));
    for (const auto& x : set.instances) {
      EXPECT_GE(x.t_lower, 0.0);
      EXPECT_LE(x.t_upper, 1.0);
      EXPECT_LE(x.t_upper - x.t_lower, 2e-3 + 1e-15);
      const bool at_edge = x.t_lower == 0.0 || x.t_upper == 1.0;
      if (!at_edge) EXPECT_NEAR(x.t_upper - x.t_lower, 2e-3, 1e-15);
    }
  }
}

TEST(Instances, NegativesAvoidPositiveIntervals) {
  // Dense single dyad: most uniform times collide with a positive interval.
  std::vector<Event> ev;
  for (int k = 0; k < 300; ++k) ev.push_back({0, 1, (k + 0.5) / 300.0});
  auto set = build_instances(ev, 0.0, 1.0, {Dyad{0, 1}}, 4);
  ASSERT_EQ(set.count(false), 300u);
  for (const auto& x : set.instances) {
    if (x.positive || x.t_lower == 0.0 || x.t_upper == 1.0) continue;
    const double centre = 0.5 * (x.t_lower + x.t_upper);
    for (const auto& e : ev) EXPECT_GT(std::abs(centre - e.t), 1e-3 - 1e-12);
  }
}

TEST(Instances, SubsampleToCap) {
  std::vector<Event> ev;
  Rng rng = make_rng(3);
  for (int k = 0; k < 20001; ++k) {
    auto a = NodeId(uniform_index(rng, 40)), b = NodeId(uniform_index(rng, 39));
    if (b >= a) ++b;
    Dyad d = Dyad::make(a, b);
    ev.push_back({d.i, d.j, uniform01(rng)});
  }
  auto set = build_instances(ev, 0.0, 1.0, all_dyads(40), 5);
  EXPECT_EQ(set.count(true), 10000u);
  EXPECT_EQ(set.count(false), 10000u);
}

TEST(Instances, EmptyWindowIsError) {
  std::vector<Event> ev{{0, 1, 0.2}};
  EXPECT_THROW(build_instances(ev, 0.5, 1.0, all_dyads(2), 1), std::runtime_error);
}

TEST(Instances, JsonRoundTrip) {
  EventGraph g = random_graph(8, 100, 2);
  auto set = build_instances(g, 0.0, 1.0, 9);
  auto back = instances_from_json(to_json(set));
  EXPECT_EQ(to_json(back), to_json(set));
}

TEST(Stats, Columns) {
  EventGraph g = parse("0 1 0.1\n0 1 0.2\n0 1 0.3\n1 2 0.4\n");
  GraphStats s = graph_stats(g);
  EXPECT_EQ(s.num_nodes, 3u);
  EXPECT_EQ(s.linked_pairs, 2u);
  EXPECT_EQ(s.num_events, 4u);
  EXPECT_EQ(s.max_pair_events, 3u);
}
