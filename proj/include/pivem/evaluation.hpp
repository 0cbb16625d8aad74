#pragma once

// Ranking metrics and the three evaluation tasks: reconstruction of training
// events, completion of hidden dyads and prediction of future events.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pivem/latent_model.hpp"
#include "pivem/parallel.hpp"
#include "pivem/special.hpp"
#include "pivem/temporal_graph.hpp"

namespace pivem {

/// How an interval beyond the model horizon is scored.
enum class FutureScoring {
  kFrozen,       // mean intensity of the final bin times the interval length
  kExtrapolate,  // final-bin velocities continued past the horizon
};

inline std::string to_string(FutureScoring m) { return m == FutureScoring::kFrozen ? "frozen" : "extrapolate"; }

inline FutureScoring future_scoring_from_string(const std::string& s) {
  if (s == "frozen") return FutureScoring::kFrozen;
  if (s == "extrapolate") return FutureScoring::kExtrapolate;
  throw std::invalid_argument("unknown future scoring mode '" + s + "'");
}

/// Integrated intensity of the instance's dyad over its interval. The part of
/// the interval beyond the model horizon is scored according to `future`.
inline double score_instance(const ModelState& m, const LabeledInstance& inst,
                             FutureScoring future = FutureScoring::kFrozen) {
  const double lo = std::max(0.0, inst.t_lower);
  const double hi = inst.t_upper;
  if (!(hi > lo)) return 0.0;
  double score = 0.0;
  if (lo < m.horizon) score += integrate_intensity(m, inst.i, inst.j, lo, std::min(hi, m.horizon));
  if (hi > m.horizon) {
    const double a = std::max(lo, m.horizon), b = hi;
    const std::size_t last = m.num_bins() - 1;
    const double start = double(last) * m.bin_width();
    if (future == FutureScoring::kFrozen) {
      const double mean = integrate_intensity(m, inst.i, inst.j, start, m.horizon) / m.bin_width();
      score += mean * (b - a);
    } else {
      const Vector dx = position(m, inst.i, start) - position(m, inst.j, start);
      const Vector dv = (m.velocity[last].row(inst.i) - m.velocity[last].row(inst.j)).transpose();
      const SegmentQuadratic q = SegmentQuadratic::from(dx, dv);
      score += segment_integral(q, m.beta[inst.i] + m.beta[inst.j], a - start, b - start);
    }
  }
  return score;
}

inline std::vector<double> score_instances(const ModelState& m, std::span<const LabeledInstance> instances,
                                           FutureScoring future = FutureScoring::kFrozen, std::size_t threads = 1) {
  std::vector<double> out(instances.size());
  for_each_chunk(instances.size(), std::max<std::size_t>(1, threads), [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) out[k] = score_instance(m, instances[k], future);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

namespace detail {

inline std::size_t check_classes(std::span<const double> scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  const auto pos = std::size_t(std::count(labels.begin(), labels.end(), true));
  if (pos == 0 || pos == labels.size()) throw std::invalid_argument("both classes must be present");
  for (double s : scores)
    if (std::isnan(s)) throw std::invalid_argument("NaN score");
  return pos;
}

/// Indices ordered by decreasing score.
inline std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace detail

/// ROC AUC via the Mann-Whitney rank statistic; tied scores share their
/// average rank, so each tied positive-negative pair counts one half.
inline double roc_auc(std::span<const double> scores, const std::vector<bool>& labels) {
  const std::size_t pos = detail::check_classes(scores, labels);
  const std::size_t neg = labels.size() - pos;
  std::vector<std::size_t> order = detail::descending(scores);
  std::reverse(order.begin(), order.end());
  // Twice the rank sum keeps every quantity integral.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t a = 0; a < order.size();) {
    std::size_t b = a;
    while (b < order.size() && scores[order[b]] == scores[order[a]]) ++b;
    const std::uint64_t twice_avg = std::uint64_t(a + 1 + b);  // 2 * mean of ranks a+1..b
    for (std::size_t k = a; k < b; ++k)
      if (labels[order[k]]) twice_rank_sum += twice_avg;
    a = b;
  }
  const double wins = (double(twice_rank_sum) - double(pos) * double(pos + 1)) / 2.0;
  return wins / (double(pos) * double(neg));
}

/// Step-wise average precision: recall increments times the precision at
/// each distinct threshold, tied scores entering together.
inline double pr_auc(std::span<const double> scores, const std::vector<bool>& labels) {
  const std::size_t pos = detail::check_classes(scores, labels);
  const std::vector<std::size_t> order = detail::descending(scores);
  std::size_t tp = 0, fp = 0;
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t a = 0; a < order.size();) {
    std::size_t b = a;
    while (b < order.size() && scores[order[b]] == scores[order[a]]) {
      (labels[order[b]] ? tp : fp)++;
      ++b;
    }
    const double recall = double(tp) / double(pos);
    const double precision = double(tp) / double(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    a = b;
  }
  return ap;
}

// ---------------------------------------------------------------------------
// Tasks

enum class Task { kReconstruction, kCompletion, kPrediction };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::kReconstruction: return "reconstruction";
    case Task::kCompletion: return "completion";
    case Task::kPrediction: return "prediction";
  }
  return "";
}

inline Task task_from_string(const std::string& s) {
  if (s == "reconstruction") return Task::kReconstruction;
  if (s == "completion") return Task::kCompletion;
  if (s == "prediction") return Task::kPrediction;
  throw std::invalid_argument("unknown task '" + s + "'");
}

struct TaskMetrics {
  Task task = Task::kReconstruction;
  double roc_auc = 0.0;
  double pr_auc = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::uint64_t seed = 0;
  FutureScoring mode = FutureScoring::kFrozen;
};

inline nlohmann::json to_json(const TaskMetrics& t) {
  return {{"task", to_string(t.task)}, {"roc_auc", t.roc_auc}, {"pr_auc", t.pr_auc}, {"n_pos", t.n_pos},
          {"n_neg", t.n_neg},          {"seed", t.seed},       {"mode", to_string(t.mode)}};
}

/// Instances for a task, in the residual's node ids.
///   reconstruction: training events over the training window, negatives from observed dyads;
///   completion: events of hidden dyads over the training window, negatives from hidden dyads;
///   prediction: events after the training window, negatives from every dyad.
inline LabeledInstanceSet task_instances(Task task, const SplitResult& s, std::uint64_t seed,
                                         const InstanceOptions& opt = {}) {
  const EventGraph& r = s.residual;
  switch (task) {
    case Task::kReconstruction:
      return build_instances(r.events, 0.0, r.horizon, dyads_excluding(r.num_nodes, s.hidden_dyads), seed, opt);
    case Task::kCompletion:
      return build_instances(s.hidden_events, 0.0, r.horizon, s.hidden_dyads, seed, opt);
    case Task::kPrediction:
      return build_instances(s.prediction_events, r.horizon, s.horizon, all_dyads(r.num_nodes), seed, opt);
  }
  throw std::invalid_argument("unknown task");
}

inline TaskMetrics evaluate_instances(const ModelState& m, const LabeledInstanceSet& set, Task task,
                                      std::uint64_t seed, FutureScoring future = FutureScoring::kFrozen,
                                      std::size_t threads = 1) {
  const std::vector<double> scores = score_instances(m, set.instances, future, threads);
  std::vector<bool> labels;
  labels.reserve(set.instances.size());
  for (const auto& x : set.instances) labels.push_back(x.positive);
  TaskMetrics t;
  t.task = task;
  t.seed = seed;
  t.mode = future;
  t.n_pos = set.count(true);
  t.n_neg = set.count(false);
  t.roc_auc = roc_auc(scores, labels);
  t.pr_auc = pr_auc(scores, labels);
  return t;
}

/// Scores `m`, trained on `s.residual`, on one task.
inline TaskMetrics run_task(Task task, const ModelState& m, const SplitResult& s, std::uint64_t seed,
                            FutureScoring future = FutureScoring::kFrozen, std::size_t threads = 1,
                            const InstanceOptions& opt = {}) {
  if (m.num_nodes() != s.residual.num_nodes) throw std::invalid_argument("model and split differ in node count");
  return evaluate_instances(m, task_instances(task, s, seed, opt), task, seed, future, threads);
}

}  // namespace pivem
