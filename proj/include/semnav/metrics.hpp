#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "semnav/world.hpp"

namespace semnav {

// Success radius in graph hops: stopping within this distance of the goal
// counts as success.
inline constexpr int kSuccessRadius = 1;
inline constexpr int kMinPathEdges = 3;
inline constexpr int kMaxPathEdges = 6;

// Quality measures for one predicted trajectory against the reference path.
// Lengths are counted in edges; distances in graph hops.
struct PathMetrics {
  bool success = false;
  double trajectory_length = 0.0;   // edges traversed
  double navigation_error = 0.0;    // hops from stop node to goal
  double spl = 0.0;                 // success weighted by path efficiency
  double ndtw = 0.0;                // normalized dynamic-time-warping score
  double sdtw = 0.0;                // ndtw gated by success
  double cls = 0.0;                 // coverage weighted by length score
};

// Raw dynamic-time-warping cost between two node paths under graph distance
// (monotone alignment, repetitions allowed, endpoints pinned).
double dtw_distance(const Environment& env, const std::vector<int>& pred,
                    const std::vector<int>& ref);

PathMetrics compute_path_metrics(const Environment& env,
                                 const std::vector<int>& pred,
                                 const std::vector<int>& ref);

// --- Split-level evaluation -------------------------------------------------

struct EpisodeEval {
  PathMetrics metrics;
  int ref_edges = 0;  // reference path length in edges
};

struct EvalResult {
  int episode_count = 0;
  double sr = 0.0, spl = 0.0, ne = 0.0, ndtw = 0.0, sdtw = 0.0, cls = 0.0,
         tl = 0.0;
  // Per-reference-length breakdown for edge counts 3..6.
  std::array<int, 4> bucket_count{};
  std::array<double, 4> bucket_sr{};
  std::vector<EpisodeEval> episodes;
};

// Fold per-episode results into the aggregate fields (means; buckets by
// reference length).
EvalResult aggregate_evals(std::vector<EpisodeEval> episodes);

// One CSV row per call site's needs: plain numeric cells, fixed six-decimal
// formatting, no quoting.
void write_csv(std::ostream& out, std::span<const std::string> header,
               std::span<const std::vector<double>> rows);
std::string eval_result_csv(const EvalResult& result);

}  // namespace semnav
