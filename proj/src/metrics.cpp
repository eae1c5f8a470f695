#include "semnav/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace semnav {

namespace {

void check_path(const Environment& env, const std::vector<int>& path,
                const char* what) {
  if (path.empty()) {
    throw std::invalid_argument(std::string(what) + " path is empty");
  }
  for (int node : path) {
    if (node < 0 || node >= env.node_count()) {
      throw std::invalid_argument(std::string(what) +
                                  " path contains an unknown node");
    }
  }
}

// Graph distance from every reference node to every other node, one BFS per
// reference node.
std::vector<std::vector<int>> ref_distance_table(const Environment& env,
                                                 const std::vector<int>& ref) {
  std::vector<std::vector<int>> table;
  table.reserve(ref.size());
  for (int node : ref) table.push_back(bfs_distances(env, node));
  return table;
}

}  // namespace

double dtw_distance(const Environment& env, const std::vector<int>& pred,
                    const std::vector<int>& ref) {
  check_path(env, pred, "predicted");
  check_path(env, ref, "reference");
  const auto dist = ref_distance_table(env, ref);
  const std::size_t n = pred.size(), m = ref.size();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> dp(n, std::vector<double>(m, kInf));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double cost = static_cast<double>(dist[j][pred[i]]);
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else {
        best = kInf;
        if (i > 0) best = std::min(best, dp[i - 1][j]);
        if (j > 0) best = std::min(best, dp[i][j - 1]);
        if (i > 0 && j > 0) best = std::min(best, dp[i - 1][j - 1]);
      }
      dp[i][j] = cost + best;
    }
  }
  return dp[n - 1][m - 1];
}

PathMetrics compute_path_metrics(const Environment& env,
                                 const std::vector<int>& pred,
                                 const std::vector<int>& ref) {
  check_path(env, pred, "predicted");
  check_path(env, ref, "reference");
  const int goal = ref.back();
  const auto dist = ref_distance_table(env, ref);
  const auto& goal_dist = dist.back();

  PathMetrics m;
  m.trajectory_length = static_cast<double>(pred.size()) - 1.0;
  m.navigation_error = static_cast<double>(goal_dist[pred.back()]);
  m.success = m.navigation_error <= static_cast<double>(kSuccessRadius);

  const double ref_len = static_cast<double>(ref.size()) - 1.0;
  const double sr = m.success ? 1.0 : 0.0;
  const double denom = std::max(m.trajectory_length, ref_len);
  m.spl = denom > 0.0 ? sr * ref_len / denom : sr;

  const double dtw = dtw_distance(env, pred, ref);
  m.ndtw = std::exp(-dtw / (static_cast<double>(ref.size()) *
                            static_cast<double>(kSuccessRadius)));
  m.sdtw = sr * m.ndtw;

  // Coverage: how close the prediction comes to each reference node, scaled
  // by how well the lengths agree.
  double coverage = 0.0;
  for (std::size_t j = 0; j < ref.size(); ++j) {
    int nearest = std::numeric_limits<int>::max();
    for (int p : pred) nearest = std::min(nearest, dist[j][p]);
    coverage += std::exp(-static_cast<double>(nearest) /
                         static_cast<double>(kSuccessRadius));
  }
  coverage /= static_cast<double>(ref.size());
  const double expected = coverage * ref_len;
  const double ls_denom = expected + std::abs(expected - m.trajectory_length);
  m.cls = ls_denom > 0.0 ? coverage * expected / ls_denom : 0.0;
  return m;
}

EvalResult aggregate_evals(std::vector<EpisodeEval> episodes) {
  EvalResult r;
  r.episode_count = static_cast<int>(episodes.size());
  std::array<int, 4> bucket_success{};
  for (const EpisodeEval& e : episodes) {
    r.sr += e.metrics.success ? 1.0 : 0.0;
    r.spl += e.metrics.spl;
    r.ne += e.metrics.navigation_error;
    r.ndtw += e.metrics.ndtw;
    r.sdtw += e.metrics.sdtw;
    r.cls += e.metrics.cls;
    r.tl += e.metrics.trajectory_length;
    if (e.ref_edges < kMinPathEdges || e.ref_edges > kMaxPathEdges) {
      throw std::invalid_argument("reference length outside episode range");
    }
    const int b = e.ref_edges - kMinPathEdges;
    ++r.bucket_count[b];
    if (e.metrics.success) ++bucket_success[b];
  }
  if (r.episode_count > 0) {
    const double n = static_cast<double>(r.episode_count);
    r.sr /= n;
    r.spl /= n;
    r.ne /= n;
    r.ndtw /= n;
    r.sdtw /= n;
    r.cls /= n;
    r.tl /= n;
  }
  for (int b = 0; b < 4; ++b) {
    r.bucket_sr[b] = r.bucket_count[b] > 0
                         ? static_cast<double>(bucket_success[b]) /
                               static_cast<double>(r.bucket_count[b])
                         : 0.0;
  }
  r.episodes = std::move(episodes);
  return r;
}

namespace {

std::string format_cell(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_csv(std::ostream& out, std::span<const std::string> header,
               std::span<const std::vector<double>> rows) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    out << (i == 0 ? "" : ",") << header[i];
  }
  out << "\n";
  for (const auto& row : rows) {
    if (row.size() != header.size()) {
      throw std::invalid_argument("csv row width does not match header");
    }
    for (std::size_t i = 0; i < row.size(); ++i) {
      out << (i == 0 ? "" : ",") << format_cell(row[i]);
    }
    out << "\n";
  }
}

std::string eval_result_csv(const EvalResult& result) {
  std::vector<std::string> header = {"episodes", "sr",   "spl", "ne",
                                     "ndtw",     "sdtw", "cls", "tl"};
  std::vector<double> row = {static_cast<double>(result.episode_count),
                             result.sr,
                             result.spl,
                             result.ne,
                             result.ndtw,
                             result.sdtw,
                             result.cls,
                             result.tl};
  for (int b = 0; b < 4; ++b) {
    header.push_back("sr_len" + std::to_string(kMinPathEdges + b));
    row.push_back(result.bucket_sr[b]);
    header.push_back("count_len" + std::to_string(kMinPathEdges + b));
    row.push_back(static_cast<double>(result.bucket_count[b]));
  }
  std::ostringstream out;
  const std::vector<std::vector<double>> rows = {row};
  write_csv(out, header, rows);
  return out.str();
}

}  // namespace semnav
