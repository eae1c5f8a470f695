#include "semnav/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace semnav {

std::vector<int> top_k_by_score(const Eigen::VectorXd& score, int k) {
  if (k < 0 || k > score.size())
    throw std::invalid_argument("top_k_by_score: k out of range");
  std::vector<int> ids(static_cast<std::size_t>(score.size()));
  std::iota(ids.begin(), ids.end(), 0);
  std::sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
  ids.resize(static_cast<std::size_t>(k));
  return ids;
}

Eigen::VectorXd frequency_from_batch(
    std::span<const TokenDistribution> batch) {
  if (batch.empty())
    throw std::invalid_argument("frequency_from_batch: empty batch");
  const Eigen::Index vocab = batch.front().probs.cols();
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(vocab);
  for (const TokenDistribution& td : batch)
    for (int t : td.argmax_tokens) counts[t] += 1.0;
  return counts / counts.sum();
}

namespace {

void check_frequency(const Eigen::VectorXd& freq, const char* who) {
  if (std::abs(freq.sum() - 1.0) > 1e-6)
    throw std::invalid_argument(std::string(who) +
                                ": frequency must sum to 1");
  if (freq.minCoeff() < 0.0)
    throw std::invalid_argument(std::string(who) + ": negative frequency");
}

bool same_conditioning(const AggregatedSemantics& a,
                       const AggregatedSemantics& b) {
  if (a.mode != b.mode) return false;
  switch (a.mode) {
    case AggMode::kMean:
      return true;
    case AggMode::kSample:
      return a.patch_index == b.patch_index;
    case AggMode::kWeighted:
      return a.weights && b.weights && a.weights->w == b.weights->w;
  }
  return false;
}

}  // namespace

CodebookState CodebookState::init_static(const Eigen::VectorXd& freq,
                                         int size) {
  check_frequency(freq, "init_static");
  if (size < 1 || size > freq.size())
    throw std::invalid_argument("init_static: size out of range");
  CodebookState st;
  st.dynamic_ = false;
  st.size_ = size;
  st.s_f_ = freq;
  st.s_d_ = Eigen::VectorXd::Zero(freq.size());
  st.s_t_ = freq;
  st.selected_ = top_k_by_score(st.s_t_, size);
  return st;
}

CodebookState CodebookState::init_dynamic(const Eigen::VectorXd& freq,
                                          int size, double lambda,
                                          double gamma) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("init_dynamic: lambda must be in [0, 1]");
  if (gamma < 0.0)
    throw std::invalid_argument("init_dynamic: gamma must be >= 0");
  CodebookState st = init_static(freq, size);
  st.dynamic_ = true;
  st.lambda_ = lambda;
  st.gamma_ = gamma;
  return st;
}

void CodebookState::update(const Eigen::VectorXd& batch_freq,
                           const AggregatedSemantics& pred,
                           const AggregatedSemantics& target) {
  if (!dynamic_)
    throw std::logic_error("CodebookState::update: state is static");
  check_frequency(batch_freq, "update");
  if (batch_freq.size() != s_t_.size())
    throw std::invalid_argument("update: frequency length mismatch");
  if (pred.mode != target.mode)
    throw std::invalid_argument("update: pred/target mode mismatch");
  if (!same_conditioning(pred, target))
    throw std::invalid_argument("update: pred/target conditioning mismatch");
  if (pred.subset != target.subset || pred.subset != selected_)
    throw std::invalid_argument(
        "update: pred/target must cover the current subset");
  if (pred.probs.size() != target.probs.size() ||
      static_cast<std::size_t>(pred.probs.size()) != selected_.size())
    throw std::invalid_argument("update: probability length mismatch");

  s_f_ = batch_freq;
  // Difficulty refreshes only for tokens whose prediction we just saw; the
  // rest keep their previous difficulty.
  for (std::size_t i = 0; i < selected_.size(); ++i)
    s_d_[selected_[i]] = std::abs(pred.probs[static_cast<Eigen::Index>(i)] -
                                  target.probs[static_cast<Eigen::Index>(i)]);
  s_t_ = lambda_ * s_t_ + (1.0 - lambda_) * (s_f_ + gamma_ * s_d_);
  selected_ = top_k_by_score(s_t_, size_);
}

CodebookState CodebookState::from_parts(bool dynamic, double lambda,
                                        double gamma, int size,
                                        Eigen::VectorXd s_f,
                                        Eigen::VectorXd s_d,
                                        Eigen::VectorXd s_t) {
  if (s_f.size() != s_t.size() || s_d.size() != s_t.size())
    throw std::invalid_argument("CodebookState::from_parts: length mismatch");
  if (size < 1 || size > s_t.size())
    throw std::invalid_argument("CodebookState::from_parts: bad size");
  CodebookState st;
  st.dynamic_ = dynamic;
  st.lambda_ = lambda;
  st.gamma_ = gamma;
  st.size_ = size;
  st.s_f_ = std::move(s_f);
  st.s_d_ = std::move(s_d);
  st.s_t_ = std::move(s_t);
  st.selected_ = top_k_by_score(st.s_t_, size);
  return st;
}

}  // namespace semnav
