#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "semnav/semantics.hpp"
#include "semnav/tokenizer.hpp"

namespace semnav {

// Top-k token ids by descending score, ties broken by ascending id; the
// returned order is the selection order.
std::vector<int> top_k_by_score(const Eigen::VectorXd& score, int k);

// Normalized count of argmax tokens across all patches of all items.
Eigen::VectorXd frequency_from_batch(std::span<const TokenDistribution> batch);

// Tracks which token subset S the prediction heads work over.  Static states
// freeze the initial frequency-based selection; dynamic states blend batch
// frequency and per-token prediction difficulty into a running score and
// re-select after every update.
class CodebookState {
 public:
  // An empty state; init_static / init_dynamic produce usable ones.
  CodebookState() = default;

  static CodebookState init_static(const Eigen::VectorXd& freq, int size);
  static CodebookState init_dynamic(const Eigen::VectorXd& freq, int size,
                                    double lambda = 0.5, double gamma = 1.0);

  // One scoring step: s_f becomes the batch frequency, the difficulty of the
  // currently selected tokens becomes |pred - target| from the given pair,
  // the running score is folded as lambda * old + (1 - lambda) * (s_f +
  // gamma * s_d), and the subset is re-selected.  pred and target must share
  // mode, conditioning, and the current subset.
  void update(const Eigen::VectorXd& batch_freq,
              const AggregatedSemantics& pred,
              const AggregatedSemantics& target);

  const std::vector<int>& selected_subset() const { return selected_; }
  bool is_dynamic() const { return dynamic_; }
  double lambda() const { return lambda_; }
  double gamma() const { return gamma_; }
  int subset_size() const { return size_; }

  const Eigen::VectorXd& frequency_score() const { return s_f_; }
  const Eigen::VectorXd& difficulty_score() const { return s_d_; }
  const Eigen::VectorXd& running_score() const { return s_t_; }

  // Checkpoint support.
  static CodebookState from_parts(bool dynamic, double lambda, double gamma,
                                  int size, Eigen::VectorXd s_f,
                                  Eigen::VectorXd s_d, Eigen::VectorXd s_t);

 private:
  bool dynamic_ = false;
  double lambda_ = 0.5;
  double gamma_ = 1.0;
  int size_ = 0;
  Eigen::VectorXd s_f_, s_d_, s_t_;
  std::vector<int> selected_;
};

}  // namespace semnav
