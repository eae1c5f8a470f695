#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "semnav/codebook.hpp"
#include "semnav/model.hpp"

namespace semnav {

// Pre-training tasks.  The first three generate visual-token distributions
// (masked history steps, masked panorama views, the next action's view); the
// last three are auxiliary word, pairing, and action objectives.
enum class PretrainTask {
  kMaskedTrajectory,
  kMaskedViews,
  kActionView,
  kMaskedWords,
  kPairMatch,
  kNextAction,
};

const char* pretrain_task_name(PretrainTask task);
PretrainTask pretrain_task_from_name(const std::string& name);
bool is_generation_task(PretrainTask task);

// --- Mask sampling ----------------------------------------------------------

// ceil(ratio * steps) distinct history steps, ascending; needs steps >= 2.
std::vector<int> mask_trajectory_steps(int steps, double ratio, Rng& rng);
// ceil(ratio * 36) distinct view indices, ascending.
std::vector<int> mask_panorama_views(double ratio, Rng& rng);
// max(1, ceil(ratio * words)) distinct word positions, ascending.
std::vector<int> mask_instruction_words(int words, double ratio, Rng& rng);

// --- Per-sample losses ------------------------------------------------------

// A generation loss plus the per-unit bookkeeping the dynamic codebook needs:
// aggregated targets and the head's matching predictions (same conditioning,
// same subset), and the raw token distributions of the target views.
struct GenLossOutput {
  TensorRef loss;  // 1 x 1, mean divergence over masked units
  std::vector<AggregatedSemantics> targets;
  std::vector<AggregatedSemantics> predictions;
  std::vector<TokenDistribution> target_dists;
};

GenLossOutput masked_trajectory_loss(Tape& tape, Model& model,
                                     const Codebook& cb, const Episode& ep,
                                     std::span<const int> masked_steps,
                                     std::span<const int> subset, Rng& rng);
GenLossOutput masked_views_loss(Tape& tape, Model& model, const Codebook& cb,
                                const Episode& ep, int step,
                                std::span<const int> masked_views,
                                std::span<const int> subset, Rng& rng);
GenLossOutput action_view_loss(Tape& tape, Model& model, const Codebook& cb,
                               const Episode& ep, int step,
                               std::span<const int> subset, Rng& rng);

TensorRef masked_words_loss(Tape& tape, Model& model, const Codebook& cb,
                            const Episode& ep,
                            std::span<const int> positions);
// Contrastive pairing: the episode's own trajectory against two swapped-in
// trajectories from the pool and two step-order shuffles of its own.
TensorRef pair_match_loss(Tape& tape, Model& model, const Codebook& cb,
                          std::span<const Episode> pool, std::size_t index,
                          Rng& rng);
TensorRef next_action_loss(Tape& tape, Model& model, const Codebook& cb,
                           const Episode& ep, int step);

// --- Training loop ----------------------------------------------------------

struct PretrainConfig {
  std::vector<PretrainTask> tasks;   // empty: all six
  std::vector<double> task_weights;  // empty: masked-trajectory 3, others 1
  int steps = 500;
  int batch_size = 4;
  double lr = 1e-3;
  double traj_mask_ratio = 0.5;
  double view_mask_ratio = 0.3;
  double word_mask_ratio = 0.15;
  bool dynamic_codebook = true;
  // Initialize selection scores uniformly instead of from corpus frequency
  // (the "no selection" baseline: the subset starts as the lowest token ids).
  bool uniform_frequency_init = false;
  double score_blend = 0.5;        // weight of the previous running score
  double difficulty_weight = 1.0;  // weight of |pred - target| in the score
  double divergence_threshold = 1e8;
};

struct PretrainResult {
  std::vector<double> step_losses;
  std::vector<PretrainTask> step_tasks;
  CodebookState codebook;
  Eigen::VectorXd base_frequency;  // corpus frequency behind the initial S
};

// Streams one JSON record per step to `log` when given.  Requires at least
// two training environments.
PretrainResult run_pretraining(Model& model, const Codebook& cb,
                               std::span<const Environment> envs,
                               const PretrainConfig& config,
                               std::uint64_t seed,
                               std::ostream* log = nullptr);

// Token selection-set fingerprint recorded in training logs.
std::string subset_fingerprint(std::span<const int> subset);

// Mean argmax-token frequency across several environments.
Eigen::VectorXd corpus_frequency(std::span<const Environment> envs,
                                 const Codebook& cb);

inline constexpr const char* kLogSchema = "semnav-log/1";

}  // namespace semnav
