#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "semnav/codebook.hpp"
#include "semnav/metrics.hpp"
#include "semnav/model.hpp"
#include "semnav/pretrain.hpp"

namespace semnav {

// Hard cap on actions per episode; reference paths are at most 6 edges, so
// the cap only binds for lost agents.
inline constexpr int kRolloutCap = 10;

// Per-action cost in the episode return; success contributes +1.
inline constexpr double kStepPenalty = 0.2;

// How actions are chosen during a rollout: follow the teacher labels, sample
// from the policy, or take the argmax.
enum class Policy { kTeacher, kSample, kGreedy };

struct RolloutStep {
  int node = -1;                // node the action was chosen at
  TensorRef cls;                // 1 x d context row of this step's encoding
  TensorRef scores;             // 1 x (K+1) candidate scores, STOP last
  std::vector<int> cand_nodes;  // movement candidates' destination nodes
  int action = -1;              // chosen index; cand_nodes.size() means STOP
  bool stop = false;
};

struct Rollout {
  std::vector<RolloutStep> steps;
  std::vector<int> visited;  // node sequence, starting at the episode start
  bool stopped = false;      // STOP chosen before the cap
};

// Steps the agent from the episode's start node, encoding the instruction,
// the history so far (sliding window of the most recent steps), and the
// current panorama at every step, until STOP or the cap.  `rng` is consumed
// by the sampling policy only.
Rollout run_rollout(Tape& tape, Model& model, const Codebook& cb,
                    const Environment& env, const Episode& ep, Policy policy,
                    Rng& rng);

// Episode return: +1 for ending within the success radius of the goal,
// minus kStepPenalty per recorded action.
double rollout_return(const Environment& env, const Episode& ep,
                      const Rollout& rollout);

// Auxiliary generation loss at one teacher step: the action-generation head
// is asked to reproduce the aggregated semantics of the step's target view
// (the chosen candidate's view, or the facing view on the STOP step) from
// the step's context row.  Mean mode scores a divergence against the mean
// aggregation; weighted mode fixes uniform patch weights; sample mode scores
// cross-entropy of a uniformly drawn patch's argmax token and returns an
// invalid ref when that token is outside the subset.
TensorRef lat_loss(Tape& tape, Model& model, const Codebook& cb,
                   const Episode& ep, int step, TensorRef context,
                   std::span<const int> subset, Rng& rng);

struct FinetuneConfig {
  int iterations = 200;
  int episodes_per_iter = 2;
  double lr = 1e-3;
  bool use_lat = true;        // add the generation loss to the imitation side
  double lat_weight = 1.0;    // its weight inside the imitation loss
  double il_rl_ratio = -1.0;  // weight of the imitation side; < 0 selects
                              // 0.15 with the generation loss, 0.2 without
  int eval_every = 0;         // 0: no periodic validation pass
  int eval_episodes_per_env = 2;
  double divergence_threshold = 1e8;
};

struct FinetuneResult {
  std::vector<double> iteration_losses;
  std::vector<EvalResult> evals;  // one per periodic validation pass
};

// Mixed imitation + policy-gradient training.  Per iteration: a teacher
// rollout per episode scores cross-entropy on the labels plus the optional
// generation loss; a sampled rollout per episode scores advantage-weighted
// log-probabilities against a learned value baseline; the combined loss is
// il_rl_ratio * imitation + reinforcement.  Periodic greedy evaluations on
// the validation split are appended to `log` as JSON records when given.
FinetuneResult run_finetuning(Model& model, const Codebook& cb,
                              std::span<const int> subset,
                              std::span<const Environment> train_envs,
                              std::span<const Environment> val_envs,
                              const FinetuneConfig& config, std::uint64_t seed,
                              std::ostream* log = nullptr);

// Greedy-policy evaluation: `episodes_per_env` fresh episodes per
// environment, scored against their reference paths.
EvalResult evaluate_split(Model& model, const Codebook& cb,
                          std::span<const Environment> envs,
                          int episodes_per_env, std::uint64_t seed);

}  // namespace semnav
