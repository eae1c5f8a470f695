#include "semnav/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "semnav/errors.hpp"

namespace semnav {

const char* pretrain_task_name(PretrainTask task) {
  switch (task) {
    case PretrainTask::kMaskedTrajectory:
      return "masked-trajectory";
    case PretrainTask::kMaskedViews:
      return "masked-views";
    case PretrainTask::kActionView:
      return "action-view";
    case PretrainTask::kMaskedWords:
      return "masked-words";
    case PretrainTask::kPairMatch:
      return "pair-match";
    case PretrainTask::kNextAction:
      return "next-action";
  }
  throw std::invalid_argument("unknown pre-training task");
}

PretrainTask pretrain_task_from_name(const std::string& name) {
  for (PretrainTask t :
       {PretrainTask::kMaskedTrajectory, PretrainTask::kMaskedViews,
        PretrainTask::kActionView, PretrainTask::kMaskedWords,
        PretrainTask::kPairMatch, PretrainTask::kNextAction}) {
    if (name == pretrain_task_name(t)) return t;
  }
  throw std::invalid_argument("unknown pre-training task: " + name);
}

bool is_generation_task(PretrainTask task) {
  return task == PretrainTask::kMaskedTrajectory ||
         task == PretrainTask::kMaskedViews ||
         task == PretrainTask::kActionView;
}

// --- Mask sampling ----------------------------------------------------------

namespace {

int mask_count(double ratio, int n) {
  if (!(ratio > 0.0) || ratio > 1.0) {
    throw std::invalid_argument("mask ratio must lie in (0, 1]");
  }
  const int k = static_cast<int>(std::ceil(ratio * n - 1e-9));
  return std::clamp(k, 1, n);
}

}  // namespace

std::vector<int> mask_trajectory_steps(int steps, double ratio, Rng& rng) {
  if (steps < 2) {
    throw std::invalid_argument(
        "trajectory masking needs at least two history steps");
  }
  return sample_distinct(steps, mask_count(ratio, steps), rng);
}

std::vector<int> mask_panorama_views(double ratio, Rng& rng) {
  return sample_distinct(kViewsPerPanorama,
                         mask_count(ratio, kViewsPerPanorama), rng);
}

std::vector<int> mask_instruction_words(int words, double ratio, Rng& rng) {
  if (words < 1) {
    throw std::invalid_argument("cannot mask an empty instruction");
  }
  return sample_distinct(words, mask_count(ratio, words), rng);
}

// --- Loss helpers -----------------------------------------------------------

namespace {

TensorRef mean_of(Tape& tape, const std::vector<TensorRef>& parts) {
  if (parts.empty()) throw std::invalid_argument("no loss terms to average");
  TensorRef acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) {
    acc = add(tape, acc, parts[i]);
  }
  return scale(tape, acc, 1.0 / static_cast<double>(parts.size()));
}

struct DrawnConditioning {
  Conditioning cond;
  PatchWeights weights;  // weighted mode only
};

DrawnConditioning draw_conditioning(const ModelConfig& mc, Rng& rng) {
  DrawnConditioning d;
  d.cond.mode = mc.agg;
  switch (mc.agg) {
    case AggMode::kMean:
      break;
    case AggMode::kSample:
      d.cond.patch_index = rng.next_int(0, kPatchesPerView);
      break;
    case AggMode::kWeighted:
      d.weights = sample_weights(rng, mc.block_weights);
      d.cond.weights = d.weights.w;
      break;
  }
  return d;
}

AggregatedSemantics aggregate_for(const TokenDistribution& td,
                                  const DrawnConditioning& d,
                                  std::span<const int> subset) {
  switch (d.cond.mode) {
    case AggMode::kMean:
      return mean_patch_prob(td, subset);
    case AggMode::kSample:
      return sample_patch_prob(td, d.cond.patch_index, subset);
    case AggMode::kWeighted:
      return weighted_patch_prob(td, d.weights, subset);
  }
  throw std::logic_error("unreachable aggregation mode");
}

// One masked unit: aggregate the true view under freshly drawn conditioning,
// query the head on the context row with the same conditioning, and score the
// divergence.
void add_generation_unit(Tape& tape, Model& model, GenHead head,
                         TensorRef context, const View& true_view,
                         const Codebook& cb, std::span<const int> subset,
                         Rng& rng, std::vector<TensorRef>& losses,
                         GenLossOutput& out) {
  TokenDistribution dist = tokenize(true_view, cb);
  const DrawnConditioning drawn = draw_conditioning(model.config(), rng);
  AggregatedSemantics target = aggregate_for(dist, drawn, subset);
  TensorRef logits = model.head_logits(tape, head, context, drawn.cond);
  Eigen::VectorXd predicted;
  losses.push_back(kl_divergence_loss(tape, logits, target.probs, &predicted));
  AggregatedSemantics pred = target;
  pred.probs = std::move(predicted);
  out.targets.push_back(std::move(target));
  out.predictions.push_back(std::move(pred));
  out.target_dists.push_back(std::move(dist));
}

}  // namespace

// --- Generation losses ------------------------------------------------------

GenLossOutput masked_trajectory_loss(Tape& tape, Model& model,
                                     const Codebook& cb, const Episode& ep,
                                     std::span<const int> masked_steps,
                                     std::span<const int> subset, Rng& rng) {
  if (masked_steps.empty()) {
    throw std::invalid_argument("no history steps to reconstruct");
  }
  EncodeInput input = trajectory_inputs(ep, cb);
  input.masks.history_steps.assign(masked_steps.begin(), masked_steps.end());
  EncodedState st = model.encode(tape, input);

  GenLossOutput out;
  std::vector<TensorRef> losses;
  for (int s : masked_steps) {
    TensorRef context = slice_rows(tape, st.history, s, 1);
    add_generation_unit(tape, model, GenHead::kTrajGen, context,
                        teacher_target_view(ep, s), cb, subset, rng, losses,
                        out);
  }
  out.loss = mean_of(tape, losses);
  return out;
}

GenLossOutput masked_views_loss(Tape& tape, Model& model, const Codebook& cb,
                                const Episode& ep, int step,
                                std::span<const int> masked_views,
                                std::span<const int> subset, Rng& rng) {
  if (masked_views.empty()) {
    throw std::invalid_argument("no panorama views to reconstruct");
  }
  EncodeInput input = teacher_inputs(ep, step, /*include_pano=*/true, cb);
  input.masks.pano_views.assign(masked_views.begin(), masked_views.end());
  EncodedState st = model.encode(tape, input);

  GenLossOutput out;
  std::vector<TensorRef> losses;
  for (int v : masked_views) {
    TensorRef context = slice_rows(tape, st.pano, v, 1);
    add_generation_unit(tape, model, GenHead::kViewGen, context,
                        ep.panoramas[static_cast<std::size_t>(step)]
                            .views[static_cast<std::size_t>(v)],
                        cb, subset, rng, losses, out);
  }
  out.loss = mean_of(tape, losses);
  return out;
}

GenLossOutput action_view_loss(Tape& tape, Model& model, const Codebook& cb,
                               const Episode& ep, int step,
                               std::span<const int> subset, Rng& rng) {
  const int movement_steps =
      static_cast<int>(ep.teacher_actions.size()) - 1;
  if (step < 0 || step >= movement_steps) {
    throw std::invalid_argument(
        "future-view generation needs a movement step");
  }
  EncodeInput input = teacher_inputs(ep, step, /*include_pano=*/false, cb);
  EncodedState st = model.encode(tape, input);

  GenLossOutput out;
  std::vector<TensorRef> losses;
  add_generation_unit(tape, model, GenHead::kActionGen, st.cls,
                      teacher_target_view(ep, step), cb, subset, rng, losses,
                      out);
  out.loss = mean_of(tape, losses);
  return out;
}

// --- Auxiliary losses -------------------------------------------------------

TensorRef masked_words_loss(Tape& tape, Model& model, const Codebook& cb,
                            const Episode& ep,
                            std::span<const int> positions) {
  if (positions.empty()) {
    throw std::invalid_argument("no word positions to reconstruct");
  }
  EncodeInput input = trajectory_inputs(ep, cb);
  input.masks.instruction_positions.assign(positions.begin(), positions.end());
  EncodedState st = model.encode(tape, input);

  std::vector<int> rows;
  rows.reserve(positions.size());
  for (int p : positions) rows.push_back(p + 1);  // skip the CLS slot
  TensorRef logits = model.word_logits(tape, gather_rows(tape, st.lang, rows));
  TensorRef logp = log_softmax_rows(tape, logits);

  Eigen::MatrixXd pick =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(positions.size()),
                            kWordVocabSize);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    pick(static_cast<Eigen::Index>(i),
         ep.instruction[static_cast<std::size_t>(positions[i])]) = 1.0;
  }
  return scale(tape, weighted_sum(tape, logp, pick),
               -1.0 / static_cast<double>(positions.size()));
}

TensorRef pair_match_loss(Tape& tape, Model& model, const Codebook& cb,
                          std::span<const Episode> pool, std::size_t index,
                          Rng& rng) {
  if (pool.size() < 2) {
    throw std::invalid_argument("pair matching needs at least two episodes");
  }
  if (index >= pool.size()) {
    throw std::invalid_argument("episode index out of range");
  }
  const Episode& self = pool[index];
  const EncodeInput base = trajectory_inputs(self, cb);
  const int n_hist = static_cast<int>(base.history.size());

  auto other_index = [&]() {
    const int j = rng.next_int(0, static_cast<int>(pool.size()) - 1);
    return static_cast<std::size_t>(j) >= index ? static_cast<std::size_t>(j) + 1
                                                : static_cast<std::size_t>(j);
  };
  auto shuffled_history = [&]() {
    std::vector<int> perm(static_cast<std::size_t>(n_hist));
    std::iota(perm.begin(), perm.end(), 0);
    do {
      for (int i = n_hist - 1; i > 0; --i) {
        std::swap(perm[static_cast<std::size_t>(i)],
                  perm[static_cast<std::size_t>(rng.next_int(0, i + 1))]);
      }
    } while (std::is_sorted(perm.begin(), perm.end()));
    std::vector<HistoryStep> steps;
    steps.reserve(perm.size());
    for (int p : perm) {
      steps.push_back(base.history[static_cast<std::size_t>(p)]);
    }
    return steps;
  };

  std::vector<EncodeInput> variants;
  variants.push_back(base);  // the true pairing comes first
  for (int i = 0; i < 2; ++i) {
    EncodeInput swapped = base;
    swapped.history = trajectory_inputs(pool[other_index()], cb).history;
    variants.push_back(std::move(swapped));
  }
  for (int i = 0; i < 2; ++i) {
    EncodeInput shuffled = base;
    shuffled.history = shuffled_history();
    variants.push_back(std::move(shuffled));
  }

  std::vector<TensorRef> scores;
  scores.reserve(variants.size());
  for (const EncodeInput& v : variants) {
    EncodedState st = model.encode(tape, v);
    scores.push_back(model.match_score(tape, st.cls, st.history));
  }
  TensorRef all = concat_cols(tape, scores);
  return cross_entropy_loss(tape, all, 0);
}

TensorRef next_action_loss(Tape& tape, Model& model, const Codebook& cb,
                           const Episode& ep, int step) {
  if (step < 0 || step >= static_cast<int>(ep.teacher_actions.size())) {
    throw std::invalid_argument("teacher step out of range");
  }
  EncodeInput input = teacher_inputs(ep, step, /*include_pano=*/true, cb);
  EncodedState st = model.encode(tape, input);
  return cross_entropy_loss(tape, st.candidate_scores,
                            ep.teacher_actions[static_cast<std::size_t>(step)]);
}

// --- Training loop ----------------------------------------------------------

std::string subset_fingerprint(std::span<const int> subset) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
  for (int id : subset) h = fnv1a_u64(static_cast<std::uint64_t>(id), h);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

Eigen::VectorXd corpus_frequency(std::span<const Environment> envs,
                                 const Codebook& cb) {
  if (envs.empty()) {
    throw std::invalid_argument("no environments for frequency counting");
  }
  Eigen::VectorXd freq = Eigen::VectorXd::Zero(cb.vocab_size());
  for (const Environment& env : envs) freq += token_frequency(env, cb);
  return freq / static_cast<double>(envs.size());
}

namespace {

// Linear warmup over the first tenth of the budget, constant at the peak
// rate afterwards.  Warmup keeps early Adam steps from overshooting while
// the second-moment estimates settle; short fixed-budget runs are usually
// still descending at the end, so no decay is applied.
double scheduled_lr(double peak, int step, int total) {
  const int warmup = std::max(1, total / 10);
  if (step < warmup) {
    return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  return peak;
}

void fill_defaults(PretrainConfig& cfg) {
  if (cfg.tasks.empty()) {
    cfg.tasks = {PretrainTask::kMaskedTrajectory, PretrainTask::kMaskedViews,
                 PretrainTask::kActionView,       PretrainTask::kMaskedWords,
                 PretrainTask::kPairMatch,        PretrainTask::kNextAction};
  }
  if (cfg.task_weights.empty()) {
    for (PretrainTask t : cfg.tasks) {
      cfg.task_weights.push_back(t == PretrainTask::kMaskedTrajectory ? 3.0
                                                                      : 1.0);
    }
  }
  if (cfg.task_weights.size() != cfg.tasks.size()) {
    throw std::invalid_argument("task weight list does not match task list");
  }
  for (double w : cfg.task_weights) {
    if (!(w > 0.0)) {
      throw std::invalid_argument("task weights must be positive");
    }
  }
  if (cfg.steps <= 0 || cfg.batch_size <= 0 || !(cfg.lr > 0.0)) {
    throw std::invalid_argument("steps, batch size, and lr must be positive");
  }
}

}  // namespace

PretrainResult run_pretraining(Model& model, const Codebook& cb,
                               std::span<const Environment> envs,
                               const PretrainConfig& config,
                               std::uint64_t seed, std::ostream* log) {
  if (envs.size() < 2) {
    throw std::invalid_argument("need at least two training environments");
  }
  PretrainConfig cfg = config;
  fill_defaults(cfg);

  PretrainResult result;
  result.base_frequency = corpus_frequency(envs, cb);
  const Eigen::VectorXd init_freq =
      cfg.uniform_frequency_init
          ? Eigen::VectorXd::Constant(cb.vocab_size(),
                                      1.0 / static_cast<double>(
                                                cb.vocab_size()))
          : result.base_frequency;
  CodebookState state =
      cfg.dynamic_codebook
          ? CodebookState::init_dynamic(init_freq, model.config().subset_size,
                                        cfg.score_blend,
                                        cfg.difficulty_weight)
          : CodebookState::init_static(init_freq,
                                       model.config().subset_size);

  AdamOptimizer opt;
  Rng root(seed);
  const double weight_sum =
      std::accumulate(cfg.task_weights.begin(), cfg.task_weights.end(), 0.0);

  for (int step = 0; step < cfg.steps; ++step) {
    Rng srng = root.derive("pretrain-step", static_cast<std::uint64_t>(step));

    // Weighted task pick.
    PretrainTask task = cfg.tasks.back();
    {
      double u = srng.next_double() * weight_sum;
      for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
        u -= cfg.task_weights[i];
        if (u < 0.0) {
          task = cfg.tasks[i];
          break;
        }
      }
    }

    std::vector<Episode> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Environment& env =
          envs[static_cast<std::size_t>(srng.next_int(
              0, static_cast<int>(envs.size())))];
      batch.push_back(sample_episode(env, srng.next_u64()));
    }

    Tape tape;
    const std::vector<int>& subset = state.selected_subset();
    std::vector<TensorRef> sample_losses;
    std::vector<TokenDistribution> gen_dists;
    std::vector<AggregatedSemantics> gen_targets, gen_preds;

    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Episode& ep = batch[b];
      const int n_actions = static_cast<int>(ep.teacher_actions.size());
      switch (task) {
        case PretrainTask::kMaskedTrajectory: {
          const auto masked =
              mask_trajectory_steps(n_actions, cfg.traj_mask_ratio, srng);
          GenLossOutput out = masked_trajectory_loss(tape, model, cb, ep,
                                                     masked, subset, srng);
          sample_losses.push_back(out.loss);
          std::move(out.target_dists.begin(), out.target_dists.end(),
                    std::back_inserter(gen_dists));
          std::move(out.targets.begin(), out.targets.end(),
                    std::back_inserter(gen_targets));
          std::move(out.predictions.begin(), out.predictions.end(),
                    std::back_inserter(gen_preds));
          break;
        }
        case PretrainTask::kMaskedViews: {
          const int t = srng.next_int(0, n_actions);
          const auto masked = mask_panorama_views(cfg.view_mask_ratio, srng);
          GenLossOutput out = masked_views_loss(tape, model, cb, ep, t,
                                                masked, subset, srng);
          sample_losses.push_back(out.loss);
          std::move(out.target_dists.begin(), out.target_dists.end(),
                    std::back_inserter(gen_dists));
          std::move(out.targets.begin(), out.targets.end(),
                    std::back_inserter(gen_targets));
          std::move(out.predictions.begin(), out.predictions.end(),
                    std::back_inserter(gen_preds));
          break;
        }
        case PretrainTask::kActionView: {
          const int t = srng.next_int(0, n_actions - 1);
          GenLossOutput out =
              action_view_loss(tape, model, cb, ep, t, subset, srng);
          sample_losses.push_back(out.loss);
          std::move(out.target_dists.begin(), out.target_dists.end(),
                    std::back_inserter(gen_dists));
          std::move(out.targets.begin(), out.targets.end(),
                    std::back_inserter(gen_targets));
          std::move(out.predictions.begin(), out.predictions.end(),
                    std::back_inserter(gen_preds));
          break;
        }
        case PretrainTask::kMaskedWords: {
          const auto positions = mask_instruction_words(
              static_cast<int>(ep.instruction.size()), cfg.word_mask_ratio,
              srng);
          sample_losses.push_back(
              masked_words_loss(tape, model, cb, ep, positions));
          break;
        }
        case PretrainTask::kPairMatch: {
          sample_losses.push_back(
              pair_match_loss(tape, model, cb, batch, b, srng));
          break;
        }
        case PretrainTask::kNextAction: {
          const int t = srng.next_int(0, n_actions);
          sample_losses.push_back(next_action_loss(tape, model, cb, ep, t));
          break;
        }
      }
    }

    TensorRef total = mean_of(tape, sample_losses);
    const double loss_value = tape.value(total)(0, 0);
    if (!std::isfinite(loss_value) ||
        loss_value > cfg.divergence_threshold) {
      throw TrainingDiverged("pre-training loss diverged at step " +
                             std::to_string(step));
    }

    model.params().zero_grads();
    tape.backward(total);
    opt.step(model.params(), scheduled_lr(cfg.lr, step, cfg.steps));

    if (cfg.dynamic_codebook && is_generation_task(task) &&
        !gen_targets.empty()) {
      state.update(frequency_from_batch(gen_dists), gen_preds.front(),
                   gen_targets.front());
    }

    if (log != nullptr) {
      nlohmann::json rec;
      rec["schema"] = kLogSchema;
      rec["step"] = step;
      rec["task"] = pretrain_task_name(task);
      rec["loss"] = loss_value;
      rec["selected"] = subset_fingerprint(state.selected_subset());
      *log << rec.dump() << "\n";
    }

    result.step_losses.push_back(loss_value);
    result.step_tasks.push_back(task);
  }

  result.codebook = std::move(state);
  return result;
}

}  // namespace semnav
