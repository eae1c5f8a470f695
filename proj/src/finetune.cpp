#include "semnav/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "semnav/errors.hpp"

namespace semnav {

namespace {

// Encoder input at an arbitrary node of an environment: the full instruction,
// the most recent history steps, and the node's panorama with candidate
// bookkeeping in ascending-neighbor order (mirroring teacher_inputs).
EncodeInput live_inputs(const Environment& env,
                        const std::vector<int>& instruction,
                        const std::vector<HistoryStep>& history, int node,
                        const std::vector<Candidate>& cands,
                        const Codebook& cb) {
  EncodeInput input;
  input.instruction = instruction;
  const std::size_t keep =
      std::min(history.size(), static_cast<std::size_t>(kMaxHistorySteps));
  input.history.assign(history.end() - static_cast<std::ptrdiff_t>(keep),
                       history.end());

  const Panorama pano = env.panorama(node);
  input.has_pano = true;
  input.pano_feats.resize(kViewsPerPanorama, kViewFeatureDim);
  for (int i = 0; i < kViewsPerPanorama; ++i) {
    input.pano_feats.row(i) =
        view_feature(pano.views[static_cast<std::size_t>(i)], cb).transpose();
  }
  input.navigable.assign(kViewsPerPanorama, 0);
  for (std::size_t k = 0; k + 1 < cands.size(); ++k) {
    const int vi =
        view_index(heading_sector(cands[k].view.heading), kEyeLevelBand);
    input.navigable[vi] = 1;
    input.candidate_views.push_back(vi);
  }
  return input;
}

int choose_action(const Eigen::MatrixXd& scores, Policy policy, Rng& rng) {
  const Eigen::Index n = scores.cols();
  if (policy == Policy::kGreedy) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < n; ++i) {
      if (scores(0, i) > scores(0, best)) best = i;
    }
    return static_cast<int>(best);
  }
  // Sampling: softmax with max subtraction, inverse-CDF draw.
  const double mx = scores.row(0).maxCoeff();
  Eigen::VectorXd p = (scores.row(0).array() - mx).exp();
  p /= p.sum();
  double u = rng.next_double();
  for (Eigen::Index i = 0; i < n; ++i) {
    u -= p[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(n - 1);
}

TensorRef mean_of(Tape& tape, const std::vector<TensorRef>& parts) {
  if (parts.empty()) {
    throw std::invalid_argument("cannot average an empty loss list");
  }
  TensorRef total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    total = add(tape, total, parts[i]);
  }
  return scale(tape, total, 1.0 / static_cast<double>(parts.size()));
}

}  // namespace

Rollout run_rollout(Tape& tape, Model& model, const Codebook& cb,
                    const Environment& env, const Episode& ep, Policy policy,
                    Rng& rng) {
  if (ep.path.empty()) {
    throw std::invalid_argument("episode has no path");
  }
  Rollout out;
  out.visited.push_back(ep.path.front());
  std::vector<HistoryStep> history;

  for (int t = 0; t < kRolloutCap; ++t) {
    const int node = out.visited.back();
    const std::vector<Candidate> cands = navigable_candidates(env, node);
    EncodeInput input =
        live_inputs(env, ep.instruction, history, node, cands, cb);
    EncodedState st = model.encode(tape, input);

    RolloutStep step;
    step.node = node;
    step.cls = st.cls;
    step.scores = st.candidate_scores;
    for (std::size_t k = 0; k + 1 < cands.size(); ++k) {
      step.cand_nodes.push_back(cands[k].node);
    }

    if (policy == Policy::kTeacher) {
      if (t >= static_cast<int>(ep.teacher_actions.size())) {
        throw std::logic_error("teacher rollout outran its action labels");
      }
      step.action = ep.teacher_actions[static_cast<std::size_t>(t)];
    } else {
      step.action = choose_action(tape.value(st.candidate_scores), policy, rng);
    }
    step.stop = step.action == static_cast<int>(step.cand_nodes.size());
    const bool stop = step.stop;
    const Candidate chosen = cands[static_cast<std::size_t>(step.action)];
    out.steps.push_back(std::move(step));

    if (stop) {
      out.stopped = true;
      break;
    }
    out.visited.push_back(chosen.node);
    history.push_back(make_history_step(chosen.view, chosen.view.heading,
                                        chosen.view.elevation, cb));
  }
  return out;
}

double rollout_return(const Environment& env, const Episode& ep,
                      const Rollout& rollout) {
  if (rollout.visited.empty()) {
    throw std::invalid_argument("rollout visited no nodes");
  }
  const std::vector<int> dist = bfs_distances(env, ep.path.back());
  const int final_node = rollout.visited.back();
  const bool success =
      dist[static_cast<std::size_t>(final_node)] <= kSuccessRadius;
  return (success ? 1.0 : 0.0) -
         kStepPenalty * static_cast<double>(rollout.steps.size());
}

TensorRef lat_loss(Tape& tape, Model& model, const Codebook& cb,
                   const Episode& ep, int step, TensorRef context,
                   std::span<const int> subset, Rng& rng) {
  if (step < 0 || step >= static_cast<int>(ep.teacher_actions.size())) {
    throw std::invalid_argument("teacher step out of range");
  }
  const View& target_view = teacher_target_view(ep, step);
  const TokenDistribution dist = tokenize(target_view, cb);

  Conditioning cond;
  cond.mode = model.config().agg;
  switch (cond.mode) {
    case AggMode::kMean: {
      const AggregatedSemantics target = mean_patch_prob(dist, subset);
      TensorRef logits =
          model.head_logits(tape, GenHead::kActionGen, context, cond);
      return kl_divergence_loss(tape, logits, target.probs);
    }
    case AggMode::kWeighted: {
      PatchWeights pw;
      pw.w = Eigen::VectorXd::Constant(
          kPatchesPerView, 1.0 / static_cast<double>(kPatchesPerView));
      const AggregatedSemantics target = weighted_patch_prob(dist, pw, subset);
      cond.weights = pw.w;
      TensorRef logits =
          model.head_logits(tape, GenHead::kActionGen, context, cond);
      return kl_divergence_loss(tape, logits, target.probs);
    }
    case AggMode::kSample: {
      const int patch = rng.next_int(0, kPatchesPerView);
      const int token = dist.argmax_tokens[static_cast<std::size_t>(patch)];
      const auto pos = std::find(subset.begin(), subset.end(), token);
      if (pos == subset.end()) {
        return TensorRef{};  // token not generatable over this subset
      }
      cond.patch_index = patch;
      TensorRef logits =
          model.head_logits(tape, GenHead::kActionGen, context, cond);
      return cross_entropy_loss(tape, logits,
                                static_cast<int>(pos - subset.begin()));
    }
  }
  throw std::logic_error("unreachable aggregation mode");
}

EvalResult evaluate_split(Model& model, const Codebook& cb,
                          std::span<const Environment> envs,
                          int episodes_per_env, std::uint64_t seed) {
  if (envs.empty() || episodes_per_env <= 0) {
    throw std::invalid_argument("evaluation needs environments and episodes");
  }
  std::vector<EpisodeEval> evals;
  std::uint64_t counter = 0;
  for (const Environment& env : envs) {
    for (int e = 0; e < episodes_per_env; ++e) {
      const Episode ep =
          sample_episode(env, derive_seed(seed, "eval-episode", counter));
      Rng rng(derive_seed(seed, "eval-policy", counter));
      ++counter;
      Tape tape;
      const Rollout r =
          run_rollout(tape, model, cb, env, ep, Policy::kGreedy, rng);
      EpisodeEval ee;
      ee.metrics = compute_path_metrics(env, r.visited, ep.path);
      ee.ref_edges = static_cast<int>(ep.path.size()) - 1;
      evals.push_back(ee);
    }
  }
  return aggregate_evals(std::move(evals));
}

FinetuneResult run_finetuning(Model& model, const Codebook& cb,
                              std::span<const int> subset,
                              std::span<const Environment> train_envs,
                              std::span<const Environment> val_envs,
                              const FinetuneConfig& config, std::uint64_t seed,
                              std::ostream* log) {
  if (train_envs.empty()) {
    throw std::invalid_argument("no training environments");
  }
  if (config.iterations <= 0 || config.episodes_per_iter <= 0 ||
      !(config.lr > 0.0)) {
    throw std::invalid_argument(
        "iterations, episodes per iteration, and lr must be positive");
  }
  if (config.use_lat && !(config.lat_weight >= 0.0)) {
    throw std::invalid_argument("generation-loss weight must be nonnegative");
  }
  if (static_cast<int>(subset.size()) != model.config().subset_size) {
    throw std::invalid_argument(
        "token subset does not match the model's head width");
  }
  if (config.eval_every > 0 && val_envs.empty()) {
    throw std::invalid_argument(
        "periodic evaluation needs validation environments");
  }
  const double il_ratio = config.il_rl_ratio >= 0.0
                              ? config.il_rl_ratio
                              : (config.use_lat ? 0.15 : 0.2);

  FinetuneResult result;
  AdamOptimizer opt;
  Rng root(seed);

  for (int it = 0; it < config.iterations; ++it) {
    Rng irng = root.derive("finetune-iter", static_cast<std::uint64_t>(it));

    Tape tape;
    std::vector<TensorRef> il_parts, rl_parts;
    for (int e = 0; e < config.episodes_per_iter; ++e) {
      const Environment& env = train_envs[static_cast<std::size_t>(
          irng.next_int(0, static_cast<int>(train_envs.size())))];
      const Episode ep = sample_episode(env, irng.next_u64());

      // Imitation side: teacher-forced rollout, label cross-entropy, and
      // (optionally) the generation loss at every step.
      const Rollout teach =
          run_rollout(tape, model, cb, env, ep, Policy::kTeacher, irng);
      std::vector<TensorRef> ce, lat;
      for (std::size_t t = 0; t < teach.steps.size(); ++t) {
        ce.push_back(cross_entropy_loss(tape, teach.steps[t].scores,
                                        teach.steps[t].action));
        if (config.use_lat) {
          TensorRef l = lat_loss(tape, model, cb, ep, static_cast<int>(t),
                                 teach.steps[t].cls, subset, irng);
          if (l.valid()) lat.push_back(l);
        }
      }
      TensorRef il = mean_of(tape, ce);
      if (!lat.empty()) {
        il = add(tape, il, scale(tape, mean_of(tape, lat), config.lat_weight));
      }
      il_parts.push_back(il);

      // Reinforcement side: sampled rollout, advantage-weighted
      // log-probabilities against a learned value baseline.
      const Rollout roll =
          run_rollout(tape, model, cb, env, ep, Policy::kSample, irng);
      const double ret = rollout_return(env, ep, roll);
      std::vector<TensorRef> pol, val;
      for (const RolloutStep& st : roll.steps) {
        TensorRef v = model.value_estimate(tape, st.cls);
        TensorRef adv =
            stop_gradient(tape, add_scalar(tape, scale(tape, v, -1.0), ret));
        pol.push_back(hadamard(
            tape, cross_entropy_loss(tape, st.scores, st.action), adv));
        TensorRef err = add_scalar(tape, v, -ret);
        val.push_back(scale(tape, hadamard(tape, err, err), 0.5));
      }
      rl_parts.push_back(
          add(tape, mean_of(tape, pol), mean_of(tape, val)));
    }

    TensorRef total = add(tape, scale(tape, mean_of(tape, il_parts), il_ratio),
                          mean_of(tape, rl_parts));
    const double loss_value = tape.value(total)(0, 0);
    if (!std::isfinite(loss_value) ||
        std::abs(loss_value) > config.divergence_threshold) {
      throw TrainingDiverged("fine-tuning loss diverged at iteration " +
                             std::to_string(it));
    }

    model.params().zero_grads();
    tape.backward(total);
    opt.step(model.params(), config.lr);
    result.iteration_losses.push_back(loss_value);

    if (config.eval_every > 0 && (it + 1) % config.eval_every == 0) {
      EvalResult ev = evaluate_split(
          model, cb, val_envs, config.eval_episodes_per_env,
          derive_seed(seed, "finetune-eval", static_cast<std::uint64_t>(it)));
      if (log != nullptr) {
        nlohmann::json rec;
        rec["schema"] = kLogSchema;
        rec["iteration"] = it + 1;
        rec["split"] = "val";
        rec["sr"] = ev.sr;
        rec["spl"] = ev.spl;
        rec["ne"] = ev.ne;
        rec["ndtw"] = ev.ndtw;
        rec["sdtw"] = ev.sdtw;
        rec["cls"] = ev.cls;
        rec["tl"] = ev.tl;
        *log << rec.dump() << "\n";
      }
      result.evals.push_back(std::move(ev));
    }
  }
  return result;
}

}  // namespace semnav
