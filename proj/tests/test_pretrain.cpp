#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "semnav/errors.hpp"
#include "semnav/pretrain.hpp"

using namespace semnav;

namespace {

struct Fixture {
  Environment env_a = Environment::generate(3, 4);
  Environment env_b = Environment::generate(4, 4);
  Codebook cb = Codebook::create(11);
  Episode ep;
  std::vector<int> subset;

  Fixture() {
    ep = sample_episode(env_a, 5);
    const Eigen::VectorXd freq = token_frequency(env_a, cb);
    subset = CodebookState::init_static(freq, 64).selected_subset();
  }
};

double manual_divergence(const Eigen::VectorXd& target,
                         const Eigen::RowVectorXd& logits) {
  const Eigen::RowVectorXd shifted =
      logits.array() - logits.maxCoeff();
  const Eigen::RowVectorXd p = shifted.array().exp() / shifted.array().exp().sum();
  double kl = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    kl += target[i] * (std::log(target[i]) - std::log(p[i]));
  }
  return kl;
}

}  // namespace

TEST_CASE("mask sampling sizes and bounds") {
  Rng rng(3);

  SUBCASE("trajectory masks take ceil(ratio * steps), at least one") {
    CHECK(mask_trajectory_steps(4, 0.5, rng).size() == 2);
    CHECK(mask_trajectory_steps(5, 0.5, rng).size() == 3);
    CHECK(mask_trajectory_steps(7, 0.5, rng).size() == 4);
    CHECK(mask_trajectory_steps(7, 0.01, rng).size() == 1);
    CHECK(mask_trajectory_steps(4, 1.0, rng).size() == 4);
    CHECK_THROWS_AS(mask_trajectory_steps(1, 0.5, rng),
                    std::invalid_argument);
    CHECK_THROWS_AS(mask_trajectory_steps(4, 0.0, rng),
                    std::invalid_argument);
    CHECK_THROWS_AS(mask_trajectory_steps(4, 1.5, rng),
                    std::invalid_argument);
  }

  SUBCASE("panorama masks cover eleven distinct ascending views") {
    for (int trial = 0; trial < 20; ++trial) {
      const auto views = mask_panorama_views(0.3, rng);
      CHECK(views.size() == 11);
      std::set<int> unique(views.begin(), views.end());
      CHECK(unique.size() == views.size());
      CHECK(std::is_sorted(views.begin(), views.end()));
      CHECK(*views.begin() >= 0);
      CHECK(views.back() < kViewsPerPanorama);
    }
  }

  SUBCASE("word masks follow the fifteen-percent rule") {
    CHECK(mask_instruction_words(20, 0.15, rng).size() == 3);
    CHECK(mask_instruction_words(3, 0.15, rng).size() == 1);
    CHECK(mask_instruction_words(1, 0.15, rng).size() == 1);
    CHECK_THROWS_AS(mask_instruction_words(0, 0.15, rng),
                    std::invalid_argument);
  }

  SUBCASE("every index range is eventually covered") {
    std::set<int> seen;
    for (int trial = 0; trial < 200; ++trial) {
      for (int s : mask_trajectory_steps(6, 0.5, rng)) seen.insert(s);
    }
    CHECK(seen == std::set<int>({0, 1, 2, 3, 4, 5}));
  }
}

TEST_CASE("masked-trajectory loss equals the hand-computed divergence") {
  Fixture f;
  ModelConfig mc;  // mean aggregation: conditioning consumes no randomness
  Model model(mc, 9);
  const std::vector<int> masked = {0, 2};

  Tape tape;
  Rng rng(1);
  GenLossOutput out = masked_trajectory_loss(tape, model, f.cb, f.ep, masked,
                                             f.subset, rng);
  REQUIRE(out.targets.size() == 2);
  REQUIRE(out.predictions.size() == 2);

  // Recompute everything on an independent tape.
  Tape check;
  EncodeInput input = trajectory_inputs(f.ep, f.cb);
  input.masks.history_steps = masked;
  EncodedState st = model.encode(check, input);
  double expected = 0.0;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    const TokenDistribution dist =
        tokenize(teacher_target_view(f.ep, masked[i]), f.cb);
    const AggregatedSemantics target = mean_patch_prob(dist, f.subset);
    Conditioning cond;
    TensorRef logits = model.head_logits(
        check, GenHead::kTrajGen,
        slice_rows(check, st.history, masked[i], 1), cond);
    expected += manual_divergence(target.probs, check.value(logits).row(0));
  }
  expected /= static_cast<double>(masked.size());

  CHECK(tape.value(out.loss)(0, 0) ==
        doctest::Approx(expected).epsilon(1e-10));
  CHECK(tape.value(out.loss)(0, 0) >= 0.0);
}

TEST_CASE("generation losses are non-negative in every aggregation mode") {
  Fixture f;
  for (AggMode mode : {AggMode::kMean, AggMode::kSample, AggMode::kWeighted}) {
    CAPTURE(agg_mode_name(mode));
    ModelConfig mc;
    mc.agg = mode;
    mc.block_weights = mode == AggMode::kWeighted;
    Model model(mc, 13);
    Rng rng(2);

    Tape tape;
    const std::vector<int> steps = {1};
    GenLossOutput traj = masked_trajectory_loss(tape, model, f.cb, f.ep,
                                                steps, f.subset, rng);
    CHECK(tape.value(traj.loss)(0, 0) >= -1e-12);

    const std::vector<int> views = {0, 7, 35};
    GenLossOutput pano = masked_views_loss(tape, model, f.cb, f.ep, 1, views,
                                           f.subset, rng);
    CHECK(tape.value(pano.loss)(0, 0) >= -1e-12);
    CHECK(pano.targets.size() == 3);

    GenLossOutput act =
        action_view_loss(tape, model, f.cb, f.ep, 0, f.subset, rng);
    CHECK(tape.value(act.loss)(0, 0) >= -1e-12);
    CHECK(act.targets.size() == 1);

    for (const auto& t : act.targets) {
      CHECK(t.probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(t.mode == mode);
    }
    for (const auto& p : act.predictions) {
      CHECK(p.probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(p.mode == mode);
      CHECK(p.subset == f.subset);
    }
  }
}

TEST_CASE("future-view generation rejects the terminal step") {
  Fixture f;
  ModelConfig mc;
  Model model(mc, 9);
  Rng rng(4);
  Tape tape;
  const int last = static_cast<int>(f.ep.teacher_actions.size()) - 1;
  CHECK_THROWS_AS(
      action_view_loss(tape, model, f.cb, f.ep, last, f.subset, rng),
      std::invalid_argument);
}

TEST_CASE("masked-word loss equals the mean cross-entropy of true words") {
  Fixture f;
  ModelConfig mc;
  Model model(mc, 9);
  const std::vector<int> positions = {0, 3};

  Tape tape;
  TensorRef loss = masked_words_loss(tape, model, f.cb, f.ep, positions);

  Tape check;
  EncodeInput input = trajectory_inputs(f.ep, f.cb);
  input.masks.instruction_positions = positions;
  EncodedState st = model.encode(check, input);
  double expected = 0.0;
  for (int p : positions) {
    TensorRef logits = model.word_logits(
        check, slice_rows(check, st.lang, p + 1, 1));
    const Eigen::RowVectorXd row = check.value(logits).row(0);
    const Eigen::RowVectorXd shifted = row.array() - row.maxCoeff();
    const double logz = std::log(shifted.array().exp().sum());
    expected -= shifted[f.ep.instruction[static_cast<std::size_t>(p)]] - logz;
  }
  expected /= static_cast<double>(positions.size());

  CHECK(tape.value(loss)(0, 0) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("pairing loss is positive and deterministic") {
  Fixture f;
  ModelConfig mc;
  Model model(mc, 9);
  std::vector<Episode> pool = {sample_episode(f.env_a, 1),
                               sample_episode(f.env_a, 2),
                               sample_episode(f.env_b, 3)};

  auto run = [&]() {
    Tape tape;
    Rng rng(77);
    return tape.value(pair_match_loss(tape, model, f.cb, pool, 1, rng))(0, 0);
  };
  const double a = run();
  const double b = run();
  CHECK(a == b);
  CHECK(a > 0.0);
  CHECK(std::isfinite(a));

  Tape tape;
  Rng rng(77);
  std::vector<Episode> too_few = {pool[0]};
  CHECK_THROWS_AS(pair_match_loss(tape, model, f.cb, too_few, 0, rng),
                  std::invalid_argument);
}

TEST_CASE("next-action loss equals the candidate cross-entropy") {
  Fixture f;
  ModelConfig mc;
  Model model(mc, 9);
  const int step = 1;

  Tape tape;
  TensorRef loss = next_action_loss(tape, model, f.cb, f.ep, step);

  Tape check;
  EncodedState st =
      model.encode(check, teacher_inputs(f.ep, step, true, f.cb));
  const Eigen::RowVectorXd row = check.value(st.candidate_scores).row(0);
  const Eigen::RowVectorXd shifted = row.array() - row.maxCoeff();
  const double logz = std::log(shifted.array().exp().sum());
  const int target = f.ep.teacher_actions[step];
  const double expected = logz - shifted[target];

  CHECK(tape.value(loss)(0, 0) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("the training loop is deterministic and logs valid records") {
  Fixture f;
  const std::vector<Environment> envs = {f.env_a, f.env_b};
  PretrainConfig cfg;
  cfg.steps = 10;
  cfg.batch_size = 2;

  auto run = [&](std::ostream* log) {
    ModelConfig mc;
    Model model(mc, 55);
    return run_pretraining(model, f.cb, envs, cfg, 99, log);
  };

  std::ostringstream log;
  PretrainResult a = run(&log);
  PretrainResult b = run(nullptr);

  CHECK(a.step_losses.size() == 10);
  CHECK(a.step_losses == b.step_losses);
  CHECK(a.step_tasks == b.step_tasks);
  for (double l : a.step_losses) CHECK(std::isfinite(l));
  CHECK(a.codebook.selected_subset() == b.codebook.selected_subset());

  int step = 0;
  std::istringstream lines(log.str());
  std::string line;
  while (std::getline(lines, line)) {
    const auto rec = nlohmann::json::parse(line);
    CHECK(rec.at("schema").get<std::string>() == kLogSchema);
    CHECK(rec.at("step").get<int>() == step);
    CHECK(rec.at("loss").is_number());
    CHECK(rec.at("selected").get<std::string>().size() == 16);
    CHECK_NOTHROW(pretrain_task_from_name(rec.at("task").get<std::string>()));
    ++step;
  }
  CHECK(step == 10);
}

TEST_CASE("static and dynamic codebook selection behave as configured") {
  Fixture f;
  const std::vector<Environment> envs = {f.env_a, f.env_b};

  PretrainConfig cfg;
  cfg.steps = 6;
  cfg.batch_size = 2;
  cfg.tasks = {PretrainTask::kMaskedTrajectory};

  SUBCASE("static selection never moves") {
    cfg.dynamic_codebook = false;
    ModelConfig mc;
    Model model(mc, 55);
    PretrainResult r = run_pretraining(model, f.cb, envs, cfg, 99, nullptr);
    CHECK(!r.codebook.is_dynamic());
    CHECK(r.codebook.selected_subset() ==
          top_k_by_score(r.base_frequency, mc.subset_size));
    CHECK(r.codebook.running_score() == r.base_frequency);
  }

  SUBCASE("dynamic selection folds in batch statistics") {
    cfg.dynamic_codebook = true;
    ModelConfig mc;
    Model model(mc, 55);
    PretrainResult r = run_pretraining(model, f.cb, envs, cfg, 99, nullptr);
    CHECK(r.codebook.is_dynamic());
    CHECK(static_cast<int>(r.codebook.selected_subset().size()) ==
          mc.subset_size);
    CHECK(r.codebook.running_score() != r.base_frequency);
    CHECK(r.codebook.frequency_score().sum() ==
          doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("training-loop validation") {
  Fixture f;
  ModelConfig mc;
  Model model(mc, 55);
  PretrainConfig cfg;
  cfg.steps = 1;

  const std::vector<Environment> one_env = {f.env_a};
  CHECK_THROWS_AS(run_pretraining(model, f.cb, one_env, cfg, 1, nullptr),
                  std::invalid_argument);

  const std::vector<Environment> envs = {f.env_a, f.env_b};
  PretrainConfig bad = cfg;
  bad.task_weights = {1.0};  // six tasks, one weight
  CHECK_THROWS_AS(run_pretraining(model, f.cb, envs, bad, 1, nullptr),
                  std::invalid_argument);

  PretrainConfig tiny = cfg;
  tiny.divergence_threshold = 1e-12;
  CHECK_THROWS_AS(run_pretraining(model, f.cb, envs, tiny, 1, nullptr),
                  TrainingDiverged);
}
