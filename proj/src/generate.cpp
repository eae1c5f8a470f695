#include "semnav/generate.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace semnav {

namespace {

// Inference-only head query: fresh tape, constant context, softmax output.
Eigen::VectorXd head_distribution(Model& model, const Eigen::MatrixXd& context,
                                  const Conditioning& cond) {
  Tape tape;
  TensorRef ctx = tape.constant(context);
  TensorRef probs = model.head_predict(tape, GenHead::kActionGen, ctx, cond);
  return tape.value(probs).row(0).transpose();
}

int argmax_index(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

ReconstructionScores score_fill(const View& truth_view,
                                const std::vector<int>& truth,
                                std::vector<int> tokens,
                                const std::vector<char>& kept,
                                const Codebook& cb) {
  ReconstructionScores s;
  int filled = 0, token_match = 0;
  for (int j = 0; j < kPatchesPerView; ++j) {
    if (kept[static_cast<std::size_t>(j)]) continue;
    ++filled;
    if (tokens[static_cast<std::size_t>(j)] ==
        truth[static_cast<std::size_t>(j)]) {
      ++token_match;
    }
  }
  s.patch_accuracy =
      filled == 0 ? 1.0
                  : static_cast<double>(token_match) /
                        static_cast<double>(filled);
  const std::vector<FeatureTuple> decoded = decode(tokens, cb);
  int tuple_match = 0;
  for (int j = 0; j < kPatchesPerView; ++j) {
    if (decoded[static_cast<std::size_t>(j)] ==
        truth_view.patches[static_cast<std::size_t>(j)]) {
      ++tuple_match;
    }
  }
  s.feature_accuracy =
      static_cast<double>(tuple_match) / static_cast<double>(kPatchesPerView);
  s.semantic_distance = semantic_distance(tokens, truth, cb);
  s.tokens = std::move(tokens);
  return s;
}

}  // namespace

std::vector<int> generate_patch_tokens(Model& model,
                                       const Eigen::MatrixXd& context,
                                       std::span<const int> subset) {
  if (model.config().agg != AggMode::kWeighted) {
    throw std::invalid_argument(
        "per-patch generation needs a weighted-aggregation model");
  }
  if (static_cast<int>(subset.size()) != model.config().subset_size) {
    throw std::invalid_argument(
        "token subset does not match the model's head width");
  }
  std::vector<int> tokens;
  tokens.reserve(kPatchesPerView);
  for (int j = 0; j < kPatchesPerView; ++j) {
    Conditioning cond;
    cond.mode = AggMode::kWeighted;
    cond.weights = Eigen::VectorXd::Zero(kPatchesPerView);
    cond.weights[j] = 1.0;
    const Eigen::VectorXd probs = head_distribution(model, context, cond);
    tokens.push_back(subset[static_cast<std::size_t>(argmax_index(probs))]);
  }
  return tokens;
}

ReconstructionReport reconstruct(const View& view,
                                 std::span<const int> generated, int x_percent,
                                 std::span<const int> subset,
                                 const Codebook& cb, Rng& rng) {
  if (x_percent != 70 && x_percent != 80 && x_percent != 90 &&
      x_percent != 100) {
    throw std::invalid_argument(
        "ground-truth percentage must be one of 70, 80, 90, 100");
  }
  if (static_cast<int>(generated.size()) != kPatchesPerView) {
    throw std::invalid_argument("need one generated token per patch");
  }
  if (subset.empty()) {
    throw std::invalid_argument("empty token subset");
  }
  for (int t : generated) {
    if (t < 0 || t >= cb.vocab_size()) {
      throw std::invalid_argument("generated token id out of range");
    }
  }

  const TokenDistribution dist = tokenize(view, cb);
  const std::vector<int>& truth = dist.argmax_tokens;
  const int kept_count = static_cast<int>(
      std::lround(kPatchesPerView * static_cast<double>(x_percent) / 100.0));

  ReconstructionReport report;
  report.x_percent = x_percent;
  report.kept_patches = sample_distinct(kPatchesPerView, kept_count, rng);
  std::vector<char> kept(kPatchesPerView, 0);
  for (int p : report.kept_patches) kept[static_cast<std::size_t>(p)] = 1;

  // Both fills share the kept partition; only the filled values differ.
  std::vector<int> model_tokens(truth), random_tokens(truth);
  for (int j = 0; j < kPatchesPerView; ++j) {
    if (kept[static_cast<std::size_t>(j)]) continue;
    model_tokens[static_cast<std::size_t>(j)] =
        generated[static_cast<std::size_t>(j)];
    random_tokens[static_cast<std::size_t>(j)] =
        subset[static_cast<std::size_t>(
            rng.next_int(0, static_cast<int>(subset.size())))];
  }
  report.model_fill = score_fill(view, truth, std::move(model_tokens), kept, cb);
  report.random_fill =
      score_fill(view, truth, std::move(random_tokens), kept, cb);
  return report;
}

std::string reconstruction_report_json(const ReconstructionReport& report) {
  const auto scores_json = [](const ReconstructionScores& s) {
    nlohmann::json o;
    o["patch_accuracy"] = s.patch_accuracy;
    o["feature_accuracy"] = s.feature_accuracy;
    o["semantic_distance"] = s.semantic_distance;
    o["tokens"] = s.tokens;
    return o;
  };
  nlohmann::json j;
  j["x_percent"] = report.x_percent;
  j["kept_patches"] = report.kept_patches;
  j["model_fill"] = scores_json(report.model_fill);
  j["random_fill"] = scores_json(report.random_fill);
  return j.dump(2);
}

std::string patch_grid_text(std::span<const FeatureTuple> patches) {
  if (static_cast<int>(patches.size()) != kPatchesPerView) {
    throw std::invalid_argument("patch grid needs exactly one view of patches");
  }
  std::string out;
  char buf[16];
  for (int r = 0; r < kPatchGridSide; ++r) {
    for (int c = 0; c < kPatchGridSide; ++c) {
      std::snprintf(buf, sizeof(buf), "%4d",
                    tuple_index(patches[static_cast<std::size_t>(
                        r * kPatchGridSide + c)]));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

int closest_candidate(Model& model, const Codebook& cb,
                      const Eigen::MatrixXd& context,
                      std::span<const Candidate> movement_cands,
                      std::span<const int> subset) {
  if (movement_cands.empty()) {
    throw std::invalid_argument("no movement candidates to compare");
  }
  Conditioning cond;
  cond.mode = model.config().agg;
  switch (cond.mode) {
    case AggMode::kMean:
      break;
    case AggMode::kWeighted:
      cond.weights = Eigen::VectorXd::Constant(
          kPatchesPerView, 1.0 / static_cast<double>(kPatchesPerView));
      break;
    case AggMode::kSample:
      throw std::invalid_argument(
          "sampled-patch models have no whole-view reading to compare");
  }
  const Eigen::VectorXd predicted = head_distribution(model, context, cond);

  int best = 0;
  double best_div = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < movement_cands.size(); ++i) {
    const Candidate& cand = movement_cands[i];
    if (cand.node < 0 ||
        static_cast<int>(cand.view.patches.size()) != kPatchesPerView) {
      throw std::invalid_argument("candidate carries no comparable view");
    }
    // Uniform weights equal the mean aggregation, so the mean target serves
    // both supported modes.
    const AggregatedSemantics target =
        mean_patch_prob(tokenize(cand.view, cb), subset);
    double div = 0.0;
    for (Eigen::Index k = 0; k < target.probs.size(); ++k) {
      if (target.probs[k] > 0.0) {
        div += target.probs[k] *
               (std::log(target.probs[k]) - std::log(predicted[k]));
      }
    }
    if (div < best_div) {
      best_div = div;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace semnav
