#include "semnav/semantics.hpp"

#include <cmath>

namespace semnav {

const char* agg_mode_name(AggMode mode) {
  switch (mode) {
    case AggMode::kMean: return "mean";
    case AggMode::kSample: return "sample";
    case AggMode::kWeighted: return "weighted";
  }
  throw std::logic_error("agg_mode_name: bad mode");
}

AggMode agg_mode_from_name(const std::string& name) {
  if (name == "mean") return AggMode::kMean;
  if (name == "sample") return AggMode::kSample;
  if (name == "weighted") return AggMode::kWeighted;
  throw std::invalid_argument("agg_mode_from_name: unknown mode '" + name +
                              "'");
}

namespace {

// Shared final step: restrict to the subset, renormalize, record the subset.
AggregatedSemantics finish(Eigen::VectorXd full, AggMode mode,
                           std::span<const int> subset) {
  if (subset.empty())
    throw std::invalid_argument("aggregation: token subset must be nonempty");
  AggregatedSemantics out;
  out.mode = mode;
  out.subset.assign(subset.begin(), subset.end());
  out.probs = restrict_to_subset(full, subset);
  const double mass = out.probs.sum();
  if (!(mass > 0.0))
    throw std::invalid_argument("aggregation: subset has no probability mass");
  out.probs /= mass;
  return out;
}

}  // namespace

AggregatedSemantics mean_patch_prob(const TokenDistribution& td,
                                    std::span<const int> subset) {
  return finish(td.probs.colwise().mean().transpose(), AggMode::kMean,
                subset);
}

AggregatedSemantics sample_patch_prob(const TokenDistribution& td,
                                      int patch_index,
                                      std::span<const int> subset) {
  if (patch_index < 0 || patch_index >= td.probs.rows())
    throw std::invalid_argument("sample_patch_prob: patch index out of range");
  AggregatedSemantics out =
      finish(td.probs.row(patch_index).transpose(), AggMode::kSample, subset);
  out.patch_index = patch_index;
  return out;
}

AggregatedSemantics weighted_patch_prob(const TokenDistribution& td,
                                        const PatchWeights& pw,
                                        std::span<const int> subset) {
  validate_weights(pw);
  if (pw.w.size() != td.probs.rows())
    throw std::invalid_argument("weighted_patch_prob: weight length mismatch");
  AggregatedSemantics out =
      finish(weighted_mixture(td.probs, pw.w), AggMode::kWeighted, subset);
  out.weights = pw;
  return out;
}

PatchWeights sample_weights(Rng& rng, bool block_wise) {
  PatchWeights pw;
  pw.w.resize(kPatchesPerView);
  if (!block_wise) {
    for (int j = 0; j < kPatchesPerView; ++j)
      pw.w[j] = rng.next_open_double();
  } else {
    PatchBlock block;
    block.height = 2;
    block.width = 2;
    block.start_row = rng.next_int(0, kPatchGridSide - 1);
    block.start_col = rng.next_int(0, kPatchGridSide - 1);
    for (int r = 0; r < kPatchGridSide; ++r)
      for (int c = 0; c < kPatchGridSide; ++c) {
        const bool inside = r >= block.start_row &&
                            r < block.start_row + block.height &&
                            c >= block.start_col &&
                            c < block.start_col + block.width;
        pw.w[r * kPatchGridSide + c] = inside ? 4.0 : 1.0;
      }
    pw.block = block;
  }
  pw.w /= pw.w.sum();
  return pw;
}

void validate_weights(const PatchWeights& pw) {
  if (pw.w.size() != kPatchesPerView)
    throw std::invalid_argument("PatchWeights: wrong length");
  if (pw.w.minCoeff() < 0.0)
    throw std::invalid_argument("PatchWeights: negative weight");
  if (std::abs(pw.w.sum() - 1.0) > 1e-6)
    throw std::invalid_argument("PatchWeights: weights must sum to 1");
  if (pw.block) {
    const PatchBlock& b = *pw.block;
    if (b.start_row < 0 || b.start_col < 0 || b.height <= 0 || b.width <= 0 ||
        b.start_row + b.height > kPatchGridSide ||
        b.start_col + b.width > kPatchGridSide)
      throw std::invalid_argument("PatchWeights: block outside patch grid");
    double min_in = 1.0, max_out = 0.0;
    for (int r = 0; r < kPatchGridSide; ++r)
      for (int c = 0; c < kPatchGridSide; ++c) {
        const bool inside = r >= b.start_row && r < b.start_row + b.height &&
                            c >= b.start_col && c < b.start_col + b.width;
        const double w = pw.w[r * kPatchGridSide + c];
        if (inside)
          min_in = std::min(min_in, w);
        else
          max_out = std::max(max_out, w);
      }
    if (!(min_in > max_out))
      throw std::invalid_argument(
          "PatchWeights: block weights must dominate outside weights");
  }
}

}  // namespace semnav
