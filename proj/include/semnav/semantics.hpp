#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "semnav/rng.hpp"
#include "semnav/tokenizer.hpp"

namespace semnav {

// How a view's patch distributions are aggregated into one target
// distribution: average all patches, pick a single patch, or mix patches
// under sampled weights.
enum class AggMode { kMean, kSample, kWeighted };

const char* agg_mode_name(AggMode mode);
AggMode agg_mode_from_name(const std::string& name);

struct PatchBlock {
  int start_row = 0;
  int start_col = 0;
  int height = 0;
  int width = 0;
};

struct PatchWeights {
  Eigen::VectorXd w;                 // length kPatchesPerView, sums to 1
  std::optional<PatchBlock> block;   // set when drawn block-wise
};

// A per-view target distribution over the selected token subset, together
// with the conditioning information a prediction head needs to reproduce the
// same aggregation (the sampled patch index or the sampled weights).
struct AggregatedSemantics {
  Eigen::VectorXd probs;             // length |S|, renormalized, sums to 1
  AggMode mode = AggMode::kMean;
  int patch_index = -1;              // sample mode only
  std::optional<PatchWeights> weights;  // weighted mode only
  std::vector<int> subset;           // token ids, selection order
};

// --- Expression-friendly building blocks -----------------------------------

// Linear combination of patch rows: returns sum_j w_j * probs.row(j) as a
// column vector over the full vocabulary, with no restriction and no
// renormalization.  Kept separate so linearity properties can be exercised
// directly.
template <typename ProbsDerived, typename WeightsDerived>
Eigen::Matrix<typename ProbsDerived::Scalar, Eigen::Dynamic, 1>
weighted_mixture(const Eigen::MatrixBase<ProbsDerived>& probs,
                 const Eigen::MatrixBase<WeightsDerived>& w) {
  return probs.transpose() * w;
}

// Restriction of a full-vocabulary vector to a token subset, in subset
// order, without renormalization.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> restrict_to_subset(
    const Eigen::MatrixBase<Derived>& full, std::span<const int> subset) {
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> out(
      static_cast<Eigen::Index>(subset.size()));
  for (std::size_t i = 0; i < subset.size(); ++i) {
    const int k = subset[i];
    if (k < 0 || k >= full.size())
      throw std::invalid_argument("restrict_to_subset: token id out of range");
    out[static_cast<Eigen::Index>(i)] = full[k];
  }
  return out;
}

// --- Aggregation operations ------------------------------------------------

AggregatedSemantics mean_patch_prob(const TokenDistribution& td,
                                    std::span<const int> subset);
AggregatedSemantics sample_patch_prob(const TokenDistribution& td,
                                      int patch_index,
                                      std::span<const int> subset);
AggregatedSemantics weighted_patch_prob(const TokenDistribution& td,
                                        const PatchWeights& pw,
                                        std::span<const int> subset);

// Draw patch weights.  Plain mode: independent uniform(0,1] variates,
// normalized.  Block mode: a uniformly random 2x2 block on the 4x4 grid
// carries 4x the raw mass of outside patches before normalization, so every
// in-block weight exceeds every out-of-block weight.
PatchWeights sample_weights(Rng& rng, bool block_wise);

// Throws invalid_argument when pw violates its invariants.
void validate_weights(const PatchWeights& pw);

}  // namespace semnav
