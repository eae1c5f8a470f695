#pragma once

#include <span>
#include <string>
#include <vector>

#include "semnav/model.hpp"

namespace semnav {

// Per-patch token generation: the action-generation head is queried once per
// patch with an indicator weight vector selecting that patch, and the argmax
// over the token subset is emitted.  Requires a weighted-aggregation model
// (indicator vectors are weight vectors); `context` is a 1 x d hidden row.
std::vector<int> generate_patch_tokens(Model& model,
                                       const Eigen::MatrixXd& context,
                                       std::span<const int> subset);

// Accuracy and distance scores of one reconstructed view against the ground
// truth.  patch_accuracy covers only the generated (non-kept) patches and is
// vacuously 1 when every patch is kept; feature_accuracy and
// semantic_distance cover all patches of the decoded view.
struct ReconstructionScores {
  double patch_accuracy = 0.0;
  double feature_accuracy = 0.0;
  double semantic_distance = 0.0;
  std::vector<int> tokens;  // the reconstructed per-patch token ids
};

struct ReconstructionReport {
  int x_percent = 0;
  std::vector<int> kept_patches;  // ascending; identical for both fills
  ReconstructionScores model_fill;
  ReconstructionScores random_fill;
};

// Keep a random x% of the view's ground-truth tokens and fill the remaining
// patches twice over the same partition: once from `generated`, once with
// uniform-random tokens over the subset.  x must be one of {70, 80, 90,
// 100}; the kept count is round(x% of 16).
ReconstructionReport reconstruct(const View& view,
                                 std::span<const int> generated, int x_percent,
                                 std::span<const int> subset,
                                 const Codebook& cb, Rng& rng);

std::string reconstruction_report_json(const ReconstructionReport& report);

// 4x4 grid of a decoded view's token-equivalent tuple indices, one row per
// grid row, for eyeballing reconstructions next to their ground truth.
std::string patch_grid_text(std::span<const FeatureTuple> patches);

// Action selection by generation: the index (among the movement candidates
// given) of the candidate whose aggregated view semantics has the smallest
// divergence from the head's generated distribution.  Mean models compare
// against the mean aggregation; weighted models against the uniform-weight
// aggregation; sampled-patch models have no whole-view reading and are
// rejected.
int closest_candidate(Model& model, const Codebook& cb,
                      const Eigen::MatrixXd& context,
                      std::span<const Candidate> movement_cands,
                      std::span<const int> subset);

}  // namespace semnav
