#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>
#include <vector>

#include "semnav/semantics.hpp"

using namespace semnav;

namespace {

// A synthetic distribution with strictly positive rows summing to 1.
TokenDistribution random_td(std::uint64_t seed, int vocab = 256) {
  Rng rng(seed);
  TokenDistribution td;
  td.probs.resize(kPatchesPerView, vocab);
  td.argmax_tokens.resize(kPatchesPerView);
  for (int j = 0; j < kPatchesPerView; ++j) {
    for (int k = 0; k < vocab; ++k) td.probs(j, k) = rng.next_open_double();
    td.probs.row(j) /= td.probs.row(j).sum();
    td.probs.row(j).maxCoeff(&td.argmax_tokens[j]);
  }
  return td;
}

std::vector<int> full_subset(int vocab = 256) {
  std::vector<int> s(vocab);
  std::iota(s.begin(), s.end(), 0);
  return s;
}

}  // namespace

TEST_CASE("mean aggregation matches the direct-summation oracle") {
  const TokenDistribution td = random_td(3);
  const std::vector<int> subset{4, 9, 100, 255, 0};
  const AggregatedSemantics agg = mean_patch_prob(td, subset);
  REQUIRE(agg.probs.size() == 5);
  CHECK(agg.mode == AggMode::kMean);
  CHECK(agg.subset == subset);
  CHECK(agg.probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(agg.probs.minCoeff() >= 0.0);

  Eigen::VectorXd oracle(5);
  for (int i = 0; i < 5; ++i) {
    double sum = 0.0;
    for (int j = 0; j < kPatchesPerView; ++j) sum += td.probs(j, subset[i]);
    oracle[i] = sum / kPatchesPerView;
  }
  oracle /= oracle.sum();
  CHECK((agg.probs - oracle).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(mean_patch_prob(td, std::vector<int>{}),
                  std::invalid_argument);
}

TEST_CASE("mean of identical rows is that row; full vocab loses no mass") {
  TokenDistribution td = random_td(5);
  for (int j = 1; j < kPatchesPerView; ++j) td.probs.row(j) = td.probs.row(0);
  const std::vector<int> subset{1, 2, 3};
  const AggregatedSemantics agg = mean_patch_prob(td, subset);
  Eigen::VectorXd row = restrict_to_subset(td.probs.row(0).transpose(),
                                           std::span<const int>(subset));
  row /= row.sum();
  CHECK((agg.probs - row).cwiseAbs().maxCoeff() < 1e-12);

  const auto everything = full_subset();
  const TokenDistribution td2 = random_td(6);
  Eigen::VectorXd unrestricted =
      td2.probs.colwise().mean().transpose();
  const AggregatedSemantics agg2 = mean_patch_prob(td2, everything);
  CHECK((agg2.probs - unrestricted).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sample aggregation is a restricted renormalized row slice") {
  const TokenDistribution td = random_td(7);
  const std::vector<int> subset{10, 20, 30};
  const AggregatedSemantics agg = sample_patch_prob(td, 5, subset);
  CHECK(agg.mode == AggMode::kSample);
  CHECK(agg.patch_index == 5);
  Eigen::VectorXd oracle(3);
  for (int i = 0; i < 3; ++i) oracle[i] = td.probs(5, subset[i]);
  oracle /= oracle.sum();
  CHECK((agg.probs - oracle).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(sample_patch_prob(td, -1, subset), std::invalid_argument);
  CHECK_THROWS_AS(sample_patch_prob(td, kPatchesPerView, subset),
                  std::invalid_argument);

  // One-hot row stays one-hot when its token is in the subset.
  TokenDistribution onehot = random_td(8);
  onehot.probs.row(2).setZero();
  onehot.probs(2, 20) = 1.0;
  const AggregatedSemantics oh = sample_patch_prob(onehot, 2, subset);
  CHECK(oh.probs[1] == doctest::Approx(1.0));
  CHECK(oh.probs[0] == doctest::Approx(0.0));
}

TEST_CASE("weighted aggregation: oracle, mean identity, indicator identity") {
  const TokenDistribution td = random_td(11);
  const std::vector<int> subset{0, 50, 100, 150, 200, 250};

  Rng rng(99);
  const PatchWeights pw = sample_weights(rng, false);
  const AggregatedSemantics agg = weighted_patch_prob(td, pw, subset);
  CHECK(agg.mode == AggMode::kWeighted);
  REQUIRE(agg.weights.has_value());
  CHECK(agg.weights->w == pw.w);

  Eigen::VectorXd oracle(6);
  for (int i = 0; i < 6; ++i) {
    double sum = 0.0;
    for (int j = 0; j < kPatchesPerView; ++j)
      sum += pw.w[j] * td.probs(j, subset[i]);
    oracle[i] = sum;
  }
  oracle /= oracle.sum();
  CHECK((agg.probs - oracle).cwiseAbs().maxCoeff() < 1e-12);

  // Uniform weights reduce exactly to the mean aggregation.
  PatchWeights uniform;
  uniform.w = Eigen::VectorXd::Constant(kPatchesPerView,
                                        1.0 / kPatchesPerView);
  const AggregatedSemantics wu = weighted_patch_prob(td, uniform, subset);
  const AggregatedSemantics m = mean_patch_prob(td, subset);
  CHECK((wu.probs - m.probs).cwiseAbs().maxCoeff() < 1e-12);

  // An indicator weight reduces exactly to the sample aggregation.
  PatchWeights indicator;
  indicator.w = Eigen::VectorXd::Zero(kPatchesPerView);
  indicator.w[7] = 1.0;
  const AggregatedSemantics wi = weighted_patch_prob(td, indicator, subset);
  const AggregatedSemantics s = sample_patch_prob(td, 7, subset);
  CHECK((wi.probs - s.probs).cwiseAbs().maxCoeff() < 1e-12);

  PatchWeights bad;
  bad.w = Eigen::VectorXd::Constant(kPatchesPerView, 1.0);  // sums to 16
  CHECK_THROWS_AS(weighted_patch_prob(td, bad, subset), std::invalid_argument);
}

TEST_CASE("weighted mixture is linear in the weights before renormalization") {
  const TokenDistribution td = random_td(13);
  Rng rng(5);
  const PatchWeights a = sample_weights(rng, false);
  const PatchWeights b = sample_weights(rng, false);
  const double alpha = 0.3;
  const Eigen::VectorXd blended =
      weighted_mixture(td.probs, (alpha * a.w + (1 - alpha) * b.w).eval());
  const Eigen::VectorXd combo = alpha * weighted_mixture(td.probs, a.w) +
                                (1 - alpha) * weighted_mixture(td.probs, b.w);
  CHECK((blended - combo).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("epsilon-close patch rows give epsilon-close weighted sums") {
  // Forward direction: a uniform bound on per-patch, per-token differences
  // survives any convex weighting.
  const std::vector<int> subset{3, 30, 60, 90, 120};
  const TokenDistribution td = random_td(17);
  const double eps = 1e-3;
  Rng noise(23);
  TokenDistribution close = td;
  for (int j = 0; j < kPatchesPerView; ++j)
    for (int k = 0; k < close.probs.cols(); ++k)
      close.probs(j, k) += eps * (2.0 * noise.next_double() - 1.0);

  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const PatchWeights pw = sample_weights(rng, trial % 2 == 0);
    const Eigen::VectorXd pa = restrict_to_subset(
        weighted_mixture(td.probs, pw.w), std::span<const int>(subset));
    const Eigen::VectorXd pb = restrict_to_subset(
        weighted_mixture(close.probs, pw.w), std::span<const int>(subset));
    CHECK((pa - pb).cwiseAbs().maxCoeff() <= eps + 1e-12);
  }
}

TEST_CASE("weighted sums under a weight basis pin down per-patch rows") {
  // Converse at small scale: with 4 patches and 4 linearly independent
  // weight vectors, the per-patch rows are recoverable from the weighted
  // sums by solving the linear system.
  Rng rng(41);
  const int patches = 4, vocab = 6;
  Eigen::MatrixXd p(patches, vocab);
  for (int j = 0; j < patches; ++j)
    for (int k = 0; k < vocab; ++k) p(j, k) = rng.next_open_double();

  Eigen::MatrixXd w_basis(patches, patches);
  for (int r = 0; r < patches; ++r) {
    for (int c = 0; c < patches; ++c) w_basis(r, c) = rng.next_open_double();
    w_basis.row(r) /= w_basis.row(r).sum();
  }
  REQUIRE(std::abs(w_basis.determinant()) > 1e-8);

  const Eigen::MatrixXd sums = w_basis * p;  // row r = mixture under w_r
  const Eigen::MatrixXd recovered = w_basis.fullPivLu().solve(sums);
  CHECK((recovered - p).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("sampled weights satisfy their invariants in both modes") {
  Rng rng(55);
  for (int i = 0; i < 100; ++i) {
    const PatchWeights plain = sample_weights(rng, false);
    CHECK(plain.w.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(plain.w.minCoeff() > 0.0);
    CHECK(!plain.block.has_value());
    validate_weights(plain);

    const PatchWeights blocky = sample_weights(rng, true);
    CHECK(blocky.w.sum() == doctest::Approx(1.0).epsilon(1e-9));
    REQUIRE(blocky.block.has_value());
    CHECK(blocky.block->height == 2);
    CHECK(blocky.block->width == 2);
    validate_weights(blocky);
    double min_in = 1.0, max_out = 0.0;
    for (int r = 0; r < kPatchGridSide; ++r)
      for (int c = 0; c < kPatchGridSide; ++c) {
        const bool inside = r >= blocky.block->start_row &&
                            r < blocky.block->start_row + 2 &&
                            c >= blocky.block->start_col &&
                            c < blocky.block->start_col + 2;
        const double w = blocky.w[r * kPatchGridSide + c];
        if (inside)
          min_in = std::min(min_in, w);
        else
          max_out = std::max(max_out, w);
      }
    CHECK(min_in > max_out);
    // The construction uses a fixed 4:1 raw-mass ratio.
    CHECK(min_in == doctest::Approx(4.0 / 28.0));
    CHECK(max_out == doctest::Approx(1.0 / 28.0));
  }
}

TEST_CASE("plain weight draws average to uniform") {
  Rng rng(77);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(kPatchesPerView);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) mean += sample_weights(rng, false).w;
  mean /= draws;
  for (int j = 0; j < kPatchesPerView; ++j)
    CHECK(mean[j] == doctest::Approx(1.0 / kPatchesPerView).epsilon(0.16));
  CHECK((mean.array() - 1.0 / kPatchesPerView).abs().maxCoeff() < 0.01);
}
