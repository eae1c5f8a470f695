#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "semnav/codebook.hpp"
#include "semnav/world.hpp"

using namespace semnav;

namespace {

Eigen::VectorXd uniform_freq(int n = 256) {
  return Eigen::VectorXd::Constant(n, 1.0 / n);
}

// Target/prediction pair over the given subset with a controlled gap.
AggregatedSemantics make_agg(const std::vector<int>& subset,
                             const Eigen::VectorXd& probs) {
  AggregatedSemantics a;
  a.mode = AggMode::kMean;
  a.subset = subset;
  a.probs = probs;
  return a;
}

}  // namespace

TEST_CASE("static initialization selects top tokens by frequency") {
  Eigen::VectorXd onehot = Eigen::VectorXd::Zero(256);
  onehot[5] = 1.0;
  const CodebookState st = CodebookState::init_static(onehot, 1);
  CHECK(st.selected_subset() == std::vector<int>{5});
  CHECK_FALSE(st.is_dynamic());

  const CodebookState tie = CodebookState::init_static(uniform_freq(), 3);
  CHECK(tie.selected_subset() == std::vector<int>{0, 1, 2});

  CHECK_THROWS_AS(CodebookState::init_static(uniform_freq(), 257),
                  std::invalid_argument);
  CHECK_THROWS_AS(CodebookState::init_static(uniform_freq() * 2.0, 3),
                  std::invalid_argument);
}

TEST_CASE("environment-frequency selection matches a full-sort oracle") {
  const Environment env = Environment::generate(7, 4);
  const Codebook cb = Codebook::create(7);
  const Eigen::VectorXd freq = token_frequency(env, cb);
  const CodebookState st = CodebookState::init_static(freq, 64);

  std::vector<int> ids(256);
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (freq[a] != freq[b]) return freq[a] > freq[b];
    return a < b;
  });
  ids.resize(64);
  CHECK(st.selected_subset() == ids);
  CHECK(st.running_score() == freq);
}

TEST_CASE("dynamic initialization equals static initialization") {
  const Environment env = Environment::generate(19, 4);
  const Codebook cb = Codebook::create(3);
  const Eigen::VectorXd freq = token_frequency(env, cb);
  const CodebookState st = CodebookState::init_static(freq, 64);
  const CodebookState dy = CodebookState::init_dynamic(freq, 64);
  CHECK(dy.selected_subset() == st.selected_subset());
  CHECK(dy.is_dynamic());
  CHECK(dy.lambda() == 0.5);
  CHECK(dy.gamma() == 1.0);
  CHECK_THROWS_AS(CodebookState::init_dynamic(freq, 64, 1.5, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(CodebookState::init_dynamic(freq, 64, 0.5, -1.0),
                  std::invalid_argument);
}

TEST_CASE("score update folds frequency and difficulty as specified") {
  // Hand-checked case: lambda=0.5, gamma=1.0, previous running score 0.2,
  // batch frequency 0.4, difficulty 0.1 -> new running score 0.35.
  const int k = 0;  // token under scrutiny; it is in the subset
  Eigen::VectorXd s_t = Eigen::VectorXd::Zero(256);
  s_t[k] = 0.2;
  CodebookState st = CodebookState::from_parts(
      /*dynamic=*/true, 0.5, 1.0, 4, uniform_freq(),
      Eigen::VectorXd::Zero(256), s_t);
  // Subset is {0, 1, 2, 3}: token 0 leads, ties 1..3 by id.
  REQUIRE(st.selected_subset() == std::vector<int>({0, 1, 2, 3}));

  Eigen::VectorXd batch = Eigen::VectorXd::Zero(256);
  batch[k] = 0.4;
  batch[10] = 0.6;

  Eigen::VectorXd target_probs(4), pred_probs(4);
  target_probs << 0.4, 0.3, 0.2, 0.1;
  pred_probs << 0.5, 0.2, 0.2, 0.1;  // difficulty 0.1 at token 0
  const auto target = make_agg(st.selected_subset(), target_probs);
  const auto pred = make_agg(st.selected_subset(), pred_probs);

  st.update(batch, pred, target);
  CHECK(st.frequency_score() == batch);
  CHECK(st.difficulty_score()[0] == doctest::Approx(0.1));
  CHECK(st.running_score()[0] == doctest::Approx(0.35));  // 0.5*0.2+0.5*(0.4+0.1)
}

TEST_CASE("degenerate lambda freezes the running score") {
  const Eigen::VectorXd freq = uniform_freq();
  CodebookState st = CodebookState::init_dynamic(freq, 8, /*lambda=*/1.0);
  const Eigen::VectorXd before = st.running_score();
  Eigen::VectorXd batch = Eigen::VectorXd::Zero(256);
  batch[100] = 1.0;
  Eigen::VectorXd p = Eigen::VectorXd::Constant(8, 1.0 / 8);
  st.update(batch, make_agg(st.selected_subset(), p),
            make_agg(st.selected_subset(), p));
  CHECK((st.running_score() - before).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("exact predictions zero the difficulty on the subset") {
  CodebookState st = CodebookState::init_dynamic(uniform_freq(), 16);
  Eigen::VectorXd p(16);
  for (int i = 0; i < 16; ++i) p[i] = (i + 1) / 136.0;
  st.update(uniform_freq(), make_agg(st.selected_subset(), p),
            make_agg(st.selected_subset(), p));
  for (int k : st.selected_subset())
    CHECK(st.difficulty_score()[k] == 0.0);
}

TEST_CASE("difficulty persists for tokens outside the subset") {
  Eigen::VectorXd s_d = Eigen::VectorXd::Zero(256);
  s_d[200] = 0.7;  // token 200 is not in the subset below
  Eigen::VectorXd s_t = Eigen::VectorXd::Zero(256);
  for (int i = 0; i < 4; ++i) s_t[i] = 1.0 - 0.1 * i;
  CodebookState st = CodebookState::from_parts(true, 0.5, 1.0, 4,
                                               uniform_freq(), s_d, s_t);
  REQUIRE(std::count(st.selected_subset().begin(), st.selected_subset().end(),
                     200) == 0);
  Eigen::VectorXd p = Eigen::VectorXd::Constant(4, 0.25);
  st.update(uniform_freq(), make_agg(st.selected_subset(), p),
            make_agg(st.selected_subset(), p));
  CHECK(st.difficulty_score()[200] == 0.7);
}

TEST_CASE("with zero gamma the running score converges to the frequency") {
  CodebookState st = CodebookState::init_dynamic(uniform_freq(), 8, 0.5, 0.0);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(256);
  f[3] = 0.5;
  f[7] = 0.5;
  const double initial_gap = (st.running_score() - f).cwiseAbs().maxCoeff();
  Eigen::VectorXd p = Eigen::VectorXd::Constant(8, 1.0 / 8);
  for (int t = 1; t <= 12; ++t) {
    st.update(f, make_agg(st.selected_subset(), p),
              make_agg(st.selected_subset(), p));
    const double gap = (st.running_score() - f).cwiseAbs().maxCoeff();
    CHECK(gap <= std::pow(0.5, t) * initial_gap + 1e-9);
  }
}

TEST_CASE("selection is a pure function of the running score") {
  CodebookState st = CodebookState::init_dynamic(uniform_freq(), 32);
  Rng rng(9);
  for (int round = 0; round < 5; ++round) {
    Eigen::VectorXd f(256);
    for (int i = 0; i < 256; ++i) f[i] = rng.next_open_double();
    f /= f.sum();
    Eigen::VectorXd pr(32), ta(32);
    for (int i = 0; i < 32; ++i) {
      pr[i] = rng.next_open_double();
      ta[i] = rng.next_open_double();
    }
    pr /= pr.sum();
    ta /= ta.sum();
    st.update(f, make_agg(st.selected_subset(), pr),
              make_agg(st.selected_subset(), ta));
    CHECK(st.selected_subset() == top_k_by_score(st.running_score(), 32));
  }
}

TEST_CASE("update rejects mismatched pairs and static states") {
  CodebookState st = CodebookState::init_dynamic(uniform_freq(), 4);
  Eigen::VectorXd p = Eigen::VectorXd::Constant(4, 0.25);
  auto ok = make_agg(st.selected_subset(), p);

  auto wrong_mode = ok;
  wrong_mode.mode = AggMode::kSample;
  wrong_mode.patch_index = 3;
  CHECK_THROWS_AS(st.update(uniform_freq(), wrong_mode, ok),
                  std::invalid_argument);

  auto wrong_subset = ok;
  wrong_subset.subset = {9, 8, 7, 6};
  CHECK_THROWS_AS(st.update(uniform_freq(), wrong_subset, ok),
                  std::invalid_argument);

  auto sample_a = ok, sample_b = ok;
  sample_a.mode = sample_b.mode = AggMode::kSample;
  sample_a.patch_index = 1;
  sample_b.patch_index = 2;
  CHECK_THROWS_AS(st.update(uniform_freq(), sample_a, sample_b),
                  std::invalid_argument);

  CodebookState fixed = CodebookState::init_static(uniform_freq(), 4);
  CHECK_THROWS_AS(fixed.update(uniform_freq(), ok, ok), std::logic_error);
}

TEST_CASE("batch frequency counts argmax tokens") {
  std::vector<TokenDistribution> batch(2);
  for (auto& td : batch) {
    td.probs = Eigen::MatrixXd::Constant(kPatchesPerView, 256, 1e-9);
    td.argmax_tokens.assign(kPatchesPerView, 3);
    for (int j = 0; j < kPatchesPerView; ++j) td.probs(j, 3) = 1.0;
  }
  // All patches argmax to token 3 -> one-hot frequency.
  const Eigen::VectorXd f = frequency_from_batch(batch);
  CHECK(f[3] == doctest::Approx(1.0));
  CHECK(f.sum() == doctest::Approx(1.0).epsilon(1e-9));

  // Counting oracle on a mixed batch.
  batch[1].argmax_tokens.assign(kPatchesPerView, 7);
  const Eigen::VectorXd g = frequency_from_batch(batch);
  CHECK(g[3] == doctest::Approx(0.5));
  CHECK(g[7] == doctest::Approx(0.5));

  CHECK_THROWS_AS(frequency_from_batch(std::vector<TokenDistribution>{}),
                  std::invalid_argument);
}
