#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "semnav/errors.hpp"
#include "semnav/tokenizer.hpp"

using namespace semnav;

TEST_CASE("codebook construction is deterministic and well-spaced") {
  const Codebook a = Codebook::create(11);
  const Codebook b = Codebook::create(11);
  const Codebook c = Codebook::create(12);
  CHECK(a.prototypes() == b.prototypes());
  CHECK(a.prototypes() != c.prototypes());
  CHECK(a.vocab_size() == 256);
  CHECK(a.dim() == 16);
  CHECK(a.temperature() == doctest::Approx(0.25));

  double min_dist = 1e9;
  for (int i = 0; i < a.vocab_size(); ++i)
    for (int j = i + 1; j < a.vocab_size(); ++j)
      min_dist = std::min(
          min_dist, (a.prototypes().row(i) - a.prototypes().row(j)).norm());
  CHECK(min_dist >= 0.6);

  // Values survive a float32 round trip unchanged.
  for (int i = 0; i < a.vocab_size(); ++i)
    for (int d = 0; d < a.dim(); ++d)
      CHECK(static_cast<double>(static_cast<float>(a.prototypes()(i, d))) ==
            a.prototypes()(i, d));
}

TEST_CASE("tuple <-> token mapping is a bijection") {
  const Codebook cb = Codebook::create(3);
  std::set<int> tokens;
  for (int idx = 0; idx < kFeatureTupleCount; ++idx) {
    const FeatureTuple t = tuple_from_index(idx);
    const int token = cb.argmax_token(t);
    CHECK(cb.decode_token(token) == t);
    tokens.insert(token);
  }
  CHECK(tokens.size() == kFeatureTupleCount);
  CHECK_THROWS_AS(cb.decode_token(-1), std::invalid_argument);
  CHECK_THROWS_AS(cb.decode_token(256), std::invalid_argument);
}

TEST_CASE("tokenize emits row-stochastic soft distributions") {
  const Environment env = Environment::generate(21, 4);
  const Codebook cb = Codebook::create(4);
  const View view = env.view_at(5, 2, 1);
  const TokenDistribution td = tokenize(view, cb);
  REQUIRE(td.probs.rows() == kPatchesPerView);
  REQUIRE(td.probs.cols() == 256);
  for (int j = 0; j < kPatchesPerView; ++j) {
    CHECK(td.probs.row(j).minCoeff() > 0.0);
    CHECK(td.probs.row(j).sum() == doctest::Approx(1.0).epsilon(1e-12));
    int arg = 0;
    td.probs.row(j).maxCoeff(&arg);
    CHECK(arg == td.argmax_tokens[j]);
    // The argmax token decodes back to the patch itself.
    CHECK(cb.decode_token(td.argmax_tokens[j]) == view.patches[j]);
  }
  // Soft at the default temperature: on average a clear but not dominant
  // peak, measured over a whole panorama to keep the statistic stable.
  double peak_sum = 0.0;
  int rows = 0;
  for (const View& v : env.panorama(5).views) {
    const TokenDistribution t2 = tokenize(v, cb);
    for (int j = 0; j < kPatchesPerView; ++j, ++rows)
      peak_sum += t2.probs.row(j).maxCoeff();
  }
  const double mean_peak = peak_sum / rows;
  CHECK(mean_peak > 0.15);
  CHECK(mean_peak < 0.9);
  View bad = view;
  bad.patches.pop_back();
  CHECK_THROWS_AS(tokenize(bad, cb), std::invalid_argument);
}

TEST_CASE("argmax decoding is lossless over many views") {
  const Environment env = Environment::generate(31, 4);
  const Codebook cb = Codebook::create(9);
  for (int node : {0, 8, 17, 35}) {
    const Panorama pano = env.panorama(node);
    for (const View& v : pano.views) {
      const TokenDistribution td = tokenize(v, cb);
      const auto tuples = decode(td.argmax_tokens, cb);
      CHECK(tuples == v.patches);
    }
  }
}

TEST_CASE("near-zero temperature concentrates mass on the argmax token") {
  const Environment env = Environment::generate(21, 4);
  const Codebook sharp = Codebook::create(4, 0.01);
  const View view = env.view_at(2, 7, 0);
  const TokenDistribution td = tokenize(view, sharp);
  for (int j = 0; j < kPatchesPerView; ++j)
    CHECK(td.probs(j, td.argmax_tokens[j]) >= 0.99);
}

TEST_CASE("token frequency matches a slow tokenize-everything oracle") {
  const Environment env = Environment::generate(55, 4);
  const Codebook cb = Codebook::create(7);
  const Eigen::VectorXd freq = token_frequency(env, cb);
  CHECK(freq.size() == 256);
  CHECK(freq.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(freq.minCoeff() >= 0.0);

  Eigen::VectorXd oracle = Eigen::VectorXd::Zero(256);
  double total = 0.0;
  for (int node = 0; node < env.node_count(); ++node) {
    const Panorama pano = env.panorama(node);
    for (const View& v : pano.views) {
      const TokenDistribution td = tokenize(v, cb);
      for (int t : td.argmax_tokens) {
        oracle[t] += 1.0;
        total += 1.0;
      }
    }
  }
  oracle /= total;
  CHECK((freq - oracle).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("semantic distance is a pointwise prototype-direction metric") {
  const Codebook cb = Codebook::create(13);
  std::vector<int> a{1, 2, 3}, b{1, 2, 3}, c{4, 5, 6};
  CHECK(semantic_distance(a, b, cb) == doctest::Approx(0.0));
  const double d_ac = semantic_distance(a, c, cb);
  CHECK(d_ac > 0.0);
  CHECK(d_ac <= 2.0);  // normalized vectors differ by at most a diameter
  CHECK(semantic_distance(c, a, cb) == doctest::Approx(d_ac));

  // Independent recomputation for a single pair.
  const Eigen::RowVectorXd pa = cb.prototypes().row(7).normalized();
  const Eigen::RowVectorXd pb = cb.prototypes().row(200).normalized();
  std::vector<int> single_a{7}, single_b{200};
  CHECK(semantic_distance(single_a, single_b, cb) ==
        doctest::Approx((pa - pb).norm()).epsilon(1e-12));

  std::vector<int> shorter{1, 2};
  CHECK_THROWS_AS(semantic_distance(a, shorter, cb), std::invalid_argument);
  std::vector<int> out_of_range{999, 0, 0};
  CHECK_THROWS_AS(semantic_distance(out_of_range, a, cb),
                  std::invalid_argument);
}

TEST_CASE("codebook binary format round-trips byte for byte") {
  const Codebook cb = Codebook::create(17);
  std::ostringstream first;
  cb.save(first);

  std::istringstream in(first.str());
  const Codebook back = Codebook::load(in);
  CHECK(back.prototypes() == cb.prototypes());
  CHECK(back.seed() == cb.seed());
  CHECK(back.temperature() == cb.temperature());
  for (int t = 0; t < 256; ++t)
    CHECK(back.decode_token(t) == cb.decode_token(t));

  std::ostringstream second;
  back.save(second);
  CHECK(second.str() == first.str());

  // Corruption is detected.
  std::string bad_magic = first.str();
  bad_magic[0] = 'X';
  std::istringstream bm(bad_magic);
  CHECK_THROWS_AS(Codebook::load(bm), IoError);

  std::string truncated = first.str().substr(0, 40);
  std::istringstream tr(truncated);
  CHECK_THROWS_AS(Codebook::load(tr), IoError);

  std::string flipped = first.str();
  flipped[flipped.size() - 2] ^= 0x40;  // corrupt a prototype byte
  std::istringstream fl(flipped);
  CHECK_THROWS_AS(Codebook::load(fl), IoError);

  const std::string path = "test_codebook.bin";
  cb.save_file(path);
  const Codebook from_file = Codebook::load_file(path);
  CHECK(from_file.prototypes() == cb.prototypes());
  std::remove(path.c_str());
  CHECK_THROWS_AS(Codebook::load_file("missing_codebook.bin"), IoError);
}
