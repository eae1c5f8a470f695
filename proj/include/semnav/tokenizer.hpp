#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "semnav/world.hpp"

namespace semnav {

// Soft token assignment for one view: row j holds the probability of each
// visual token for patch j.  Rows are strictly positive and sum to 1.
struct TokenDistribution {
  Eigen::MatrixXd probs;           // kPatchesPerView x vocab_size
  std::vector<int> argmax_tokens;  // per patch, the most likely token
};

// Discrete visual tokenizer.  Feature tuples are embedded as fixed random
// vectors; the prototype table is a permutation of those embeddings, so
// nearest-prototype assignment is a bijection between tuples and tokens and
// argmax decoding is lossless by construction.  Distances are converted to
// probabilities with a temperature-scaled softmax, which keeps the
// distributions soft at the default temperature.
class Codebook {
 public:
  static constexpr int kDefaultVocab = kFeatureTupleCount;  // 256
  static constexpr int kDefaultDim = 16;

  static Codebook create(std::uint64_t seed, double temperature = 0.25);

  std::uint64_t seed() const { return seed_; }
  int vocab_size() const { return static_cast<int>(prototypes_.rows()); }
  int dim() const { return static_cast<int>(prototypes_.cols()); }
  double temperature() const { return temperature_; }

  // Prototype vectors, one row per token.  Values are exactly representable
  // as 32-bit floats so the binary format round-trips bit for bit.
  const Eigen::MatrixXd& prototypes() const { return prototypes_; }

  FeatureTuple decode_token(int token) const;
  int argmax_token(const FeatureTuple& t) const;
  // The embedding of a tuple equals the prototype of its own token.
  Eigen::RowVectorXd embed(const FeatureTuple& t) const;

  void save(std::ostream& out) const;
  static Codebook load(std::istream& in);
  void save_file(const std::string& path) const;
  static Codebook load_file(const std::string& path);

 private:
  Codebook() = default;

  std::uint64_t seed_ = 0;
  double temperature_ = 0.25;
  Eigen::MatrixXd prototypes_;     // vocab x dim
  std::vector<int> token_tuple_;   // token -> tuple index
  std::vector<int> tuple_token_;   // tuple index -> token
};

// Soft tokenization of a full view.  Everything downstream (aggregation,
// selection, losses) is computed from these row distributions.
TokenDistribution tokenize(const View& view, const Codebook& cb);

// Greedy decoding: token sequence -> feature tuples.
std::vector<FeatureTuple> decode(std::span<const int> tokens,
                                 const Codebook& cb);

// Empirical distribution of argmax tokens over every patch of every view in
// the environment.  Sums to 1.
Eigen::VectorXd token_frequency(const Environment& env, const Codebook& cb);

// Mean pairwise distance between the direction-normalized prototypes of two
// equally long token sequences.  Zero iff the sequences match elementwise.
double semantic_distance(std::span<const int> a, std::span<const int> b,
                         const Codebook& cb);

}  // namespace semnav
