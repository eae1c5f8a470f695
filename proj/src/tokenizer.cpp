#include "semnav/tokenizer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "semnav/binio.hpp"
#include "semnav/errors.hpp"
#include "semnav/rng.hpp"

namespace semnav {

namespace {

constexpr double kEmbedSigma = 0.25;
// Rejection threshold on pairwise embedding distance.  A floor on the
// distance gap guarantees that near-zero temperatures concentrate essentially
// all probability on the nearest prototype.
constexpr double kMinPairDistance = 0.6;
constexpr char kCodebookMagic[4] = {'S', 'N', 'T', 'K'};
constexpr std::uint8_t kCodebookVersion = 1;

}  // namespace

Codebook Codebook::create(std::uint64_t seed, double temperature) {
  if (temperature <= 0.0)
    throw std::invalid_argument("Codebook::create: temperature must be > 0");

  Codebook cb;
  cb.seed_ = seed;
  cb.temperature_ = temperature;

  const int vocab = kDefaultVocab;
  const int dim = kDefaultDim;

  // Draw one embedding per tuple, rounded through 32-bit floats so the saved
  // prototype table reproduces these values exactly.  Rows closer than the
  // rejection threshold to an earlier row are redrawn.
  Rng draw = Rng(seed).derive("codebook-embeddings");
  Eigen::MatrixXd embed(vocab, dim);
  for (int i = 0; i < vocab; ++i) {
    for (;;) {
      for (int d = 0; d < dim; ++d)
        embed(i, d) = static_cast<double>(
            static_cast<float>(kEmbedSigma * draw.next_gaussian()));
      bool ok = true;
      for (int j = 0; j < i && ok; ++j)
        ok = (embed.row(i) - embed.row(j)).norm() >= kMinPairDistance;
      if (ok) break;
    }
  }

  // Random bijection tuple <-> token.
  Rng shuffle = Rng(seed).derive("codebook-permutation");
  std::vector<int> perm(vocab);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = vocab - 1; i > 0; --i)
    std::swap(perm[i], perm[shuffle.next_int(0, i + 1)]);

  cb.prototypes_.resize(vocab, dim);
  cb.token_tuple_.resize(vocab);
  cb.tuple_token_.resize(vocab);
  for (int k = 0; k < vocab; ++k) {
    cb.prototypes_.row(k) = embed.row(perm[k]);
    cb.token_tuple_[k] = perm[k];
    cb.tuple_token_[perm[k]] = k;
  }
  return cb;
}

FeatureTuple Codebook::decode_token(int token) const {
  if (token < 0 || token >= vocab_size())
    throw std::invalid_argument("decode_token: token out of range");
  return tuple_from_index(token_tuple_[token]);
}

int Codebook::argmax_token(const FeatureTuple& t) const {
  return tuple_token_.at(static_cast<std::size_t>(tuple_index(t)));
}

Eigen::RowVectorXd Codebook::embed(const FeatureTuple& t) const {
  return prototypes_.row(argmax_token(t));
}

TokenDistribution tokenize(const View& view, const Codebook& cb) {
  if (static_cast<int>(view.patches.size()) != kPatchesPerView)
    throw std::invalid_argument("tokenize: view must have 16 patches");

  const int vocab = cb.vocab_size();
  Eigen::MatrixXd embeds(kPatchesPerView, cb.dim());
  for (int j = 0; j < kPatchesPerView; ++j)
    embeds.row(j) = cb.embed(view.patches[j]);

  // Squared distances via the usual expansion, then a row-stable softmax of
  // -dist^2 / temperature.
  const Eigen::VectorXd e2 = embeds.rowwise().squaredNorm();
  const Eigen::VectorXd p2 = cb.prototypes().rowwise().squaredNorm();
  Eigen::MatrixXd logits =
      (2.0 * embeds * cb.prototypes().transpose()).eval();
  logits.colwise() -= e2;
  logits.rowwise() -= p2.transpose();
  logits /= cb.temperature();

  TokenDistribution out;
  out.probs.resize(kPatchesPerView, vocab);
  out.argmax_tokens.resize(kPatchesPerView);
  for (int j = 0; j < kPatchesPerView; ++j) {
    int arg = 0;
    const double m = logits.row(j).maxCoeff(&arg);
    const Eigen::ArrayXd ex = (logits.row(j).array() - m).exp();
    out.probs.row(j) = ex / ex.sum();
    out.argmax_tokens[j] = arg;
  }
  return out;
}

std::vector<FeatureTuple> decode(std::span<const int> tokens,
                                 const Codebook& cb) {
  std::vector<FeatureTuple> tuples;
  tuples.reserve(tokens.size());
  for (int t : tokens) tuples.push_back(cb.decode_token(t));
  return tuples;
}

Eigen::VectorXd token_frequency(const Environment& env, const Codebook& cb) {
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(cb.vocab_size());
  for (const NodeRecord& n : env.nodes())
    for (int s = 0; s < kHeadingSectors; ++s)
      for (int b = 0; b < kElevationBands; ++b)
        for (int p = 0; p < kPatchesPerView; ++p)
          counts[cb.argmax_token(env.feature(n.id, s, b, p))] += 1.0;
  return counts / counts.sum();
}

double semantic_distance(std::span<const int> a, std::span<const int> b,
                         const Codebook& cb) {
  if (a.size() != b.size())
    throw std::invalid_argument("semantic_distance: length mismatch");
  if (a.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < 0 || a[i] >= cb.vocab_size() || b[i] < 0 ||
        b[i] >= cb.vocab_size())
      throw std::invalid_argument("semantic_distance: token out of range");
    const Eigen::RowVectorXd pa = cb.prototypes().row(a[i]).normalized();
    const Eigen::RowVectorXd pb = cb.prototypes().row(b[i]).normalized();
    total += (pa - pb).norm();
  }
  return total / static_cast<double>(a.size());
}

// --- Binary format ---------------------------------------------------------

void Codebook::save(std::ostream& out) const {
  binio::write_magic(out, kCodebookMagic);
  binio::write_u8(out, kCodebookVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(vocab_size()));
  binio::write_u32(out, static_cast<std::uint32_t>(dim()));
  binio::write_u64(out, seed_);
  binio::write_f32(out, static_cast<float>(temperature_));
  for (int k = 0; k < vocab_size(); ++k)
    for (int d = 0; d < dim(); ++d)
      binio::write_f32(out, static_cast<float>(prototypes_(k, d)));
}

Codebook Codebook::load(std::istream& in) {
  binio::expect_magic(in, kCodebookMagic, "Codebook::load");
  const std::uint8_t version = binio::read_u8(in);
  if (version != kCodebookVersion)
    throw IoError("Codebook::load: unsupported version");
  const std::uint32_t vocab = binio::read_u32(in);
  const std::uint32_t dim = binio::read_u32(in);
  const std::uint64_t seed = binio::read_u64(in);
  const float temperature = binio::read_f32(in);
  if (vocab != kDefaultVocab || dim != kDefaultDim)
    throw IoError("Codebook::load: unexpected table shape");

  Codebook cb = Codebook::create(seed, static_cast<double>(temperature));
  // The table is regenerated from the header and must match the stored bytes
  // exactly; any drift means the file is corrupt.
  for (std::uint32_t k = 0; k < vocab; ++k)
    for (std::uint32_t d = 0; d < dim; ++d) {
      const float stored = binio::read_f32(in);
      if (stored != static_cast<float>(cb.prototypes_(k, d)))
        throw IoError("Codebook::load: prototype table mismatch");
    }
  return cb;
}

void Codebook::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("Codebook::save_file: cannot open " + path);
  save(out);
}

Codebook Codebook::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("Codebook::load_file: cannot open " + path);
  return load(in);
}

}  // namespace semnav
