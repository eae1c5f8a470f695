#include "semnav/model.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "semnav/errors.hpp"
#include "semnav/rng.hpp"

namespace semnav {

// --- ParameterStore --------------------------------------------------------

Eigen::MatrixXd& ParameterStore::create(const std::string& name, int rows,
                                        int cols) {
  if (tensors_.count(name) > 0) {
    throw std::invalid_argument("parameter already exists: " + name);
  }
  ParamTensor& t = tensors_[name];
  t.value = Eigen::MatrixXd::Zero(rows, cols);
  t.grad = Eigen::MatrixXd::Zero(rows, cols);
  t.m = Eigen::MatrixXd::Zero(rows, cols);
  t.v = Eigen::MatrixXd::Zero(rows, cols);
  return t.value;
}

bool ParameterStore::has(const std::string& name) const {
  return tensors_.count(name) > 0;
}

ParamTensor& ParameterStore::tensor(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) {
    throw std::invalid_argument("unknown parameter: " + name);
  }
  return it->second;
}

const ParamTensor& ParameterStore::tensor(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) {
    throw std::invalid_argument("unknown parameter: " + name);
  }
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, t] : tensors_) out.push_back(name);
  return out;
}

void ParameterStore::zero_grads() {
  for (auto& [name, t] : tensors_) t.grad.setZero();
}

bool ParameterStore::grads_finite() const {
  for (const auto& [name, t] : tensors_) {
    if (!t.grad.allFinite()) return false;
  }
  return true;
}

bool ParameterStore::values_finite() const {
  for (const auto& [name, t] : tensors_) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

double ParameterStore::grad_norm(const std::string& name) const {
  return tensor(name).grad.norm();
}

// --- AdamOptimizer ---------------------------------------------------------

void AdamOptimizer::step(ParameterStore& params, double lr) {
  if (!params.grads_finite()) {
    throw TrainingDiverged("non-finite gradient before optimizer step");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params.all()) {
    p.m = beta1_ * p.m + (1.0 - beta1_) * p.grad;
    p.v = beta2_ * p.v.array() + (1.0 - beta2_) * p.grad.array().square();
    const Eigen::ArrayXXd m_hat = p.m.array() / bc1;
    const Eigen::ArrayXXd v_hat = p.v.array() / bc2;
    p.value.array() -= lr * m_hat / (v_hat.sqrt() + eps_);
  }
  if (!params.values_finite()) {
    throw TrainingDiverged("non-finite parameter after optimizer step");
  }
  params.zero_grads();
}

// --- Feature assembly ------------------------------------------------------

Eigen::VectorXd view_feature(const View& v, const Codebook& cb) {
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(cb.dim());
  for (const FeatureTuple& patch : v.patches) mean += cb.embed(patch);
  mean /= static_cast<double>(v.patches.size());
  Eigen::VectorXd out(cb.dim() + 4);
  out.head(cb.dim()) = mean.transpose();
  out(cb.dim() + 0) = std::sin(v.heading);
  out(cb.dim() + 1) = std::cos(v.heading);
  out(cb.dim() + 2) = std::sin(v.elevation);
  out(cb.dim() + 3) = std::cos(v.elevation);
  return out;
}

Eigen::VectorXd action_encoding(double heading, double elevation) {
  Eigen::VectorXd out(kActionFeatureDim);
  out << std::sin(heading), std::cos(heading), std::sin(elevation),
      std::cos(elevation);
  return out;
}

HistoryStep make_history_step(const View& faced, double action_heading,
                              double action_elevation, const Codebook& cb) {
  HistoryStep step;
  step.view_feat = view_feature(faced, cb);
  step.action = action_encoding(action_heading, action_elevation);
  return step;
}

EncodeInput teacher_inputs(const Episode& ep, int history_steps,
                           bool include_pano, const Codebook& cb) {
  const int n_steps = static_cast<int>(ep.teacher_actions.size());
  if (history_steps < 0 || history_steps > n_steps) {
    throw std::invalid_argument("history_steps out of range");
  }
  EncodeInput input;
  input.instruction = ep.instruction;
  for (int i = 0; i < history_steps; ++i) {
    const View faced = teacher_target_view(ep, i);
    input.history.push_back(
        make_history_step(faced, faced.heading, faced.elevation, cb));
  }
  if (include_pano) {
    if (history_steps >= static_cast<int>(ep.panoramas.size())) {
      throw std::invalid_argument("no panorama at requested step");
    }
    const Panorama& pano = ep.panoramas[history_steps];
    input.has_pano = true;
    input.pano_feats.resize(kViewsPerPanorama, kViewFeatureDim);
    for (int i = 0; i < kViewsPerPanorama; ++i) {
      input.pano_feats.row(i) = view_feature(pano.views[i], cb).transpose();
    }
    input.navigable.assign(kViewsPerPanorama, 0);
    const auto& cands = ep.candidates[history_steps];
    for (std::size_t k = 0; k + 1 < cands.size(); ++k) {
      const int vi =
          view_index(heading_sector(cands[k].view.heading), kEyeLevelBand);
      input.navigable[vi] = 1;
      input.candidate_views.push_back(vi);
    }
  }
  return input;
}

EncodeInput trajectory_inputs(const Episode& ep, const Codebook& cb) {
  return teacher_inputs(ep, static_cast<int>(ep.teacher_actions.size()),
                        /*include_pano=*/false, cb);
}

// --- Model construction ----------------------------------------------------

namespace {

enum class InitKind { kGauss, kZeros, kOnes };

constexpr double kInitSigma = 0.02;

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  const int d = config_.hidden;
  const int ff = d * config_.ff_mult;
  if (d % config_.heads != 0) {
    throw std::invalid_argument("hidden size not divisible by head count");
  }

  std::vector<std::pair<std::string, InitKind>> pending;
  auto make = [&](const std::string& name, int rows, int cols, InitKind kind) {
    params_.create(name, rows, cols);
    pending.emplace_back(name, kind);
  };
  auto make_ln = [&](const std::string& prefix) {
    make(prefix + "/g", 1, d, InitKind::kOnes);
    make(prefix + "/b", 1, d, InitKind::kZeros);
  };

  make("embed/word", kWordVocabSize, d, InitKind::kGauss);
  make("embed/word_pos", kMaxInstructionWords + 1, d, InitKind::kGauss);
  make("embed/type", 3, d, InitKind::kGauss);
  make("embed/step", kMaxHistorySteps, d, InitKind::kGauss);
  make("embed/view_pos", kViewsPerPanorama, d, InitKind::kGauss);
  make("embed/nav", 2, d, InitKind::kGauss);
  make("embed/patch_pos", kPatchesPerView, d, InitKind::kGauss);
  make("embed/mask_view", 1, d, InitKind::kGauss);
  make("embed/mask_step", 1, d, InitKind::kGauss);
  make("embed/stop", 1, d, InitKind::kGauss);
  make_ln("embed/ln_text");

  auto make_proj = [&](const std::string& prefix, int in_dim) {
    make(prefix + "/W", in_dim, d, InitKind::kGauss);
    make(prefix + "/b", 1, d, InitKind::kZeros);
    make_ln(prefix + "/ln");
  };
  make_proj("proj/view", kViewFeatureDim);
  make_proj("proj/hist", kViewFeatureDim + kActionFeatureDim);

  auto make_block = [&](const std::string& name) {
    const std::string p = "block/" + name;
    for (const char* part : {"q", "k", "v", "o"}) {
      make(p + "/attn/W" + part, d, d, InitKind::kGauss);
      make(p + "/attn/b" + part, 1, d, InitKind::kZeros);
    }
    make_ln(p + "/ln1");
    make(p + "/ff/W1", d, ff, InitKind::kGauss);
    make(p + "/ff/b1", 1, ff, InitKind::kZeros);
    make(p + "/ff/W2", ff, d, InitKind::kGauss);
    make(p + "/ff/b2", 1, d, InitKind::kZeros);
    make_ln(p + "/ln2");
  };
  for (int i = 0; i < config_.lang_layers; ++i) {
    make_block("lang" + std::to_string(i));
  }
  for (int i = 0; i < config_.pano_layers; ++i) {
    make_block("pano" + std::to_string(i));
  }
  for (int i = 0; i < config_.temporal_layers; ++i) {
    make_block("temp" + std::to_string(i));
  }
  for (int i = 0; i < config_.cross_layers; ++i) {
    make_block("cross" + std::to_string(i));
  }

  for (const char* head : {"traj_gen", "view_gen", "action_gen"}) {
    const std::string p = std::string("head/") + head;
    make(p + "/W1", d, d, InitKind::kGauss);
    make(p + "/b1", 1, d, InitKind::kZeros);
    make(p + "/W2", d, config_.subset_size, InitKind::kGauss);
    make(p + "/b2", 1, config_.subset_size, InitKind::kZeros);
  }
  make("cond/wenc/W1", kPatchesPerView, d, InitKind::kGauss);
  make("cond/wenc/b1", 1, d, InitKind::kZeros);
  make("cond/wenc/W2", d, d, InitKind::kGauss);
  make("cond/wenc/b2", 1, d, InitKind::kZeros);
  make("head/value/W", d, 1, InitKind::kGauss);
  make("head/value/b", 1, 1, InitKind::kZeros);
  make("head/mlm/W", d, kWordVocabSize, InitKind::kGauss);
  make("head/mlm/b", 1, kWordVocabSize, InitKind::kZeros);
  make("head/itm/W", d, 1, InitKind::kGauss);
  make("head/itm/b", 1, 1, InitKind::kZeros);

  Rng root(seed);
  for (const auto& [name, kind] : pending) {
    Eigen::MatrixXd& value = params_.value(name);
    switch (kind) {
      case InitKind::kZeros:
        break;
      case InitKind::kOnes:
        value.setOnes();
        break;
      case InitKind::kGauss: {
        Rng rng = root.derive("init/" + name, 0);
        for (Eigen::Index r = 0; r < value.rows(); ++r) {
          for (Eigen::Index c = 0; c < value.cols(); ++c) {
            value(r, c) = kInitSigma * rng.next_gaussian();
          }
        }
        break;
      }
    }
  }
}

TensorRef Model::leaf(Tape& tape, const std::string& name) {
  ParamTensor& t = params_.tensor(name);
  return tape.leaf(t.value, &t.grad);
}

// --- Encoding pipeline -----------------------------------------------------

TensorRef Model::embedding_rows(Tape& tape, const std::string& table,
                                const std::vector<int>& ids) {
  return gather_rows(tape, leaf(tape, table), ids);
}

TensorRef Model::transformer_block(Tape& tape, TensorRef x,
                                   const std::string& prefix,
                                   const Eigen::MatrixXd* attn_mask) {
  const int d = config_.hidden;
  const int dk = d / config_.heads;
  const std::string p = "block/" + prefix;

  auto linear = [&](TensorRef in, const std::string& w, const std::string& b) {
    return add_rowvec(tape, matmul(tape, in, leaf(tape, w)), leaf(tape, b));
  };

  TensorRef q = linear(x, p + "/attn/Wq", p + "/attn/bq");
  TensorRef k = linear(x, p + "/attn/Wk", p + "/attn/bk");
  TensorRef v = linear(x, p + "/attn/Wv", p + "/attn/bv");

  std::vector<TensorRef> head_outs;
  head_outs.reserve(config_.heads);
  for (int h = 0; h < config_.heads; ++h) {
    TensorRef qh = slice_cols(tape, q, h * dk, dk);
    TensorRef kh = slice_cols(tape, k, h * dk, dk);
    TensorRef vh = slice_cols(tape, v, h * dk, dk);
    TensorRef scores =
        scale(tape, matmul_nt(tape, qh, kh), 1.0 / std::sqrt(double(dk)));
    if (attn_mask != nullptr) {
      scores = add(tape, scores, tape.constant(*attn_mask));
    }
    TensorRef probs = softmax_rows(tape, scores);
    head_outs.push_back(matmul(tape, probs, vh));
  }
  TensorRef attn_out = concat_cols(tape, head_outs);
  attn_out = linear(attn_out, p + "/attn/Wo", p + "/attn/bo");

  TensorRef res1 = add(tape, x, attn_out);
  TensorRef norm1 = layer_norm_rows(tape, res1, leaf(tape, p + "/ln1/g"),
                                    leaf(tape, p + "/ln1/b"), config_.ln_eps);

  TensorRef ff = gelu(tape, linear(norm1, p + "/ff/W1", p + "/ff/b1"));
  ff = linear(ff, p + "/ff/W2", p + "/ff/b2");
  TensorRef res2 = add(tape, norm1, ff);
  return layer_norm_rows(tape, res2, leaf(tape, p + "/ln2/g"),
                         leaf(tape, p + "/ln2/b"), config_.ln_eps);
}

EncodedState Model::encode(Tape& tape, const EncodeInput& input) {
  const int d = config_.hidden;
  const int n_words = static_cast<int>(input.instruction.size());
  if (n_words > kMaxInstructionWords) {
    throw std::invalid_argument("instruction exceeds maximum length");
  }
  const int hist_len = static_cast<int>(input.history.size());
  if (hist_len > kMaxHistorySteps) {
    throw std::invalid_argument("history exceeds maximum length");
  }

  // Language segment: CLS + words, masked word ids swapped before lookup.
  std::vector<int> ids;
  ids.reserve(n_words + 1);
  ids.push_back(kClsWordId);
  for (int w : input.instruction) {
    if (w < 0 || w >= kWordVocabSize) {
      throw std::invalid_argument("word id out of range");
    }
    ids.push_back(w);
  }
  for (int p : input.masks.instruction_positions) {
    if (p < 0 || p >= n_words) {
      throw std::invalid_argument("masked instruction position out of range");
    }
    ids[p + 1] = kMaskWordId;
  }
  const int lang_len = n_words + 1;
  std::vector<int> pos_ids(lang_len);
  for (int i = 0; i < lang_len; ++i) pos_ids[i] = i;
  std::vector<int> type0(lang_len, 0);
  TensorRef lang = add(tape, embedding_rows(tape, "embed/word", ids),
                       embedding_rows(tape, "embed/word_pos", pos_ids));
  lang = add(tape, lang, embedding_rows(tape, "embed/type", type0));
  lang = layer_norm_rows(tape, lang, leaf(tape, "embed/ln_text/g"),
                         leaf(tape, "embed/ln_text/b"), config_.ln_eps);
  for (int i = 0; i < config_.lang_layers; ++i) {
    lang = transformer_block(tape, lang, "lang" + std::to_string(i), nullptr);
  }

  // History segment.
  TensorRef hist;
  if (hist_len > 0) {
    Eigen::MatrixXd raw(hist_len, kViewFeatureDim + kActionFeatureDim);
    for (int i = 0; i < hist_len; ++i) {
      const HistoryStep& s = input.history[i];
      if (s.view_feat.size() != kViewFeatureDim ||
          s.action.size() != kActionFeatureDim) {
        throw std::invalid_argument("history step has wrong feature size");
      }
      raw.row(i) << s.view_feat.transpose(), s.action.transpose();
    }
    hist = add_rowvec(tape,
                      matmul(tape, tape.constant(raw), leaf(tape, "proj/hist/W")),
                      leaf(tape, "proj/hist/b"));
    // Masking swaps out the step's content before the positional terms are
    // added, so masked steps stay distinguishable by position.
    if (!input.masks.history_steps.empty()) {
      for (int s : input.masks.history_steps) {
        if (s < 0 || s >= hist_len) {
          throw std::invalid_argument("masked history step out of range");
        }
      }
      hist = replace_rows(tape, hist, input.masks.history_steps,
                          leaf(tape, "embed/mask_step"));
    }
    std::vector<int> steps(hist_len), type1(hist_len, 1);
    for (int i = 0; i < hist_len; ++i) steps[i] = i;
    hist = add(tape, hist, embedding_rows(tape, "embed/step", steps));
    hist = add(tape, hist, embedding_rows(tape, "embed/type", type1));
    hist = layer_norm_rows(tape, hist, leaf(tape, "proj/hist/ln/g"),
                           leaf(tape, "proj/hist/ln/b"), config_.ln_eps);
  }

  // Panorama segment.
  TensorRef pano;
  if (input.has_pano) {
    if (input.pano_feats.rows() != kViewsPerPanorama ||
        input.pano_feats.cols() != kViewFeatureDim) {
      throw std::invalid_argument("panorama feature matrix has wrong shape");
    }
    if (static_cast<int>(input.navigable.size()) != kViewsPerPanorama) {
      throw std::invalid_argument("navigable flags must cover every view");
    }
    pano = add_rowvec(
        tape,
        matmul(tape, tape.constant(input.pano_feats), leaf(tape, "proj/view/W")),
        leaf(tape, "proj/view/b"));
    // As with history masking: swap the view's content first, keep the
    // positional, navigability, and segment terms.
    if (!input.masks.pano_views.empty()) {
      for (int s : input.masks.pano_views) {
        if (s < 0 || s >= kViewsPerPanorama) {
          throw std::invalid_argument("masked view index out of range");
        }
      }
      pano = replace_rows(tape, pano, input.masks.pano_views,
                          leaf(tape, "embed/mask_view"));
    }
    std::vector<int> views(kViewsPerPanorama), type2(kViewsPerPanorama, 2);
    for (int i = 0; i < kViewsPerPanorama; ++i) views[i] = i;
    pano = add(tape, pano, embedding_rows(tape, "embed/view_pos", views));
    pano = add(tape, pano, embedding_rows(tape, "embed/nav", input.navigable));
    pano = add(tape, pano, embedding_rows(tape, "embed/type", type2));
    pano = layer_norm_rows(tape, pano, leaf(tape, "proj/view/ln/g"),
                           leaf(tape, "proj/view/ln/b"), config_.ln_eps);
    for (int i = 0; i < config_.pano_layers; ++i) {
      pano = transformer_block(tape, pano, "pano" + std::to_string(i), nullptr);
    }
  } else if (!input.masks.pano_views.empty()) {
    throw std::invalid_argument("panorama mask without panorama");
  }

  // Temporal stage over [history; panorama].
  {
    std::vector<TensorRef> parts;
    std::vector<int> sizes;
    if (hist.valid()) {
      parts.push_back(hist);
      sizes.push_back(hist_len);
    }
    if (pano.valid()) {
      parts.push_back(pano);
      sizes.push_back(kViewsPerPanorama);
    }
    if (!parts.empty()) {
      TensorRef seq =
          parts.size() == 1 ? parts[0] : concat_rows(tape, parts);
      for (int i = 0; i < config_.temporal_layers; ++i) {
        seq = transformer_block(tape, seq, "temp" + std::to_string(i), nullptr);
      }
      int offset = 0;
      std::size_t part_idx = 0;
      if (hist.valid()) {
        hist = parts.size() == 1 ? seq
                                 : slice_rows(tape, seq, offset, sizes[part_idx]);
        offset += hist_len;
        ++part_idx;
      }
      if (pano.valid()) {
        pano = parts.size() == 1
                   ? seq
                   : slice_rows(tape, seq, offset, kViewsPerPanorama);
      }
    }
  }

  // Cross-modal stage over [language; history; panorama].
  {
    std::vector<TensorRef> parts = {lang};
    std::vector<int> sizes = {lang_len};
    if (hist.valid()) {
      parts.push_back(hist);
      sizes.push_back(hist_len);
    }
    if (pano.valid()) {
      parts.push_back(pano);
      sizes.push_back(kViewsPerPanorama);
    }
    TensorRef seq = parts.size() == 1 ? parts[0] : concat_rows(tape, parts);
    Eigen::MatrixXd mask;
    const Eigen::MatrixXd* mask_ptr = nullptr;
    if (!config_.cross_attention && parts.size() > 1) {
      int total = 0;
      for (int s : sizes) total += s;
      mask = Eigen::MatrixXd::Constant(total, total, -1e9);
      int start = 0;
      for (int s : sizes) {
        mask.block(start, start, s, s).setZero();
        start += s;
      }
      mask_ptr = &mask;
    }
    for (int i = 0; i < config_.cross_layers; ++i) {
      seq = transformer_block(tape, seq, "cross" + std::to_string(i), mask_ptr);
    }
    lang = parts.size() == 1 ? seq : slice_rows(tape, seq, 0, lang_len);
    int offset = lang_len;
    if (hist.valid()) {
      hist = slice_rows(tape, seq, offset, hist_len);
      offset += hist_len;
    }
    if (pano.valid()) {
      pano = slice_rows(tape, seq, offset, kViewsPerPanorama);
    }
  }

  EncodedState state;
  state.lang = lang;
  state.cls = slice_rows(tape, lang, 0, 1);
  state.lang_len = lang_len;
  state.hist_len = hist_len;
  if (hist.valid()) state.history = hist;
  if (pano.valid()) {
    state.pano = pano;
    // Candidate action scores: contextualized candidate views plus a learned
    // STOP encoding, scored against the CLS summary.
    std::vector<TensorRef> cand_parts;
    if (!input.candidate_views.empty()) {
      for (int vi : input.candidate_views) {
        if (vi < 0 || vi >= kViewsPerPanorama) {
          throw std::invalid_argument("candidate view index out of range");
        }
      }
      cand_parts.push_back(gather_rows(tape, pano, input.candidate_views));
    }
    cand_parts.push_back(leaf(tape, "embed/stop"));
    TensorRef cands =
        cand_parts.size() == 1 ? cand_parts[0] : concat_rows(tape, cand_parts);
    state.candidate_scores = scale(tape, matmul_nt(tape, state.cls, cands),
                                   1.0 / std::sqrt(double(d)));
  }
  return state;
}

// --- Heads -----------------------------------------------------------------

TensorRef Model::head_logits(Tape& tape, GenHead head, TensorRef context,
                             const Conditioning& cond) {
  if (cond.mode != config_.agg) {
    throw std::invalid_argument(
        "conditioning mode does not match the model's aggregation mode");
  }
  if (tape.value(context).rows() != 1 ||
      tape.value(context).cols() != config_.hidden) {
    throw std::invalid_argument("head context must be a single hidden row");
  }

  TensorRef base = context;
  switch (cond.mode) {
    case AggMode::kMean:
      break;  // conditioning adds exactly zero
    case AggMode::kSample: {
      if (cond.patch_index < 0 || cond.patch_index >= kPatchesPerView) {
        throw std::invalid_argument("conditioning patch index out of range");
      }
      TensorRef row = gather_rows(tape, leaf(tape, "embed/patch_pos"),
                                  {cond.patch_index});
      base = add(tape, context, row);
      break;
    }
    case AggMode::kWeighted: {
      if (cond.weights.size() != kPatchesPerView) {
        throw std::invalid_argument("conditioning weights have wrong length");
      }
      TensorRef w = tape.constant(cond.weights.transpose());
      TensorRef h = gelu(
          tape, add_rowvec(tape, matmul(tape, w, leaf(tape, "cond/wenc/W1")),
                           leaf(tape, "cond/wenc/b1")));
      TensorRef e = add_rowvec(tape, matmul(tape, h, leaf(tape, "cond/wenc/W2")),
                               leaf(tape, "cond/wenc/b2"));
      base = add(tape, context, e);
      break;
    }
  }

  std::string p;
  switch (head) {
    case GenHead::kTrajGen:
      p = "head/traj_gen";
      break;
    case GenHead::kViewGen:
      p = "head/view_gen";
      break;
    case GenHead::kActionGen:
      p = "head/action_gen";
      break;
  }
  TensorRef h = gelu(tape,
                     add_rowvec(tape, matmul(tape, base, leaf(tape, p + "/W1")),
                                leaf(tape, p + "/b1")));
  return add_rowvec(tape, matmul(tape, h, leaf(tape, p + "/W2")),
                    leaf(tape, p + "/b2"));
}

TensorRef Model::head_predict(Tape& tape, GenHead head, TensorRef context,
                              const Conditioning& cond) {
  return softmax_rows(tape, head_logits(tape, head, context, cond));
}

TensorRef Model::word_logits(Tape& tape, TensorRef lang_rows) {
  return add_rowvec(tape,
                    matmul(tape, lang_rows, leaf(tape, "head/mlm/W")),
                    leaf(tape, "head/mlm/b"));
}

TensorRef Model::match_score(Tape& tape, TensorRef cls, TensorRef visual_rows) {
  const Eigen::Index n = tape.value(visual_rows).rows();
  Eigen::MatrixXd avg = Eigen::MatrixXd::Constant(1, n, 1.0 / double(n));
  TensorRef pooled = matmul(tape, tape.constant(avg), visual_rows);
  TensorRef h = hadamard(tape, cls, pooled);
  return add_rowvec(tape, matmul(tape, h, leaf(tape, "head/itm/W")),
                    leaf(tape, "head/itm/b"));
}

TensorRef Model::value_estimate(Tape& tape, TensorRef cls) {
  return add_rowvec(tape, matmul(tape, cls, leaf(tape, "head/value/W")),
                    leaf(tape, "head/value/b"));
}

}  // namespace semnav
