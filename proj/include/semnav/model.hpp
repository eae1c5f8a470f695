#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "semnav/autodiff.hpp"
#include "semnav/semantics.hpp"
#include "semnav/tokenizer.hpp"
#include "semnav/world.hpp"

namespace semnav {

// --- Parameters ------------------------------------------------------------

struct ParamTensor {
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  Eigen::MatrixXd m;  // first-moment accumulator
  Eigen::MatrixXd v;  // second-moment accumulator
};

// Named dense tensors with gradient and optimizer-moment buffers.  The map is
// ordered, so every iteration (updates, checkpoints, reports) visits tensors
// in one deterministic order.
class ParameterStore {
 public:
  Eigen::MatrixXd& create(const std::string& name, int rows, int cols);
  bool has(const std::string& name) const;
  ParamTensor& tensor(const std::string& name);
  const ParamTensor& tensor(const std::string& name) const;
  Eigen::MatrixXd& value(const std::string& name) {
    return tensor(name).value;
  }
  Eigen::MatrixXd& grad(const std::string& name) { return tensor(name).grad; }

  std::vector<std::string> names() const;
  void zero_grads();
  bool grads_finite() const;
  bool values_finite() const;
  double grad_norm(const std::string& name) const;

  std::map<std::string, ParamTensor>& all() { return tensors_; }
  const std::map<std::string, ParamTensor>& all() const { return tensors_; }

 private:
  std::map<std::string, ParamTensor> tensors_;
};

// Adaptive-moment optimizer with bias correction.  Throws TrainingDiverged
// when gradients or updated parameters stop being finite.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterStore& params, double lr);
  long steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

// --- Model -----------------------------------------------------------------

struct ModelConfig {
  int hidden = 64;
  int heads = 4;
  int ff_mult = 2;
  int lang_layers = 2;
  int pano_layers = 1;
  int temporal_layers = 2;
  int cross_layers = 2;
  int subset_size = 64;          // output width of the generation heads
  AggMode agg = AggMode::kMean;  // conditioning family the heads expect
  bool block_weights = false;    // weighted mode: block-wise weight draws
  bool cross_attention = true;   // false: segments attend only to themselves
  double ln_eps = 1e-5;
};

// Positions to replace with learned MASK embeddings before encoding.
// Instruction positions index into the instruction (the CLS slot cannot be
// masked); history steps index the history sequence; pano views index the 36
// panorama views.
struct MaskSpec {
  std::vector<int> instruction_positions;
  std::vector<int> history_steps;
  std::vector<int> pano_views;
};

// One already-taken step of navigation history: the view the agent faced when
// acting and the action's direction encoding.
struct HistoryStep {
  Eigen::VectorXd view_feat;  // view_feature() output
  Eigen::VectorXd action;     // sin/cos of heading and elevation
};

struct EncodeInput {
  std::vector<int> instruction;    // word ids (CLS is prepended internally)
  std::vector<HistoryStep> history;
  bool has_pano = false;
  Eigen::MatrixXd pano_feats;      // 36 x feature dim when has_pano
  std::vector<int> navigable;      // 36 flags (0/1) when has_pano
  std::vector<int> candidate_views;  // movement candidates' view indices
  MaskSpec masks;
};

struct EncodedState {
  TensorRef lang;              // (L+1) x d; row 0 is the CLS slot
  TensorRef cls;               // 1 x d
  TensorRef history;           // M x d (row count may be 0)
  TensorRef pano;              // 36 x d; invalid when no panorama given
  TensorRef candidate_scores;  // 1 x (K+1), STOP last; invalid without pano
  int lang_len = 0;
  int hist_len = 0;
};

enum class GenHead { kTrajGen, kViewGen, kActionGen };

// Conditioning for a generation head; must match the model's aggregation
// mode.
struct Conditioning {
  AggMode mode = AggMode::kMean;
  int patch_index = -1;       // sample mode
  Eigen::VectorXd weights;    // weighted mode, length kPatchesPerView
};

// 20-dim view feature: mean prototype embedding of the patches plus a
// sinusoidal encoding of the camera pose.
Eigen::VectorXd view_feature(const View& v, const Codebook& cb);
Eigen::VectorXd action_encoding(double heading, double elevation);

inline constexpr int kViewFeatureDim = Codebook::kDefaultDim + 4;
inline constexpr int kActionFeatureDim = 4;

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // Full hierarchical encoding pass.  Gradients flow to every parameter that
  // participated; run inside a throwaway Tape for inference.
  EncodedState encode(Tape& tape, const EncodeInput& input);

  // Generation heads: logits / distribution over the token subset from a
  // 1 x d context row plus the E_p conditioning.
  TensorRef head_logits(Tape& tape, GenHead head, TensorRef context,
                        const Conditioning& cond);
  TensorRef head_predict(Tape& tape, GenHead head, TensorRef context,
                         const Conditioning& cond);

  // Auxiliary heads.
  TensorRef word_logits(Tape& tape, TensorRef lang_rows);   // rows x 128
  TensorRef match_score(Tape& tape, TensorRef cls, TensorRef visual_rows);
  TensorRef value_estimate(Tape& tape, TensorRef cls);      // 1 x 1

  // Parameter leaf on the given tape (shared helper for loss code).
  TensorRef leaf(Tape& tape, const std::string& name);

 private:
  TensorRef transformer_block(Tape& tape, TensorRef x,
                              const std::string& prefix,
                              const Eigen::MatrixXd* attn_mask);
  TensorRef embedding_rows(Tape& tape, const std::string& table,
                           const std::vector<int>& ids);

  ModelConfig config_;
  ParameterStore params_;
};

// --- Input assembly --------------------------------------------------------

HistoryStep make_history_step(const View& faced, double action_heading,
                              double action_elevation, const Codebook& cb);

// Teacher-path inputs: history covers steps [0, history_steps); the panorama
// (when requested) is the one at step history_steps.
EncodeInput teacher_inputs(const Episode& ep, int history_steps,
                           bool include_pano, const Codebook& cb);

// History over the whole teacher trajectory (for trajectory-level tasks).
EncodeInput trajectory_inputs(const Episode& ep, const Codebook& cb);

}  // namespace semnav
