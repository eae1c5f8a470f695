#include "semnav/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>

#include "semnav/semantics.hpp"

namespace semnav {

namespace {

ModelConfig narrow_config(AggMode agg) {
  ModelConfig mc;
  mc.hidden = 8;
  mc.heads = 2;
  mc.subset_size = 8;
  mc.agg = agg;
  return mc;
}

// Patch index the sampled-mode probe conditions on; the patch-position check
// below must sample within this row, since it is the only one the loss reads.
constexpr int kProbePatch = 3;

Conditioning fixed_conditioning(AggMode agg) {
  Conditioning cond;
  cond.mode = agg;
  switch (agg) {
    case AggMode::kMean:
      break;
    case AggMode::kSample:
      cond.patch_index = kProbePatch;
      break;
    case AggMode::kWeighted: {
      // A fixed, deliberately non-uniform weight vector.
      Eigen::VectorXd w(kPatchesPerView);
      for (int j = 0; j < kPatchesPerView; ++j) w[j] = 1.0 + j;
      cond.weights = w / w.sum();
      break;
    }
  }
  return cond;
}

// Composite objective touching every parameter family: encode with masked
// history and panorama slots, candidate scoring, the three generation heads
// under the model's conditioning, and the word, pairing, and value heads.
double forward_loss(Model& model, const EncodeInput& input,
                    const Eigen::VectorXd& gen_target, int word_target,
                    Tape* graph_tape = nullptr, TensorRef* out = nullptr) {
  Tape local;
  Tape& tape = graph_tape != nullptr ? *graph_tape : local;

  EncodedState st = model.encode(tape, input);
  const Conditioning cond = fixed_conditioning(model.config().agg);

  TensorRef loss = mean_all(tape, st.candidate_scores);
  loss = add(tape, loss,
             kl_divergence_loss(
                 tape,
                 model.head_logits(tape, GenHead::kTrajGen,
                                   slice_rows(tape, st.history, 0, 1), cond),
                 gen_target));
  loss = add(tape, loss,
             kl_divergence_loss(
                 tape,
                 model.head_logits(tape, GenHead::kViewGen,
                                   slice_rows(tape, st.pano, 5, 1), cond),
                 gen_target));
  loss = add(tape, loss,
             kl_divergence_loss(
                 tape,
                 model.head_logits(tape, GenHead::kActionGen, st.cls, cond),
                 gen_target));
  loss = add(tape, loss, model.value_estimate(tape, st.cls));
  loss = add(tape, loss, model.match_score(tape, st.cls, st.history));
  loss = add(tape, loss,
             cross_entropy_loss(
                 tape,
                 model.word_logits(tape, slice_rows(tape, st.lang, 1, 1)),
                 word_target));

  if (out != nullptr) *out = loss;
  return tape.value(loss)(0, 0);
}

struct Probe {
  Environment env = Environment::generate(2, 4);
  Codebook cb;
  EncodeInput input;
  Eigen::VectorXd gen_target;
  int word_target = 0;

  explicit Probe(std::uint64_t seed, const Codebook& codebook)
      : cb(codebook) {
    const Episode ep = sample_episode(env, derive_seed(seed, "probe"));
    input = teacher_inputs(ep, 2, /*include_pano=*/true, cb);
    input.masks.history_steps = {1};
    input.masks.pano_views = {0, 7};
    input.masks.instruction_positions = {0};

    std::vector<int> subset(8);
    for (int i = 0; i < 8; ++i) subset[i] = i;
    gen_target =
        mean_patch_prob(tokenize(teacher_target_view(ep, 2), cb), subset)
            .probs;
    word_target = ep.instruction.front();
  }
};

// Evenly spread sample positions over a tensor's elements.
std::vector<int> sample_positions(int size, int samples) {
  std::vector<int> out;
  const int n = std::min(size, samples);
  for (int k = 0; k < n; ++k) {
    out.push_back(static_cast<int>(
        static_cast<long long>(k) * size / n));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Central finite difference at one linear element, against the analytic
// gradient already stored in `t.grad`.
double relative_error_at(Model& model, const Probe& probe, ParamTensor& t,
                         int pos, double fd_step) {
  const double analytic = t.grad(pos);
  const double saved = t.value(pos);
  t.value(pos) = saved + fd_step;
  const double up =
      forward_loss(model, probe.input, probe.gen_target, probe.word_target);
  t.value(pos) = saved - fd_step;
  const double down =
      forward_loss(model, probe.input, probe.gen_target, probe.word_target);
  t.value(pos) = saved;
  const double fd = (up - down) / (2.0 * fd_step);
  return std::abs(fd - analytic) /
         std::max(1e-6, std::abs(fd) + std::abs(analytic));
}

void backward_once(Model& model, const Probe& probe,
                   const std::function<void(ParameterStore&)>& corrupt) {
  Tape tape;
  TensorRef loss;
  forward_loss(model, probe.input, probe.gen_target, probe.word_target, &tape,
               &loss);
  model.params().zero_grads();
  tape.backward(loss);
  if (corrupt) corrupt(model.params());
}

std::map<std::string, GradCheckEntry> check_model(
    Model& model, const Probe& probe, int samples_per_tensor, double fd_step,
    const std::function<void(ParameterStore&)>& corrupt) {
  backward_once(model, probe, corrupt);

  std::map<std::string, GradCheckEntry> entries;
  for (const std::string& name : model.params().names()) {
    ParamTensor& t = model.params().tensor(name);
    GradCheckEntry entry;
    entry.name = name;
    for (int pos : sample_positions(static_cast<int>(t.value.size()),
                                    samples_per_tensor)) {
      entry.max_rel_err = std::max(
          entry.max_rel_err, relative_error_at(model, probe, t, pos, fd_step));
      ++entry.samples;
    }
    entries.emplace(name, std::move(entry));
  }
  return entries;
}

}  // namespace

GradCheckReport run_gradcheck(
    std::uint64_t seed, int samples_per_tensor, double fd_step,
    const std::function<void(ParameterStore&)>& corrupt) {
  const Codebook cb = Codebook::create(derive_seed(seed, "probe-tokens"));
  const Probe probe(seed, cb);

  Model weighted(narrow_config(AggMode::kWeighted),
                 derive_seed(seed, "weighted-model"));
  std::map<std::string, GradCheckEntry> entries =
      check_model(weighted, probe, samples_per_tensor, fd_step, corrupt);

  // The weighted model never reads the patch-position table; a sampled-patch
  // model supplies that one entry, sampled along the row the probe's fixed
  // patch actually feeds into the loss.
  Model sampled(narrow_config(AggMode::kSample),
                derive_seed(seed, "sampled-model"));
  backward_once(sampled, probe, nullptr);
  {
    ParamTensor& t = sampled.params().tensor("embed/patch_pos");
    const int rows = static_cast<int>(t.value.rows());
    GradCheckEntry entry;
    entry.name = "embed/patch_pos";
    for (int col : sample_positions(static_cast<int>(t.value.cols()),
                                    samples_per_tensor)) {
      const int pos = kProbePatch + rows * col;  // column-major storage
      entry.max_rel_err = std::max(
          entry.max_rel_err,
          relative_error_at(sampled, probe, t, pos, fd_step));
      ++entry.samples;
    }
    entries["embed/patch_pos"] = entry;
  }

  GradCheckReport report;
  for (auto& [name, entry] : entries) {
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

void print_gradcheck(std::ostream& out, const GradCheckReport& report,
                     double tol) {
  for (const GradCheckEntry& e : report.entries) {
    out << e.name << "  max_rel_err=" << e.max_rel_err
        << "  samples=" << e.samples << "\n";
  }
  out << "overall max_rel_err=" << report.max_rel_err << "  tolerance=" << tol
      << "  " << (report.pass(tol) ? "PASS" : "FAIL") << "\n";
}

}  // namespace semnav
