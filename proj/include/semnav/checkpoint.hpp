#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

#include <Eigen/Dense>

#include "semnav/codebook.hpp"
#include "semnav/model.hpp"

namespace semnav {

// Named-tensor checkpoint.  Model weights are stored as 32-bit floats;
// bookkeeping tensors (configuration, codebook scores, seeds) keep full
// 64-bit precision.  Tensors are written sorted by name, so identical
// contents produce identical bytes.
struct Checkpoint {
  std::map<std::string, Eigen::MatrixXd> model;  // stored as f32
  std::map<std::string, Eigen::MatrixXd> extra;  // stored as f64
};

void save_checkpoint(std::ostream& out, const Checkpoint& ck);
Checkpoint load_checkpoint(std::istream& in);
void save_checkpoint_file(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint_file(const std::string& path);

// Bundle a model (plus optional codebook-selection state) for storage.
Checkpoint make_checkpoint(const Model& model, std::uint64_t tokenizer_seed,
                           const CodebookState* cb_state = nullptr);

// Rebuild the model configuration stored in a checkpoint.
ModelConfig config_from_checkpoint(const Checkpoint& ck);
std::uint64_t tokenizer_seed_from_checkpoint(const Checkpoint& ck);
bool has_codebook_state(const Checkpoint& ck);
CodebookState codebook_state_from_checkpoint(const Checkpoint& ck);

// Copy stored weights into an existing model (shapes must agree).
void restore_model(Model& model, const Checkpoint& ck);

}  // namespace semnav
