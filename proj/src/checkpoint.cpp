#include "semnav/checkpoint.hpp"

#include <fstream>
#include <stdexcept>
#include <vector>

#include "semnav/binio.hpp"
#include "semnav/errors.hpp"

namespace semnav {

namespace {

constexpr char kMagic[4] = {'S', 'N', 'M', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;

void write_tensor(std::ostream& out, const std::string& name,
                  const Eigen::MatrixXd& value, std::uint8_t dtype) {
  if (name.empty() || name.size() > 0xFFFF) {
    throw IoError("tensor name length out of range");
  }
  binio::write_u8(out, dtype);
  binio::write_u16(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  binio::write_u32(out, static_cast<std::uint32_t>(value.rows()));
  binio::write_u32(out, static_cast<std::uint32_t>(value.cols()));
  for (Eigen::Index r = 0; r < value.rows(); ++r) {
    for (Eigen::Index c = 0; c < value.cols(); ++c) {
      if (dtype == kDtypeF32) {
        binio::write_f32(out, static_cast<float>(value(r, c)));
      } else {
        binio::write_f64(out, value(r, c));
      }
    }
  }
}

}  // namespace

void save_checkpoint(std::ostream& out, const Checkpoint& ck) {
  for (const auto& [name, v] : ck.extra) {
    if (ck.model.count(name) > 0) {
      throw std::invalid_argument("tensor name in both sections: " + name);
    }
  }
  binio::write_magic(out, kMagic);
  binio::write_u32(out, kVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(ck.model.size() +
                                                   ck.extra.size()));
  // Merge the two sorted maps so the file order is sorted by name overall.
  auto mi = ck.model.begin();
  auto ei = ck.extra.begin();
  while (mi != ck.model.end() || ei != ck.extra.end()) {
    const bool take_model =
        ei == ck.extra.end() ||
        (mi != ck.model.end() && mi->first < ei->first);
    if (take_model) {
      write_tensor(out, mi->first, mi->second, kDtypeF32);
      ++mi;
    } else {
      write_tensor(out, ei->first, ei->second, kDtypeF64);
      ++ei;
    }
  }
  if (!out) throw IoError("failed to write checkpoint stream");
}

Checkpoint load_checkpoint(std::istream& in) {
  binio::expect_magic(in, kMagic, "checkpoint");
  const std::uint32_t version = binio::read_u32(in);
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version");
  }
  const std::uint32_t count = binio::read_u32(in);
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t dtype = binio::read_u8(in);
    if (dtype != kDtypeF32 && dtype != kDtypeF64) {
      throw IoError("unknown tensor dtype in checkpoint");
    }
    const std::uint16_t name_len = binio::read_u16(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError("truncated tensor name in checkpoint");
    const std::uint32_t rows = binio::read_u32(in);
    const std::uint32_t cols = binio::read_u32(in);
    Eigen::MatrixXd value(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) {
        value(r, c) = dtype == kDtypeF32
                          ? static_cast<double>(binio::read_f32(in))
                          : binio::read_f64(in);
      }
    }
    auto& section = dtype == kDtypeF32 ? ck.model : ck.extra;
    if (!section.emplace(name, std::move(value)).second) {
      throw IoError("duplicate tensor name in checkpoint: " + name);
    }
  }
  return ck;
}

void save_checkpoint_file(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  save_checkpoint(out, ck);
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint for reading: " + path);
  return load_checkpoint(in);
}

// --- Model bundling --------------------------------------------------------

namespace {

Eigen::MatrixXd config_vector(const ModelConfig& c) {
  Eigen::MatrixXd v(1, 12);
  v << c.hidden, c.heads, c.ff_mult, c.lang_layers, c.pano_layers,
      c.temporal_layers, c.cross_layers, c.subset_size,
      static_cast<double>(static_cast<int>(c.agg)),
      c.block_weights ? 1.0 : 0.0, c.cross_attention ? 1.0 : 0.0, c.ln_eps;
  return v;
}

const Eigen::MatrixXd& extra_tensor(const Checkpoint& ck,
                                    const std::string& name) {
  auto it = ck.extra.find(name);
  if (it == ck.extra.end()) {
    throw IoError("checkpoint is missing tensor: " + name);
  }
  return it->second;
}

}  // namespace

Checkpoint make_checkpoint(const Model& model, std::uint64_t tokenizer_seed,
                           const CodebookState* cb_state) {
  Checkpoint ck;
  for (const auto& [name, t] : model.params().all()) {
    ck.model.emplace(name, t.value);
  }
  ck.extra.emplace("meta/config", config_vector(model.config()));
  Eigen::MatrixXd seed(1, 2);
  seed << static_cast<double>(tokenizer_seed >> 32),
      static_cast<double>(tokenizer_seed & 0xFFFFFFFFull);
  ck.extra.emplace("meta/tokenizer_seed", seed);
  if (cb_state != nullptr) {
    Eigen::MatrixXd meta(1, 4);
    meta << (cb_state->is_dynamic() ? 1.0 : 0.0), cb_state->lambda(),
        cb_state->gamma(), static_cast<double>(cb_state->subset_size());
    ck.extra.emplace("codebook/meta", meta);
    ck.extra.emplace("codebook/s_f",
                     cb_state->frequency_score().transpose());
    ck.extra.emplace("codebook/s_d",
                     cb_state->difficulty_score().transpose());
    ck.extra.emplace("codebook/s_t", cb_state->running_score().transpose());
  }
  return ck;
}

ModelConfig config_from_checkpoint(const Checkpoint& ck) {
  const Eigen::MatrixXd& v = extra_tensor(ck, "meta/config");
  if (v.rows() != 1 || v.cols() != 12) {
    throw IoError("stored model configuration has wrong shape");
  }
  ModelConfig c;
  c.hidden = static_cast<int>(v(0, 0));
  c.heads = static_cast<int>(v(0, 1));
  c.ff_mult = static_cast<int>(v(0, 2));
  c.lang_layers = static_cast<int>(v(0, 3));
  c.pano_layers = static_cast<int>(v(0, 4));
  c.temporal_layers = static_cast<int>(v(0, 5));
  c.cross_layers = static_cast<int>(v(0, 6));
  c.subset_size = static_cast<int>(v(0, 7));
  c.agg = static_cast<AggMode>(static_cast<int>(v(0, 8)));
  c.block_weights = v(0, 9) != 0.0;
  c.cross_attention = v(0, 10) != 0.0;
  c.ln_eps = v(0, 11);
  return c;
}

std::uint64_t tokenizer_seed_from_checkpoint(const Checkpoint& ck) {
  const Eigen::MatrixXd& v = extra_tensor(ck, "meta/tokenizer_seed");
  if (v.rows() != 1 || v.cols() != 2) {
    throw IoError("stored tokenizer seed has wrong shape");
  }
  return (static_cast<std::uint64_t>(v(0, 0)) << 32) |
         static_cast<std::uint64_t>(v(0, 1));
}

bool has_codebook_state(const Checkpoint& ck) {
  return ck.extra.count("codebook/meta") > 0;
}

CodebookState codebook_state_from_checkpoint(const Checkpoint& ck) {
  const Eigen::MatrixXd& meta = extra_tensor(ck, "codebook/meta");
  if (meta.rows() != 1 || meta.cols() != 4) {
    throw IoError("stored codebook state has wrong shape");
  }
  auto column = [&](const std::string& name) -> Eigen::VectorXd {
    const Eigen::MatrixXd& v = extra_tensor(ck, name);
    if (v.rows() != 1) throw IoError("stored score has wrong shape: " + name);
    return v.row(0).transpose();
  };
  return CodebookState::from_parts(
      meta(0, 0) != 0.0, meta(0, 1), meta(0, 2), static_cast<int>(meta(0, 3)),
      column("codebook/s_f"), column("codebook/s_d"), column("codebook/s_t"));
}

void restore_model(Model& model, const Checkpoint& ck) {
  ParameterStore& params = model.params();
  for (auto& [name, t] : params.all()) {
    auto it = ck.model.find(name);
    if (it == ck.model.end()) {
      throw IoError("checkpoint is missing model tensor: " + name);
    }
    if (it->second.rows() != t.value.rows() ||
        it->second.cols() != t.value.cols()) {
      throw IoError("checkpoint tensor has wrong shape: " + name);
    }
    t.value = it->second;
    t.grad.setZero();
    t.m.setZero();
    t.v.setZero();
  }
  for (const auto& [name, v] : ck.model) {
    if (!params.has(name)) {
      throw IoError("checkpoint has unknown model tensor: " + name);
    }
  }
}

}  // namespace semnav
