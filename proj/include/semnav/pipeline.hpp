#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semnav/config.hpp"
#include "semnav/finetune.hpp"
#include "semnav/gradcheck.hpp"
#include "semnav/pretrain.hpp"

namespace semnav {

// Fully resolved run settings: configuration file defaults overlaid with
// command-line overrides.  `config_echo` preserves the canonical source text
// for the manifest.
struct RunSettings {
  std::uint64_t seed = 1;
  int grid_size = 2;
  int train_envs = 2;
  int val_envs = 1;
  std::string split = "val";  // which environment set eval reads

  ModelConfig model;
  std::string codebook = "dynamic";  // static | dynamic | none
  PretrainConfig pretrain;
  FinetuneConfig finetune;

  int eval_episodes_per_env = 4;
  int generate_views = 100;
  int generate_dump = 2;

  std::vector<std::string> variants;  // empty: the default pair
  int ablate_seeds = 3;
  int ablate_steps = 120;   // pre-training budget per ablation run
  int ablate_iters = 60;    // fine-tuning budget per ablation run

  std::string config_echo;
};

// Parse + validate a configuration into settings.  Unknown keys and
// out-of-range values raise ConfigError.
RunSettings settings_from_config(const KeyValueConfig& cfg);

// The environment set for a labeled split, generated from per-index derived
// seeds so splits never share a world.
std::vector<Environment> make_env_set(std::uint64_t seed,
                                      std::string_view label, int count,
                                      int grid_size);

// A variant name mapped onto modified settings (task subsets, codebook
// selection modes, aggregation families, the generation loss toggle).
// Unknown names raise ConfigError.
RunSettings apply_variant(RunSettings base, const std::string& name);
const std::vector<std::string>& known_variants();

// One full pre-train -> fine-tune -> unseen-split evaluation cycle at the
// settings' budgets; the workhorse behind ablation rows and directional
// experiments.
EvalResult run_variant_pipeline(const RunSettings& v);

// --- Commands ----------------------------------------------------------------
// Each writes its artifacts plus manifest.json under `out_dir` (created on
// demand) and throws ConfigError / TrainingDiverged / IoError on failure.

void cmd_worldgen(const RunSettings& s, const std::string& out_dir);
void cmd_pretrain(const RunSettings& s, const std::string& out_dir);
void cmd_finetune(const RunSettings& s, const std::string& ckpt_path,
                  const std::string& out_dir);
void cmd_eval(const RunSettings& s, const std::string& ckpt_path,
              const std::string& out_dir);
void cmd_generate(const RunSettings& s, const std::string& ckpt_path,
                  const std::string& out_dir);
// `only_variant` empty runs every configured variant.
void cmd_ablate(const RunSettings& s, const std::string& only_variant,
                const std::string& out_dir);

// --- Manifest ----------------------------------------------------------------

inline constexpr const char* kManifestSchema = "semnav-manifest/1";

// Content hash (FNV-1a over bytes) of a file, as 16 hex digits.
std::string file_hash_hex(const std::string& path);

// manifest.json: schema, command, seed, canonical config text + hash, and a
// name -> content-hash table of the run's artifacts.  No timestamps, so
// identical runs produce identical manifests.
void write_manifest(const std::string& out_dir, const std::string& command,
                    const RunSettings& s,
                    std::span<const std::string> artifact_names);

}  // namespace semnav
