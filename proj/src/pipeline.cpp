#include "semnav/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "semnav/checkpoint.hpp"
#include "semnav/errors.hpp"
#include "semnav/generate.hpp"

namespace semnav {

namespace {

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) {
    throw IoError("cannot create output directory '" + path +
                  "': " + ec.message());
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write '" + path + "'");
  }
  return out;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

void check_range(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

double ratio_key(const KeyValueConfig& cfg, const std::string& key,
                 double fallback) {
  const double v = cfg.get_real(key, fallback);
  check_range(v > 0.0 && v <= 1.0, "key '" + key + "' must be in (0, 1]");
  return v;
}

// Model + tokenizer + selection state reloaded from a checkpoint.
struct Bundle {
  Model model;
  Codebook cb;
  CodebookState state;
};

Bundle load_bundle(const std::string& ckpt_path) {
  const Checkpoint ck = load_checkpoint_file(ckpt_path);
  Model model(config_from_checkpoint(ck), 0);
  restore_model(model, ck);
  Codebook cb = Codebook::create(tokenizer_seed_from_checkpoint(ck));
  if (!has_codebook_state(ck)) {
    throw IoError("checkpoint '" + ckpt_path +
                  "' carries no token-selection state");
  }
  return Bundle{std::move(model), std::move(cb),
                codebook_state_from_checkpoint(ck)};
}

PretrainConfig pretrain_config_for(const RunSettings& s) {
  PretrainConfig cfg = s.pretrain;
  cfg.dynamic_codebook = s.codebook == "dynamic";
  cfg.uniform_frequency_init = s.codebook == "none";
  return cfg;
}

}  // namespace

RunSettings settings_from_config(const KeyValueConfig& cfg) {
  static const std::vector<std::string> known = {
      "seed",           "grid_size",
      "train_envs",     "val_envs",
      "split",          "aggregation",
      "block_weights",  "cross_attention",
      "subset_size",    "codebook",
      "tasks",          "steps",
      "batch_size",     "pretrain_lr",
      "traj_mask_ratio", "view_mask_ratio",
      "word_mask_ratio", "score_blend",
      "difficulty_weight", "divergence_threshold",
      "iterations",     "episodes_per_iter",
      "finetune_lr",    "use_lat",
      "lat_weight",     "il_rl_ratio",
      "eval_every",     "eval_episodes_per_env",
      "generate_views", "generate_dump",
      "variants",       "ablate_seeds",
      "ablate_steps",   "ablate_iters"};
  cfg.require_known_keys(known);

  RunSettings s;
  const long long seed = cfg.get_int("seed", 1);
  check_range(seed >= 0, "key 'seed' must be nonnegative");
  s.seed = static_cast<std::uint64_t>(seed);

  s.grid_size = static_cast<int>(cfg.get_int("grid_size", 4));
  check_range(s.grid_size >= 4 && s.grid_size <= 8,
              "key 'grid_size' must be in [4, 8]");
  s.train_envs = static_cast<int>(cfg.get_int("train_envs", 2));
  check_range(s.train_envs >= 2, "key 'train_envs' must be at least 2");
  s.val_envs = static_cast<int>(cfg.get_int("val_envs", 1));
  check_range(s.val_envs >= 1, "key 'val_envs' must be at least 1");
  s.split = cfg.get_string("split", "val");
  check_range(s.split == "val" || s.split == "train",
              "key 'split' must be 'train' or 'val'");

  try {
    s.model.agg = agg_mode_from_name(cfg.get_string("aggregation", "mean"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("key 'aggregation': ") + e.what());
  }
  s.model.block_weights = cfg.get_bool("block_weights", false);
  s.model.cross_attention = cfg.get_bool("cross_attention", true);
  s.model.subset_size = static_cast<int>(cfg.get_int("subset_size", 64));
  check_range(s.model.subset_size >= 1 &&
                  s.model.subset_size <= kFeatureTupleCount,
              "key 'subset_size' must be in [1, 256]");

  s.codebook = cfg.get_string("codebook", "dynamic");
  check_range(s.codebook == "static" || s.codebook == "dynamic" ||
                  s.codebook == "none",
              "key 'codebook' must be 'static', 'dynamic', or 'none'");

  for (const std::string& name : cfg.get_list("tasks")) {
    try {
      s.pretrain.tasks.push_back(pretrain_task_from_name(name));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("key 'tasks': ") + e.what());
    }
  }
  s.pretrain.steps = static_cast<int>(cfg.get_int("steps", 500));
  s.pretrain.batch_size = static_cast<int>(cfg.get_int("batch_size", 4));
  s.pretrain.lr = cfg.get_real("pretrain_lr", 1e-3);
  check_range(s.pretrain.steps > 0 && s.pretrain.batch_size > 0 &&
                  s.pretrain.lr > 0.0,
              "'steps', 'batch_size', and 'pretrain_lr' must be positive");
  s.pretrain.traj_mask_ratio = ratio_key(cfg, "traj_mask_ratio", 0.5);
  s.pretrain.view_mask_ratio = ratio_key(cfg, "view_mask_ratio", 0.3);
  s.pretrain.word_mask_ratio = ratio_key(cfg, "word_mask_ratio", 0.15);
  s.pretrain.score_blend = cfg.get_real("score_blend", 0.5);
  check_range(s.pretrain.score_blend >= 0.0 && s.pretrain.score_blend <= 1.0,
              "key 'score_blend' must be in [0, 1]");
  s.pretrain.difficulty_weight = cfg.get_real("difficulty_weight", 1.0);
  check_range(s.pretrain.difficulty_weight >= 0.0,
              "key 'difficulty_weight' must be nonnegative");
  s.pretrain.divergence_threshold =
      cfg.get_real("divergence_threshold", 1e8);
  check_range(s.pretrain.divergence_threshold > 0.0,
              "key 'divergence_threshold' must be positive");
  s.finetune.divergence_threshold = s.pretrain.divergence_threshold;

  s.finetune.iterations = static_cast<int>(cfg.get_int("iterations", 200));
  s.finetune.episodes_per_iter =
      static_cast<int>(cfg.get_int("episodes_per_iter", 2));
  s.finetune.lr = cfg.get_real("finetune_lr", 1e-3);
  check_range(s.finetune.iterations > 0 && s.finetune.episodes_per_iter > 0 &&
                  s.finetune.lr > 0.0,
              "'iterations', 'episodes_per_iter', and 'finetune_lr' must be "
              "positive");
  s.finetune.use_lat = cfg.get_bool("use_lat", true);
  s.finetune.lat_weight = cfg.get_real("lat_weight", 1.0);
  check_range(s.finetune.lat_weight >= 0.0,
              "key 'lat_weight' must be nonnegative");
  s.finetune.il_rl_ratio = cfg.get_real("il_rl_ratio", -1.0);
  s.finetune.eval_every = static_cast<int>(cfg.get_int("eval_every", 0));
  check_range(s.finetune.eval_every >= 0,
              "key 'eval_every' must be nonnegative");
  s.finetune.eval_episodes_per_env =
      static_cast<int>(cfg.get_int("eval_episodes_per_env", 2));
  check_range(s.finetune.eval_episodes_per_env > 0,
              "key 'eval_episodes_per_env' must be positive");
  s.eval_episodes_per_env = s.finetune.eval_episodes_per_env;

  s.generate_views = static_cast<int>(cfg.get_int("generate_views", 100));
  s.generate_dump = static_cast<int>(cfg.get_int("generate_dump", 2));
  check_range(s.generate_views > 0 && s.generate_dump >= 0,
              "'generate_views' must be positive and 'generate_dump' "
              "nonnegative");

  s.variants = cfg.get_list("variants");
  for (const std::string& v : s.variants) {
    apply_variant(s, v);  // validates the name
  }
  s.ablate_seeds = static_cast<int>(cfg.get_int("ablate_seeds", 3));
  s.ablate_steps = static_cast<int>(cfg.get_int("ablate_steps", 120));
  s.ablate_iters = static_cast<int>(cfg.get_int("ablate_iters", 60));
  check_range(s.ablate_seeds > 0 && s.ablate_steps > 0 && s.ablate_iters > 0,
              "'ablate_seeds', 'ablate_steps', and 'ablate_iters' must be "
              "positive");

  s.config_echo = cfg.canonical_text();
  return s;
}

std::vector<Environment> make_env_set(std::uint64_t seed,
                                      std::string_view label, int count,
                                      int grid_size) {
  std::vector<Environment> envs;
  envs.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    envs.push_back(Environment::generate(
        derive_seed(seed, label, static_cast<std::uint64_t>(i)), grid_size));
  }
  return envs;
}

const std::vector<std::string>& known_variants() {
  static const std::vector<std::string> v = {
      "no-new-tasks",    "all-tasks",         "with-traj-gen",
      "with-view-gen",   "with-action-gen",   "static-codebook",
      "dynamic-codebook", "no-codebook",      "agg-mean",
      "agg-sample",      "agg-weighted",      "agg-weighted-block",
      "with-gen-loss",   "without-gen-loss"};
  return v;
}

RunSettings apply_variant(RunSettings base, const std::string& name) {
  const std::vector<PretrainTask> aux = {PretrainTask::kMaskedWords,
                                         PretrainTask::kPairMatch,
                                         PretrainTask::kNextAction};
  const auto with_gen = [&aux](PretrainTask task) {
    std::vector<PretrainTask> tasks = {task};
    tasks.insert(tasks.end(), aux.begin(), aux.end());
    return tasks;
  };

  base.pretrain.task_weights.clear();
  if (name == "no-new-tasks") {
    base.pretrain.tasks = aux;
  } else if (name == "all-tasks") {
    base.pretrain.tasks.clear();  // defaults to all six
  } else if (name == "with-traj-gen") {
    base.pretrain.tasks = with_gen(PretrainTask::kMaskedTrajectory);
  } else if (name == "with-view-gen") {
    base.pretrain.tasks = with_gen(PretrainTask::kMaskedViews);
  } else if (name == "with-action-gen") {
    base.pretrain.tasks = with_gen(PretrainTask::kActionView);
  } else if (name == "static-codebook") {
    base.codebook = "static";
  } else if (name == "dynamic-codebook") {
    base.codebook = "dynamic";
  } else if (name == "no-codebook") {
    base.codebook = "none";
  } else if (name == "agg-mean") {
    base.model.agg = AggMode::kMean;
    base.model.block_weights = false;
  } else if (name == "agg-sample") {
    base.model.agg = AggMode::kSample;
    base.model.block_weights = false;
  } else if (name == "agg-weighted") {
    base.model.agg = AggMode::kWeighted;
    base.model.block_weights = false;
  } else if (name == "agg-weighted-block") {
    base.model.agg = AggMode::kWeighted;
    base.model.block_weights = true;
  } else if (name == "with-gen-loss") {
    base.finetune.use_lat = true;
  } else if (name == "without-gen-loss") {
    base.finetune.use_lat = false;
  } else {
    throw ConfigError("unknown variant '" + name + "'");
  }
  return base;
}

EvalResult run_variant_pipeline(const RunSettings& v) {
  const std::uint64_t tok_seed = derive_seed(v.seed, "tokenizer");
  const Codebook cb = Codebook::create(tok_seed);
  const std::vector<Environment> train =
      make_env_set(v.seed, "train-env", v.train_envs, v.grid_size);
  const std::vector<Environment> val =
      make_env_set(v.seed, "val-env", v.val_envs, v.grid_size);

  Model model(v.model, derive_seed(v.seed, "model-init"));
  const PretrainResult pre = run_pretraining(
      model, cb, train, pretrain_config_for(v), derive_seed(v.seed, "pretrain"));

  FinetuneConfig fcfg = v.finetune;
  fcfg.eval_every = 0;
  run_finetuning(model, cb, pre.codebook.selected_subset(), train, val, fcfg,
                 derive_seed(v.seed, "finetune"));
  return evaluate_split(model, cb, val, v.eval_episodes_per_env,
                        derive_seed(v.seed, "eval"));
}

// --- Commands ----------------------------------------------------------------

void cmd_worldgen(const RunSettings& s, const std::string& out_dir) {
  ensure_dir(out_dir);
  std::vector<std::string> artifacts;
  const auto dump = [&](std::string_view label, int count,
                        const std::string& stem) {
    const std::vector<Environment> envs =
        make_env_set(s.seed, label, count, s.grid_size);
    for (int i = 0; i < count; ++i) {
      const std::string name = stem + std::to_string(i) + ".json";
      save_environment(envs[static_cast<std::size_t>(i)],
                       out_dir + "/" + name);
      artifacts.push_back(name);
    }
  };
  dump("train-env", s.train_envs, "train_env_");
  dump("val-env", s.val_envs, "val_env_");
  write_manifest(out_dir, "worldgen", s, artifacts);
}

void cmd_pretrain(const RunSettings& s, const std::string& out_dir) {
  ensure_dir(out_dir);
  const std::uint64_t tok_seed = derive_seed(s.seed, "tokenizer");
  const Codebook cb = Codebook::create(tok_seed);
  const std::vector<Environment> train =
      make_env_set(s.seed, "train-env", s.train_envs, s.grid_size);
  Model model(s.model, derive_seed(s.seed, "model-init"));

  PretrainResult result;
  {
    std::ofstream log = open_out(out_dir + "/pretrain_log.jsonl");
    result = run_pretraining(model, cb, train, pretrain_config_for(s),
                             derive_seed(s.seed, "pretrain"), &log);
  }
  save_checkpoint_file(out_dir + "/pretrain.ckpt",
                       make_checkpoint(model, tok_seed, &result.codebook));
  write_manifest(out_dir, "pretrain", s,
                 std::vector<std::string>{"pretrain.ckpt",
                                          "pretrain_log.jsonl"});
}

void cmd_finetune(const RunSettings& s, const std::string& ckpt_path,
                  const std::string& out_dir) {
  ensure_dir(out_dir);
  Bundle b = load_bundle(ckpt_path);
  const std::vector<Environment> train =
      make_env_set(s.seed, "train-env", s.train_envs, s.grid_size);
  const std::vector<Environment> val =
      make_env_set(s.seed, "val-env", s.val_envs, s.grid_size);

  {
    std::ofstream log = open_out(out_dir + "/finetune_log.jsonl");
    run_finetuning(b.model, b.cb, b.state.selected_subset(), train, val,
                   s.finetune, derive_seed(s.seed, "finetune"), &log);
  }
  save_checkpoint_file(
      out_dir + "/finetune.ckpt",
      make_checkpoint(b.model, b.cb.seed(), &b.state));
  write_manifest(out_dir, "finetune", s,
                 std::vector<std::string>{"finetune.ckpt",
                                          "finetune_log.jsonl"});
}

void cmd_eval(const RunSettings& s, const std::string& ckpt_path,
              const std::string& out_dir) {
  ensure_dir(out_dir);
  Bundle b = load_bundle(ckpt_path);
  const bool val_split = s.split == "val";
  const std::vector<Environment> envs =
      make_env_set(s.seed, val_split ? "val-env" : "train-env",
                   val_split ? s.val_envs : s.train_envs, s.grid_size);
  const EvalResult ev = evaluate_split(b.model, b.cb, envs,
                                       s.eval_episodes_per_env,
                                       derive_seed(s.seed, "eval"));

  open_out(out_dir + "/eval.csv") << eval_result_csv(ev);
  {
    nlohmann::json j;
    j["schema"] = "semnav-eval/1";
    j["split"] = s.split;
    j["episodes"] = ev.episode_count;
    j["sr"] = ev.sr;
    j["spl"] = ev.spl;
    j["ne"] = ev.ne;
    j["ndtw"] = ev.ndtw;
    j["sdtw"] = ev.sdtw;
    j["cls"] = ev.cls;
    j["tl"] = ev.tl;
    for (std::size_t i = 0; i < ev.bucket_count.size(); ++i) {
      const std::string len = std::to_string(kMinPathEdges + static_cast<int>(i));
      j["bucket_count"][len] = ev.bucket_count[i];
      j["bucket_sr"][len] = ev.bucket_sr[i];
    }
    open_out(out_dir + "/eval_summary.json") << j.dump(2) << "\n";
  }
  write_manifest(out_dir, "eval", s,
                 std::vector<std::string>{"eval.csv", "eval_summary.json"});
}

void cmd_generate(const RunSettings& s, const std::string& ckpt_path,
                  const std::string& out_dir) {
  ensure_dir(out_dir);
  Bundle b = load_bundle(ckpt_path);
  if (b.model.config().agg != AggMode::kWeighted) {
    throw ConfigError(
        "token generation needs a weighted-aggregation checkpoint");
  }
  const std::vector<int>& subset = b.state.selected_subset();
  const std::vector<Environment> val =
      make_env_set(s.seed, "val-env", s.val_envs, s.grid_size);

  struct Accum {
    double patch = 0.0, feature = 0.0, distance = 0.0;
    void add(const ReconstructionScores& r) {
      patch += r.patch_accuracy;
      feature += r.feature_accuracy;
      distance += r.semantic_distance;
    }
  };
  const std::vector<int> percents = {70, 80, 90, 100};
  std::vector<Accum> model_acc(percents.size()), random_acc(percents.size());

  Rng groot(derive_seed(s.seed, "generate"));
  std::string dump_text;
  for (int i = 0; i < s.generate_views; ++i) {
    const Environment& env =
        val[static_cast<std::size_t>(i) % val.size()];
    const Episode ep = sample_episode(
        env, derive_seed(s.seed, "generate-episode",
                         static_cast<std::uint64_t>(i)));
    const int step =
        groot.next_int(0, static_cast<int>(ep.teacher_actions.size()) - 1);
    const View& target = teacher_target_view(ep, step);

    Tape tape;
    EncodedState st =
        b.model.encode(tape, teacher_inputs(ep, step, false, b.cb));
    const std::vector<int> tokens =
        generate_patch_tokens(b.model, tape.value(st.cls), subset);

    for (std::size_t xi = 0; xi < percents.size(); ++xi) {
      Rng fill(derive_seed(s.seed, "generate-fill",
                           static_cast<std::uint64_t>(i) * percents.size() +
                               xi));
      const ReconstructionReport rep =
          reconstruct(target, tokens, percents[xi], subset, b.cb, fill);
      model_acc[xi].add(rep.model_fill);
      random_acc[xi].add(rep.random_fill);

      if (percents[xi] == 70 && i < s.generate_dump) {
        dump_text += "view " + std::to_string(i) + "  ground_truth=70%\n";
        dump_text += "truth:\n" + patch_grid_text(target.patches);
        dump_text +=
            "model fill:\n" + patch_grid_text(decode(rep.model_fill.tokens,
                                                     b.cb));
        dump_text += "random fill:\n" +
                     patch_grid_text(decode(rep.random_fill.tokens, b.cb));
        dump_text += "\n";
      }
    }
  }

  {
    nlohmann::json j;
    j["schema"] = "semnav-generation/1";
    j["views"] = s.generate_views;
    j["selected"] = subset_fingerprint(subset);
    const double n = static_cast<double>(s.generate_views);
    for (std::size_t xi = 0; xi < percents.size(); ++xi) {
      nlohmann::json entry;
      entry["model_fill"] = {{"patch_accuracy", model_acc[xi].patch / n},
                             {"feature_accuracy", model_acc[xi].feature / n},
                             {"semantic_distance",
                              model_acc[xi].distance / n}};
      entry["random_fill"] = {{"patch_accuracy", random_acc[xi].patch / n},
                              {"feature_accuracy",
                               random_acc[xi].feature / n},
                              {"semantic_distance",
                               random_acc[xi].distance / n}};
      j["by_percent"][std::to_string(percents[xi])] = entry;
    }
    open_out(out_dir + "/generation_report.json") << j.dump(2) << "\n";
  }
  std::vector<std::string> artifacts = {"generation_report.json"};
  if (s.generate_dump > 0) {
    open_out(out_dir + "/views.txt") << dump_text;
    artifacts.push_back("views.txt");
  }
  write_manifest(out_dir, "generate", s, artifacts);
}

void cmd_ablate(const RunSettings& s, const std::string& only_variant,
                const std::string& out_dir) {
  ensure_dir(out_dir);
  std::vector<std::string> list =
      s.variants.empty()
          ? std::vector<std::string>{"no-new-tasks", "all-tasks"}
          : s.variants;
  if (!only_variant.empty()) {
    list = {only_variant};
  }

  std::string csv = "variant,seed,sr,spl,ndtw,sdtw,cls,ne,tl\n";
  for (const std::string& name : list) {
    for (int k = 0; k < s.ablate_seeds; ++k) {
      RunSettings v = apply_variant(s, name);
      v.seed = derive_seed(s.seed, "ablate-seed",
                           static_cast<std::uint64_t>(k));
      v.pretrain.steps = s.ablate_steps;
      v.finetune.iterations = s.ablate_iters;
      const EvalResult ev = run_variant_pipeline(v);

      char row[256];
      std::snprintf(row, sizeof(row),
                    "%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                    name.c_str(), k, ev.sr, ev.spl, ev.ndtw, ev.sdtw, ev.cls,
                    ev.ne, ev.tl);
      csv += row;
    }
  }
  open_out(out_dir + "/ablate.csv") << csv;
  write_manifest(out_dir, "ablate", s,
                 std::vector<std::string>{"ablate.csv"});
}

// --- Manifest ----------------------------------------------------------------

std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot hash missing file '" + path + "'");
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return hex16(fnv1a(buf.str()));
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const RunSettings& s,
                    std::span<const std::string> artifact_names) {
  nlohmann::json j;
  j["schema"] = kManifestSchema;
  j["command"] = command;
  j["seed"] = s.seed;
  j["config"] = s.config_echo;
  j["config_hash"] = hex16(fnv1a(s.config_echo));
  nlohmann::json arts = nlohmann::json::object();
  for (const std::string& name : artifact_names) {
    arts[name] = file_hash_hex(out_dir + "/" + name);
  }
  j["artifacts"] = arts;
  open_out(out_dir + "/manifest.json") << j.dump(2) << "\n";
}

}  // namespace semnav
