// Command-line driver for the semantic-navigation stack: world generation,
// the two training stages, evaluation, token generation, gradient checking,
// and the ablation sweep.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <string>

#include <CLI11.hpp>

#include "semnav/errors.hpp"
#include "semnav/gradcheck.hpp"
#include "semnav/pipeline.hpp"

namespace {

semnav::RunSettings resolve_settings(const std::string& config_path,
                                     long long seed_override) {
  semnav::KeyValueConfig cfg;
  if (!config_path.empty()) {
    cfg = semnav::KeyValueConfig::load_file(config_path);
  }
  semnav::RunSettings s = semnav::settings_from_config(cfg);
  if (seed_override >= 0) {
    s.seed = static_cast<std::uint64_t>(seed_override);
  }
  return s;
}

int run(int argc, char** argv) {
  CLI::App app{"Navigation agent with discrete view semantics"};
  app.require_subcommand(1);
  app.fallthrough();  // let global options appear after the subcommand

  std::string config_path;
  long long seed_override = -1;
  std::string out_dir = "out";
  std::string ckpt_path;
  std::string variant;
  app.add_option("--config", config_path, "key = value settings file");
  app.add_option("--seed", seed_override, "override the configured seed");
  app.add_option("--out", out_dir, "output directory (default: out)");
  app.add_option("--ckpt", ckpt_path, "checkpoint to resume from");
  app.add_option("--variant", variant, "restrict ablate to one variant");

  CLI::App* worldgen = app.add_subcommand(
      "worldgen", "write the train/val environment sets as JSON");
  CLI::App* pretrain = app.add_subcommand(
      "pretrain", "train the masked-modeling tasks from scratch");
  CLI::App* finetune = app.add_subcommand(
      "finetune", "navigation training from a pretrained checkpoint");
  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "score a checkpoint's policy on one split");
  CLI::App* generate = app.add_subcommand(
      "generate", "predict future-view tokens and score reconstructions");
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "compare analytic gradients with finite differences");
  CLI::App* ablate = app.add_subcommand(
      "ablate", "run the variant sweep and tabulate unseen-split metrics");

  app.parse(argc, argv);

  const auto need_ckpt = [&]() -> const std::string& {
    if (ckpt_path.empty()) {
      throw semnav::ConfigError("this command needs --ckpt");
    }
    return ckpt_path;
  };

  if (gradcheck->parsed()) {
    const std::uint64_t seed =
        seed_override >= 0 ? static_cast<std::uint64_t>(seed_override) : 1;
    const semnav::GradCheckReport report = semnav::run_gradcheck(seed);
    semnav::print_gradcheck(std::cout, report);
    return report.pass() ? 0 : 1;
  }

  const semnav::RunSettings s = resolve_settings(config_path, seed_override);
  if (worldgen->parsed()) {
    semnav::cmd_worldgen(s, out_dir);
  } else if (pretrain->parsed()) {
    semnav::cmd_pretrain(s, out_dir);
  } else if (finetune->parsed()) {
    semnav::cmd_finetune(s, need_ckpt(), out_dir);
  } else if (eval_cmd->parsed()) {
    semnav::cmd_eval(s, need_ckpt(), out_dir);
  } else if (generate->parsed()) {
    semnav::cmd_generate(s, need_ckpt(), out_dir);
  } else if (ablate->parsed()) {
    semnav::cmd_ablate(s, variant, out_dir);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return 0;  // --help
    }
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const semnav::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const semnav::TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 3;
  } catch (const semnav::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  }
}
