// hadnet: simulate -> train -> evaluate -> inspect.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "CLI11.hpp"
#include "hadnet/hadnet.h"

namespace {

void print_line(const char* line, void*) { std::printf("%s\n", line); }

std::string default_out(const std::string& command) {
  const char* root = std::getenv("HADNET_OUT_ROOT");
  return (std::filesystem::path(root && *root ? root : "hadnet_out") / command).string();
}

int finish(hadnet_status s) {
  if (s == HADNET_OK) return 0;
  std::fprintf(stderr, "error (%s): %s\n", hadnet_status_name(s), hadnet_last_error());
  if (s == HADNET_E_INVALID_ARGUMENT) return 2;
  if (s == HADNET_E_NON_FINITE_LOSS) return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HAD-Net glucose forecasting pipeline"};
  app.set_version_flag("--version", std::string(hadnet_version()));
  app.require_subcommand(1);

  std::size_t patients = 17, days = 14;
  std::uint64_t seed = 0;
  std::string out, data, config, checkpoints, baselines = "persistence,ar,ridge,physio", checkpoint, window;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic cohort");
  sim->add_option("--patients", patients, "number of patients")->check(CLI::Range(std::size_t{1}, std::size_t{10000}));
  sim->add_option("--days", days, "days per patient")->check(CLI::Range(std::size_t{1}, std::size_t{3650}));
  sim->add_option("--seed", seed, "cohort seed");
  sim->add_option("--out", out, "output directory (default $HADNET_OUT_ROOT/simulate)");

  auto* train = app.add_subcommand("train", "train one model");
  train->add_option("--data", data, "directory of episode CSV files")->required();
  train->add_option("--config", config, "training config (JSON)")->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "initialisation and shuffling seed");
  train->add_option("--out", out, "output directory (default $HADNET_OUT_ROOT/train)");

  auto* evaluate = app.add_subcommand("evaluate", "score checkpoints against baselines");
  evaluate->add_option("--data", data, "directory of episode CSV files")->required();
  evaluate->add_option("--checkpoints", checkpoints, "glob of checkpoint files, one per repetition")->required();
  evaluate->add_option("--baselines", baselines, "comma-separated: persistence,ar,ridge,physio");
  evaluate->add_option("--out", out, "output directory (default $HADNET_OUT_ROOT/evaluate)");

  auto* inspect = app.add_subcommand("inspect", "dump PV trajectories and impact curves for one window");
  inspect->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  inspect->add_option("--window", window, "patient_id@YYYY-MM-DDTHH:MM:SS of the first input step")->required();
  inspect->add_option("--data", data, "directory of episode CSV files")->required();
  inspect->add_option("--out", out, "output directory (default $HADNET_OUT_ROOT/inspect)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (*sim) {
    if (out.empty()) out = default_out("simulate");
    std::size_t rows = 0;
    const auto s = hadnet_simulate(out.c_str(), patients, days, seed, &rows);
    if (s == HADNET_OK) std::printf("wrote %zu episodes of %zu rows to %s\n", patients, rows, out.c_str());
    return finish(s);
  }
  if (*train) {
    if (out.empty()) out = default_out("train");
    hadnet_train_report report{};
    return finish(hadnet_train(data.c_str(), config.empty() ? nullptr : config.c_str(), seed, out.c_str(), &report,
                               print_line, nullptr));
  }
  if (*evaluate) {
    if (out.empty()) out = default_out("evaluate");
    return finish(hadnet_evaluate(data.c_str(), checkpoints.c_str(), baselines.c_str(), out.c_str(), print_line,
                                  nullptr));
  }
  if (out.empty()) out = default_out("inspect");
  return finish(hadnet_inspect(checkpoint.c_str(), window.c_str(), data.c_str(), out.c_str(), print_line, nullptr));
}
