// distillkit command-line entry points.
//
//   distillkit run MANIFEST --out DIR [--seed N]
//   distillkit analyze SPEC...
//
// Exit status: 0 success, 2 validation error, 3 runtime contract error.

#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "distillkit/error.hpp"
#include "distillkit/experiment.hpp"
#include "distillkit/model.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

int run(const std::string& manifest, const std::string& out, std::optional<std::int64_t> seed) {
  dk::Experiment x;
  try {
    x = dk::load_experiment(manifest);
    if (seed) x.training.seed = *seed;
  } catch (const dk::Error& e) {
    std::cerr << "invalid manifest: " << e.what() << '\n';
    return kExitValidation;
  }
  try {
    const auto report = dk::run_experiment(x, out);
    std::cout << "final: " << report["final"].dump() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}

int analyze(const std::vector<std::string>& paths) {
  std::vector<dk::ModelSpec> specs;
  try {
    for (const auto& p : paths) {
      specs.push_back(dk::load_model_spec(p));
      dk::validate_spec(specs.back(), false);
    }
  } catch (const dk::Error& e) {
    std::cerr << "invalid spec: " << e.what() << '\n';
    return kExitValidation;
  }
  dk::print_size_table(specs, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge distillation toolkit"};
  app.require_subcommand(1);

  std::string manifest, out;
  std::optional<std::int64_t> seed;
  auto* run_cmd = app.add_subcommand("run", "Train the teacher, distill the student, write report.json");
  run_cmd->add_option("manifest", manifest, "Experiment manifest (JSON)")->required();
  run_cmd->add_option("--out", out, "Output directory")->required();
  run_cmd->add_option("--seed", seed, "Overrides training.seed");

  std::vector<std::string> spec_paths;
  auto* analyze_cmd = app.add_subcommand("analyze", "Print model sizes relative to the first spec");
  analyze_cmd->add_option("specs", spec_paths, "Model spec files (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }
  if (*run_cmd) return run(manifest, out, seed);
  return analyze(spec_paths);
}
