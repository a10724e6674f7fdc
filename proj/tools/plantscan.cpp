#include <plantscan/pipeline/stages.hpp>

#include <CLI11.hpp>

#include <iostream>

using namespace plantscan;

namespace {

int exit_code(Errc e) {
  switch (e) {
    case Errc::ConfigError:
      return 2;
    case Errc::StageDependencyError:
      return 3;
    case Errc::TrainingDiverged:
    case Errc::PlanningTimeout:
    case Errc::Unreachable:
      return 4;
    default:
      return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperspectral plant scanning pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  bool deterministic = false;
  app.add_option("-c,--config", config_path, "configuration file")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "override run.seed");
  app.add_option("--out", out, "override run.out (output directory)");
  app.add_flag("--force", force, "rerun even when inputs are unchanged");
  app.add_flag("--deterministic", deterministic, "require a seed and record the run as deterministic");

  std::vector<std::string> chosen;
  for (const auto& name : stage_order())
    app.add_subcommand(name, "run the " + name + " stage")->callback([&chosen, name] { chosen = {name}; });
  app.add_subcommand("all", "run every stage in order")->callback([&chosen] { chosen = stage_order(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = load_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.seed_set = true;
    }
    if (!out.empty()) cfg.out = out;
    if (deterministic && !cfg.seed_set) fail(Errc::ConfigError, "run.seed: --deterministic needs a seed");
    validate_config(cfg);
    for (const auto& stage : chosen) {
      const StageResult r = run_stage(cfg, stage, force, cfg.seed_set);
      std::cout << stage << (r.skipped ? " skipped (up to date), " : " done, ") << r.files << " files\n";
    }
    if (!chosen.empty() && chosen.back() == "report") std::cout << read_file(cfg.out / "report" / "report.txt");
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
