// Command-line runner for the scenario suite.
//
//   splitflow run --scenario NAME --seed N [--duration S]
//                 [--variant split|e2e-newreno|e2e-vegas] --out PATH
//   splitflow compare --scenario NAME --seed N --out PATH
//                 [--window-start S --window-end S]
//   splitflow scenarios            # list built-ins
//   splitflow dump-config --scenario NAME --out PATH
//
// --scenario accepts a built-in name or a path to a JSON scenario file.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "splitflow/scenario.hpp"

namespace {

splitflow::ScenarioConfig load_scenario(const std::string& name_or_path) {
  for (const auto& b : splitflow::builtin_scenarios()) {
    if (b == name_or_path) return splitflow::builtin_scenario(name_or_path);
  }
  std::ifstream in(name_or_path);
  if (!in) {
    throw std::runtime_error("unknown scenario and no such file: " + name_or_path);
  }
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return splitflow::config_from_json(text);
}

void write_file(const std::string& path, const std::string& content) {
  if (path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layered split-transport simulation runner"};
  app.require_subcommand(1);

  std::string scenario, out = "-", variant = "split";
  std::uint64_t seed = 1;
  double duration = -1, window_start = -1, window_end = -1;

  auto* run = app.add_subcommand("run", "run one scenario variant, emit per-flow CSV samples");
  run->add_option("--scenario", scenario, "built-in name or JSON file")->required();
  run->add_option("--seed", seed, "deterministic master seed");
  run->add_option("--duration", duration, "override duration (seconds)");
  run->add_option("--variant", variant, "split | e2e-newreno | e2e-vegas");
  run->add_option("--out", out, "output CSV path ('-' for stdout)")->required();

  auto* cmp = app.add_subcommand("compare", "run split/e2e variants, emit a summary table");
  cmp->add_option("--scenario", scenario)->required();
  cmp->add_option("--seed", seed);
  cmp->add_option("--duration", duration);
  cmp->add_option("--window-start", window_start, "aggregation window start (s)");
  cmp->add_option("--window-end", window_end, "aggregation window end (s)");
  cmp->add_option("--out", out)->required();

  auto* ls = app.add_subcommand("scenarios", "list built-in scenarios");

  auto* dump = app.add_subcommand("dump-config", "write a scenario as a JSON config file");
  dump->add_option("--scenario", scenario)->required();
  dump->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (ls->parsed()) {
      for (const auto& name : splitflow::builtin_scenarios()) std::cout << name << "\n";
      return 0;
    }
    splitflow::ScenarioConfig cfg = load_scenario(scenario);
    if (duration > 0) cfg.duration_s = duration;

    if (dump->parsed()) {
      write_file(out, splitflow::to_json(cfg) + "\n");
      return 0;
    }
    if (run->parsed()) {
      auto v = splitflow::variant_from_name(variant);
      if (!v) {
        std::cerr << "unknown variant: " << variant << "\n";
        return 2;
      }
      auto result = splitflow::run_scenario(cfg, seed, *v);
      write_file(out, splitflow::samples_to_csv(result.samples));
      for (const auto& [id, o] : result.flows) {
        std::cerr << id << ": delivered=" << o.delivered_bytes
                  << (o.digest_checked ? (o.digest_ok ? " digest=ok" : " digest=MISMATCH") : "")
                  << (o.completed ? " completed" : "") << "\n";
      }
      return 0;
    }
    if (cmp->parsed()) {
      double w0 = window_start, w1 = window_end;
      if (w1 < 0) w1 = cfg.duration_s;
      if (w0 < 0) w0 = w1 * 3 / 4;
      auto rows = splitflow::compare_runs(
          cfg, seed,
          {splitflow::Variant::split, splitflow::Variant::e2e_newreno,
           splitflow::Variant::e2e_vegas},
          w0, w1);
      write_file(out, splitflow::compare_to_csv(rows));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
