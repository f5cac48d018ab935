// emobench: generate candidates, evaluate strategies, print reports and
// debug the output parser.

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "emobench/emobench.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct CliArgs {
  std::string config_path;
  std::vector<std::string> strategies;
  std::string dataset;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string bin_mode;
  std::string input;
  std::string categories;
  std::string output_dir;
};

void add_run_flags(CLI::App* cmd, CliArgs& args, bool config_required) {
  auto* config = cmd->add_option("--config", args.config_path, "Run config file (JSON)");
  if (config_required) config->required();
  cmd->add_option("--strategy", args.strategies,
                  "Strategy to run: baseline, cot, bon, w-bon, alm-v, w-alm-v (repeatable)");
  cmd->add_option("--dataset", args.dataset, "Restrict to one dataset id");
  cmd->add_option("--seed", args.seed, "Global seed");
  cmd->add_option("--jobs", args.jobs, "Concurrency limit")->check(CLI::PositiveNumber);
  cmd->add_option("--bin-mode", args.bin_mode, "Entropy binning")
      ->check(CLI::IsMember({"quantile", "equal-width"}));
}

emobench::RunConfig load_config(const CliArgs& args) {
  auto config = emobench::load_run_config(args.config_path);
  emobench::RunOptions options;
  options.strategies = args.strategies;
  if (!args.dataset.empty()) options.dataset = args.dataset;
  options.seed = args.seed;
  options.jobs = args.jobs;
  if (!args.bin_mode.empty()) options.bin_mode = emobench::parse_bin_mode(args.bin_mode);
  emobench::apply_options(config, options);
  return config;
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto trimmed = std::string(emobench::detail::trim(item));
    if (!trimmed.empty()) out.push_back(trimmed);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distribution-level speech emotion evaluation with test-time scaling"};
  app.require_subcommand(1);
  CliArgs args;

  auto* generate = app.add_subcommand("generate", "Populate the candidate cache");
  add_run_flags(generate, args, true);

  auto* evaluate = app.add_subcommand("evaluate", "Score strategies from cached candidates and write reports");
  add_run_flags(evaluate, args, true);

  auto* report = app.add_subcommand("report", "Print the stored evaluation summary");
  add_run_flags(report, args, false);
  report->add_option("--output-dir", args.output_dir, "Directory holding summary.json (default: from --config)");

  auto* parse_test = app.add_subcommand("parse-test", "Run raw model outputs through the parser, one per line");
  parse_test->add_option("input", args.input, "File of raw outputs")->required();
  parse_test->add_option("--config", args.config_path, "Run config supplying the category set");
  parse_test->add_option("--dataset", args.dataset, "Dataset whose categories to use (default: first)");
  parse_test->add_option("--categories", args.categories, "Comma-separated category names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0; every other parse failure is a usage error.
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (generate->parsed()) {
      auto config = load_config(args);
      auto stats = emobench::cmd_generate(config, std::cerr);
      std::cout << "utterances=" << stats.utterances << " tasks=" << stats.tasks
                << " generation_requests=" << stats.requests.generate_requests
                << " verifier_requests=" << stats.requests.verifier_requests
                << " cache_hits=" << stats.requests.candidate_hits + stats.requests.verifier_hits
                << " records_written=" << stats.records_written << " failures=" << stats.failures
                << " unparseable=" << stats.unparseable << "\n";
      return 0;
    }
    if (evaluate->parsed()) {
      auto config = load_config(args);
      emobench::cmd_evaluate(config, std::cerr);
      emobench::cmd_report(config.output_dir, std::cout);
      return 0;
    }
    if (report->parsed()) {
      std::filesystem::path dir = args.output_dir;
      if (dir.empty()) {
        if (args.config_path.empty()) {
          std::cerr << "report: pass --config or --output-dir\n";
          return kExitUsage;
        }
        dir = emobench::load_run_config(args.config_path).output_dir;
      }
      std::optional<std::string> dataset;
      if (!args.dataset.empty()) dataset = args.dataset;
      emobench::cmd_report(dir, std::cout, dataset, args.strategies);
      return 0;
    }
    if (parse_test->parsed()) {
      std::optional<emobench::CategorySet> categories;
      if (!args.categories.empty()) {
        categories.emplace(split_commas(args.categories));
      } else if (!args.config_path.empty()) {
        auto config = emobench::load_run_config(args.config_path);
        if (config.datasets.empty()) throw emobench::Error(emobench::ErrorCode::kConfigError, "no datasets");
        categories = args.dataset.empty() ? config.datasets.front().categories : config.dataset(args.dataset).categories;
      } else {
        std::cerr << "parse-test: pass --categories or --config\n";
        return kExitUsage;
      }
      emobench::cmd_parse_test(args.input, *categories, std::cout);
      return 0;
    }
  } catch (const emobench::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    bool usage = e.code() == emobench::ErrorCode::kConfigError || e.code() == emobench::ErrorCode::kInvalidCategories;
    return usage ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
