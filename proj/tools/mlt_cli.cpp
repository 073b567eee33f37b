// Command-line front end: train, aggregate, compare, gradcheck, flops.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mlt/mlt.hpp"

namespace {

struct TrainArgs {
  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::size_t log_every = 10;
};

mlt::RunConfig resolve_config(const TrainArgs& args) {
  mlt::RunConfig config;
  if (!args.config_path.empty()) {
    config = mlt::load_config(args.config_path);
  }
  for (const auto& [key, value] : args.overrides) {
    if (!value.empty()) {
      mlt::set_config_value(config, key, value);
    }
  }
  return config;
}

int run_train(const TrainArgs& args) {
  const mlt::RunConfig config = resolve_config(args);
  std::cerr << "training " << mlt::to_string(config.mode) << " seed=" << config.seed
            << " params=" << mlt::param_count(config.model) << " -> " << config.out
            << "\n";
  const auto result = mlt::run(config, {}, [&](const mlt::RunRecord& r) {
    if (r.level == mlt::Level::fine && (r.step % args.log_every == 0 || r.step == 1)) {
      std::fprintf(stderr, "step %5llu  loss %.4f  lr %.3e  flops %.4e  %.1fs\n",
                   static_cast<unsigned long long>(r.step), r.loss, r.lr,
                   static_cast<double>(r.cumulative_flops), r.wall_ms / 1000.0);
    }
  });
  std::cout << "fine_steps=" << result.fine_steps << " coarse_steps=" << result.coarse_steps
            << " final_loss=" << result.final_loss
            << " cumulative_flops=" << result.cumulative_flops << "\n";
  return 0;
}

int run_aggregate(const std::vector<std::string>& runs, const std::string& out) {
  std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
  const auto summary = mlt::aggregate(dirs);
  mlt::write_summary_csv(out, summary);
  std::cout << "aggregated " << summary.seeds.size() << " runs, " << summary.rows()
            << " fine steps; final mean loss " << summary.loss_mean.back() << " -> " << out
            << "\n";
  return 0;
}

int run_compare(const std::string& baseline_path, const std::string& multilevel_path,
                const std::string& out) {
  const auto baseline = mlt::read_summary_csv(baseline_path);
  const auto multilevel = mlt::read_summary_csv(multilevel_path);
  const auto comparison = mlt::compare(baseline, multilevel);
  const std::string report = mlt::format_report(comparison, baseline, multilevel);
  std::ofstream file(out, std::ios::trunc);
  file << report;
  std::cout << "target loss " << comparison.target_loss << "; measured savings "
            << (comparison.savings ? mlt::percent(*comparison.savings) : "not reached")
            << "; reference savings " << mlt::percent(comparison.reference_savings)
            << " -> " << out << "\n";
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  constexpr double kTolerance = 1e-4;
  mlt::ModelConfig config;
  config.vocab_size = 16;
  config.context_length = 8;
  config.embed_dim = 8;
  config.num_blocks = 2;
  config.num_heads = 2;
  const auto report = mlt::model_gradcheck(config, seed);
  bool ok = true;
  for (const auto& entry : report.entries) {
    const bool pass = entry.max_relative_error < kTolerance;
    ok = ok && pass;
    std::printf("%-28s %6zu elems  max rel err %.3e  %s\n", entry.name.c_str(),
                entry.elements, entry.max_relative_error, pass ? "ok" : "FAIL");
  }
  std::printf("gradcheck %s (max rel err %.3e, tolerance %.0e)\n", ok ? "PASS" : "FAIL",
              report.max_relative_error(), kTolerance);
  return ok ? 0 : 1;
}

int run_flops(const TrainArgs& args) {
  const mlt::RunConfig config = resolve_config(args);
  const auto tokens = config.tokens_per_step();
  const auto fine = config.model;
  const auto coarse = fine.coarse();
  const auto costs = mlt::CostModel::from(fine, tokens);
  const std::uint64_t coarse_steps =
      config.schedule.num_cycles * 2 * config.schedule.coarse_steps_per_model;
  std::printf("%-26s %20s %20s\n", "", "fine", "coarse");
  std::printf("%-26s %20zu %20zu\n", "blocks", fine.num_blocks, coarse.num_blocks);
  std::printf("%-26s %20llu %20llu\n", "parameters",
              static_cast<unsigned long long>(mlt::param_count(fine)),
              static_cast<unsigned long long>(mlt::param_count(coarse)));
  std::printf("%-26s %20llu %20llu\n", "forward FLOPs / token",
              static_cast<unsigned long long>(mlt::forward_flops(fine, 1)),
              static_cast<unsigned long long>(mlt::forward_flops(coarse, 1)));
  std::printf("%-26s %20llu %20llu\n", "train FLOPs / step",
              static_cast<unsigned long long>(costs.fine_step),
              static_cast<unsigned long long>(costs.coarse_step));
  std::printf("tokens per step: %llu\n", static_cast<unsigned long long>(tokens));
  std::printf("coarse/fine step cost ratio: %.6f\n",
              static_cast<double>(costs.coarse_step) / static_cast<double>(costs.fine_step));
  const double single = static_cast<double>(costs.fine_step) *
                        static_cast<double>(config.total_fine_steps);
  const double multilevel =
      single + static_cast<double>(costs.coarse_step) * static_cast<double>(coarse_steps);
  std::printf("single-level run:  %.6e FLOPs (%zu fine steps)\n", single,
              config.total_fine_steps);
  std::printf("multilevel run:    %.6e FLOPs (+%llu coarse steps)\n", multilevel,
              static_cast<unsigned long long>(coarse_steps));
  return 0;
}

void add_config_options(CLI::App* cmd, TrainArgs& args) {
  cmd->add_option("--config", args.config_path, "flat key = value config file");
  for (const auto& key : mlt::config_keys()) {
    cmd->add_option(std::string("--") + key.name, args.overrides[key.name], key.help);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilevel training of ODE-style transformer decoders"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train one model and write its metrics");
  add_config_options(train, train_args);
  train->add_option("--log-every", train_args.log_every, "progress line interval");

  std::vector<std::string> runs;
  std::string aggregate_out;
  auto* aggregate = app.add_subcommand("aggregate", "merge seed runs into a summary CSV");
  aggregate->add_option("--runs", runs, "run directories")->required()->expected(1, -1);
  aggregate->add_option("--out", aggregate_out, "summary CSV")->required();

  std::string baseline;
  std::string multilevel;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "compare two summaries");
  compare->add_option("--baseline", baseline, "single-level summary CSV")->required();
  compare->add_option("--multilevel", multilevel, "multilevel summary CSV")->required();
  compare->add_option("--out", compare_out, "report file")->required();

  std::uint64_t gradcheck_seed = 7;
  auto* gradcheck = app.add_subcommand("gradcheck", "64-bit finite-difference check");
  gradcheck->add_option("--seed", gradcheck_seed, "model and batch seed");

  TrainArgs flops_args;
  auto* flops = app.add_subcommand("flops", "print the FLOP cost table");
  add_config_options(flops, flops_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      return run_train(train_args);
    }
    if (*aggregate) {
      return run_aggregate(runs, aggregate_out);
    }
    if (*compare) {
      return run_compare(baseline, multilevel, compare_out);
    }
    if (*gradcheck) {
      return run_gradcheck(gradcheck_seed);
    }
    if (*flops) {
      return run_flops(flops_args);
    }
  } catch (const mlt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
