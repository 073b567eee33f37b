#ifndef MLT_HARNESS_HPP_
#define MLT_HARNESS_HPP_

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>

#include "mlt/checkpoint.hpp"
#include "mlt/config.hpp"
#include "mlt/data.hpp"
#include "mlt/flops.hpp"
#include "mlt/metrics.hpp"
#include "mlt/model.hpp"
#include "mlt/multilevel.hpp"
#include "mlt/optimizer.hpp"
#include "mlt/training.hpp"

namespace mlt {

inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kConfigFile = "config.txt";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";

// Offsets the data seed from the initialization seed so the two random
// streams differ.
inline constexpr std::uint64_t kDataSeedOffset = 0x9e3779b97f4a7c15ull;

inline TokenStream load_tokens(const RunConfig& config) {
  TokenStream stream = config.token_file.empty() ? load_corpus(config.corpus)
                                                 : read_token_file(config.token_file);
  if (stream.vocab_size > config.model.vocab_size) {
    throw ConfigError("token vocabulary " + std::to_string(stream.vocab_size) +
                      " exceeds model vocab_size " +
                      std::to_string(config.model.vocab_size));
  }
  return stream;
}

struct RunResult {
  std::filesystem::path metrics_path;
  std::uint64_t fine_steps = 0;
  std::uint64_t coarse_steps = 0;
  std::uint64_t cumulative_flops = 0;
  double final_loss = 0.0;
};

// Trains one model end to end and writes metrics.jsonl, config.txt and a
// final checkpoint into config.out. Training runs in 32-bit floats.
//
// SINGLE: total_fine_steps warmup-cosine SGD steps.
// MULTILEVEL: the first num_cycles fine steps are each followed by a coarse
// cycle; the remaining steps are fine only.
inline RunResult run(const RunConfig& config, std::shared_ptr<const TokenStream> tokens = {},
                     const std::function<void(const RunRecord&)>& observer = {}) {
  using Scalar = float;
  config.validate();
  const std::filesystem::path out_dir(config.out);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream cfg(out_dir / kConfigFile, std::ios::trunc);
    cfg << format_config(config);
  }
  if (!tokens) {
    tokens = std::make_shared<const TokenStream>(load_tokens(config));
  }

  ModelParams<Scalar> params = init_params<Scalar>(config.model, config.seed);
  BatchStream data(tokens, BatchCursor(config.seed + kDataSeedOffset,
                                       config.micro_batch_size,
                                       config.model.context_length));
  const std::uint64_t tokens_per_step = config.tokens_per_step();
  FlopCounter flops(CostModel::from(config.model, tokens_per_step));
  const LrSchedule schedule = config.fine_schedule();
  MetricsWriter metrics(out_dir / kMetricsFile);
  const auto started = std::chrono::steady_clock::now();
  const auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                     started)
        .count();
  };

  RunResult result;
  result.metrics_path = out_dir / kMetricsFile;
  std::uint64_t tokens_seen = 0;
  std::uint64_t step = 0;
  auto log_step = [&](const StepEvent& e) {
    tokens_seen += e.tokens;
    const RunRecord record{step, e.level, e.inner_step, e.loss, e.lr, e.cumulative_flops,
                           tokens_seen, config.seed, elapsed_ms()};
    metrics.write(record);
    if (observer) {
      observer(record);
    }
    if (e.level == Level::fine) {
      ++result.fine_steps;
      result.final_loss = e.loss;
    } else {
      ++result.coarse_steps;
    }
    result.cumulative_flops = e.cumulative_flops;
  };
  CycleContext<Scalar> cycle{data, config.accumulation, flops, log_step};

  try {
    for (step = 1; step <= config.total_fine_steps; ++step) {
      const double lr = lr_at(schedule, static_cast<std::int64_t>(step - 1));
      const double loss = train_step(params.view(), data, config.accumulation, lr);
      log_step(StepEvent{Level::fine, 0, loss, lr, flops.add_fine_step(), tokens_per_step});
      if (config.mode == RunMode::multilevel && step <= config.schedule.num_cycles) {
        run_coarse_cycle(params, config.schedule, cycle);
      }
    }
  } catch (const NumericError& e) {
    write_checkpoint(out_dir / kCheckpointFile, params, config, result.fine_steps);
    metrics.write_error(step, e.what());
    throw;
  }
  write_checkpoint(out_dir / kCheckpointFile, params, config, result.fine_steps);
  return result;
}

}  // namespace mlt

#endif  // MLT_HARNESS_HPP_
