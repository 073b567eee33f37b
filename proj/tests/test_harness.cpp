#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mlt/checkpoint.hpp"
#include "mlt/config.hpp"
#include "mlt/harness.hpp"
#include "mlt/metrics.hpp"
#include "mlt/report.hpp"

namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("mlt_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_corpus(const fs::path& dir) {
  std::string text;
  for (int i = 0; i < 200; ++i) {
    text += "the quick brown fox jumps over the lazy dog " + std::to_string(i) + "\n";
  }
  const auto path = dir / "corpus.txt";
  std::ofstream(path) << text;
  return path;
}

mlt::RunConfig tiny_run(const fs::path& dir, const std::string& name) {
  mlt::RunConfig c;
  c.model.vocab_size = 256;
  c.model.context_length = 8;
  c.model.embed_dim = 8;
  c.model.num_blocks = 2;
  c.model.num_heads = 2;
  c.total_fine_steps = 3;
  c.warmup_steps = 1;
  c.lr_max = 1e-2;
  c.lr_min = 1e-3;
  c.accumulation = 2;
  c.micro_batch_size = 2;
  c.schedule = {1, 2, 0.25, 1e-2, false};
  c.corpus = write_corpus(dir).string();
  c.out = (dir / name).string();
  return c;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- config ---------------------------------------------------------------

TEST(Config, ParseAndFormatRoundTrip) {
  std::istringstream in(
      "# comment\n"
      "embed_dim = 64   # trailing comment\n"
      "mode = multilevel\n"
      "delta = 0.5\n"
      "replay_fine_batches = true\n"
      "corpus = data/x.txt\n");
  const auto c = mlt::parse_config(in, "/base");
  EXPECT_EQ(c.model.embed_dim, 64u);
  EXPECT_EQ(c.mode, mlt::RunMode::multilevel);
  EXPECT_EQ(c.schedule.delta, 0.5);
  EXPECT_TRUE(c.schedule.replay_fine_batches);
  EXPECT_EQ(c.corpus, "/base/data/x.txt");
  std::istringstream again(mlt::format_config(c));
  EXPECT_EQ(mlt::config_map(mlt::parse_config(again)), mlt::config_map(c));
}

TEST(Config, Errors) {
  mlt::RunConfig c;
  EXPECT_THROW(mlt::set_config_value(c, "no_such_key", "1"), mlt::ConfigError);
  EXPECT_THROW(mlt::set_config_value(c, "embed_dim", "abc"), mlt::ConfigError);
  EXPECT_THROW(mlt::set_config_value(c, "mode", "both"), mlt::ConfigError);
  std::istringstream bad("just words\n");
  EXPECT_THROW(mlt::parse_config(bad), mlt::ConfigError);
  EXPECT_THROW(c.validate(), mlt::ConfigError);  // no corpus
  c.corpus = "x";
  EXPECT_NO_THROW(c.validate());
  c.mode = mlt::RunMode::multilevel;
  c.schedule.num_cycles = 601;
  EXPECT_THROW(c.validate(), mlt::ConfigError);
}

TEST(Config, DeskDefaults) {
  const mlt::RunConfig c;
  EXPECT_EQ(c.model.embed_dim, 128u);
  EXPECT_EQ(c.model.num_blocks, 12u);
  EXPECT_EQ(c.model.num_heads, 8u);
  EXPECT_EQ(c.model.context_length, 128u);
  EXPECT_EQ(c.total_fine_steps, 600u);
  EXPECT_EQ(c.schedule.num_cycles, 10u);
  EXPECT_EQ(c.schedule.coarse_steps_per_model, 20u);
  EXPECT_EQ(c.tokens_per_step(), 16u * 128u * 4u);
}

// ---- metrics --------------------------------------------------------------

TEST(Metrics, JsonRoundTripAndKeyOrder) {
  const mlt::RunRecord r{7, mlt::Level::coarse_odd, 3, 4.5, 1e-3, 123456789012345ull,
                         4096, 2, 12.5};
  const auto j = mlt::to_json(r);
  EXPECT_EQ(j.dump().substr(0, 40), R"({"step":7,"level":"COARSE_ODD","inner_st)");
  const auto back = mlt::record_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.cumulative_flops, r.cumulative_flops);
  EXPECT_EQ(back.level, r.level);
  EXPECT_EQ(back.loss, r.loss);
  EXPECT_THROW(mlt::parse_level("MEDIUM"), mlt::InputError);
}

// ---- checkpoint -----------------------------------------------------------

TEST(Checkpoint, RoundTrip) {
  const auto dir = temp_dir("ckpt");
  const auto run = tiny_run(dir, "unused");
  const auto params = mlt::init_params<float>(run.model, 3);
  mlt::write_checkpoint(dir / "c.bin", params, run, 17);
  const auto back = mlt::read_checkpoint<float>(dir / "c.bin");
  EXPECT_EQ(back.config, params.config);
  auto a = params.parameters();
  auto b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(std::equal(a[i].tensor.data().begin(), a[i].tensor.data().end(),
                           b[i].tensor.data().begin()));
  }
  EXPECT_EQ(fs::file_size(dir / "c.bin"), 36 + 4 * mlt::param_count(run.model));
  const auto manifest = read_file(dir / "c.manifest");
  EXPECT_NE(manifest.find("fine_step = 17"), std::string::npos);
  EXPECT_NE(manifest.find("seed = 0"), std::string::npos);
  EXPECT_THROW(mlt::read_checkpoint<double>(dir / "c.bin"), mlt::InputError);
}

// ---- harness --------------------------------------------------------------

TEST(Harness, SingleLevelRun) {
  const auto dir = temp_dir("single");
  const auto config = tiny_run(dir, "run");
  const auto result = mlt::run(config);
  EXPECT_EQ(result.fine_steps, 3u);
  EXPECT_EQ(result.coarse_steps, 0u);
  const auto log = mlt::read_metrics(fs::path(config.out) / mlt::kMetricsFile);
  ASSERT_EQ(log.records.size(), 3u);
  EXPECT_FALSE(log.error);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(log.records[i].step, i + 1);
    EXPECT_EQ(log.records[i].level, mlt::Level::fine);
    EXPECT_EQ(log.records[i].tokens_seen, (i + 1) * config.tokens_per_step());
    EXPECT_TRUE(std::isfinite(log.records[i].loss));
  }
  EXPECT_EQ(log.records[0].lr, 0.0);
  EXPECT_EQ(log.records[1].lr, 1e-2);
  EXPECT_TRUE(fs::exists(fs::path(config.out) / mlt::kCheckpointFile));
  EXPECT_TRUE(fs::exists(fs::path(config.out) / mlt::kConfigFile));
}

TEST(Harness, MultilevelRecordSequence) {
  const auto dir = temp_dir("multi");
  auto config = tiny_run(dir, "run");
  config.mode = mlt::RunMode::multilevel;
  const auto result = mlt::run(config);
  EXPECT_EQ(result.fine_steps, 3u);
  EXPECT_EQ(result.coarse_steps, 4u);
  const auto log = mlt::read_metrics(fs::path(config.out) / mlt::kMetricsFile);
  ASSERT_EQ(log.records.size(), 7u);
  const std::vector<mlt::Level> levels{mlt::Level::fine,       mlt::Level::coarse_even,
                                       mlt::Level::coarse_even, mlt::Level::coarse_odd,
                                       mlt::Level::coarse_odd,  mlt::Level::fine,
                                       mlt::Level::fine};
  for (std::size_t i = 0; i < levels.size(); ++i) {
    EXPECT_EQ(log.records[i].level, levels[i]) << i;
  }
  EXPECT_EQ(log.records[3].step, 1u);
  EXPECT_EQ(log.records[3].inner_step, 1u);
  EXPECT_EQ(log.records[5].step, 2u);
  const auto costs = mlt::CostModel::from(config.model, config.tokens_per_step());
  EXPECT_FALSE(mlt::audit_cumulative_flops(log.records, costs));
  EXPECT_EQ(result.cumulative_flops, 3 * costs.fine_step + 4 * costs.coarse_step);
}

TEST(Harness, FlopAuditDetectsTampering) {
  const mlt::CostModel costs{10, 4};
  std::vector<mlt::RunRecord> records(3);
  records[0].level = mlt::Level::fine;
  records[0].cumulative_flops = 10;
  records[1].level = mlt::Level::coarse_even;
  records[1].cumulative_flops = 14;
  records[2].level = mlt::Level::fine;
  records[2].cumulative_flops = 24;
  EXPECT_FALSE(mlt::audit_cumulative_flops(records, costs));
  records[1].cumulative_flops = 15;
  EXPECT_EQ(mlt::audit_cumulative_flops(records, costs), std::optional<std::size_t>{1});
}

TEST(Harness, ZeroCyclesMatchesSingleLevelBitwise) {
  const auto dir = temp_dir("degenerate");
  auto single = tiny_run(dir, "single");
  auto multi = tiny_run(dir, "multi");
  multi.mode = mlt::RunMode::multilevel;
  multi.schedule.num_cycles = 0;
  mlt::run(single);
  mlt::run(multi);
  const auto a = mlt::read_metrics(fs::path(single.out) / mlt::kMetricsFile);
  const auto b = mlt::read_metrics(fs::path(multi.out) / mlt::kMetricsFile);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].loss, b.records[i].loss);
    EXPECT_EQ(a.records[i].cumulative_flops, b.records[i].cumulative_flops);
  }
  EXPECT_EQ(read_file(fs::path(single.out) / mlt::kCheckpointFile),
            read_file(fs::path(multi.out) / mlt::kCheckpointFile));
}

TEST(Harness, ReplayIsDeterministic) {
  const auto dir = temp_dir("replay");
  auto first = tiny_run(dir, "a");
  first.mode = mlt::RunMode::multilevel;
  auto second = first;
  second.out = (dir / "b").string();
  mlt::run(first);
  mlt::run(second);
  const auto a = mlt::read_metrics(fs::path(first.out) / mlt::kMetricsFile);
  const auto b = mlt::read_metrics(fs::path(second.out) / mlt::kMetricsFile);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    auto x = a.records[i];
    auto y = b.records[i];
    x.wall_ms = y.wall_ms = 0;
    EXPECT_EQ(mlt::to_json(x).dump(), mlt::to_json(y).dump());
  }
  EXPECT_EQ(read_file(fs::path(first.out) / mlt::kCheckpointFile),
            read_file(fs::path(second.out) / mlt::kCheckpointFile));
}

TEST(Harness, DivergenceAbortsWithErrorRecord) {
  const auto dir = temp_dir("nan");
  auto config = tiny_run(dir, "run");
  config.total_fine_steps = 6;
  // Rounds to an infinite float rate, so the second update poisons the weights.
  config.lr_max = std::numeric_limits<double>::max();
  config.lr_min = 1.0;
  EXPECT_THROW(mlt::run(config), mlt::NumericError);
  const auto log = mlt::read_metrics(fs::path(config.out) / mlt::kMetricsFile);
  ASSERT_TRUE(log.error.has_value());
  EXPECT_TRUE(fs::exists(fs::path(config.out) / mlt::kCheckpointFile));
  EXPECT_LT(log.records.size(), 6u);
  // Aborted runs cannot be aggregated.
  EXPECT_THROW(mlt::aggregate({fs::path(config.out)}), mlt::AggregationError);
}

// ---- aggregation and comparison ------------------------------------------

// Writes a synthetic run directory with one fine record per entry.
void fake_run(const fs::path& dir, std::uint64_t seed, const std::vector<double>& loss,
              const std::vector<std::uint64_t>& flops, mlt::RunConfig config = {}) {
  fs::create_directories(dir);
  config.seed = seed;
  config.corpus = "corpus.txt";
  config.out = dir.string();
  std::ofstream(dir / mlt::kConfigFile) << mlt::format_config(config);
  mlt::MetricsWriter writer(dir / mlt::kMetricsFile);
  for (std::size_t i = 0; i < loss.size(); ++i) {
    writer.write(mlt::RunRecord{i + 1, mlt::Level::fine, 0, loss[i], 0.0, flops[i],
                                0, seed, 0.0});
  }
}

TEST(Aggregate, MeanAndSampleStd) {
  const auto dir = temp_dir("agg");
  fake_run(dir / "s1", 1, {1.0, 2.0}, {10, 20});
  fake_run(dir / "s2", 2, {3.0, 2.0}, {10, 20});
  const auto s = mlt::aggregate({dir / "s1", dir / "s2"});
  EXPECT_EQ(s.loss_mean[0], 2.0);
  EXPECT_NEAR(s.loss_std[0], 1.4142135623730951, 1e-15);
  EXPECT_EQ(s.loss_std[1], 0.0);
  mlt::write_summary_csv(dir / "sum.csv", s);
  const auto header = read_file(dir / "sum.csv");
  EXPECT_EQ(header.substr(0, header.find('\n')),
            "step,loss_seed_1,loss_seed_2,loss_mean,loss_std,flops_seed_1,flops_seed_2,"
            "flops_mean");
  const auto back = mlt::read_summary_csv(dir / "sum.csv");
  EXPECT_EQ(back.loss, s.loss);
  EXPECT_EQ(back.flops_mean, s.flops_mean);
  EXPECT_EQ(back.seeds, s.seeds);
}

TEST(Aggregate, SingleRunHasZeroStd) {
  const auto dir = temp_dir("agg1");
  fake_run(dir / "s", 4, {5.0, 4.0, 3.0}, {1, 2, 3});
  const auto s = mlt::aggregate({dir / "s"});
  for (double v : s.loss_std) {
    EXPECT_EQ(v, 0.0);
  }
}

TEST(Aggregate, RejectsMismatchedRuns) {
  const auto dir = temp_dir("aggbad");
  mlt::RunConfig other;
  other.model.embed_dim = 64;
  fake_run(dir / "a", 1, {1.0}, {10});
  fake_run(dir / "b", 2, {1.0}, {10}, other);
  fake_run(dir / "c", 1, {1.0}, {10});
  fake_run(dir / "d", 3, {1.0, 2.0}, {10, 20});
  EXPECT_THROW(mlt::aggregate({dir / "a", dir / "b"}), mlt::AggregationError);
  EXPECT_THROW(mlt::aggregate({dir / "a", dir / "c"}), mlt::AggregationError);
  EXPECT_THROW(mlt::aggregate({dir / "a", dir / "d"}), mlt::AggregationError);
  EXPECT_THROW(mlt::aggregate({}), mlt::AggregationError);
}

mlt::Summary summary_of(const std::vector<std::vector<double>>& loss,
                        const std::vector<std::vector<double>>& flops) {
  mlt::Summary s;
  for (std::size_t k = 0; k < loss.size(); ++k) {
    s.seeds.push_back(k);
  }
  for (std::size_t r = 0; r < loss[0].size(); ++r) {
    s.steps.push_back(r + 1);
  }
  s.loss = loss;
  s.flops = flops;
  s.compute_statistics();
  return s;
}

TEST(Compare, SelfComparisonSavesNothing) {
  const auto s = summary_of({{5, 4, 3}}, {{10, 20, 30}});
  const auto c = mlt::compare(s, s);
  ASSERT_TRUE(c.savings.has_value());
  EXPECT_EQ(*c.savings, 0.0);
  EXPECT_EQ(c.reference_savings, 0.44);
}

TEST(Compare, HalfTheFlops) {
  const auto baseline = summary_of({{5, 4, 3, 2}}, {{100, 200, 300, 400}});
  const auto multilevel = summary_of({{4, 2.1, 1.5, 1}, {4, 1.9, 1.8, 1.2}},
                                     {{100, 200, 300, 400}, {100, 200, 300, 400}});
  const auto c = mlt::compare(baseline, multilevel);
  EXPECT_EQ(c.target_loss, 2.0);
  ASSERT_TRUE(c.savings.has_value());
  EXPECT_DOUBLE_EQ(*c.savings, 0.5);
  ASSERT_EQ(c.per_seed.size(), 2u);
  EXPECT_DOUBLE_EQ(*c.per_seed[0].savings, 0.25);
  EXPECT_DOUBLE_EQ(*c.per_seed[1].savings, 0.5);
  const auto report = mlt::format_report(c, baseline, multilevel);
  EXPECT_NE(report.find("44.0%"), std::string::npos);
  EXPECT_NE(report.find("50.0%"), std::string::npos);
}

TEST(Compare, UnreachedTarget) {
  const auto baseline = summary_of({{5, 4, 3, 2}}, {{100, 200, 300, 400}});
  const auto multilevel = summary_of({{5, 4.5, 4, 3}}, {{100, 200, 300, 400}});
  const auto c = mlt::compare(baseline, multilevel);
  EXPECT_FALSE(c.savings.has_value());
  EXPECT_FALSE(c.per_seed[0].savings.has_value());
  EXPECT_FALSE(c.multilevel.reached);
}

}  // namespace
