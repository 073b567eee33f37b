#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <vector>

#include "mlt/data.hpp"
#include "mlt/flops.hpp"
#include "mlt/optimizer.hpp"
#include "mlt/training.hpp"
#include "oracles.hpp"

namespace {

using mlt::ConstantLr;
using mlt::LrSchedule;
using mlt::Shape;
using mlt::Tensor;
using mlt::TokenId;
using mlt::WarmupCosine;

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mlt_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// ---- schedule -------------------------------------------------------------

TEST(Schedule, ReferenceValues) {
  const LrSchedule s = WarmupCosine{715, 16000, 1.2e-3, 1.2e-4};
  EXPECT_EQ(mlt::lr_at(s, 0), 0.0);
  EXPECT_EQ(mlt::lr_at(s, 715), 1.2e-3);
  const double terminal = mlt::terminal_lr(s);
  EXPECT_LE(std::abs(terminal - 1.2e-4), std::nextafter(1.2e-4, 1.0) - 1.2e-4);
  EXPECT_THROW(mlt::lr_at(s, 16000), mlt::ScheduleExhausted);
  EXPECT_THROW(mlt::lr_at(s, -1), mlt::ScheduleExhausted);
}

TEST(Schedule, MatchesClosedFormOracle) {
  const WarmupCosine w{30, 600, 1.2e-3, 1.2e-4};
  for (std::int64_t step = 0; step < 600; ++step) {
    const auto ref = oracle::warmup_cosine(step, 30, 600, 1.2e-3L, 1.2e-4L);
    EXPECT_NEAR(mlt::lr_at(w, step), static_cast<double>(ref), 1e-18) << step;
  }
}

TEST(Schedule, ContinuousAndPeakAtWarmupEnd) {
  const LrSchedule s = WarmupCosine{715, 16000, 1.2e-3, 1.2e-4};
  double peak = 0;
  std::int64_t peak_step = -1;
  for (std::int64_t step = 0; step < 16000; ++step) {
    const double lr = mlt::lr_at(s, step);
    if (lr > peak) {
      peak = lr;
      peak_step = step;
    }
    if (step > 0) {
      EXPECT_LE(std::abs(lr - mlt::lr_at(s, step - 1)), 1.2e-3 / 715 + 1e-15) << step;
    }
  }
  EXPECT_EQ(peak_step, 715);
  // Monotone non-increasing after the peak.
  for (std::int64_t step = 716; step < 16000; ++step) {
    EXPECT_LE(mlt::lr_at(s, step), mlt::lr_at(s, step - 1));
  }
}

TEST(Schedule, ZeroFloorAndConstant) {
  const LrSchedule zero = WarmupCosine{10, 100, 1e-3, 0.0};
  EXPECT_NO_THROW(mlt::validate(zero));
  EXPECT_NEAR(mlt::terminal_lr(zero), 0.0, 1e-19);
  const LrSchedule constant = ConstantLr{1.2e-3};
  EXPECT_EQ(mlt::lr_at(constant, 0), 1.2e-3);
  EXPECT_EQ(mlt::lr_at(constant, 123456), 1.2e-3);
  EXPECT_THROW(mlt::validate(LrSchedule{WarmupCosine{10, 100, 1e-3, 2e-3}}), mlt::ConfigError);
  EXPECT_THROW(mlt::validate(LrSchedule{WarmupCosine{100, 100, 1e-3, 1e-4}}), mlt::ConfigError);
}

// ---- SGD ------------------------------------------------------------------

TEST(Sgd, StepExample) {
  Tensor<double> p(Shape{2}, {1.0, 2.0}, true);
  p.grad()[0] = 0.5;
  p.grad()[1] = -1.0;
  std::vector<mlt::NamedTensor<double>> params{{"p", p}};
  mlt::sgd_step<double>(params, 0.1);
  EXPECT_DOUBLE_EQ(p.data()[0], 0.95);
  EXPECT_DOUBLE_EQ(p.data()[1], 2.1);
  EXPECT_EQ(p.grad()[0], 0.0);
  EXPECT_EQ(p.grad()[1], 0.0);
}

TEST(Sgd, ZeroGradientStepsAreIdempotent) {
  Tensor<float> p(Shape{3}, {1, 2, 3}, true);
  std::vector<mlt::NamedTensor<float>> params{{"p", p}};
  for (int i = 0; i < 5; ++i) {
    mlt::sgd_step<float>(params, 1.0);
  }
  EXPECT_EQ(std::vector<float>(p.data().begin(), p.data().end()),
            (std::vector<float>{1, 2, 3}));
}

TEST(Sgd, NonFiniteGradientLeavesParametersUntouched) {
  Tensor<double> a(Shape{1}, {1.0}, true);
  Tensor<double> b(Shape{1}, {2.0}, true);
  a.grad()[0] = 1.0;
  b.grad()[0] = std::numeric_limits<double>::infinity();
  std::vector<mlt::NamedTensor<double>> params{{"a", a}, {"b", b}};
  EXPECT_THROW(mlt::sgd_step<double>(params, 0.1), mlt::NumericError);
  EXPECT_EQ(a.data()[0], 1.0);
  EXPECT_EQ(b.data()[0], 2.0);
}

TEST(Sgd, AverageOfTwoMicroBatchGradients) {
  // (g1 + g2) / 2 applied once equals the mean gradient.
  Tensor<double> p(Shape{2}, {0.0, 0.0}, true);
  std::vector<mlt::NamedTensor<double>> params{{"p", p}};
  const double g1[] = {0.3, -1.7};
  const double g2[] = {0.9, 0.5};
  for (const double* g : {g1, g2}) {
    for (std::size_t i = 0; i < 2; ++i) {
      p.grad()[i] += g[i];
    }
  }
  mlt::average_gradients<double>(params, 2);
  EXPECT_EQ(p.grad()[0], (g1[0] + g2[0]) / 2);
  EXPECT_EQ(p.grad()[1], (g1[1] + g2[1]) / 2);
  mlt::sgd_step<double>(params, 1.0);
  EXPECT_EQ(p.data()[0], -(g1[0] + g2[0]) / 2);
}

mlt::ModelConfig tiny_model() {
  mlt::ModelConfig c;
  c.vocab_size = 32;
  c.context_length = 8;
  c.embed_dim = 8;
  c.num_blocks = 2;
  c.num_heads = 2;
  return c;
}

std::shared_ptr<const mlt::TokenStream> random_stream(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> pick(0, 31);
  mlt::TokenStream s;
  s.vocab_size = 32;
  s.ids.resize(n);
  for (auto& id : s.ids) {
    id = pick(rng);
  }
  return std::make_shared<const mlt::TokenStream>(std::move(s));
}

TEST(Sgd, AccumulationEqualsFullBatchGradient) {
  // k micro-batches of size B versus one batch of size k·B built from the
  // same windows. Equal up to summation order, checked in 64-bit.
  const auto tokens = random_stream(2000, 1);
  const auto params = mlt::init_params<double>(tiny_model(), 2);
  mlt::BatchStream data(tokens, mlt::BatchCursor(5, 2, 8));
  mlt::BatchStream copy = data;
  const double micro_loss = mlt::accumulate_gradients(params.view(), data, 3);
  auto named = params.parameters();
  mlt::average_gradients<double>(named, 3);
  std::vector<double> micro;
  for (auto& p : named) {
    micro.insert(micro.end(), p.tensor.grad().begin(), p.tensor.grad().end());
    p.tensor.zero_grad();
  }
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
  for (int m = 0; m < 3; ++m) {
    const auto b = copy.next();
    inputs.insert(inputs.end(), b.inputs.begin(), b.inputs.end());
    targets.insert(targets.end(), b.targets.begin(), b.targets.end());
  }
  mlt::Tape<double> tape;
  const auto loss = mlt::model_loss(tape, params.view(), inputs, targets, 6);
  tape.backward(loss);
  EXPECT_NEAR(loss.item(), micro_loss, 1e-13);
  std::size_t i = 0;
  for (auto& p : named) {
    for (double g : p.tensor.grad()) {
      EXPECT_NEAR(g, micro[i], 1e-13 * std::max(1.0, std::abs(g)));
      ++i;
    }
  }
}

TEST(Training, StepReducesLossOnFixedBatch) {
  const auto tokens = random_stream(64, 3);
  const auto params = mlt::init_params<float>(tiny_model(), 2);
  mlt::BatchStream data(tokens, mlt::BatchCursor(1, 4, 8));
  const mlt::BatchStream start = data;
  double first = 0;
  double last = 0;
  for (int i = 0; i < 20; ++i) {
    mlt::BatchStream same = start;
    const double loss = mlt::train_step(params.view(), same, 1, 0.5);
    (i == 0 ? first : last) = loss;
  }
  EXPECT_LT(last, first);
}

// ---- data -----------------------------------------------------------------

TEST(Data, ByteTokenizer) {
  const auto stream = mlt::tokenize("AB");
  EXPECT_EQ(stream.ids, (std::vector<TokenId>{65, 66}));
  EXPECT_EQ(stream.vocab_size, 256u);
  EXPECT_THROW(mlt::tokenize(""), mlt::InputError);
  const std::string text = "To be, or not to be\n\xc3\xa9";
  EXPECT_EQ(mlt::detokenize(mlt::tokenize(text).ids), text);
}

TEST(Data, WindowExample) {
  mlt::TokenStream s;
  s.vocab_size = 16;
  s.ids = {0, 1, 2, 3, 4, 5, 6, 7};
  mlt::Batch b{1, 3, std::vector<TokenId>(3), std::vector<TokenId>(3)};
  mlt::fill_window(s, 2, 0, b);
  EXPECT_EQ(b.inputs, (std::vector<TokenId>{2, 3, 4}));
  EXPECT_EQ(b.targets, (std::vector<TokenId>{3, 4, 5}));
  EXPECT_THROW(mlt::fill_window(s, 5, 0, b), mlt::InputError);
}

TEST(Data, CursorIsDeterministicAndShifted) {
  const auto tokens = random_stream(5000, 9);
  mlt::BatchCursor a(17, 4, 16);
  mlt::BatchCursor b(17, 4, 16);
  mlt::BatchCursor c(18, 4, 16);
  bool differs = false;
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next(*tokens);
    const auto y = b.next(*tokens);
    const auto z = c.next(*tokens);
    EXPECT_EQ(x.inputs, y.inputs);
    EXPECT_EQ(x.targets, y.targets);
    differs = differs || x.inputs != z.inputs;
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t t = 0; t + 1 < 16; ++t) {
        EXPECT_EQ(x.targets[r * 16 + t], x.inputs[r * 16 + t + 1]);
      }
    }
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(a, b);
}

TEST(Data, CursorRejectsShortStream) {
  mlt::TokenStream s;
  s.vocab_size = 4;
  s.ids = {0, 1, 2, 3};
  mlt::BatchCursor cursor(0, 1, 4);
  EXPECT_THROW(cursor.next(s), mlt::InputError);
}

TEST(Data, TokensPerReferenceStep) {
  // 16 sequences × 1024 positions × 16 accumulation = 262,144 tokens.
  mlt::BatchCursor cursor(0, 16, 1024);
  EXPECT_EQ(cursor.batch_size() * cursor.seq_len() * 16, 262144u);
}

TEST(Data, TokenFileRoundTrip) {
  const auto dir = temp_dir("tokens");
  mlt::TokenStream s;
  s.vocab_size = 50257;
  s.ids = {0, 50256, 7, 1234};
  mlt::write_token_file(dir / "t.bin", s);
  const auto back = mlt::read_token_file(dir / "t.bin");
  EXPECT_EQ(back.ids, s.ids);
  EXPECT_EQ(back.vocab_size, s.vocab_size);
  EXPECT_EQ(std::filesystem::file_size(dir / "t.bin"), 16u + 4u * 4u);

  std::ofstream(dir / "bad.bin", std::ios::binary) << "not a token file at all";
  EXPECT_THROW(mlt::read_token_file(dir / "bad.bin"), mlt::InputError);
  EXPECT_THROW(mlt::read_token_file(dir / "missing.bin"), mlt::InputError);
}

TEST(Data, CorpusLoads) {
  const auto dir = temp_dir("corpus");
  std::ofstream(dir / "c.txt") << "hello";
  const auto s = mlt::load_corpus(dir / "c.txt");
  EXPECT_EQ(s.ids.size(), 5u);
  EXPECT_EQ(s.ids[0], static_cast<TokenId>('h'));
}

// ---- FLOPs ----------------------------------------------------------------

TEST(Flops, SmallModelExamples) {
  mlt::ModelConfig c;
  c.vocab_size = 16;
  c.context_length = 8;
  c.embed_dim = 8;
  c.num_blocks = 2;
  c.num_heads = 2;
  // 2·(12·2·64 + 16·8) + 4·2·8·8 = 3840 per token.
  EXPECT_EQ(mlt::forward_flops(c, 1), 3840u);
  EXPECT_EQ(mlt::train_step_flops(c, 1), 11520u);
  EXPECT_EQ(mlt::train_step_flops(c, 1), oracle::train_flops(16, 8, 8, 2, 1));
  EXPECT_THROW(mlt::forward_flops(c, 0), mlt::ContractError);
}

TEST(Flops, ReferenceScaleStep) {
  mlt::ModelConfig c;
  c.vocab_size = 50257;
  c.context_length = 256;
  c.embed_dim = 256;
  c.num_blocks = 12;
  const std::uint64_t fine = mlt::train_step_flops(c, 262144);
  EXPECT_EQ(fine, 37553449205760u);
  EXPECT_EQ(fine, oracle::train_flops(50257, 256, 256, 12, 262144));
  const std::uint64_t coarse = mlt::train_step_flops(c.coarse(), 262144);
  EXPECT_EQ(coarse, oracle::train_flops(50257, 256, 256, 6, 262144));
  const double ratio = static_cast<double>(coarse) / static_cast<double>(fine);
  EXPECT_GT(ratio, 0.5);
  EXPECT_LT(ratio, 1.0);
}

TEST(Flops, CounterAccumulates) {
  mlt::FlopCounter counter(mlt::CostModel{10, 4});
  counter.add_fine_step();
  counter.add_coarse_step();
  EXPECT_EQ(counter.add_coarse_step(), 18u);
}

}  // namespace
