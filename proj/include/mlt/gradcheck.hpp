#ifndef MLT_GRADCHECK_HPP_
#define MLT_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mlt/model.hpp"
#include "mlt/ops.hpp"
#include "mlt/tape.hpp"

namespace mlt {

// Relative error with a floor on the denominator so vanishing gradients are
// judged by absolute error instead.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheckEntry {
  std::string name;
  std::size_t elements = 0;
  double max_relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_relative_error() const {
    double worst = 0.0;
    for (const auto& e : entries) {
      worst = std::max(worst, e.max_relative_error);
    }
    return worst;
  }
};

// Compares reverse-mode gradients of `loss_fn` against central differences
// with step `h` for every element of every tensor in `params`.
inline GradCheckReport check_gradients(
    const std::function<Tensor<double>(Tape<double>&)>& loss_fn,
    std::vector<NamedTensor<double>> params, double h = 1e-5) {
  for (auto& p : params) {
    p.tensor.zero_grad();
  }
  {
    Tape<double> tape;
    tape.backward(loss_fn(tape));
  }
  auto evaluate = [&] {
    Tape<double> tape;
    return loss_fn(tape).item();
  };
  GradCheckReport report;
  for (auto& p : params) {
    GradCheckEntry entry{p.name, p.tensor.numel(), 0.0};
    auto values = p.tensor.data();
    const auto grads = p.tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = evaluate();
      values[i] = saved - h;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      entry.max_relative_error =
          std::max(entry.max_relative_error, relative_error(grads[i], numeric));
    }
    report.entries.push_back(entry);
  }
  return report;
}

// Gradient check of the full model loss on a random batch. Weights are
// scaled up from the training init so that every block contributes
// non-negligible gradients.
inline GradCheckReport model_gradcheck(const ModelConfig& config, std::uint64_t seed,
                                       std::size_t batch = 2, double weight_scale = 10.0,
                                       double h = 1e-5) {
  ModelParams<double> params = init_params<double>(config, seed);
  for (auto& p : params.parameters()) {
    for (double& v : p.tensor.data()) {
      v *= weight_scale;
    }
  }
  std::mt19937_64 rng(seed + 1);
  std::uniform_int_distribution<TokenId> token(0, static_cast<TokenId>(config.vocab_size - 1));
  const std::size_t seq = config.context_length;
  std::vector<TokenId> inputs(batch * seq);
  std::vector<TokenId> targets(batch * seq);
  for (auto& t : inputs) {
    t = token(rng);
  }
  for (auto& t : targets) {
    t = token(rng);
  }
  const auto view = params.view();
  return check_gradients(
      [&](Tape<double>& tape) { return model_loss(tape, view, inputs, targets, batch); },
      params.parameters(), h);
}

}  // namespace mlt

#endif  // MLT_GRADCHECK_HPP_
