#ifndef MLT_MULTILEVEL_HPP_
#define MLT_MULTILEVEL_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "mlt/data.hpp"
#include "mlt/errors.hpp"
#include "mlt/flops.hpp"
#include "mlt/model.hpp"
#include "mlt/optimizer.hpp"
#include "mlt/training.hpp"

namespace mlt {

// EVEN: coarse layer i is fine layer 2i. ODD: coarse layer i is fine layer
// 2i-1 (layers numbered from 1).
enum class Parity { even, odd };

inline Parity opposite(Parity p) { return p == Parity::even ? Parity::odd : Parity::even; }

inline std::string_view to_string(Parity p) {
  return p == Parity::even ? "even" : "odd";
}

// 0-based fine block index behind 0-based coarse slot `slot`.
inline std::size_t coarse_to_fine_index(Parity parity, std::size_t slot) {
  return parity == Parity::even ? 2 * slot + 1 : 2 * slot;
}

inline std::vector<std::size_t> parity_indices(Parity parity, std::size_t num_blocks) {
  std::vector<std::size_t> out;
  for (std::size_t slot = 0; slot < num_blocks / 2; ++slot) {
    out.push_back(coarse_to_fine_index(parity, slot));
  }
  return out;
}

// N/2-block model whose blocks are the fine model's blocks of one parity.
// Holds no parameter storage; every slot is the fine block itself.
template <typename T>
class CoarseView {
 public:
  CoarseView(ModelParams<T>& fine, Parity parity) : fine_(&fine), parity_(parity) {
    if (fine.blocks.size() % 2 != 0) {
      throw ConfigError("coarse views need an even number of blocks, got " +
                        std::to_string(fine.blocks.size()));
    }
  }

  Parity parity() const { return parity_; }
  std::size_t size() const { return fine_->blocks.size() / 2; }
  std::size_t fine_index(std::size_t slot) const {
    return coarse_to_fine_index(parity_, slot);
  }

  BlockParams<T>& block(std::size_t slot) {
    return fine_->blocks.at(fine_index(slot));
  }
  const BlockParams<T>& block(std::size_t slot) const {
    return fine_->blocks.at(fine_index(slot));
  }

  ModelView<T> view() const {
    ModelView<T> v;
    v.config = fine_->config.coarse();
    v.token_embedding = fine_->token_embedding;
    v.position_embedding = fine_->position_embedding;
    for (std::size_t slot = 0; slot < size(); ++slot) {
      v.blocks.push_back(block(slot));
      v.fine_indices.push_back(fine_index(slot));
    }
    return v;
  }

 private:
  ModelParams<T>* fine_;
  Parity parity_;
};

template <typename T>
CoarseView<T> make_coarse_view(ModelParams<T>& fine, Parity parity) {
  return CoarseView<T>(fine, parity);
}

// Copies of the blocks a coarse phase does not train, taken before it runs.
template <typename T>
struct ParitySnapshot {
  Parity trained = Parity::even;
  std::vector<std::size_t> indices;  // 0-based fine indices
  std::vector<BlockParams<T>> blocks;
};

template <typename T>
ParitySnapshot<T> snapshot_opposite_parity(const ModelParams<T>& fine,
                                           Parity parity) {
  ParitySnapshot<T> snap;
  snap.trained = parity;
  snap.indices = parity_indices(opposite(parity), fine.blocks.size());
  for (std::size_t index : snap.indices) {
    snap.blocks.push_back(fine.blocks[index].clone());
  }
  return snap;
}

struct ProlongationSpec {
  double delta = 0.25;

  explicit ProlongationSpec(double averaging) : delta(averaging) {
    if (!(delta >= 0.0 && delta <= 1.0)) {
      throw ConfigError("averaging constant must lie in [0, 1], got " +
                        std::to_string(delta));
    }
  }
};

// Moves trained coarse values to the opposite-parity neighbours:
//   block(j) := (1 - delta) * snapshot(j) + delta * block(j - 1)
// for every opposite-parity block j whose predecessor j - 1 exists. The
// trained blocks already hold their new values through aliasing, so with
// EVEN parity the first fine block has no coarse predecessor and is skipped.
template <typename T>
void prolongate(ModelParams<T>& fine, Parity parity,
                const ParitySnapshot<T>& snapshot, const ProlongationSpec& spec) {
  const auto expected = parity_indices(opposite(parity), fine.blocks.size());
  if (snapshot.trained != parity || snapshot.indices != expected ||
      snapshot.blocks.size() != expected.size()) {
    throw ContractError("prolongate: snapshot does not cover the " +
                        std::string(to_string(opposite(parity))) +
                        " blocks of this model");
  }
  const T keep = static_cast<T>(1.0 - spec.delta);
  const T take = static_cast<T>(spec.delta);
  for (std::size_t n = 0; n < expected.size(); ++n) {
    const std::size_t j = expected[n];
    auto saved = snapshot.blocks[n].tensors();
    auto live = fine.blocks[j].tensors();
    for (std::size_t t = 0; t < live.size(); ++t) {
      if (saved[t]->shape() != live[t]->shape()) {
        throw ContractError("prolongate: snapshot block " + std::to_string(j + 1) +
                            " has shape " + shape_string(saved[t]->shape()));
      }
    }
    if (j == 0) {
      continue;
    }
    auto coarse = fine.blocks[j - 1].tensors();
    for (std::size_t t = 0; t < live.size(); ++t) {
      auto out = live[t]->data();
      auto old = saved[t]->data();
      auto trained = coarse[t]->data();
      // One rounding for the blend; exact when take * trained is.
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::fma(keep, old[i], take * trained[i]);
      }
    }
  }
}

struct MultilevelSchedule {
  std::size_t num_cycles = 35;
  std::size_t coarse_steps_per_model = 100;
  double delta = 0.25;
  double coarse_lr = 1.2e-3;
  // false: coarse steps draw fresh batches from the shared stream.
  // true: each coarse model replays the batches the fine stream will yield
  // next, and the fine stream is not advanced.
  bool replay_fine_batches = false;

  void validate() const {
    static_cast<void>(ProlongationSpec{delta});
    if (!(coarse_lr >= 0.0)) {
      throw ConfigError("coarse_lr must be non-negative");
    }
  }
};

enum class Level { fine, coarse_even, coarse_odd };

inline Level coarse_level(Parity p) {
  return p == Parity::even ? Level::coarse_even : Level::coarse_odd;
}

inline std::string_view to_string(Level level) {
  switch (level) {
    case Level::fine:
      return "FINE";
    case Level::coarse_even:
      return "COARSE_EVEN";
    case Level::coarse_odd:
      return "COARSE_ODD";
  }
  return "?";
}

struct StepEvent {
  Level level = Level::fine;
  std::size_t inner_step = 0;  // 1-based within a coarse phase, 0 for fine
  double loss = 0.0;
  double lr = 0.0;
  std::uint64_t cumulative_flops = 0;
  std::uint64_t tokens = 0;
};

template <typename T>
struct CycleContext {
  BatchStream& data;
  std::size_t micro_batches = 1;
  FlopCounter& flops;
  std::function<void(const StepEvent&)> on_step;
};

// EVEN phase then ODD phase: snapshot the untrained parity, train the coarse
// view for coarse_steps_per_model steps at the constant coarse rate, then
// prolongate. Only parameters move between levels; gradients are zeroed by
// every step.
template <typename T>
void run_coarse_cycle(ModelParams<T>& fine, const MultilevelSchedule& schedule,
                      CycleContext<T>& ctx) {
  schedule.validate();
  if (schedule.coarse_steps_per_model == 0) {
    return;
  }
  const BatchStream cycle_start = ctx.data;
  const std::uint64_t tokens_per_step =
      ctx.micro_batches * ctx.data.tokens_per_batch();
  for (Parity parity : {Parity::even, Parity::odd}) {
    const auto snapshot = snapshot_opposite_parity(fine, parity);
    const auto model = make_coarse_view(fine, parity).view();
    BatchStream replay = cycle_start;
    BatchStream& source = schedule.replay_fine_batches ? replay : ctx.data;
    for (std::size_t step = 1; step <= schedule.coarse_steps_per_model; ++step) {
      const double loss =
          train_step(model, source, ctx.micro_batches, schedule.coarse_lr);
      const std::uint64_t flops = ctx.flops.add_coarse_step();
      if (ctx.on_step) {
        ctx.on_step(StepEvent{coarse_level(parity), step, loss, schedule.coarse_lr,
                              flops, tokens_per_step});
      }
    }
    prolongate(fine, parity, snapshot, ProlongationSpec{schedule.delta});
  }
}

}  // namespace mlt

#endif  // MLT_MULTILEVEL_HPP_
