#ifndef MLT_FLOPS_HPP_
#define MLT_FLOPS_HPP_

#include <cstdint>

#include "mlt/errors.hpp"
#include "mlt/model.hpp"

namespace mlt {

// tokens · (2·(12·N·d² + V·d) + 4·N·S·d).
//
// Weight matmuls (blocks and the tied projection) cost 2 FLOPs per
// multiply-add; attention scores and the value mix are charged at the full
// context length. Embedding and position lookups are free.
inline std::uint64_t forward_flops(const ModelConfig& config, std::uint64_t tokens) {
  if (tokens == 0) {
    throw ContractError("forward_flops: tokens must be at least 1");
  }
  const std::uint64_t n = config.num_blocks;
  const std::uint64_t d = config.embed_dim;
  const std::uint64_t matmul_params = n * block_param_count(config) +
                                      config.vocab_size * d;
  const std::uint64_t attention = 4 * n * config.context_length * d;
  return tokens * (2 * matmul_params + attention);
}

// A training step costs three forward passes.
inline std::uint64_t train_step_flops(const ModelConfig& config,
                                      std::uint64_t tokens) {
  return 3 * forward_flops(config, tokens);
}

struct CostModel {
  std::uint64_t fine_step = 0;
  std::uint64_t coarse_step = 0;

  static CostModel from(const ModelConfig& fine, std::uint64_t tokens_per_step) {
    return {train_step_flops(fine, tokens_per_step),
            train_step_flops(fine.coarse(), tokens_per_step)};
  }
};

class FlopCounter {
 public:
  explicit FlopCounter(CostModel costs) : costs_(costs) {}

  std::uint64_t add_fine_step() { return total_ += costs_.fine_step; }
  std::uint64_t add_coarse_step() { return total_ += costs_.coarse_step; }
  std::uint64_t total() const { return total_; }
  const CostModel& costs() const { return costs_; }

 private:
  CostModel costs_;
  std::uint64_t total_ = 0;
};

}  // namespace mlt

#endif  // MLT_FLOPS_HPP_
