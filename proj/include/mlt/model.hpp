#ifndef MLT_MODEL_HPP_
#define MLT_MODEL_HPP_

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mlt/errors.hpp"
#include "mlt/ops.hpp"
#include "mlt/tape.hpp"
#include "mlt/tensor.hpp"

namespace mlt {

struct ModelConfig {
  std::size_t vocab_size = 256;
  std::size_t context_length = 128;
  std::size_t embed_dim = 128;
  std::size_t num_blocks = 12;
  std::size_t num_heads = 8;
  std::size_t ff_multiplier = 4;
  double ln_eps = 1e-5;

  // Checks the architecture of a trainable (fine-level) model.
  void validate() const {
    if (vocab_size == 0 || context_length == 0 || embed_dim == 0 ||
        num_blocks == 0 || num_heads == 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (num_blocks % 2 != 0) {
      throw ConfigError("num_blocks must be even, got " +
                        std::to_string(num_blocks));
    }
    if (embed_dim % num_heads != 0) {
      throw ConfigError("embed_dim " + std::to_string(embed_dim) +
                        " is not divisible by num_heads " +
                        std::to_string(num_heads));
    }
    if (ff_multiplier != 4) {
      throw ConfigError("ff_multiplier is fixed at 4");
    }
    if (!(ln_eps > 0.0)) {
      throw ConfigError("ln_eps must be positive");
    }
  }

  // Same architecture with half the blocks.
  ModelConfig coarse() const {
    ModelConfig c = *this;
    c.num_blocks = num_blocks / 2;
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

inline std::uint64_t block_param_count(const ModelConfig& config) {
  const std::uint64_t d = config.embed_dim;
  return 4 * d * d + 2 * d * (config.ff_multiplier * d);
}

// V·d + S·d + N·12·d²; the token table doubles as the output projection.
inline std::uint64_t param_count(const ModelConfig& config) {
  const std::uint64_t d = config.embed_dim;
  return config.vocab_size * d + config.context_length * d +
         config.num_blocks * block_param_count(config);
}

template <typename T>
struct BlockParams {
  Tensor<T> w_q;
  Tensor<T> w_k;
  Tensor<T> w_v;
  Tensor<T> w_o;
  Tensor<T> w_ff1;
  Tensor<T> w_ff2;

  static constexpr std::array<const char*, 6> kNames = {
      "w_q", "w_k", "w_v", "w_o", "w_ff1", "w_ff2"};

  std::array<Tensor<T>*, 6> tensors() {
    return {&w_q, &w_k, &w_v, &w_o, &w_ff1, &w_ff2};
  }
  std::array<const Tensor<T>*, 6> tensors() const {
    return {&w_q, &w_k, &w_v, &w_o, &w_ff1, &w_ff2};
  }

  BlockParams clone() const {
    BlockParams copy;
    auto dst = copy.tensors();
    auto src = tensors();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      *dst[i] = src[i]->clone();
    }
    return copy;
  }
};

// A forward-ready selection of blocks plus the shared tables. Views alias
// parameter storage; they never own any.
template <typename T>
struct ModelView {
  ModelConfig config;  // num_blocks == blocks.size()
  Tensor<T> token_embedding;
  Tensor<T> position_embedding;
  std::vector<BlockParams<T>> blocks;
  std::vector<std::size_t> fine_indices;  // 0-based fine block per slot

  std::vector<NamedTensor<T>> parameters() const {
    std::vector<NamedTensor<T>> out;
    out.push_back({"token_embedding", token_embedding});
    out.push_back({"position_embedding", position_embedding});
    for (std::size_t slot = 0; slot < blocks.size(); ++slot) {
      auto tensors = blocks[slot].tensors();
      for (std::size_t j = 0; j < tensors.size(); ++j) {
        out.push_back({"blocks." + std::to_string(fine_indices[slot] + 1) + "." +
                           BlockParams<T>::kNames[j],
                       *tensors[j]});
      }
    }
    return out;
  }
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  Tensor<T> token_embedding;     // V×d, also the output projection
  Tensor<T> position_embedding;  // S×d
  std::vector<BlockParams<T>> blocks;

  ModelView<T> view() const {
    ModelView<T> v{config, token_embedding, position_embedding, blocks, {}};
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      v.fine_indices.push_back(i);
    }
    return v;
  }

  std::vector<NamedTensor<T>> parameters() const { return view().parameters(); }

  std::uint64_t element_count() const {
    std::uint64_t total = token_embedding.numel() + position_embedding.numel();
    for (const auto& block : blocks) {
      for (const Tensor<T>* t : block.tensors()) {
        total += t->numel();
      }
    }
    return total;
  }

  ModelParams clone() const {
    ModelParams copy;
    copy.config = config;
    copy.token_embedding = token_embedding.clone();
    copy.position_embedding = position_embedding.clone();
    for (const auto& block : blocks) {
      copy.blocks.push_back(block.clone());
    }
    for (auto& named : copy.parameters()) {
      named.tensor.set_requires_grad(true);
    }
    return copy;
  }

  void zero_grad() {
    for (auto& named : parameters()) {
      named.tensor.zero_grad();
    }
  }
};

inline constexpr double kInitStd = 0.02;

// Embeddings and block weights ~ N(0, 0.02²); W_o and W_ff2 additionally
// scaled by 1/sqrt(2N). Values are drawn in double, so float and double
// models built from one seed agree up to rounding.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  const double residual_scale =
      1.0 / std::sqrt(2.0 * static_cast<double>(config.num_blocks));
  auto make = [&](std::size_t rows, std::size_t cols, double scale) {
    std::vector<T> values(rows * cols);
    for (T& value : values) {
      value = static_cast<T>(normal(rng) * scale);
    }
    return Tensor<T>(Shape{rows, cols}, std::move(values), true);
  };
  const std::size_t d = config.embed_dim;
  const std::size_t ff = config.ff_multiplier * d;
  ModelParams<T> params;
  params.config = config;
  params.token_embedding = make(config.vocab_size, d, 1.0);
  params.position_embedding = make(config.context_length, d, 1.0);
  for (std::size_t i = 0; i < config.num_blocks; ++i) {
    BlockParams<T> block;
    block.w_q = make(d, d, 1.0);
    block.w_k = make(d, d, 1.0);
    block.w_v = make(d, d, 1.0);
    block.w_o = make(d, d, residual_scale);
    block.w_ff1 = make(d, ff, 1.0);
    block.w_ff2 = make(ff, d, residual_scale);
    params.blocks.push_back(std::move(block));
  }
  return params;
}

// x + SA(LN(x)) + FF(LN(x + SA(LN(x)))) for rows of `batch` sequences.
template <typename T>
Tensor<T> block_forward(Tape<T>& tape, const BlockParams<T>& block,
                        const Tensor<T>& x, std::size_t batch,
                        std::size_t heads, T eps) {
  const Tensor<T> h = layer_norm(tape, x, eps);
  const Tensor<T> q = matmul(tape, h, block.w_q);
  const Tensor<T> k = matmul(tape, h, block.w_k);
  const Tensor<T> v = matmul(tape, h, block.w_v);
  const Tensor<T> attn = causal_self_attention(tape, q, k, v, batch, heads);
  const Tensor<T> y = add(tape, x, matmul(tape, attn, block.w_o));
  const Tensor<T> z = layer_norm(tape, y, eps);
  const Tensor<T> hidden = gelu(tape, matmul(tape, z, block.w_ff1));
  return add(tape, y, matmul(tape, hidden, block.w_ff2));
}

// Logits [batch*seq × V] for `batch` equal-length sequences laid out
// back to back in `tokens`.
template <typename T>
Tensor<T> forward(Tape<T>& tape, const ModelView<T>& model,
                  std::span<const TokenId> tokens, std::size_t batch = 1) {
  const ModelConfig& config = model.config;
  if (batch == 0 || tokens.empty() || tokens.size() % batch != 0) {
    throw InputError("forward: " + std::to_string(tokens.size()) +
                     " tokens do not form " + std::to_string(batch) +
                     " sequences");
  }
  const std::size_t seq = tokens.size() / batch;
  if (seq > config.context_length) {
    throw InputError("forward: sequence length " + std::to_string(seq) +
                     " exceeds context length " +
                     std::to_string(config.context_length));
  }
  for (TokenId id : tokens) {
    if (id >= config.vocab_size) {
      throw InputError("forward: token id " + std::to_string(id) +
                       " out of range for vocabulary of size " +
                       std::to_string(config.vocab_size));
    }
  }
  std::vector<TokenId> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    positions[i] = static_cast<TokenId>(i % seq);
  }
  const T eps = static_cast<T>(config.ln_eps);
  Tensor<T> x = add(tape, gather_rows(tape, model.token_embedding, tokens),
                    gather_rows(tape, model.position_embedding,
                                std::span<const TokenId>(positions)));
  for (const auto& block : model.blocks) {
    x = block_forward(tape, block, x, batch, config.num_heads, eps);
  }
  return matmul_transposed(tape, layer_norm(tape, x, eps), model.token_embedding);
}

template <typename T>
Tensor<T> forward(Tape<T>& tape, const ModelParams<T>& params,
                  std::span<const TokenId> tokens, std::size_t batch = 1) {
  return forward(tape, params.view(), tokens, batch);
}

// Mean next-token cross-entropy.
template <typename T>
Tensor<T> model_loss(Tape<T>& tape, const ModelView<T>& model,
                     std::span<const TokenId> inputs,
                     std::span<const TokenId> targets, std::size_t batch) {
  return cross_entropy(tape, forward(tape, model, inputs, batch), targets);
}

}  // namespace mlt

#endif  // MLT_MODEL_HPP_
