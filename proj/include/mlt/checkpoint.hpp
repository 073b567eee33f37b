#ifndef MLT_CHECKPOINT_HPP_
#define MLT_CHECKPOINT_HPP_

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "mlt/config.hpp"
#include "mlt/data.hpp"
#include "mlt/errors.hpp"
#include "mlt/model.hpp"

namespace mlt {

// Binary layout, all integers little-endian u32:
//   magic "MLTC", version, vocab_size, context_length, embed_dim, num_blocks,
//   num_heads, ff_multiplier, scalar_bytes
// then raw little-endian parameter arrays: token_embedding,
// position_embedding, and per block w_q w_k w_v w_o w_ff1 w_ff2.
inline constexpr std::uint32_t kCheckpointMagic = 0x43544c4du;  // "MLTC"
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_scalar(std::vector<std::uint8_t>& out, T value) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const auto bits = std::bit_cast<Bits>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

template <typename T>
T get_scalar(const std::vector<std::uint8_t>& in, std::size_t offset) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<Bits>(in[offset + i]) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

inline std::filesystem::path manifest_path(const std::filesystem::path& checkpoint) {
  auto path = checkpoint;
  path.replace_extension(".manifest");
  return path;
}

}  // namespace detail

template <typename T>
void write_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params,
                      const RunConfig& run, std::uint64_t fine_step) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  const ModelConfig& c = params.config;
  std::vector<std::uint8_t> bytes;
  for (std::uint64_t field :
       {std::uint64_t{kCheckpointMagic}, std::uint64_t{kCheckpointVersion},
        std::uint64_t{c.vocab_size}, std::uint64_t{c.context_length},
        std::uint64_t{c.embed_dim}, std::uint64_t{c.num_blocks},
        std::uint64_t{c.num_heads}, std::uint64_t{c.ff_multiplier},
        std::uint64_t{sizeof(T)}}) {
    detail::put_u32(bytes, static_cast<std::uint32_t>(field));
  }
  for (const auto& named : params.parameters()) {
    for (T value : named.tensor.data()) {
      detail::put_scalar(bytes, value);
    }
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw InputError("cannot write checkpoint " + path.string());
    }
  }
  std::ofstream manifest(detail::manifest_path(path), std::ios::trunc);
  manifest << "# checkpoint manifest\n"
           << "fine_step = " << fine_step << "\n"
           << "param_count = " << param_count(c) << "\n"
           << "scalar_bytes = " << sizeof(T) << "\n"
           << format_config(run);
  if (!manifest) {
    throw InputError("cannot write checkpoint manifest for " + path.string());
  }
}

template <typename T>
ModelParams<T> read_checkpoint(const std::filesystem::path& path, double ln_eps = 1e-5) {
  const auto bytes = read_bytes(path);
  constexpr std::size_t kHeader = 9 * 4;
  if (bytes.size() < kHeader) {
    throw InputError(path.string() + ": truncated checkpoint header");
  }
  std::array<std::uint32_t, 9> field{};
  for (std::size_t i = 0; i < field.size(); ++i) {
    field[i] = detail::get_u32(bytes, 4 * i);
  }
  if (field[0] != kCheckpointMagic || field[1] != kCheckpointVersion) {
    throw InputError(path.string() + ": not a version 1 checkpoint");
  }
  if (field[8] != sizeof(T)) {
    throw InputError(path.string() + ": stored with " + std::to_string(field[8]) +
                     "-byte scalars");
  }
  ModelConfig config;
  config.vocab_size = field[2];
  config.context_length = field[3];
  config.embed_dim = field[4];
  config.num_blocks = field[5];
  config.num_heads = field[6];
  config.ff_multiplier = field[7];
  config.ln_eps = ln_eps;
  if (bytes.size() != kHeader + param_count(config) * sizeof(T)) {
    throw InputError(path.string() + ": size does not match its header");
  }
  ModelParams<T> params = init_params<T>(config, 0);
  std::size_t offset = kHeader;
  for (auto& named : params.parameters()) {
    for (T& value : named.tensor.data()) {
      value = detail::get_scalar<T>(bytes, offset);
      offset += sizeof(T);
    }
  }
  return params;
}

}  // namespace mlt

#endif  // MLT_CHECKPOINT_HPP_
