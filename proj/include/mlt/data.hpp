#ifndef MLT_DATA_HPP_
#define MLT_DATA_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <algorithm>
#include <string_view>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mlt/errors.hpp"
#include "mlt/ops.hpp"

namespace mlt {

struct TokenStream {
  std::vector<TokenId> ids;
  std::size_t vocab_size = 0;
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual TokenStream encode(std::span<const std::uint8_t> bytes) const = 0;
  virtual std::vector<std::uint8_t> decode(std::span<const TokenId> ids) const = 0;
};

// One token per byte value.
class ByteTokenizer final : public Tokenizer {
 public:
  std::size_t vocab_size() const override { return 256; }

  TokenStream encode(std::span<const std::uint8_t> bytes) const override {
    if (bytes.empty()) {
      throw InputError("tokenize: empty corpus");
    }
    return TokenStream{std::vector<TokenId>(bytes.begin(), bytes.end()), 256};
  }

  std::vector<std::uint8_t> decode(std::span<const TokenId> ids) const override {
    std::vector<std::uint8_t> out;
    out.reserve(ids.size());
    for (TokenId id : ids) {
      if (id > 255) {
        throw IndexError("detokenize: id " + std::to_string(id) +
                         " is not a byte");
      }
      out.push_back(static_cast<std::uint8_t>(id));
    }
    return out;
  }
};

inline TokenStream tokenize(std::string_view text,
                            const Tokenizer& tokenizer = ByteTokenizer{}) {
  const auto* begin = reinterpret_cast<const std::uint8_t*>(text.data());
  return tokenizer.encode(std::span<const std::uint8_t>(begin, text.size()));
}

inline std::string detokenize(std::span<const TokenId> ids,
                              const Tokenizer& tokenizer = ByteTokenizer{}) {
  const auto bytes = tokenizer.decode(ids);
  return std::string(bytes.begin(), bytes.end());
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InputError("cannot open " + path.string());
  }
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline TokenStream load_corpus(const std::filesystem::path& path,
                               const Tokenizer& tokenizer = ByteTokenizer{}) {
  const auto bytes = read_bytes(path);
  return tokenizer.encode(bytes);
}

// Pre-tokenized file: 16-byte header of little-endian u32 fields
// (magic, version, vocab_size, count) followed by `count` u32 ids.
inline constexpr std::uint32_t kTokenFileMagic = 0x4b544c4du;  // "MLTK"
inline constexpr std::uint32_t kTokenFileVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t value) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> bytes,
                             std::size_t offset) {
  std::uint32_t value = 0;
  for (int i = 0; i < 4; ++i) {
    value |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  }
  return value;
}

}  // namespace detail

inline void write_token_file(const std::filesystem::path& path,
                             const TokenStream& stream) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(16 + 4 * stream.ids.size());
  detail::put_u32(bytes, kTokenFileMagic);
  detail::put_u32(bytes, kTokenFileVersion);
  detail::put_u32(bytes, static_cast<std::uint32_t>(stream.vocab_size));
  detail::put_u32(bytes, static_cast<std::uint32_t>(stream.ids.size()));
  for (TokenId id : stream.ids) {
    detail::put_u32(bytes, id);
  }
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw InputError("cannot write " + path.string());
  }
}

inline TokenStream read_token_file(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < 16) {
    throw InputError(path.string() + ": truncated token file header");
  }
  if (detail::get_u32(bytes, 0) != kTokenFileMagic) {
    throw InputError(path.string() + ": bad token file magic");
  }
  if (detail::get_u32(bytes, 4) != kTokenFileVersion) {
    throw InputError(path.string() + ": unsupported token file version");
  }
  TokenStream stream;
  stream.vocab_size = detail::get_u32(bytes, 8);
  const std::size_t count = detail::get_u32(bytes, 12);
  if (bytes.size() != 16 + 4 * count) {
    throw InputError(path.string() + ": expected " + std::to_string(count) +
                     " ids");
  }
  if (count == 0) {
    throw InputError(path.string() + ": empty token file");
  }
  stream.ids.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    stream.ids[i] = detail::get_u32(bytes, 16 + 4 * i);
    if (stream.ids[i] >= stream.vocab_size) {
      throw InputError(path.string() + ": id " + std::to_string(stream.ids[i]) +
                       " at position " + std::to_string(i) +
                       " exceeds vocabulary");
    }
  }
  return stream;
}

// B sequences of length S; targets are inputs shifted by one position.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
};

// Copies the window starting at `offset` into row `row` of `batch`.
inline void fill_window(const TokenStream& stream, std::size_t offset,
                        std::size_t row, Batch& batch) {
  const std::size_t s = batch.seq_len;
  if (offset + s >= stream.ids.size()) {
    throw InputError("window at offset " + std::to_string(offset) +
                     " runs past the end of the stream");
  }
  std::copy_n(stream.ids.begin() + static_cast<std::ptrdiff_t>(offset), s,
              batch.inputs.begin() + static_cast<std::ptrdiff_t>(row * s));
  std::copy_n(stream.ids.begin() + static_cast<std::ptrdiff_t>(offset + 1), s,
              batch.targets.begin() + static_cast<std::ptrdiff_t>(row * s));
}

// Deterministic batch sequence: (seed, stream, B, S) fix every batch.
// Window offsets are drawn uniformly with replacement. Copying a cursor
// forks the sequence.
class BatchCursor {
 public:
  BatchCursor(std::uint64_t seed, std::size_t batch_size, std::size_t seq_len)
      : seed_(seed), batch_size_(batch_size), seq_len_(seq_len), rng_(seed) {
    if (batch_size == 0 || seq_len == 0) {
      throw ConfigError("batch size and sequence length must be positive");
    }
  }

  std::uint64_t seed() const { return seed_; }
  std::size_t batch_size() const { return batch_size_; }
  std::size_t seq_len() const { return seq_len_; }
  std::uint64_t batches_drawn() const { return drawn_; }

  Batch next(const TokenStream& stream) {
    if (stream.ids.size() <= seq_len_ + 1) {
      throw InputError("token stream of length " +
                       std::to_string(stream.ids.size()) +
                       " is too short for sequence length " +
                       std::to_string(seq_len_));
    }
    Batch batch{batch_size_, seq_len_,
                std::vector<TokenId>(batch_size_ * seq_len_),
                std::vector<TokenId>(batch_size_ * seq_len_)};
    std::uniform_int_distribution<std::size_t> offsets(
        0, stream.ids.size() - seq_len_ - 1);
    for (std::size_t row = 0; row < batch_size_; ++row) {
      fill_window(stream, offsets(rng_), row, batch);
    }
    ++drawn_;
    return batch;
  }

  bool operator==(const BatchCursor&) const = default;

 private:
  std::uint64_t seed_;
  std::size_t batch_size_;
  std::size_t seq_len_;
  std::mt19937_64 rng_;
  std::uint64_t drawn_ = 0;
};

inline Batch next_batch(BatchCursor& cursor, const TokenStream& stream) {
  return cursor.next(stream);
}

// A cursor bound to a shared stream.
class BatchStream {
 public:
  BatchStream(std::shared_ptr<const TokenStream> stream, BatchCursor cursor)
      : stream_(std::move(stream)), cursor_(std::move(cursor)) {}

  Batch next() { return cursor_.next(*stream_); }
  const BatchCursor& cursor() const { return cursor_; }
  const TokenStream& tokens() const { return *stream_; }
  std::size_t tokens_per_batch() const {
    return cursor_.batch_size() * cursor_.seq_len();
  }

 private:
  std::shared_ptr<const TokenStream> stream_;
  BatchCursor cursor_;
};

}  // namespace mlt

#endif  // MLT_DATA_HPP_
