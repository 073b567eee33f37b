#ifndef MLT_CONFIG_HPP_
#define MLT_CONFIG_HPP_

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mlt/errors.hpp"
#include "mlt/model.hpp"
#include "mlt/multilevel.hpp"
#include "mlt/optimizer.hpp"

namespace mlt {

enum class RunMode { single, multilevel };

inline std::string_view to_string(RunMode mode) {
  return mode == RunMode::single ? "single" : "multilevel";
}

// Defaults are the desk-scale configuration.
struct RunConfig {
  ModelConfig model{};
  RunMode mode = RunMode::single;
  std::size_t total_fine_steps = 600;
  MultilevelSchedule schedule{10, 20, 0.25, 1.2e-3, false};
  std::int64_t warmup_steps = 30;
  double lr_max = 1.2e-3;
  double lr_min = 1.2e-4;
  std::size_t accumulation = 4;
  std::size_t micro_batch_size = 16;
  std::string corpus;
  std::string token_file;
  std::uint64_t seed = 0;
  std::string out = "run";

  LrSchedule fine_schedule() const {
    return WarmupCosine{warmup_steps, static_cast<std::int64_t>(total_fine_steps),
                        lr_max, lr_min};
  }

  SgdConfig sgd() const { return SgdConfig{fine_schedule(), accumulation}; }

  std::uint64_t tokens_per_step() const {
    return static_cast<std::uint64_t>(micro_batch_size) * model.context_length *
           accumulation;
  }

  void validate() const {
    model.validate();
    if (total_fine_steps < 1) {
      throw ConfigError("total_fine_steps must be at least 1");
    }
    sgd().validate();
    if (micro_batch_size < 1) {
      throw ConfigError("micro_batch_size must be at least 1");
    }
    if (mode == RunMode::multilevel) {
      schedule.validate();
      if (schedule.num_cycles > total_fine_steps) {
        throw ConfigError("num_cycles exceeds total_fine_steps");
      }
    }
    if (corpus.empty() == token_file.empty()) {
      throw ConfigError("exactly one of corpus and token_file must be set");
    }
  }
};

namespace detail {

template <typename N>
N parse_number(std::string_view key, const std::string& text) {
  N value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value '" + text + "' for " + std::string(key));
  }
  return value;
}

inline double parse_real(std::string_view key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used != text.size()) {
      throw ConfigError("");
    }
    return value;
  } catch (const std::exception&) {
    throw ConfigError("invalid value '" + text + "' for " + std::string(key));
  }
}

inline bool parse_bool(std::string_view key, const std::string& text) {
  if (text == "true" || text == "1") {
    return true;
  }
  if (text == "false" || text == "0") {
    return false;
  }
  throw ConfigError("invalid value '" + text + "' for " + std::string(key));
}

inline std::string format_real(double value) {
  std::ostringstream out;
  out.precision(17);
  out << value;
  return out.str();
}

inline std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = text.find_last_not_of(" \t\r");
  return std::string(text.substr(first, last - first + 1));
}

struct ConfigKey {
  const char* name;
  const char* help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename N>
ConfigKey integer_key(const char* name, const char* help, N RunConfig::*member) {
  return {name, help,
          [member](const RunConfig& c) { return std::to_string(c.*member); },
          [member, name](RunConfig& c, const std::string& v) {
            c.*member = parse_number<N>(name, v);
          }};
}

template <typename N>
ConfigKey model_integer_key(const char* name, const char* help,
                            N ModelConfig::*member) {
  return {name, help,
          [member](const RunConfig& c) { return std::to_string(c.model.*member); },
          [member, name](RunConfig& c, const std::string& v) {
            c.model.*member = parse_number<N>(name, v);
          }};
}

}  // namespace detail

// Every key a config file or command line may set, in file order.
inline const std::vector<detail::ConfigKey>& config_keys() {
  using detail::ConfigKey;
  using detail::format_real;
  using detail::parse_real;
  static const std::vector<ConfigKey> keys = {
      detail::model_integer_key("vocab_size", "vocabulary size V",
                                &ModelConfig::vocab_size),
      detail::model_integer_key("context_length", "context / sequence length S",
                                &ModelConfig::context_length),
      detail::model_integer_key("embed_dim", "embedding width d",
                                &ModelConfig::embed_dim),
      detail::model_integer_key("num_blocks", "transformer blocks N (even)",
                                &ModelConfig::num_blocks),
      detail::model_integer_key("num_heads", "attention heads",
                                &ModelConfig::num_heads),
      {"ln_eps", "layer norm epsilon",
       [](const RunConfig& c) { return format_real(c.model.ln_eps); },
       [](RunConfig& c, const std::string& v) { c.model.ln_eps = parse_real("ln_eps", v); }},
      {"mode", "single | multilevel",
       [](const RunConfig& c) { return std::string(to_string(c.mode)); },
       [](RunConfig& c, const std::string& v) {
         if (v == "single") {
           c.mode = RunMode::single;
         } else if (v == "multilevel") {
           c.mode = RunMode::multilevel;
         } else {
           throw ConfigError("mode must be single or multilevel, got '" + v + "'");
         }
       }},
      detail::integer_key("total_fine_steps", "fine-level optimization steps",
                          &RunConfig::total_fine_steps),
      {"num_cycles", "fine steps followed by a coarse cycle",
       [](const RunConfig& c) { return std::to_string(c.schedule.num_cycles); },
       [](RunConfig& c, const std::string& v) {
         c.schedule.num_cycles = detail::parse_number<std::size_t>("num_cycles", v);
       }},
      {"coarse_steps_per_model", "SGD steps per coarse model per cycle",
       [](const RunConfig& c) { return std::to_string(c.schedule.coarse_steps_per_model); },
       [](RunConfig& c, const std::string& v) {
         c.schedule.coarse_steps_per_model =
             detail::parse_number<std::size_t>("coarse_steps_per_model", v);
       }},
      {"delta", "prolongation averaging constant in [0,1]",
       [](const RunConfig& c) { return format_real(c.schedule.delta); },
       [](RunConfig& c, const std::string& v) { c.schedule.delta = parse_real("delta", v); }},
      {"coarse_lr", "constant coarse learning rate",
       [](const RunConfig& c) { return format_real(c.schedule.coarse_lr); },
       [](RunConfig& c, const std::string& v) {
         c.schedule.coarse_lr = parse_real("coarse_lr", v);
       }},
      {"replay_fine_batches", "coarse models replay the fine batch sequence",
       [](const RunConfig& c) {
         return std::string(c.schedule.replay_fine_batches ? "true" : "false");
       },
       [](RunConfig& c, const std::string& v) {
         c.schedule.replay_fine_batches = detail::parse_bool("replay_fine_batches", v);
       }},
      detail::integer_key("warmup_steps", "linear warmup steps",
                          &RunConfig::warmup_steps),
      {"lr_max", "peak fine learning rate",
       [](const RunConfig& c) { return format_real(c.lr_max); },
       [](RunConfig& c, const std::string& v) { c.lr_max = parse_real("lr_max", v); }},
      {"lr_min", "final fine learning rate (0 decays to zero)",
       [](const RunConfig& c) { return format_real(c.lr_min); },
       [](RunConfig& c, const std::string& v) { c.lr_min = parse_real("lr_min", v); }},
      detail::integer_key("accumulation", "micro-batches per optimization step",
                          &RunConfig::accumulation),
      detail::integer_key("micro_batch_size", "sequences per micro-batch",
                          &RunConfig::micro_batch_size),
      {"corpus", "raw text corpus (byte tokens)",
       [](const RunConfig& c) { return c.corpus; },
       [](RunConfig& c, const std::string& v) { c.corpus = v; }},
      {"token_file", "pre-tokenized u32 id file",
       [](const RunConfig& c) { return c.token_file; },
       [](RunConfig& c, const std::string& v) { c.token_file = v; }},
      detail::integer_key("seed", "run seed", &RunConfig::seed),
      {"out", "output directory",
       [](const RunConfig& c) { return c.out; },
       [](RunConfig& c, const std::string& v) { c.out = v; }},
  };
  return keys;
}

inline void set_config_value(RunConfig& config, const std::string& key,
                             const std::string& value) {
  for (const auto& entry : config_keys()) {
    if (key == entry.name) {
      entry.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::map<std::string, std::string> config_map(const RunConfig& config) {
  std::map<std::string, std::string> out;
  for (const auto& entry : config_keys()) {
    out[entry.name] = entry.get(config);
  }
  return out;
}

inline std::string format_config(const RunConfig& config) {
  std::string text;
  for (const auto& entry : config_keys()) {
    text += std::string(entry.name) + " = " + entry.get(config) + "\n";
  }
  return text;
}

// `key = value` lines; '#' starts a comment. Relative corpus and token file
// paths are made absolute against `base_dir` when it is given.
inline RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {},
                              RunConfig config = {}) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = detail::trim(std::string_view(line).substr(0, hash));
    if (body.empty()) {
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    }
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    if ((key == "corpus" || key == "token_file") && !value.empty() &&
        !base_dir.empty() && std::filesystem::path(value).is_relative()) {
      value = std::filesystem::absolute(base_dir / value).lexically_normal().string();
    }
    set_config_value(config, key, value);
  }
  return config;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig config = {}) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config " + path.string());
  }
  const auto base = std::filesystem::absolute(path).parent_path();
  return parse_config(in, base, std::move(config));
}

}  // namespace mlt

#endif  // MLT_CONFIG_HPP_
