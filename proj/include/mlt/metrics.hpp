#ifndef MLT_METRICS_HPP_
#define MLT_METRICS_HPP_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlt/errors.hpp"
#include "mlt/multilevel.hpp"

namespace mlt {

// One metrics row. `step` is the fine-level step the row belongs to; coarse
// rows carry the fine step whose cycle they ran in.
struct RunRecord {
  std::uint64_t step = 0;
  Level level = Level::fine;
  std::uint64_t inner_step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::uint64_t cumulative_flops = 0;
  std::uint64_t tokens_seen = 0;
  std::uint64_t seed = 0;
  double wall_ms = 0.0;
};

inline Level parse_level(const std::string& text) {
  for (Level level : {Level::fine, Level::coarse_even, Level::coarse_odd}) {
    if (text == to_string(level)) {
      return level;
    }
  }
  throw InputError("unknown level '" + text + "'");
}

inline nlohmann::ordered_json to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["level"] = std::string(to_string(r.level));
  j["inner_step"] = r.inner_step;
  j["loss"] = r.loss;
  j["lr"] = r.lr;
  j["cumulative_flops"] = r.cumulative_flops;
  j["tokens_seen"] = r.tokens_seen;
  j["seed"] = r.seed;
  j["wall_ms"] = r.wall_ms;
  return j;
}

inline RunRecord record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.step = j.at("step").get<std::uint64_t>();
  r.level = parse_level(j.at("level").get<std::string>());
  r.inner_step = j.at("inner_step").get<std::uint64_t>();
  r.loss = j.at("loss").get<double>();
  r.lr = j.at("lr").get<double>();
  r.cumulative_flops = j.at("cumulative_flops").get<std::uint64_t>();
  r.tokens_seen = j.at("tokens_seen").get<std::uint64_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.wall_ms = j.at("wall_ms").get<double>();
  return r;
}

// Appends JSON Lines; each line is flushed so a crashed run keeps its rows.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path)
      : out_(path, std::ios::trunc) {
    if (!out_) {
      throw InputError("cannot write metrics to " + path.string());
    }
  }

  void write(const RunRecord& record) { out_ << to_json(record).dump() << '\n' << std::flush; }

  void write_error(std::uint64_t step, const std::string& message) {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["error"] = message;
    out_ << j.dump() << '\n' << std::flush;
  }

 private:
  std::ofstream out_;
};

struct MetricsLog {
  std::vector<RunRecord> records;
  std::optional<std::string> error;
};

inline MetricsLog read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open metrics " + path.string());
  }
  MetricsLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("error")) {
        log.error = j.at("error").get<std::string>();
      } else {
        log.records.push_back(record_from_json(j));
      }
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

}  // namespace mlt

#endif  // MLT_METRICS_HPP_
