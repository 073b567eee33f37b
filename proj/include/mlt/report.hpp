#ifndef MLT_REPORT_HPP_
#define MLT_REPORT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mlt/config.hpp"
#include "mlt/errors.hpp"
#include "mlt/flops.hpp"
#include "mlt/harness.hpp"
#include "mlt/metrics.hpp"

namespace mlt {

// Headline saving reported for the full-scale 16000-step runs. Carried as
// reference metadata; desk-scale runs are not expected to reproduce it.
inline constexpr double kReferenceFlopSavings = 0.44;

// Recomputes cumulative FLOPs from the level sequence. Returns the index of
// the first record whose logged value disagrees, or nothing.
inline std::optional<std::size_t> audit_cumulative_flops(
    const std::vector<RunRecord>& records, const CostModel& costs) {
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    total += records[i].level == Level::fine ? costs.fine_step : costs.coarse_step;
    if (records[i].cumulative_flops != total) {
      return i;
    }
  }
  return std::nullopt;
}

// Fine-level loss and cumulative FLOPs per seed, aligned by fine step.
struct Summary {
  std::vector<std::uint64_t> seeds;
  std::vector<std::uint64_t> steps;
  std::vector<std::vector<double>> loss;   // [seed][row]
  std::vector<std::vector<double>> flops;  // [seed][row]
  std::vector<double> loss_mean;
  std::vector<double> loss_std;  // sample (n-1); 0 for a single run
  std::vector<double> flops_mean;

  std::size_t rows() const { return steps.size(); }

  void compute_statistics() {
    const std::size_t n = seeds.size();
    loss_mean.assign(rows(), 0.0);
    loss_std.assign(rows(), 0.0);
    flops_mean.assign(rows(), 0.0);
    for (std::size_t r = 0; r < rows(); ++r) {
      double total = 0.0;
      double flop_total = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        total += loss[s][r];
        flop_total += flops[s][r];
      }
      const double mean = total / static_cast<double>(n);
      double sq = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        sq += (loss[s][r] - mean) * (loss[s][r] - mean);
      }
      loss_mean[r] = mean;
      loss_std[r] = n > 1 ? std::sqrt(sq / static_cast<double>(n - 1)) : 0.0;
      flops_mean[r] = flop_total / static_cast<double>(n);
    }
  }
};

inline std::map<std::string, std::string> read_run_config(const std::filesystem::path& dir) {
  std::ifstream in(dir / kConfigFile);
  if (!in) {
    throw AggregationError("missing " + (dir / kConfigFile).string());
  }
  return config_map(parse_config(in));
}

// Runs must share every config key except seed and out.
inline Summary aggregate(const std::vector<std::filesystem::path>& run_dirs) {
  if (run_dirs.empty()) {
    throw AggregationError("aggregate needs at least one run");
  }
  Summary summary;
  std::map<std::string, std::string> reference;
  for (std::size_t i = 0; i < run_dirs.size(); ++i) {
    auto cfg = read_run_config(run_dirs[i]);
    const std::uint64_t seed = std::stoull(cfg.at("seed"));
    cfg.erase("seed");
    cfg.erase("out");
    if (i == 0) {
      reference = cfg;
    } else {
      for (const auto& [key, value] : reference) {
        if (cfg.at(key) != value) {
          throw AggregationError("run " + run_dirs[i].string() + " differs in " + key +
                                 " (" + cfg.at(key) + " vs " + value + ")");
        }
      }
    }
    if (std::find(summary.seeds.begin(), summary.seeds.end(), seed) !=
        summary.seeds.end()) {
      throw AggregationError("seed " + std::to_string(seed) + " appears twice");
    }
    const MetricsLog log = read_metrics(run_dirs[i] / kMetricsFile);
    if (log.error) {
      throw AggregationError("run " + run_dirs[i].string() + " aborted: " + *log.error);
    }
    std::vector<std::uint64_t> steps;
    std::vector<double> loss;
    std::vector<double> flops;
    for (const RunRecord& r : log.records) {
      if (r.level == Level::fine) {
        steps.push_back(r.step);
        loss.push_back(r.loss);
        flops.push_back(static_cast<double>(r.cumulative_flops));
      }
    }
    if (i == 0) {
      summary.steps = steps;
    } else if (steps != summary.steps) {
      throw AggregationError("run " + run_dirs[i].string() +
                             " logged a different set of fine steps");
    }
    summary.seeds.push_back(seed);
    summary.loss.push_back(std::move(loss));
    summary.flops.push_back(std::move(flops));
  }
  if (summary.steps.empty()) {
    throw AggregationError("runs contain no fine-level records");
  }
  summary.compute_statistics();
  return summary;
}

namespace detail {

inline std::string fmt(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    cells.push_back(cell);
  }
  return cells;
}

}  // namespace detail

// step, loss_seed_<s>..., loss_mean, loss_std, flops_seed_<s>..., flops_mean
inline void write_summary_csv(const std::filesystem::path& path, const Summary& s) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw InputError("cannot write " + path.string());
  }
  out << "step";
  for (auto seed : s.seeds) {
    out << ",loss_seed_" << seed;
  }
  out << ",loss_mean,loss_std";
  for (auto seed : s.seeds) {
    out << ",flops_seed_" << seed;
  }
  out << ",flops_mean\n";
  for (std::size_t r = 0; r < s.rows(); ++r) {
    out << s.steps[r];
    for (std::size_t k = 0; k < s.seeds.size(); ++k) {
      out << ',' << detail::fmt(s.loss[k][r]);
    }
    out << ',' << detail::fmt(s.loss_mean[r]) << ',' << detail::fmt(s.loss_std[r]);
    for (std::size_t k = 0; k < s.seeds.size(); ++k) {
      out << ',' << detail::fmt(s.flops[k][r]);
    }
    out << ',' << detail::fmt(s.flops_mean[r]) << '\n';
  }
}

inline Summary read_summary_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open summary " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw InputError(path.string() + ": empty summary");
  }
  const auto header = detail::split_csv(line);
  Summary s;
  for (const auto& name : header) {
    if (name.rfind("loss_seed_", 0) == 0) {
      s.seeds.push_back(std::stoull(name.substr(10)));
    }
  }
  const std::size_t n = s.seeds.size();
  if (n == 0 || header.size() != 2 * n + 4) {
    throw InputError(path.string() + ": unexpected summary header");
  }
  s.loss.assign(n, {});
  s.flops.assign(n, {});
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size()) {
      throw InputError(path.string() + ": ragged row");
    }
    s.steps.push_back(std::stoull(cells[0]));
    for (std::size_t k = 0; k < n; ++k) {
      s.loss[k].push_back(std::stod(cells[1 + k]));
      s.flops[k].push_back(std::stod(cells[n + 3 + k]));
    }
  }
  s.compute_statistics();
  return s;
}

struct Reach {
  bool reached = false;
  std::uint64_t step = 0;
  double flops = 0.0;
  double loss = 0.0;  // loss at the reaching row, or the closest loss seen
};

// First row at which `loss` drops to `target` or below. If never, reports the
// row with the smallest loss.
inline Reach first_reach(const std::vector<std::uint64_t>& steps,
                         const std::vector<double>& loss,
                         const std::vector<double>& flops, double target) {
  Reach best;
  best.loss = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < steps.size(); ++r) {
    if (loss[r] <= target) {
      return Reach{true, steps[r], flops[r], loss[r]};
    }
    if (loss[r] < best.loss) {
      best = Reach{false, steps[r], flops[r], loss[r]};
    }
  }
  return best;
}

struct SeedReach {
  std::uint64_t seed = 0;
  Reach reach;
  std::optional<double> savings;  // vs the baseline mean curve
};

struct Comparison {
  double target_loss = 0.0;  // baseline final mean loss
  double baseline_final_loss = 0.0;
  double multilevel_final_loss = 0.0;
  Reach baseline;
  Reach multilevel;
  std::optional<double> savings;  // 1 - FLOPs_ml / FLOPs_sl
  std::vector<SeedReach> per_seed;
  double reference_savings = kReferenceFlopSavings;
};

inline Comparison compare(const Summary& baseline, const Summary& multilevel) {
  if (baseline.rows() == 0 || multilevel.rows() == 0) {
    throw AggregationError("compare needs non-empty summaries");
  }
  Comparison c;
  c.target_loss = baseline.loss_mean.back();
  c.baseline_final_loss = c.target_loss;
  c.multilevel_final_loss = multilevel.loss_mean.back();
  c.baseline = first_reach(baseline.steps, baseline.loss_mean, baseline.flops_mean,
                           c.target_loss);
  c.multilevel = first_reach(multilevel.steps, multilevel.loss_mean,
                             multilevel.flops_mean, c.target_loss);
  if (c.multilevel.reached) {
    c.savings = 1.0 - c.multilevel.flops / c.baseline.flops;
  }
  for (std::size_t k = 0; k < multilevel.seeds.size(); ++k) {
    SeedReach sr;
    sr.seed = multilevel.seeds[k];
    sr.reach = first_reach(multilevel.steps, multilevel.loss[k], multilevel.flops[k],
                           c.target_loss);
    if (sr.reach.reached) {
      sr.savings = 1.0 - sr.reach.flops / c.baseline.flops;
    }
    c.per_seed.push_back(sr);
  }
  return c;
}

inline std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * fraction);
  return buf;
}

inline std::string format_report(const Comparison& c, const Summary& baseline,
                                 const Summary& multilevel) {
  std::ostringstream out;
  auto g = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
  };
  out << "# Single-level vs multilevel\n\n";
  out << "baseline seeds: " << baseline.seeds.size()
      << ", multilevel seeds: " << multilevel.seeds.size() << "\n\n";
  out << "## Reaching the baseline final loss\n\n";
  out << "target loss (baseline final mean): " << g(c.target_loss) << "\n";
  out << "multilevel final mean loss: " << g(c.multilevel_final_loss) << "\n";
  out << "baseline FLOPs to target: " << g(c.baseline.flops) << " (step "
      << c.baseline.step << ")\n";
  if (c.multilevel.reached) {
    out << "multilevel FLOPs to target: " << g(c.multilevel.flops) << " (step "
        << c.multilevel.step << ")\n";
    out << "measured FLOP savings: " << percent(*c.savings) << "\n";
  } else {
    out << "multilevel FLOPs to target: not reached (closest loss " << g(c.multilevel.loss)
        << " at " << g(c.multilevel.flops) << " FLOPs, step " << c.multilevel.step
        << ")\n";
    out << "measured FLOP savings: not reached\n";
  }
  out << "reference FLOP savings (16000-step full-scale runs): "
      << percent(c.reference_savings) << "\n\n";
  out << "| seed | reached | step | FLOPs | savings |\n|---|---|---|---|---|\n";
  for (const auto& s : c.per_seed) {
    out << "| " << s.seed << " | " << (s.reach.reached ? "yes" : "no") << " | "
        << s.reach.step << " | " << g(s.reach.flops) << " | "
        << (s.savings ? percent(*s.savings) : std::string("-")) << " |\n";
  }
  out << "\n## Loss vs fine step\n\n";
  out << "| step | baseline mean | baseline std | multilevel mean | multilevel std |\n"
      << "|---|---|---|---|---|\n";
  const std::size_t rows = std::max(baseline.rows(), multilevel.rows());
  for (std::size_t r = 0; r < rows; ++r) {
    const bool b = r < baseline.rows();
    const bool m = r < multilevel.rows();
    out << "| " << (b ? baseline.steps[r] : multilevel.steps[r]) << " | "
        << (b ? g(baseline.loss_mean[r]) : "") << " | "
        << (b ? g(baseline.loss_std[r]) : "") << " | "
        << (m ? g(multilevel.loss_mean[r]) : "") << " | "
        << (m ? g(multilevel.loss_std[r]) : "") << " |\n";
  }
  out << "\n## Loss vs cumulative FLOPs\n\n";
  out << "| method | step | cumulative FLOPs | mean loss | std |\n|---|---|---|---|---|\n";
  for (const auto* s : {&baseline, &multilevel}) {
    const char* name = s == &baseline ? "baseline" : "multilevel";
    for (std::size_t r = 0; r < s->rows(); ++r) {
      out << "| " << name << " | " << s->steps[r] << " | " << g(s->flops_mean[r])
          << " | " << g(s->loss_mean[r]) << " | " << g(s->loss_std[r]) << " |\n";
    }
  }
  return out.str();
}

}  // namespace mlt

#endif  // MLT_REPORT_HPP_
