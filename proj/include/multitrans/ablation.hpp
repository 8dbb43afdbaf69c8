#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "multitrans/config.hpp"

namespace multitrans {

/// One full run: split with the config seed, build, train, evaluate the
/// validation and test parts.
struct Experiment {
  MultitransModel<float> model;
  DataSplit split;
  TrainResult result;
  std::optional<EvalReport> val;
  std::optional<EvalReport> test;
};

Experiment run_experiment(const Dataset& dataset, const RunConfig& config,
                          const EpochCallback& on_epoch = {});

/// A grid row: encoder variants (nullopt = modality absent) and fusion mode.
struct AblationCell {
  std::optional<ImageVariant> image;
  std::optional<TextVariant> text;
  FusionMode mode = FusionMode::multimodal;

  /// "image:text:mode" with "none" for an absent encoder.
  std::string key() const;
  bool operator==(const AblationCell&) const = default;
};

AblationCell parse_cell(std::string_view triple);

/// Comma-separated triples such as "standard:base:multimodal,none:base:text",
/// or the preset "table1" (three text-only, three image-only and three
/// multimodal rows).
std::vector<AblationCell> parse_grid(std::string_view spec);

struct CellMetrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;
};

struct AblationRow {
  AblationCell cell;
  std::vector<std::uint64_t> seeds;
  std::vector<CellMetrics> test;  // per seed
  std::vector<CellMetrics> val;   // per seed
  CellMetrics median_test;
  CellMetrics median_val;
  /// Empty when every seed succeeded.
  std::string error;

  bool failed() const { return !error.empty(); }
};

/// Median over seeds; AUC over the seeds where it is defined.
CellMetrics median(const std::vector<CellMetrics>& runs);

using CellCallback = std::function<void(const AblationCell&, std::uint64_t seed,
                                        const std::string& error)>;

/// Trains every (cell, seed) pair, `jobs` at a time on separate threads,
/// and merges by cell in grid order. A failing cell is marked and the grid
/// continues. `on_done` may be called from worker threads, one at a time.
std::vector<AblationRow> ablate(const Dataset& dataset, const RunConfig& base,
                                const std::vector<AblationCell>& grid,
                                const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1,
                                const CellCallback& on_done = {});

/// Unimodal rows before multimodal ones, then by descending median test
/// ACC; ties keep grid order.
std::vector<AblationRow> sort_rows(std::vector<AblationRow> rows);

/// Columns Method / Image-modal / Text-Modal / ACC / F1-score / AUC with
/// median test metrics; "None" marks an absent modality.
std::string format_table(const std::vector<AblationRow>& rows);

/// Tab-separated, one line per (cell, seed, split), for scripts.
std::string format_runs(const std::vector<AblationRow>& rows);

}  // namespace multitrans
