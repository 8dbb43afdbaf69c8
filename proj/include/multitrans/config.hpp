#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "multitrans/data.hpp"
#include "multitrans/fusion.hpp"
#include "multitrans/training.hpp"

namespace multitrans {

/// Everything a command needs, read from an indented `key: value` file:
///
///   seed: 7
///   model:
///     mode: multimodal
///     text:
///       variant: roberta
///   train:
///     epochs: 40
///
/// Unknown keys are rejected. `describe_config()` lists every key with its
/// default.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string data_path;
  std::string output_path;
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  /// Class scored as positive for F1, ROC and AUC.
  std::int32_t positive_class = kPoorOutcome;

  /// Pushes `seed` into the synth and train sections and checks every section.
  void finalize();
  /// Tokenizer limits derived from the text encoder settings.
  TextLimits text_limits() const { return {model.text.max_seq_len, model.text.num_segments}; }
};

/// Parses config text. `source` names the origin in error messages.
RunConfig parse_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Canonical echo: every key, in a fixed order, at full precision.
/// parse_config(echo_config(c)) reproduces c.
std::string echo_config(const RunConfig& config);

/// `key  default  description` lines for every accepted key.
std::string describe_config();

/// Seed precedence: flag > MULTITRANS_SEED > file > default.
void apply_seed_overrides(RunConfig& config, std::optional<std::uint64_t> flag);

/// Fills image dims and vocabulary size from a loaded dataset.
void adapt_to_dataset(RunConfig& config, const Dataset& dataset);

std::uint64_t parse_seed(std::string_view s);

}  // namespace multitrans
