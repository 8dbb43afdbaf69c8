#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "multitrans/fusion.hpp"

namespace multitrans {

/// mRS 0..2 -> good outcome (0), 3..6 -> poor outcome (1).
/// Throws DataError outside 0..6.
std::int32_t dichotomize_mrs(int score);

struct Sample {
  std::string id;
  Image image;
  std::string text;
  std::vector<std::int32_t> tokens;
  std::vector<std::int32_t> segments;
  int mrs = 0;
  std::int32_t label = 0;

  ModelInput input() const { return {&image, tokens, segments}; }
};

struct Dataset {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  Vocabulary vocab;
  std::vector<Sample> samples;
};

/// Tokenizer settings applied when reports are read from disk.
struct TextLimits {
  std::size_t max_seq_len = 32;
  std::size_t num_segments = 2;
};

// MTIMG1 payload: the 6 magic bytes "MTIMG1", then H, W, C as uint32 LE,
// then H*W*C float32 LE values, row-major with channels fastest.
void write_image(const std::filesystem::path& path, const Image& image);
Image read_image(const std::filesystem::path& path);

/// Reads a tab-separated manifest:
///   #multitrans-manifest<TAB>1
///   #dims<TAB>H<TAB>W<TAB>C
///   #vocab<TAB>vocab file (relative to the manifest)
///   id<TAB>image file<TAB>text file<TAB>mrs
/// Images are scaled to [0,1] (values in (1, 255] are read as 8-bit
/// intensities); reports are tokenized with the dataset vocabulary.
/// Samples come back sorted by id. Errors name the offending row.
Dataset load_dataset(const std::filesystem::path& manifest, const TextLimits& limits = {});

/// A dataset directory maps to its manifest.tsv; other paths pass through.
std::filesystem::path resolve_manifest(const std::filesystem::path& path);

/// Writes vocab.txt, images/<id>.mtimg, texts/<id>.txt and, last,
/// manifest.tsv under `root`. Returns the manifest path.
std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& root);

struct SynthConfig {
  std::size_t n = 600;
  std::uint64_t seed = 1;
  /// Best accuracy any single-modality classifier can reach; [0.5, 1).
  double image_ceiling = 0.75;
  double text_ceiling = 0.75;
  /// Standard deviation of the Gaussian pixel noise.
  double noise = 0.05;
  /// Filler words per report section, drawn uniformly from this range.
  std::size_t filler_min = 0;
  std::size_t filler_max = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  /// Probability of a poor outcome.
  double poor_fraction = 0.5;
  TextLimits text;

  void validate() const;
};

/// Ground truth behind one generated sample.
struct GeneratorRecord {
  std::string id;
  int image_bit = 0;        // encoded by the square's quadrant
  int text_bit = 0;         // encoded by the finding keywords
  int image_marker = 0;     // bit shown by the image's bar marker
  bool image_leaked = false;  // marker copied from the label
  int text_marker = 0;      // bit shown by the impression keyword
  bool text_leaked = false;
  std::int32_t label = 0;   // image_bit XOR text_bit
  int mrs = 0;
};

struct SyntheticData {
  Dataset dataset;
  std::vector<GeneratorRecord> log;
};

/// XOR-coupled cross-modal data: label = image_bit XOR text_bit, so the
/// pair of modalities determines the label exactly while each alone is
/// uninformative. Each modality additionally carries a marker equal to the
/// label with probability 2u - 1 and a fair coin otherwise, which caps
/// single-modality accuracy at u.
SyntheticData generate_synthetic(const SynthConfig& config);

void write_generator_log(const std::filesystem::path& path, const std::vector<GeneratorRecord>& log);

}  // namespace multitrans
