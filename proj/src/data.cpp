#include "multitrans/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "binary_io.hpp"

namespace multitrans {

namespace fs = std::filesystem;

namespace {

constexpr char kImageMagic[6] = {'M', 'T', 'I', 'M', 'G', '1'};
constexpr const char* kManifestName = "manifest.tsv";
constexpr const char* kVocabName = "vocab.txt";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::size_t parse_size(const std::string& s, const std::string& context) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw DataError(context + ": expected a non-negative integer, got '" + s + "'");
  }
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

std::int32_t dichotomize_mrs(int score) {
  if (score < 0 || score > 6) {
    throw DataError("mRS score " + std::to_string(score) + " outside 0..6");
  }
  return score <= 2 ? kGoodOutcome : kPoorOutcome;
}

// ---------------------------------------------------------------------------
// Images

void write_image(const fs::path& path, const Image& image) {
  if (image.pixels.size() != image.height * image.width * image.channels) {
    throw DataError("image payload size does not match its dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out.write(kImageMagic, sizeof(kImageMagic));
  io::write_u32(out, static_cast<std::uint32_t>(image.height));
  io::write_u32(out, static_cast<std::uint32_t>(image.width));
  io::write_u32(out, static_cast<std::uint32_t>(image.channels));
  for (float v : image.pixels) io::write_f32(out, v);
  if (!out) throw DataError("failed writing image " + path.string());
}

Image read_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  char magic[sizeof(kImageMagic)] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kImageMagic, sizeof(magic)) != 0) {
    throw DataError(path.string() + ": not an MTIMG1 image");
  }
  const std::string what = "image " + path.string();
  Image img;
  img.height = io::read_u32(in, what);
  img.width = io::read_u32(in, what);
  img.channels = io::read_u32(in, what);
  const auto count = img.height * img.width * img.channels;
  if (count == 0) throw DataError(what + ": zero-sized image");
  img.pixels.resize(count);
  for (auto& v : img.pixels) v = io::read_f32(in, what);
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(what + ": trailing bytes");
  return img;
}

// ---------------------------------------------------------------------------
// Manifest

Dataset load_dataset(const fs::path& manifest, const TextLimits& limits) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  const auto root = manifest.parent_path();
  Dataset ds;
  bool have_dims = false, have_vocab = false;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = manifest.string() + ":" + std::to_string(line_no);
    auto fields = split_tabs(line);
    if (line[0] == '#') {
      if (fields[0] == "#dims") {
        if (fields.size() != 4) throw DataError(where + ": #dims needs H, W and C");
        ds.height = parse_size(fields[1], where);
        ds.width = parse_size(fields[2], where);
        ds.channels = parse_size(fields[3], where);
        have_dims = true;
      } else if (fields[0] == "#vocab") {
        if (fields.size() != 2) throw DataError(where + ": #vocab needs a file name");
        ds.vocab = Vocabulary::load(root / fields[1]);
        have_vocab = true;
      }
      continue;
    }
    if (!have_dims || !have_vocab) throw DataError(where + ": sample row before #dims/#vocab header");
    if (fields.size() != 4) {
      throw DataError(where + ": expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    }
    Sample s;
    s.id = fields[0];
    if (s.id.empty()) throw DataError(where + ": empty sample id");
    if (!ids.insert(s.id).second) throw DataError(where + ": duplicate sample id '" + s.id + "'");
    const auto row = where + " (sample '" + s.id + "')";
    int mrs = 0;
    try {
      std::size_t used = 0;
      mrs = std::stoi(fields[3], &used);
      if (used != fields[3].size()) throw std::invalid_argument(fields[3]);
    } catch (const std::exception&) {
      throw DataError(row + ": mrs '" + fields[3] + "' is not an integer");
    }
    if (mrs < 0 || mrs > 6) throw DataError(row + ": mrs " + std::to_string(mrs) + " outside 0..6");
    s.mrs = mrs;
    s.label = dichotomize_mrs(mrs);

    const auto image_path = root / fields[1];
    const auto text_path = root / fields[2];
    if (!fs::exists(image_path)) throw DataError(row + ": missing image file " + image_path.string());
    if (!fs::exists(text_path)) throw DataError(row + ": missing text file " + text_path.string());
    s.image = read_image(image_path);
    if (s.image.height != ds.height || s.image.width != ds.width || s.image.channels != ds.channels) {
      throw DataError(row + ": image is " + std::to_string(s.image.height) + "x" +
                      std::to_string(s.image.width) + "x" + std::to_string(s.image.channels) +
                      " but header says " + std::to_string(ds.height) + "x" +
                      std::to_string(ds.width) + "x" + std::to_string(ds.channels));
    }
    const auto [lo, hi] = std::minmax_element(s.image.pixels.begin(), s.image.pixels.end());
    if (*lo < 0.0f || !std::isfinite(*hi) || *hi > 255.0f) {
      throw DataError(row + ": pixel values outside [0, 255]");
    }
    if (*hi > 1.0f) {
      for (auto& v : s.image.pixels) v /= 255.0f;
    }
    s.text = read_text_file(text_path);
    auto tok = tokenize_segments(s.text, ds.vocab, limits.max_seq_len, limits.num_segments);
    s.tokens = std::move(tok.ids);
    s.segments = std::move(tok.segments);
    ds.samples.push_back(std::move(s));
  }
  std::sort(ds.samples.begin(), ds.samples.end(),
            [](const Sample& a, const Sample& b) { return a.id < b.id; });
  return ds;
}

fs::path resolve_manifest(const fs::path& path) {
  std::error_code ec;
  return fs::is_directory(path, ec) ? path / kManifestName : path;
}

fs::path write_dataset(const Dataset& dataset, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (ec) throw DataError("cannot create " + (root / "images").string() + ": " + ec.message());
  fs::create_directories(root / "texts", ec);
  if (ec) throw DataError("cannot create " + (root / "texts").string() + ": " + ec.message());

  dataset.vocab.save(root / kVocabName);
  std::ostringstream manifest;
  manifest << "#multitrans-manifest\t1\n";
  manifest << "#dims\t" << dataset.height << '\t' << dataset.width << '\t' << dataset.channels << '\n';
  manifest << "#vocab\t" << kVocabName << '\n';
  for (const auto& s : dataset.samples) {
    if (s.id.empty() || s.id.find_first_of("\t\n/\\") != std::string::npos) {
      throw DataError("sample id '" + s.id + "' is not usable as a file name");
    }
    const auto image_rel = "images/" + s.id + ".mtimg";
    const auto text_rel = "texts/" + s.id + ".txt";
    write_image(root / image_rel, s.image);
    write_text_file(root / text_rel, s.text);
    manifest << s.id << '\t' << image_rel << '\t' << text_rel << '\t' << s.mrs << '\n';
  }
  const auto path = root / kManifestName;
  const auto tmp = root / (std::string(kManifestName) + ".tmp");
  write_text_file(tmp, manifest.str());
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot finalize manifest " + path.string() + ": " + ec.message());
  return path;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

const std::vector<std::string> kFindingWords[2] = {
    {"patent", "recanalized", "reperfused"},
    {"occluded", "thrombus", "stenosis"},
};

const std::vector<std::string> kImpressionWords[2] = {
    {"ambulatory", "independent", "stable"},
    {"dependent", "bedbound", "deteriorated"},
};

const std::vector<std::string> kFillerWords = {
    "patient", "admitted", "with", "left", "right", "sided", "weakness", "aphasia",
    "onset", "hours", "prior", "history", "of", "hypertension", "diabetes", "atrial",
    "fibrillation", "noted", "on", "ct", "scan", "territory", "middle", "cerebral",
    "artery", "treated", "observed", "ward", "discharged", "day", "follow", "up",
    "clinic", "family", "present", "medication", "review", "baseline", "vessel", "imaging",
};

Vocabulary synthetic_vocabulary() {
  std::vector<std::string> words = {":", ".", "findings", "impression"};
  for (const auto& set : kFindingWords) words.insert(words.end(), set.begin(), set.end());
  for (const auto& set : kImpressionWords) words.insert(words.end(), set.begin(), set.end());
  words.insert(words.end(), kFillerWords.begin(), kFillerWords.end());
  return Vocabulary::from_words(words);
}

template <typename V>
const typename V::value_type& pick(const V& items, Rng& rng) {
  return items[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(items.size()) - 1))];
}

void paint_rect(Image& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w,
                double level, double noise, Rng& rng) {
  for (std::size_t y = top; y < top + h; ++y) {
    for (std::size_t x = left; x < left + w; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double v = level + rng.normal(0.0, noise);
        img.pixels[(y * img.width + x) * img.channels + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

// Square centred in the top-left (bit 0) or bottom-right (bit 1) quadrant;
// bar marker centred in the top-right (0) or bottom-left (1) quadrant.
Image synth_image(const SynthConfig& cfg, int square_bit, int marker_bit, Rng& rng) {
  Image img{cfg.height, cfg.width, cfg.channels, std::vector<float>(cfg.height * cfg.width * cfg.channels)};
  paint_rect(img, 0, 0, cfg.height, cfg.width, 0.1, cfg.noise, rng);
  const auto half_h = cfg.height / 2, half_w = cfg.width / 2;
  const auto side = std::max<std::size_t>(1, std::min(cfg.height, cfg.width) / 4);
  {
    const auto top = (square_bit ? half_h : 0) + (half_h - side) / 2;
    const auto left = (square_bit ? half_w : 0) + (half_w - side) / 2;
    paint_rect(img, top, left, side, side, 0.9, cfg.noise, rng);
  }
  {
    const auto bar_h = std::max<std::size_t>(1, side / 4);
    const auto bar_w = std::min(half_w, side + side / 2);
    const auto top = (marker_bit ? half_h : 0) + (half_h - bar_h) / 2;
    const auto left = (marker_bit ? 0 : half_w) + (half_w - bar_w) / 2;
    paint_rect(img, top, left, bar_h, bar_w, 0.9, cfg.noise, rng);
  }
  return img;
}

std::string synth_report(const SynthConfig& cfg, int finding_bit, int marker_bit, Rng& rng) {
  const auto lo = static_cast<std::int64_t>(cfg.filler_min);
  const auto hi = static_cast<std::int64_t>(cfg.filler_max);
  std::vector<std::string> findings;
  auto keys = kFindingWords[finding_bit];
  rng.shuffle(keys);
  findings.push_back(keys[0]);
  findings.push_back(keys[1]);
  const auto filler1 = rng.integer(lo, hi);
  for (std::int64_t i = 0; i < filler1; ++i) findings.push_back(pick(kFillerWords, rng));
  rng.shuffle(findings);

  std::vector<std::string> impression{pick(kImpressionWords[marker_bit], rng)};
  const auto filler2 = rng.integer(lo, hi);
  for (std::int64_t i = 0; i < filler2; ++i) impression.push_back(pick(kFillerWords, rng));
  rng.shuffle(impression);

  std::string text = "findings:";
  for (const auto& w : findings) text += " " + w;
  text += ".\nimpression:";
  for (const auto& w : impression) text += " " + w;
  text += ".\n";
  return text;
}

}  // namespace

void SynthConfig::validate() const {
  if (n == 0) throw ConfigError("data.n must be positive");
  for (double u : {image_ceiling, text_ceiling}) {
    if (!(u >= 0.5 && u < 1.0)) throw ConfigError("data ceilings must lie in [0.5, 1)");
  }
  if (!(poor_fraction > 0.0 && poor_fraction < 1.0)) {
    throw ConfigError("data.poor_fraction must lie in (0, 1)");
  }
  if (noise < 0.0) throw ConfigError("data.noise must be non-negative");
  if (filler_min > filler_max) throw ConfigError("data.filler_min must not exceed data.filler_max");
  if (height < 4 || width < 4 || channels == 0) throw ConfigError("data image must be at least 4x4");
  if (text.max_seq_len < 2) throw ConfigError("data.max_seq_len must be at least 2");
}

SyntheticData generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SyntheticData out;
  auto& ds = out.dataset;
  ds.height = cfg.height;
  ds.width = cfg.width;
  ds.channels = cfg.channels;
  ds.vocab = synthetic_vocabulary();
  const int width = std::max<int>(5, static_cast<int>(std::to_string(cfg.n).size()));
  for (std::size_t i = 0; i < cfg.n; ++i) {
    GeneratorRecord rec;
    auto num = std::to_string(i);
    rec.id = "s" + std::string(static_cast<std::size_t>(std::max<int>(0, width - static_cast<int>(num.size()))), '0') + num;
    rec.label = rng.bernoulli(cfg.poor_fraction) ? kPoorOutcome : kGoodOutcome;
    rec.image_bit = rng.bernoulli(0.5) ? 1 : 0;
    rec.text_bit = rec.label ^ rec.image_bit;
    rec.image_leaked = rng.bernoulli(2.0 * cfg.image_ceiling - 1.0);
    rec.image_marker = rec.image_leaked ? rec.label : (rng.bernoulli(0.5) ? 1 : 0);
    rec.text_leaked = rng.bernoulli(2.0 * cfg.text_ceiling - 1.0);
    rec.text_marker = rec.text_leaked ? rec.label : (rng.bernoulli(0.5) ? 1 : 0);
    rec.mrs = rec.label == kGoodOutcome ? static_cast<int>(rng.integer(0, 2))
                                        : static_cast<int>(rng.integer(3, 6));

    Sample s;
    s.id = rec.id;
    s.image = synth_image(cfg, rec.image_bit, rec.image_marker, rng);
    s.text = synth_report(cfg, rec.text_bit, rec.text_marker, rng);
    auto tok = tokenize_segments(s.text, ds.vocab, cfg.text.max_seq_len, cfg.text.num_segments);
    s.tokens = std::move(tok.ids);
    s.segments = std::move(tok.segments);
    s.mrs = rec.mrs;
    s.label = dichotomize_mrs(rec.mrs);
    ds.samples.push_back(std::move(s));
    out.log.push_back(std::move(rec));
  }
  return out;
}

void write_generator_log(const fs::path& path, const std::vector<GeneratorRecord>& log) {
  std::ostringstream ss;
  ss << "#id\timage_bit\ttext_bit\timage_marker\timage_leaked\ttext_marker\ttext_leaked\tlabel\tmrs\n";
  for (const auto& r : log) {
    ss << r.id << '\t' << r.image_bit << '\t' << r.text_bit << '\t' << r.image_marker << '\t'
       << r.image_leaked << '\t' << r.text_marker << '\t' << r.text_leaked << '\t' << r.label
       << '\t' << r.mrs << '\n';
  }
  write_text_file(path, ss.str());
}

}  // namespace multitrans
