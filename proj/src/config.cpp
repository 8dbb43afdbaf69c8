#include "multitrans/config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace multitrans {

namespace {

// ---------------------------------------------------------------------------
// Scalar conversions

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

double to_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

bool to_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::string_view activation_name(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }

Activation to_activation(const std::string& key, const std::string& s) {
  if (s == "gelu") return Activation::gelu;
  if (s == "relu") return Activation::relu;
  throw ConfigError(key + ": unknown activation '" + s + "' (gelu, relu)");
}

std::string ratios_str(const SplitRatios& r) {
  return std::to_string(r.train) + ":" + std::to_string(r.val) + ":" + std::to_string(r.test);
}

SplitRatios to_ratios(const std::string& key, const std::string& s) {
  SplitRatios r;
  const auto a = s.find(':');
  const auto b = a == std::string::npos ? a : s.find(':', a + 1);
  if (b == std::string::npos) throw ConfigError(key + ": expected train:val:test, got '" + s + "'");
  r.train = to_u64(key, s.substr(0, a));
  r.val = to_u64(key, s.substr(a + 1, b - a - 1));
  r.test = to_u64(key, s.substr(b + 1));
  if (r.train + r.val + r.test != 10) throw ConfigError(key + ": parts must add up to 10");
  return r;
}

// ---------------------------------------------------------------------------
// Field table

struct Field {
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Get, typename Set>
Field field(std::string key, std::string help, Get get, Set set) {
  return {std::move(key), std::move(help), get, set};
}

#define MT_SIZE(KEY, MEMBER, HELP)                                                      \
  field(KEY, HELP, [](const RunConfig& c) { return std::to_string(c.MEMBER); },        \
        [](RunConfig& c, const std::string& v) { c.MEMBER = to_u64(KEY, v); })
#define MT_REAL(KEY, MEMBER, HELP)                                                      \
  field(KEY, HELP, [](const RunConfig& c) { return format_double(c.MEMBER); },         \
        [](RunConfig& c, const std::string& v) { c.MEMBER = to_double(KEY, v); })
#define MT_BOOL(KEY, MEMBER, HELP)                                                      \
  field(KEY, HELP, [](const RunConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.MEMBER = to_bool(KEY, v); })
#define MT_ACT(KEY, MEMBER, HELP)                                                       \
  field(KEY, HELP, [](const RunConfig& c) { return std::string(activation_name(c.MEMBER)); }, \
        [](RunConfig& c, const std::string& v) { c.MEMBER = to_activation(KEY, v); })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      MT_SIZE("seed", seed, "seed for data generation, splits, initialization and shuffling"),
      field("paths.data", "default dataset manifest or directory",
            [](const RunConfig& c) { return c.data_path; },
            [](RunConfig& c, const std::string& v) { c.data_path = v; }),
      field("paths.output", "default output location",
            [](const RunConfig& c) { return c.output_path; },
            [](RunConfig& c, const std::string& v) { c.output_path = v; }),

      MT_SIZE("data.n", synth.n, "number of generated samples"),
      MT_REAL("data.image_ceiling", synth.image_ceiling, "best image-only accuracy, in [0.5, 1)"),
      MT_REAL("data.text_ceiling", synth.text_ceiling, "best text-only accuracy, in [0.5, 1)"),
      MT_REAL("data.noise", synth.noise, "pixel noise standard deviation"),
      MT_SIZE("data.filler_min", synth.filler_min, "fewest filler words per report section"),
      MT_SIZE("data.filler_max", synth.filler_max, "most filler words per report section"),
      MT_SIZE("data.height", synth.height, "generated image height"),
      MT_SIZE("data.width", synth.width, "generated image width"),
      MT_SIZE("data.channels", synth.channels, "generated image channels"),
      MT_REAL("data.poor_fraction", synth.poor_fraction, "probability of a poor outcome"),

      field("model.mode", "multimodal, text or image",
            [](const RunConfig& c) { return std::string(to_string(c.model.mode)); },
            [](RunConfig& c, const std::string& v) { c.model.mode = parse_fusion_mode(v); }),
      MT_REAL("model.dropout", model.dropout, "dropout on encoder outputs while training"),

      field("model.text.variant", "base, roberta or albert",
            [](const RunConfig& c) { return std::string(to_string(c.model.text.variant)); },
            [](RunConfig& c, const std::string& v) { c.model.text.variant = parse_text_variant(v); }),
      MT_SIZE("model.text.vocab_size", model.text.vocab_size, "vocabulary size (taken from the dataset when training)"),
      MT_SIZE("model.text.max_seq_len", model.text.max_seq_len, "tokens per report, CLS included"),
      MT_SIZE("model.text.num_segments", model.text.num_segments, "segment ids (one per report line)"),
      MT_SIZE("model.text.dim", model.text.model_dim, "text encoder width"),
      MT_SIZE("model.text.depth", model.text.depth, "text encoder blocks"),
      MT_SIZE("model.text.heads", model.text.num_heads, "attention heads"),
      MT_SIZE("model.text.mlp_expansion", model.text.mlp_expansion, "MLP width multiplier"),
      MT_BOOL("model.text.share_blocks", model.text.share_block_params, "reuse one block at every depth"),
      MT_BOOL("model.text.attention_bias", model.text.attention_bias, "bias on Q/K/V/output projections"),
      MT_BOOL("model.text.final_norm", model.text.final_norm, "layer norm on the output CLS state"),
      MT_ACT("model.text.activation", model.text.activation, "gelu or relu"),

      field("model.image.variant", "standard, windowed or distill",
            [](const RunConfig& c) { return std::string(to_string(c.model.image.variant)); },
            [](RunConfig& c, const std::string& v) { c.model.image.variant = parse_image_variant(v); }),
      MT_SIZE("model.image.height", model.image.height, "input height (taken from the dataset when training)"),
      MT_SIZE("model.image.width", model.image.width, "input width (taken from the dataset when training)"),
      MT_SIZE("model.image.channels", model.image.channels, "input channels (taken from the dataset when training)"),
      MT_SIZE("model.image.patch", model.image.patch_size, "patch side length"),
      MT_SIZE("model.image.dim", model.image.model_dim, "image encoder width"),
      MT_SIZE("model.image.depth", model.image.depth, "image encoder blocks"),
      MT_SIZE("model.image.heads", model.image.num_heads, "attention heads"),
      MT_SIZE("model.image.mlp_expansion", model.image.mlp_expansion, "MLP width multiplier"),
      MT_SIZE("model.image.window_size", model.image.window.window_size, "patch tokens per window (windowed variant)"),
      MT_SIZE("model.image.window_shift", model.image.window.shift, "cyclic shift on odd blocks (windowed variant)"),
      MT_BOOL("model.image.attention_bias", model.image.attention_bias, "bias on Q/K/V/output projections"),
      MT_BOOL("model.image.final_norm", model.image.final_norm, "layer norm on the output CLS state"),
      MT_ACT("model.image.activation", model.image.activation, "gelu or relu"),

      MT_SIZE("model.fusion.dim", model.fusion.fuse_dim, "fused token width; 0 uses the encoder width"),
      MT_SIZE("model.fusion.heads", model.fusion.num_heads, "fusion attention heads"),
      MT_SIZE("model.fusion.hidden", model.fusion.hidden, "classifier hidden layer width; 0 disables it"),
      MT_BOOL("model.fusion.attention_bias", model.fusion.attention_bias, "bias on fusion projections"),
      MT_ACT("model.fusion.activation", model.fusion.activation, "hidden layer activation"),

      MT_SIZE("train.epochs", train.epochs, "training epochs"),
      MT_SIZE("train.batch_size", train.batch_size, "samples per update; the last batch may be short"),
      MT_REAL("train.learning_rate", train.learning_rate, "step size"),
      field("train.optimizer", "sgd, sgd_momentum or adam",
            [](const RunConfig& c) { return std::string(to_string(c.train.optimizer)); },
            [](RunConfig& c, const std::string& v) { c.train.optimizer = parse_optimizer(v); }),
      MT_REAL("train.momentum", train.momentum, "momentum for sgd_momentum"),
      MT_REAL("train.beta1", train.beta1, "Adam first-moment decay"),
      MT_REAL("train.beta2", train.beta2, "Adam second-moment decay"),
      MT_REAL("train.adam_eps", train.adam_eps, "Adam denominator epsilon"),
      MT_REAL("train.weight_decay", train.weight_decay, "decoupled weight decay per update"),
      MT_REAL("train.encoder_lr_scale", train.encoder_lr_scale, "learning-rate multiplier for encoder parameters"),
      field("train.split", "train:val:test parts of 10",
            [](const RunConfig& c) { return ratios_str(c.train.ratios); },
            [](RunConfig& c, const std::string& v) { c.train.ratios = to_ratios("train.split", v); }),
      MT_BOOL("train.stratify", train.stratify, "split each outcome class separately"),
      MT_BOOL("train.class_weights", train.class_weights, "inverse-frequency class weights in the loss"),

      field("eval.positive_class", "poor or good; the class scored for F1 and AUC",
            [](const RunConfig& c) {
              return std::string(c.positive_class == kPoorOutcome ? "poor" : "good");
            },
            [](RunConfig& c, const std::string& v) {
              if (v == "poor") c.positive_class = kPoorOutcome;
              else if (v == "good") c.positive_class = kGoodOutcome;
              else throw ConfigError("eval.positive_class: expected poor or good, got '" + v + "'");
            }),
  };
  return table;
}

#undef MT_SIZE
#undef MT_REAL
#undef MT_BOOL
#undef MT_ACT

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

void flatten(const YAML::Node& node, const std::string& prefix,
             std::vector<std::pair<std::string, std::string>>& out) {
  for (const auto& kv : node) {
    const auto name = kv.first.as<std::string>();
    const auto key = prefix.empty() ? name : prefix + "." + name;
    const auto& value = kv.second;
    if (value.IsMap()) {
      flatten(value, key, out);
    } else if (value.IsScalar()) {
      out.emplace_back(key, value.Scalar());
    } else if (value.IsNull()) {
      out.emplace_back(key, "");
    } else {
      throw ConfigError(key + ": expected a scalar value or a section");
    }
  }
}

}  // namespace

void RunConfig::finalize() {
  synth.seed = seed;
  train.seed = seed;
  synth.text = text_limits();
  synth.validate();
  model.validate();
  train.validate();
}

RunConfig parse_config(std::string_view text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
  RunConfig config;
  if (root.IsNull()) return config;
  if (!root.IsMap()) throw ConfigError(source + ": expected key: value lines");
  std::vector<std::pair<std::string, std::string>> entries;
  try {
    flatten(root, "", entries);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  } catch (const YAML::Exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
  std::map<std::string, int> seen;
  for (const auto& [key, value] : entries) {
    if (seen[key]++ > 0) throw ConfigError(source + ": key '" + key + "' given twice");
    const auto* f = find_field(key);
    if (f == nullptr) throw ConfigError(source + ": unknown key '" + key + "'");
    if (value.empty() && key.rfind("paths.", 0) != 0) {
      throw ConfigError(source + ": key '" + key + "' has no value");
    }
    try {
      f->set(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ": " + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string echo_config(const RunConfig& config) {
  std::ostringstream out;
  std::vector<std::string> open;
  for (const auto& f : fields()) {
    std::vector<std::string> parts;
    std::stringstream ks(f.key);
    for (std::string p; std::getline(ks, p, '.');) parts.push_back(p);
    const auto sections = parts.size() - 1;
    std::size_t common = 0;
    while (common < open.size() && common < sections && open[common] == parts[common]) ++common;
    open.resize(common);
    for (auto i = common; i < sections; ++i) {
      out << std::string(2 * i, ' ') << parts[i] << ":\n";
      open.push_back(parts[i]);
    }
    auto value = f.get(config);
    if (value.empty()) value = "\"\"";
    out << std::string(2 * sections, ' ') << parts.back() << ": " << value << "\n";
  }
  return out.str();
}

std::string describe_config() {
  RunConfig defaults;
  std::ostringstream out;
  for (const auto& f : fields()) {
    auto value = f.get(defaults);
    if (value.empty()) value = "\"\"";
    out << f.key << "  [" << value << "]  " << f.help << "\n";
  }
  return out.str();
}

std::uint64_t parse_seed(std::string_view s) {
  return to_u64("seed", std::string(s));
}

void apply_seed_overrides(RunConfig& config, std::optional<std::uint64_t> flag) {
  if (flag) {
    config.seed = *flag;
    return;
  }
  if (const char* env = std::getenv("MULTITRANS_SEED"); env != nullptr && *env != '\0') {
    try {
      config.seed = parse_seed(env);
    } catch (const ConfigError&) {
      throw ConfigError(std::string("MULTITRANS_SEED: expected a non-negative integer, got '") +
                        env + "'");
    }
  }
}

void adapt_to_dataset(RunConfig& config, const Dataset& dataset) {
  config.model.image.height = dataset.height;
  config.model.image.width = dataset.width;
  config.model.image.channels = dataset.channels;
  config.model.text.vocab_size = dataset.vocab.size();
}

}  // namespace multitrans
