#include "multitrans/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>

namespace multitrans {

template <typename T>
Tensor<T> image_tensor(const Image& image) {
  std::vector<T> values(image.pixels.begin(), image.pixels.end());
  return Tensor<T>({image.height, image.width, image.channels}, std::move(values));
}

// ---------------------------------------------------------------------------
// Vocabulary and tokenizer

Vocabulary::Vocabulary()
    : Vocabulary(std::vector<std::string>(std::begin(kReserved), std::end(kReserved))) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 3) throw DataError("vocabulary needs the three reserved tokens");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw DataError("vocabulary line " + std::to_string(i + 1) + " is empty");
    if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw DataError("vocabulary token '" + tokens_[i] + "' repeated at line " +
                      std::to_string(i + 1));
    }
  }
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  std::vector<std::string> tokens(std::begin(kReserved), std::end(kReserved));
  tokens.insert(tokens.end(), words.begin(), words.end());
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw DataError("failed writing vocabulary file " + path.string());
}

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return words;
}

std::vector<std::int32_t> tokenize(std::string_view text, const Vocabulary& vocab,
                                   std::size_t max_seq_len) {
  return tokenize_segments(text, vocab, max_seq_len, 1).ids;
}

TokenizedText tokenize_segments(std::string_view text, const Vocabulary& vocab,
                                std::size_t max_seq_len, std::size_t num_segments) {
  TokenizedText out;
  const std::size_t limit = max_seq_len > 0 ? max_seq_len - 1 : 0;
  const auto last_segment = static_cast<std::int32_t>(std::max<std::size_t>(num_segments, 1) - 1);
  std::int32_t segment = 0;
  std::size_t line_start = 0;
  while (line_start <= text.size() && out.ids.size() < limit) {
    auto line_end = text.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = text.size();
    for (const auto& w : split_words(text.substr(line_start, line_end - line_start))) {
      if (out.ids.size() >= limit) break;
      out.ids.push_back(vocab.id(w));
      out.segments.push_back(segment);
    }
    segment = std::min(segment + 1, last_segment);
    line_start = line_end + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

std::string_view to_string(TextVariant v) {
  switch (v) {
    case TextVariant::base: return "base";
    case TextVariant::roberta: return "roberta";
    case TextVariant::albert: return "albert";
  }
  return "base";
}

std::string_view to_string(ImageVariant v) {
  switch (v) {
    case ImageVariant::standard: return "standard";
    case ImageVariant::windowed: return "windowed";
    case ImageVariant::distill_token: return "distill";
  }
  return "standard";
}

TextVariant parse_text_variant(std::string_view s) {
  if (s == "base" || s == "bert") return TextVariant::base;
  if (s == "roberta") return TextVariant::roberta;
  if (s == "albert") return TextVariant::albert;
  throw ConfigError("unknown text variant '" + std::string(s) + "' (base, roberta, albert)");
}

ImageVariant parse_image_variant(std::string_view s) {
  if (s == "standard" || s == "vit") return ImageVariant::standard;
  if (s == "windowed" || s == "swin") return ImageVariant::windowed;
  if (s == "distill" || s == "distill_token" || s == "deit") return ImageVariant::distill_token;
  throw ConfigError("unknown image variant '" + std::string(s) + "' (standard, windowed, distill)");
}

std::string_view display_name(TextVariant v) {
  switch (v) {
    case TextVariant::base: return "BERT";
    case TextVariant::roberta: return "RoBERTa";
    case TextVariant::albert: return "ALBERT";
  }
  return "BERT";
}

std::string_view display_name(ImageVariant v) {
  switch (v) {
    case ImageVariant::standard: return "ViT";
    case ImageVariant::windowed: return "SwinT";
    case ImageVariant::distill_token: return "DeiT";
  }
  return "ViT";
}

std::size_t TextEncoderConfig::effective_mlp_expansion() const {
  return variant == TextVariant::roberta ? 2 * mlp_expansion : mlp_expansion;
}

void TextEncoderConfig::validate() const {
  if (max_seq_len < 2) throw ConfigError("text.max_seq_len must be at least 2");
  if (num_segments < 1) throw ConfigError("text.num_segments must be at least 1");
  if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0) {
    throw ConfigError("text.model_dim must be a positive multiple of text.heads");
  }
  if (mlp_expansion == 0) throw ConfigError("text.mlp_expansion must be positive");
  const std::int32_t ids[] = {pad_id, unk_id, cls_id};
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw ConfigError("text special ids must be below vocab_size");
    }
  }
  if (pad_id == unk_id || pad_id == cls_id || unk_id == cls_id) {
    throw ConfigError("text special ids must be distinct");
  }
}

void ImageEncoderConfig::validate() const {
  if (height == 0 || width == 0 || channels == 0 || patch_size == 0) {
    throw ConfigError("image dimensions and patch size must be positive");
  }
  if (height % patch_size != 0 || width % patch_size != 0) {
    throw ConfigError("image " + std::to_string(height) + "x" + std::to_string(width) +
                      " not divisible by patch size " + std::to_string(patch_size));
  }
  if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0) {
    throw ConfigError("image.model_dim must be a positive multiple of image.heads");
  }
  if (mlp_expansion == 0) throw ConfigError("image.mlp_expansion must be positive");
  if (variant == ImageVariant::windowed) {
    if (window.window_size == 0 || num_patches() % window.window_size != 0) {
      throw ConfigError("image.window_size must divide the patch count " +
                        std::to_string(num_patches()));
    }
    if (window.shift != 0 && window.shift * 2 != window.window_size) {
      throw ConfigError("image.window_shift must be 0 or window_size / 2");
    }
  }
}

// ---------------------------------------------------------------------------
// Patchify

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch_size) {
  if (image.rank() != 3) throw ShapeError("patchify: expected [H x W x C], got " + shape_str(image.shape()));
  const auto h = image.dim(0), w = image.dim(1), c = image.dim(2), p = patch_size;
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw ShapeError("patchify: image " + shape_str(image.shape()) +
                     " not divisible by patch size " + std::to_string(p));
  }
  const auto rows = h / p, cols = w / p;
  std::vector<std::size_t> index;
  index.reserve(image.numel());
  for (std::size_t pr = 0; pr < rows; ++pr) {
    for (std::size_t pc = 0; pc < cols; ++pc) {
      for (std::size_t y = 0; y < p; ++y) {
        for (std::size_t x = 0; x < p; ++x) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            index.push_back(((pr * p + y) * w + (pc * p + x)) * c + ch);
          }
        }
      }
    }
  }
  return gather(image, index, {rows * cols, p * p * c});
}

namespace {

template <typename T>
Tensor<T> output_state(const Tensor<T>& h, const std::optional<NormParams<T>>& norm) {
  auto cls_state = row(h, 0);
  if (!norm) return cls_state;
  const auto d = cls_state.dim(0);
  return reshape(layer_norm(reshape(cls_state, {1, d}), norm->gamma, norm->beta, T(1e-5)), {d});
}

}  // namespace

// ---------------------------------------------------------------------------
// Text encoder

template <typename T>
TextEncoder<T>::TextEncoder(const TextEncoderConfig& config, ParameterStore<T>& store, Rng& rng,
                            const std::string& prefix)
    : config_(config) {
  config_.validate();
  const auto d = config_.model_dim;
  word_embeddings = store.normal(prefix + ".word_embeddings", {config_.vocab_size, d}, kInitStddev, rng);
  segment_embeddings =
      store.normal(prefix + ".segment_embeddings", {config_.num_segments, d}, kInitStddev, rng);
  position_embeddings =
      store.normal(prefix + ".position_embeddings", {config_.max_seq_len, d}, kInitStddev, rng);
  cls = store.normal(prefix + ".cls", {d}, kInitStddev, rng);
  BlockOptions opts{d, config_.num_heads, config_.effective_mlp_expansion(), config_.attention_bias,
                    config_.activation};
  const std::size_t count = config_.shares_blocks() ? std::min<std::size_t>(config_.depth, 1)
                                                    : config_.depth;
  for (std::size_t i = 0; i < count; ++i) {
    const auto name = config_.shares_blocks() ? prefix + ".blocks.shared"
                                              : prefix + ".blocks." + std::to_string(i);
    blocks.push_back(make_block(store, name, opts, rng));
  }
  if (config_.final_norm) final_norm = make_norm(store, prefix + ".final_norm", d);
}

template <typename T>
const TransformerBlockParams<T>& TextEncoder<T>::block(std::size_t layer) const {
  return config_.shares_blocks() ? blocks.at(0) : blocks.at(layer);
}

template <typename T>
Tensor<T> TextEncoder<T>::embed(std::span<const std::int32_t> ids,
                                std::span<const std::int32_t> segments) const {
  if (ids.size() != segments.size()) {
    throw ShapeError("embed_text: " + std::to_string(ids.size()) + " tokens but " +
                     std::to_string(segments.size()) + " segment ids");
  }
  if (ids.size() + 1 > config_.max_seq_len) {
    throw ShapeError("embed_text: " + std::to_string(ids.size()) +
                     " tokens exceed max_seq_len - 1 = " + std::to_string(config_.max_seq_len - 1));
  }
  for (auto s : segments) {
    if (s < 0 || static_cast<std::size_t>(s) >= config_.num_segments) {
      throw IndexError("embed_text: segment id " + std::to_string(s) + " out of range for " +
                       std::to_string(config_.num_segments) + " segments");
    }
  }
  const auto d = config_.model_dim;
  const auto len = ids.size() + 1;
  auto tokens = reshape(cls, {1, d});
  if (!ids.empty()) tokens = concat<T>({tokens, embedding(word_embeddings, ids)}, 0);
  std::vector<std::int32_t> seg(len, 0), pos(len);
  std::copy(segments.begin(), segments.end(), seg.begin() + 1);
  std::iota(pos.begin(), pos.end(), 0);
  return add(add(tokens, embedding(segment_embeddings, std::span<const std::int32_t>(seg))),
             embedding(position_embeddings, std::span<const std::int32_t>(pos)));
}

template <typename T>
Tensor<T> TextEncoder<T>::encode(std::span<const std::int32_t> ids,
                                 std::span<const std::int32_t> segments,
                                 std::vector<Tensor<T>>* attention) const {
  auto h = embed(ids, segments);
  for (std::size_t layer = 0; layer < config_.depth; ++layer) {
    h = transformer_block(h, block(layer), AttentionKind{}, attention);
  }
  return output_state(h, final_norm);
}

// ---------------------------------------------------------------------------
// Image encoder

template <typename T>
ImageEncoder<T>::ImageEncoder(const ImageEncoderConfig& config, ParameterStore<T>& store, Rng& rng,
                              const std::string& prefix)
    : config_(config) {
  config_.validate();
  const auto d = config_.model_dim;
  patch_projection = make_linear(store, prefix + ".patch_projection", config_.patch_dim(), d, true, rng);
  position_embeddings =
      store.normal(prefix + ".position_embeddings", {config_.seq_len(), d}, kInitStddev, rng);
  cls = store.normal(prefix + ".cls", {d}, kInitStddev, rng);
  if (config_.variant == ImageVariant::distill_token) {
    distill = store.normal(prefix + ".distill", {d}, kInitStddev, rng);
  }
  BlockOptions opts{d, config_.num_heads, config_.mlp_expansion, config_.attention_bias,
                    config_.activation};
  for (std::size_t i = 0; i < config_.depth; ++i) {
    blocks.push_back(make_block(store, prefix + ".blocks." + std::to_string(i), opts, rng));
  }
  if (config_.final_norm) final_norm = make_norm(store, prefix + ".final_norm", d);
}

template <typename T>
AttentionKind ImageEncoder<T>::attention_kind(std::size_t layer) const {
  AttentionKind kind;
  kind.num_prefix = config_.num_prefix();
  if (config_.variant == ImageVariant::windowed) {
    WindowSpec w = config_.window;
    if (layer % 2 == 0) w.shift = 0;
    kind.window = w;
  }
  return kind;
}

template <typename T>
Tensor<T> ImageEncoder<T>::embed(const Tensor<T>& image) const {
  const Shape expected{config_.height, config_.width, config_.channels};
  if (image.shape() != expected) {
    throw ShapeError("encode_image: image " + shape_str(image.shape()) + " but config expects " +
                     shape_str(expected));
  }
  const auto d = config_.model_dim;
  std::vector<Tensor<T>> parts{reshape(cls, {1, d})};
  if (distill.defined()) parts.push_back(reshape(distill, {1, d}));
  parts.push_back(patch_projection(patchify(image, config_.patch_size)));
  return add(concat(parts, 0), position_embeddings);
}

template <typename T>
Tensor<T> ImageEncoder<T>::encode(const Tensor<T>& image, std::vector<Tensor<T>>* attention) const {
  auto h = embed(image);
  for (std::size_t layer = 0; layer < blocks.size(); ++layer) {
    h = transformer_block(h, blocks[layer], attention_kind(layer), attention);
  }
  return output_state(h, final_norm);
}

template Tensor<float> image_tensor<float>(const Image&);
template Tensor<double> image_tensor<double>(const Image&);
template Tensor<float> patchify(const Tensor<float>&, std::size_t);
template Tensor<double> patchify(const Tensor<double>&, std::size_t);
template class TextEncoder<float>;
template class TextEncoder<double>;
template class ImageEncoder<float>;
template class ImageEncoder<double>;

}  // namespace multitrans
