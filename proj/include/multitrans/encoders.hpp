#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "multitrans/transformer.hpp"

namespace multitrans {

/// Image grid, row-major with channels fastest: pixel (y, x, c) lives at
/// ((y * width) + x) * channels + c.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<float> pixels;

  bool operator==(const Image&) const = default;
};

template <typename T>
Tensor<T> image_tensor(const Image& image);

// ---------------------------------------------------------------------------
// Tokenization

/// Token list whose first three entries are the reserved pad, unk and cls
/// tokens. Line number in the vocabulary file is the id.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kCls = 2;
  static constexpr std::string_view kReserved[3] = {"[pad]", "[unk]", "[cls]"};

  Vocabulary();
  /// `words` excludes the reserved tokens; duplicates are rejected.
  static Vocabulary from_words(const std::vector<std::string>& words);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  std::int32_t id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  explicit Vocabulary(std::vector<std::string> tokens);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

/// Lowercases and splits on whitespace; each ASCII punctuation character
/// becomes its own word.
std::vector<std::string> split_words(std::string_view text);

/// Maps words to ids (unknown -> unk) and truncates to max_seq_len - 1 ids,
/// leaving room for the CLS position.
std::vector<std::int32_t> tokenize(std::string_view text, const Vocabulary& vocab,
                                   std::size_t max_seq_len);

struct TokenizedText {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> segments;
};

/// As tokenize(); each newline moves the following words to the next
/// segment, capped at num_segments - 1.
TokenizedText tokenize_segments(std::string_view text, const Vocabulary& vocab,
                                std::size_t max_seq_len, std::size_t num_segments);

// ---------------------------------------------------------------------------
// Configuration

enum class TextVariant { base, roberta, albert };
enum class ImageVariant { standard, windowed, distill_token };

std::string_view to_string(TextVariant v);
std::string_view to_string(ImageVariant v);
TextVariant parse_text_variant(std::string_view s);
ImageVariant parse_image_variant(std::string_view s);
/// Column label used in result tables (BERT / RoBERTa / ALBERT, ViT / SwinT / DeiT).
std::string_view display_name(TextVariant v);
std::string_view display_name(ImageVariant v);

struct TextEncoderConfig {
  TextVariant variant = TextVariant::base;
  std::size_t vocab_size = 512;
  std::size_t max_seq_len = 32;
  std::size_t num_segments = 2;
  std::size_t model_dim = 64;
  std::size_t depth = 2;
  std::size_t num_heads = 4;
  std::size_t mlp_expansion = 4;
  bool share_block_params = false;
  bool attention_bias = true;
  Activation activation = Activation::gelu;
  /// LayerNorm on the CLS state before it leaves the encoder.
  bool final_norm = true;
  std::int32_t pad_id = Vocabulary::kPad;
  std::int32_t unk_id = Vocabulary::kUnk;
  std::int32_t cls_id = Vocabulary::kCls;

  /// The roberta variant doubles the MLP width; albert shares one block.
  std::size_t effective_mlp_expansion() const;
  bool shares_blocks() const { return share_block_params || variant == TextVariant::albert; }
  void validate() const;
};

struct ImageEncoderConfig {
  ImageVariant variant = ImageVariant::standard;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::size_t patch_size = 8;
  std::size_t model_dim = 64;
  std::size_t depth = 2;
  std::size_t num_heads = 4;
  std::size_t mlp_expansion = 4;
  /// Windowed variant: even blocks use shift 0, odd blocks `window.shift`.
  WindowSpec window{4, 2};
  bool attention_bias = true;
  Activation activation = Activation::gelu;
  bool final_norm = true;

  std::size_t num_patches() const { return (height / patch_size) * (width / patch_size); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  /// CLS, plus the distillation token for that variant.
  std::size_t num_prefix() const { return variant == ImageVariant::distill_token ? 2 : 1; }
  std::size_t seq_len() const { return num_prefix() + num_patches(); }
  void validate() const;
};

// ---------------------------------------------------------------------------
// Encoders

/// Row-major patch order; inside a patch, row-major pixels with channels
/// fastest. `image` is [H x W x C]; result is [N x (p*p*C)].
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch_size);

template <typename T>
class TextEncoder {
 public:
  TextEncoder(const TextEncoderConfig& config, ParameterStore<T>& store, Rng& rng,
              const std::string& prefix = "text");

  /// [(1 + len) x d]: row 0 = cls + segment[0] + position[0];
  /// row i = word[id_i] + segment[seg_i] + position[i].
  Tensor<T> embed(std::span<const std::int32_t> ids, std::span<const std::int32_t> segments) const;

  /// Final-layer CLS hidden state (after the final norm, if any), shape [d].
  Tensor<T> encode(std::span<const std::int32_t> ids, std::span<const std::int32_t> segments,
                   std::vector<Tensor<T>>* attention = nullptr) const;

  const TextEncoderConfig& config() const { return config_; }
  const TransformerBlockParams<T>& block(std::size_t layer) const;

  Tensor<T> word_embeddings;      // [V x d]
  Tensor<T> segment_embeddings;   // [S x d]
  Tensor<T> position_embeddings;  // [max_seq_len x d]
  Tensor<T> cls;                  // [d]
  std::vector<TransformerBlockParams<T>> blocks;
  std::optional<NormParams<T>> final_norm;

 private:
  TextEncoderConfig config_;
};

template <typename T>
class ImageEncoder {
 public:
  ImageEncoder(const ImageEncoderConfig& config, ParameterStore<T>& store, Rng& rng,
               const std::string& prefix = "image");

  /// [seq_len x d] token sequence entering the first block.
  Tensor<T> embed(const Tensor<T>& image) const;

  /// Final-layer CLS hidden state (after the final norm, if any), shape [d].
  Tensor<T> encode(const Tensor<T>& image, std::vector<Tensor<T>>* attention = nullptr) const;
  Tensor<T> encode(const Image& image) const { return encode(image_tensor<T>(image)); }

  /// Attention pattern used by block `layer`.
  AttentionKind attention_kind(std::size_t layer) const;
  const ImageEncoderConfig& config() const { return config_; }

  LinearParams<T> patch_projection;  // (p*p*C) -> d
  Tensor<T> position_embeddings;     // [seq_len x d]
  Tensor<T> cls;                     // [d]
  Tensor<T> distill;                 // [d], distill_token variant only
  std::vector<TransformerBlockParams<T>> blocks;
  std::optional<NormParams<T>> final_norm;

 private:
  ImageEncoderConfig config_;
};

}  // namespace multitrans
