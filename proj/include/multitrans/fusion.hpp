#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "multitrans/encoders.hpp"

namespace multitrans {

/// Which encoders feed the classifier.
enum class FusionMode { multimodal, text_only, image_only };

std::string_view to_string(FusionMode mode);
/// Accepts multimodal, text, text_only, image, image_only.
FusionMode parse_fusion_mode(std::string_view s);

/// Class index 0 is a good outcome (mRS <= 2), 1 a poor outcome.
inline constexpr std::size_t kNumClasses = 2;
inline constexpr std::int32_t kGoodOutcome = 0;
inline constexpr std::int32_t kPoorOutcome = 1;

struct Probabilities {
  double good = 0.5;
  double poor = 0.5;
};

struct FusionConfig {
  /// Width of the fused tokens. 0 means "the encoders' model_dim", which
  /// then must agree; otherwise each modality is projected to this width.
  std::size_t fuse_dim = 0;
  std::size_t num_heads = 4;
  /// Optional hidden layer in the classifier; 0 disables it.
  std::size_t hidden = 0;
  bool attention_bias = true;
  Activation activation = Activation::gelu;
};

template <typename T>
struct FusionParams {
  std::optional<LinearParams<T>> text_projection;
  std::optional<LinearParams<T>> image_projection;
  AttentionParams<T> attention;
  std::optional<LinearParams<T>> hidden;
  Activation activation = Activation::gelu;
  LinearParams<T> classifier;  // (2 * fuse_dim or hidden) -> 2

  std::size_t fuse_dim() const { return attention.model_dim; }
};

template <typename T>
FusionParams<T> make_fusion(ParameterStore<T>& store, const std::string& prefix,
                            std::size_t text_dim, std::size_t image_dim,
                            const FusionConfig& config, Rng& rng);

/// Two-token sequence [2 x d]: row 0 text CLS, row 1 image CLS.
template <typename T>
Tensor<T> splice(const Tensor<T>& text_cls, const Tensor<T>& image_cls);

/// One multi-head self-attention pass over the spliced tokens; shape preserved.
template <typename T>
Tensor<T> fuse(const Tensor<T>& tokens, const FusionParams<T>& params,
               std::vector<Tensor<T>>* attention = nullptr);

/// Flattens [2 x d] to [1 x 2d] and applies the classifier; returns logits [1 x 2].
template <typename T>
Tensor<T> classify_logits(const Tensor<T>& fused, const FusionParams<T>& params);

template <typename T>
Probabilities to_probabilities(const Tensor<T>& logits);

/// softmax(classify_logits(fused)).
template <typename T>
Probabilities classify(const Tensor<T>& fused, const FusionParams<T>& params);

struct ModelConfig {
  TextEncoderConfig text;
  ImageEncoderConfig image;
  FusionConfig fusion;
  FusionMode mode = FusionMode::multimodal;
  /// Applied to encoder outputs during training only.
  double dropout = 0.0;

  bool uses_text() const { return mode != FusionMode::image_only; }
  bool uses_image() const { return mode != FusionMode::text_only; }
  void validate() const;
};

struct ModelInput {
  const Image* image = nullptr;
  std::span<const std::int32_t> tokens;
  std::span<const std::int32_t> segments;
};

/// Text encoder + image encoder + fusion head, or a single encoder with a
/// linear d -> 2 head in the unimodal modes. Parameters of an encoder the
/// mode does not use are never created.
template <typename T>
class MultitransModel {
 public:
  MultitransModel(const ModelConfig& config, std::uint64_t seed);
  MultitransModel(const MultitransModel&) = delete;
  MultitransModel& operator=(const MultitransModel&) = delete;
  MultitransModel(MultitransModel&&) noexcept = default;
  MultitransModel& operator=(MultitransModel&&) noexcept = default;

  /// Class logits [1 x 2]. Passing `dropout_rng` enables training-time dropout.
  Tensor<T> logits(const ModelInput& input, std::mt19937_64* dropout_rng = nullptr) const;

  /// Gradient-free forward pass.
  Probabilities predict(const ModelInput& input) const;

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }

  const TextEncoder<T>* text_encoder() const { return text_ ? &*text_ : nullptr; }
  const ImageEncoder<T>* image_encoder() const { return image_ ? &*image_ : nullptr; }
  const FusionParams<T>* fusion() const { return fusion_ ? &*fusion_ : nullptr; }
  const LinearParams<T>* unimodal_head() const { return head_ ? &*head_ : nullptr; }

 private:
  ModelConfig config_;
  ParameterStore<T> store_;
  std::optional<TextEncoder<T>> text_;
  std::optional<ImageEncoder<T>> image_;
  std::optional<FusionParams<T>> fusion_;
  std::optional<LinearParams<T>> head_;
};

}  // namespace multitrans
