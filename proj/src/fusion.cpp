#include "multitrans/fusion.hpp"

#include <cmath>

namespace multitrans {

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::multimodal: return "multimodal";
    case FusionMode::text_only: return "text";
    case FusionMode::image_only: return "image";
  }
  return "multimodal";
}

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "multimodal") return FusionMode::multimodal;
  if (s == "text" || s == "text_only") return FusionMode::text_only;
  if (s == "image" || s == "image_only") return FusionMode::image_only;
  throw ConfigError("unknown mode '" + std::string(s) + "' (multimodal, text, image)");
}

template <typename T>
FusionParams<T> make_fusion(ParameterStore<T>& store, const std::string& prefix,
                            std::size_t text_dim, std::size_t image_dim,
                            const FusionConfig& config, Rng& rng) {
  FusionParams<T> p;
  std::size_t d = config.fuse_dim;
  if (d == 0) {
    if (text_dim != image_dim) {
      throw ConfigError("fusion: encoder widths differ (" + std::to_string(text_dim) + " vs " +
                        std::to_string(image_dim) + "); set fusion.fuse_dim");
    }
    d = text_dim;
  } else {
    if (text_dim != d) p.text_projection = make_linear(store, prefix + ".text_projection", text_dim, d, true, rng);
    if (image_dim != d) p.image_projection = make_linear(store, prefix + ".image_projection", image_dim, d, true, rng);
  }
  p.attention = make_attention(store, prefix + ".attn", d, config.num_heads, config.attention_bias, rng);
  p.activation = config.activation;
  std::size_t classifier_in = kNumClasses * d;
  if (config.hidden > 0) {
    p.hidden = make_linear(store, prefix + ".hidden", classifier_in, config.hidden, true, rng);
    classifier_in = config.hidden;
  }
  p.classifier = make_linear(store, prefix + ".classifier", classifier_in, kNumClasses, true, rng);
  return p;
}

template <typename T>
Tensor<T> splice(const Tensor<T>& text_cls, const Tensor<T>& image_cls) {
  if (text_cls.rank() != 1 || text_cls.shape() != image_cls.shape()) {
    throw ShapeError("splice: representations " + shape_str(text_cls.shape()) + " and " +
                     shape_str(image_cls.shape()) + " must be equal-length vectors");
  }
  const auto d = text_cls.dim(0);
  return concat<T>({reshape(text_cls, {1, d}), reshape(image_cls, {1, d})}, 0);
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& tokens, const FusionParams<T>& params,
               std::vector<Tensor<T>>* attention) {
  return multi_head_self_attention(tokens, params.attention, {}, attention);
}

template <typename T>
Tensor<T> classify_logits(const Tensor<T>& fused, const FusionParams<T>& params) {
  auto flat = reshape(fused, {1, fused.numel()});
  if (params.hidden) flat = activate((*params.hidden)(flat), params.activation);
  return params.classifier(flat);
}

template <typename T>
Probabilities to_probabilities(const Tensor<T>& logits) {
  NoGradScope<T> no_grad;
  auto p = softmax(reshape(logits, {kNumClasses}), 0);
  return {static_cast<double>(p[kGoodOutcome]), static_cast<double>(p[kPoorOutcome])};
}

template <typename T>
Probabilities classify(const Tensor<T>& fused, const FusionParams<T>& params) {
  return to_probabilities(classify_logits(fused, params));
}

void ModelConfig::validate() const {
  if (uses_text()) text.validate();
  if (uses_image()) image.validate();
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model.dropout must lie in [0, 1)");
  if (mode == FusionMode::multimodal) {
    const auto d = fusion.fuse_dim == 0 ? text.model_dim : fusion.fuse_dim;
    if (fusion.fuse_dim == 0 && text.model_dim != image.model_dim) {
      throw ConfigError("fusion: text and image model_dim differ; set fusion.fuse_dim");
    }
    if (fusion.num_heads == 0 || d % fusion.num_heads != 0) {
      throw ConfigError("fusion: width " + std::to_string(d) + " not divisible by fusion.heads");
    }
  }
}

template <typename T>
MultitransModel<T>::MultitransModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(seed);
  if (config_.uses_text()) text_.emplace(config_.text, store_, rng, "text");
  if (config_.uses_image()) image_.emplace(config_.image, store_, rng, "image");
  if (config_.mode == FusionMode::multimodal) {
    fusion_ = make_fusion(store_, "fusion", config_.text.model_dim, config_.image.model_dim,
                          config_.fusion, rng);
  } else {
    const auto d = config_.mode == FusionMode::text_only ? config_.text.model_dim
                                                         : config_.image.model_dim;
    head_ = make_linear(store_, "head", d, kNumClasses, true, rng);
  }
}

template <typename T>
Tensor<T> MultitransModel<T>::logits(const ModelInput& input, std::mt19937_64* dropout_rng) const {
  const T p = static_cast<T>(config_.dropout);
  auto regularize = [&](Tensor<T> x) {
    return dropout_rng != nullptr && p > T(0) ? dropout(x, p, *dropout_rng) : x;
  };
  Tensor<T> text_cls, image_cls;
  if (text_) text_cls = regularize(text_->encode(input.tokens, input.segments));
  if (image_) {
    if (input.image == nullptr) throw DataError("forward: mode requires an image but none given");
    image_cls = regularize(image_->encode(*input.image));
  }
  if (head_) {
    const auto& cls = text_ ? text_cls : image_cls;
    return (*head_)(reshape(cls, {1, cls.numel()}));
  }
  const auto& f = *fusion_;
  if (f.text_projection) text_cls = row((*f.text_projection)(reshape(text_cls, {1, text_cls.numel()})), 0);
  if (f.image_projection) image_cls = row((*f.image_projection)(reshape(image_cls, {1, image_cls.numel()})), 0);
  return classify_logits(fuse(splice(text_cls, image_cls), f), f);
}

template <typename T>
Probabilities MultitransModel<T>::predict(const ModelInput& input) const {
  NoGradScope<T> no_grad;
  return to_probabilities(logits(input));
}

#define MULTITRANS_INSTANTIATE_FUSION(T)                                                       \
  template FusionParams<T> make_fusion(ParameterStore<T>&, const std::string&, std::size_t,    \
                                       std::size_t, const FusionConfig&, Rng&);                \
  template Tensor<T> splice(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> fuse(const Tensor<T>&, const FusionParams<T>&, std::vector<Tensor<T>>*);  \
  template Tensor<T> classify_logits(const Tensor<T>&, const FusionParams<T>&);                \
  template Probabilities to_probabilities(const Tensor<T>&);                                   \
  template Probabilities classify(const Tensor<T>&, const FusionParams<T>&);                   \
  template class MultitransModel<T>;

MULTITRANS_INSTANTIATE_FUSION(float)
MULTITRANS_INSTANTIATE_FUSION(double)

}  // namespace multitrans
