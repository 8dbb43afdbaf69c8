#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "multitrans/ops.hpp"

using namespace multitrans;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

template <typename T>
void roughen(ParameterStore<T>& store, Rng& rng, double sd = 0.5) {
  for (const auto& e : store.entries()) {
    auto w = e.tensor;
    for (auto& v : w.mutable_data()) v = static_cast<T>(rng.normal(0.0, sd));
  }
}

struct Inputs {
  Image image;
  std::vector<std::int32_t> tokens{3, 7, 5, 9};
  std::vector<std::int32_t> segments{0, 0, 1, 1};
  ModelInput input() const { return {&image, tokens, segments}; }
};

}  // namespace

TEST_CASE("splice") {
  auto z = splice(Tensor<double>::zeros({4}), Tensor<double>::zeros({4}));
  CHECK(z.shape() == Shape{2, 4});
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0);
  auto s = splice(Tensor<double>({2}, {1, 2}), Tensor<double>({2}, {3, 4}));
  CHECK(s.at(0, 0) == 1);
  CHECK(s.at(0, 1) == 2);
  CHECK(s.at(1, 0) == 3);
  CHECK(s.at(1, 1) == 4);
  CHECK_THROWS_AS(splice(Tensor<double>::zeros({3}), Tensor<double>::zeros({4})), ShapeError);
}

TEST_CASE("fusion head") {
  Rng rng(1);
  ParameterStore<double> store;
  FusionConfig fc;
  fc.num_heads = 2;
  auto p = make_fusion(store, "fusion", 4, 4, fc, rng);
  roughen(store, rng);
  CHECK(p.classifier.weight.shape() == Shape{8, 2});

  SUBCASE("identical rows stay identical and shape is kept") {
    auto r = random_tensor({4}, rng);
    auto y = fuse(splice(r, r), p);
    CHECK(y.shape() == Shape{2, 4});
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(y.at(0, j) - y.at(1, j)) < 1e-12);
  }
  SUBCASE("fuse is the attention op") {
    auto x = random_tensor({2, 4}, rng);
    CHECK(max_abs_diff(fuse(x, p), multi_head_self_attention(x, p.attention)) == 0.0);
  }
  SUBCASE("row 0 depends on row 1") {
    auto x = random_tensor({2, 4}, rng, 1.0, true);
    Tape<double> tape;
    typename Tape<double>::Scope scope(tape);
    tape.backward(sum(row(fuse(x, p), 0)));
    double g = 0.0;
    for (std::size_t j = 4; j < 8; ++j) g += std::abs(x.grad()[j]);
    CHECK(g > 1e-6);
  }
  SUBCASE("classify equals softmax of the flattened linear map") {
    auto fused = random_tensor({2, 4}, rng);
    auto probs = classify(fused, p);
    CHECK(probs.good + probs.poor == doctest::Approx(1.0).epsilon(1e-12));
    auto logits = add(matmul(reshape(fused, {1, 8}), p.classifier.weight), p.classifier.bias);
    auto ref = softmax(reshape(logits, {2}), 0);
    CHECK(std::abs(probs.good - ref[kGoodOutcome]) < 1e-12);
    CHECK(std::abs(probs.poor - ref[kPoorOutcome]) < 1e-12);
  }
  SUBCASE("zero classifier gives one half each") {
    for (auto t : {p.classifier.weight, p.classifier.bias}) {
      for (auto& v : t.mutable_data()) v = 0.0;
    }
    auto probs = classify(random_tensor({2, 4}, rng), p);
    CHECK(probs.good == 0.5);
    CHECK(probs.poor == 0.5);
  }
}

TEST_CASE("optional hidden layer and projections") {
  Rng rng(2);
  ParameterStore<double> store;
  FusionConfig fc;
  fc.num_heads = 2;
  fc.hidden = 5;
  fc.fuse_dim = 6;
  auto p = make_fusion(store, "fusion", 4, 8, fc, rng);
  REQUIRE(p.hidden.has_value());
  CHECK(p.hidden->weight.shape() == Shape{12, 5});
  CHECK(p.classifier.weight.shape() == Shape{5, 2});
  CHECK(p.text_projection->weight.shape() == Shape{4, 6});
  CHECK(p.image_projection->weight.shape() == Shape{8, 6});
  ParameterStore<double> s2;
  FusionConfig bad;
  CHECK_THROWS_AS(make_fusion(s2, "f", 4, 8, bad, rng), ConfigError);
}

TEST_CASE("model modes") {
  auto cfg = testing::tiny_model();
  Rng px(3);
  Inputs a{testing::random_image(8, 8, px)};
  Inputs b = a;
  b.image = testing::random_image(8, 8, px);
  Inputs c = a;
  c.tokens = {4, 4, 8, 2};

  SUBCASE("unimodal models hold only their encoder") {
    cfg.mode = FusionMode::text_only;
    MultitransModel<double> text(cfg, 1);
    CHECK(text.parameters().count("image.") == 0);
    CHECK(text.parameters().count("fusion.") == 0);
    CHECK(text.parameters().count("head.") == 8 * 2 + 2);
    CHECK(text.image_encoder() == nullptr);
    cfg.mode = FusionMode::image_only;
    MultitransModel<double> image(cfg, 1);
    CHECK(image.parameters().count("text.") == 0);
    CHECK(image.text_encoder() == nullptr);
    cfg.mode = FusionMode::multimodal;
    MultitransModel<double> both(cfg, 1);
    CHECK(both.parameters().count("head.") == 0);
    CHECK(both.parameters().count() ==
          text.parameters().count("text.") + image.parameters().count("image.") +
              both.parameters().count("fusion."));
  }
  SUBCASE("text-only ignores the image and image-only ignores the text") {
    cfg.mode = FusionMode::text_only;
    MultitransModel<double> text(cfg, 1);
    CHECK(text.predict(a.input()).poor == text.predict(b.input()).poor);
    CHECK(text.predict(a.input()).poor != text.predict(c.input()).poor);
    cfg.mode = FusionMode::image_only;
    MultitransModel<double> image(cfg, 1);
    CHECK(image.predict(a.input()).poor == image.predict(c.input()).poor);
    CHECK(image.predict(a.input()).poor != image.predict(b.input()).poor);
  }
  SUBCASE("multimodal output responds to both modalities") {
    MultitransModel<double> m(cfg, 4);
    Rng rng(5);
    roughen(m.parameters(), rng, 0.3);
    const auto base = m.predict(a.input());
    CHECK(base.good + base.poor == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(base.poor - m.predict(b.input()).poor) > 1e-9);
    CHECK(std::abs(base.poor - m.predict(c.input()).poor) > 1e-9);
  }
  SUBCASE("both branches receive gradient") {
    MultitransModel<double> m(cfg, 6);
    Tape<double> tape;
    typename Tape<double>::Scope scope(tape);
    std::vector<std::int32_t> label{1};
    tape.backward(cross_entropy(m.logits(a.input()), label));
    auto norm = [](const Tensor<double>& t) {
      double s = 0.0;
      for (auto g : t.grad()) s += std::abs(g);
      return s;
    };
    CHECK(norm(m.parameters().find("image.patch_projection.weight")) > 0.0);
    CHECK(norm(m.parameters().find("text.word_embeddings")) > 0.0);
  }
  SUBCASE("missing image is a data error") {
    MultitransModel<double> m(cfg, 1);
    ModelInput none{nullptr, a.tokens, a.segments};
    CHECK_THROWS_AS(m.predict(none), DataError);
  }
  SUBCASE("mismatched widths need a fuse width") {
    cfg.image.model_dim = 4;
    CHECK_THROWS_AS(MultitransModel<double>(cfg, 1), ConfigError);
    cfg.fusion.fuse_dim = 8;
    MultitransModel<double> m(cfg, 1);
    CHECK(m.fusion()->image_projection.has_value());
    CHECK_FALSE(m.fusion()->text_projection.has_value());
  }
}

TEST_CASE("probabilities sum to one across random forwards") {
  auto cfg = testing::tiny_model();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    MultitransModel<double> m(cfg, seed);
    Rng px(seed + 100);
    Inputs in{testing::random_image(8, 8, px)};
    auto p = m.predict(in.input());
    CHECK(p.good >= 0.0);
    CHECK(p.poor >= 0.0);
    CHECK(std::abs(p.good + p.poor - 1.0) < 1e-6);
  }
}
