#include "multitrans/grad_suite.hpp"

#include <functional>

#include "multitrans/fusion.hpp"

namespace multitrans {

namespace {

using D = double;
using TD = Tensor<D>;

struct Case {
  std::function<TD()> f;
  std::vector<TD> inputs;
};

TD random(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<D> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, scale);
  return TD(std::move(shape), std::move(v));
}

// Values bounded away from zero, for ops with a kink there.
TD away_from_zero(Shape shape, Rng& rng) {
  std::vector<D> v(shape_numel(shape));
  for (auto& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * (0.1 + rng.uniform());
  return TD(std::move(shape), std::move(v));
}

// Scalar loss sum(out * R) with a fixed random R, so every output
// coordinate carries a generic weight.
std::function<TD()> projected(std::function<TD()> f, Rng& rng) {
  TD probe;
  {
    NoGradScope<D> no_grad;
    probe = f();
  }
  auto weights = random(probe.shape(), rng);
  return [f = std::move(f), weights] { return sum(mul(f(), weights)); };
}

Case op_case(std::function<TD()> f, std::vector<TD> inputs, Rng& rng) {
  return {projected(std::move(f), rng), std::move(inputs)};
}

struct Builder {
  const GradSuiteOptions& options;
  std::vector<GradSuiteEntry> entries;

  bool wanted(const std::string& name) const {
    return options.filter.empty() || name.find(options.filter) != std::string::npos;
  }

  void add(const std::string& name, const std::string& kind, double tol,
           const std::function<std::vector<Case>(Rng&)>& make,
           ErrorNorm norm = ErrorNorm::coordinate) {
    if (!wanted(name)) return;
    Rng rng(options.seed * 1000003ULL + std::hash<std::string>{}(name) % 1000003ULL);
    GradSuiteEntry entry;
    entry.name = name;
    entry.kind = kind;
    entry.tolerance = tol;
    GradCheckOptions gc;
    gc.tolerance = tol;
    gc.fault_op = options.fault_op;
    gc.norm = norm;
    entry.report.norm = norm;
    for (auto& c : make(rng)) {
      auto r = grad_check(c.f, c.inputs, gc);
      entry.report.max_rel_error = std::max(entry.report.max_rel_error, r.max_rel_error);
      entry.report.checked += r.checked;
      entry.report.failed += r.failed;
      entry.report.max_coordinate_error =
          std::max(entry.report.max_coordinate_error, r.max_coordinate_error);
      if (norm == ErrorNorm::coordinate) {
        for (auto& coord : r.coordinates) {
          if (!coord.pass) entry.report.coordinates.push_back(coord);
        }
      } else {
        for (auto& t : r.tensors) {
          if (!t.pass) entry.report.tensors.push_back(t);
        }
      }
      ++entry.cases;
    }
    entries.push_back(std::move(entry));
  }

  // Composite functions: compared tensor by tensor, since single
  // coordinates with tiny gradients sit at the central-difference
  // truncation floor.
  void add_tensorwise(const std::string& name, const std::string& kind, double tol,
                      const std::function<std::vector<Case>(Rng&)>& make) {
    add(name, kind, tol, make, ErrorNorm::tensor);
  }
};

template <typename Fn>
std::vector<Case> unary_cases(Rng& rng, std::initializer_list<Shape> shapes, Fn fn, bool kink = false) {
  std::vector<Case> cases;
  for (const auto& s : shapes) {
    auto x = kink ? away_from_zero(s, rng) : random(s, rng);
    cases.push_back(op_case([x, fn] { return fn(x); }, {x}, rng));
  }
  return cases;
}

BlockOptions small_block(std::size_t d, std::size_t heads, Activation act = Activation::gelu) {
  BlockOptions o;
  o.model_dim = d;
  o.num_heads = heads;
  o.mlp_expansion = 2;
  o.activation = act;
  return o;
}

// Init scale 0.02 leaves every block close to linear; perturb the
// parameters so the nonlinear paths are exercised. ReLU is only checked
// on its own, away from the kink.
void roughen(ParameterStore<D>& store, Rng& rng) {
  for (const auto& e : store.entries()) {
    auto t = e.tensor;
    for (auto& v : t.mutable_data()) v += rng.normal(0.0, 0.3);
  }
}

TextEncoderConfig tiny_text(TextVariant variant) {
  TextEncoderConfig c;
  c.variant = variant;
  c.vocab_size = 9;
  c.max_seq_len = 6;
  c.num_segments = 2;
  c.model_dim = 8;
  c.depth = 2;
  c.num_heads = 2;
  c.mlp_expansion = 2;
  return c;
}

ImageEncoderConfig tiny_image(ImageVariant variant) {
  ImageEncoderConfig c;
  c.variant = variant;
  c.height = 8;
  c.width = 8;
  c.channels = 1;
  c.patch_size = 4;
  c.model_dim = 8;
  c.depth = 2;
  c.num_heads = 2;
  c.mlp_expansion = 2;
  c.window = {2, 1};
  return c;
}

Image random_image(const ImageEncoderConfig& c, Rng& rng) {
  Image img{c.height, c.width, c.channels, std::vector<float>(c.height * c.width * c.channels)};
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

std::vector<std::string> grad_suite_ops() {
  return {"matmul", "add", "sub", "mul", "scale", "gelu", "relu", "sum", "mean", "reshape",
          "transpose", "concat", "slice", "row", "gather", "softmax", "masked_softmax",
          "layer_norm", "embedding", "cross_entropy", "dropout", "linear"};
}

std::vector<GradSuiteEntry> run_grad_suite(const GradSuiteOptions& options) {
  Builder b{options, {}};
  const double op_tol = options.op_tolerance;

  b.add("matmul", "op", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    for (auto [m, k, n] : {std::array<std::size_t, 3>{3, 4, 2}, {1, 5, 3}, {4, 4, 4}}) {
      auto a = random({m, k}, rng), c = random({k, n}, rng);
      cases.push_back(op_case([a, c] { return matmul(a, c); }, {a, c}, rng));
    }
    return cases;
  });
  auto binary = [&](const std::string& name, TD (*fn)(const TD&, const TD&)) {
    b.add(name, "op", op_tol, [fn](Rng& rng) {
      std::vector<Case> cases;
      for (auto [sa, sb] : {std::pair<Shape, Shape>{{2, 3}, {2, 3}}, {{3, 4}, {4}}, {{5}, {5}}}) {
        auto x = random(sa, rng), y = random(sb, rng);
        cases.push_back(op_case([x, y, fn] { return fn(x, y); }, {x, y}, rng));
      }
      return cases;
    });
  };
  binary("add", &add<D>);
  binary("sub", &sub<D>);
  binary("mul", &mul<D>);
  b.add("scale", "op", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    for (auto [s, f] : {std::pair<Shape, D>{{2, 3}, 0.7}, {{4}, -1.3}, {{3, 3}, 2.0}}) {
      auto x = random(s, rng);
      cases.push_back(op_case([x, f] { return scale(x, f); }, {x}, rng));
    }
    return cases;
  });
  b.add("gelu", "op", op_tol, [](Rng& rng) {
    return unary_cases(rng, {{2, 3}, {5}, {3, 4}}, [](const TD& x) { return gelu(x); });
  });
  b.add("relu", "op", op_tol, [](Rng& rng) {
    return unary_cases(rng, {{2, 3}, {5}, {3, 4}}, [](const TD& x) { return relu(x); }, true);
  });
  b.add("sum", "op", op_tol, [](Rng& rng) {
    return unary_cases(rng, {{2, 3}, {5}, {1, 1}}, [](const TD& x) { return sum(x); });
  });
  b.add("mean", "op", op_tol, [](Rng& rng) {
    return unary_cases(rng, {{2, 3}, {5}, {4, 2}}, [](const TD& x) { return mean(x); });
  });
  b.add("reshape", "op", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    for (auto [from, to] : {std::pair<Shape, Shape>{{2, 3}, {3, 2}}, {{6}, {1, 6}}, {{2, 6}, {3, 4}}}) {
      auto x = random(from, rng);
      cases.push_back(op_case([x, to] { return reshape(x, to); }, {x}, rng));
    }
    return cases;
  });
  b.add("transpose", "op", op_tol, [](Rng& rng) {
    return unary_cases(rng, {{2, 3}, {1, 4}, {3, 3}}, [](const TD& x) { return transpose(x); });
  });
  b.add("concat", "op", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    {
      auto x = random({2, 3}, rng), y = random({1, 3}, rng);
      cases.push_back(op_case([x, y] { return concat<D>({x, y}, 0); }, {x, y}, rng));
    }
    {
      auto x = random({2, 3}, rng), y = random({2, 2}, rng);
      cases.push_back(op_case([x, y] { return concat<D>({x, y}, 1); }, {x, y}, rng));
    }
    {
      auto x = random({1, 2}, rng), y = random({2, 2}, rng), z = random({1, 2}, rng);
      cases.push_back(op_case([x, y, z] { return concat<D>({x, y, z}, 0); }, {x, y, z}, rng));
    }
    return cases;
  });
  b.add("slice", "op", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    auto x = random({4, 3}, rng);
    cases.push_back(op_case([x] { return slice(x, 0, 1, 2); }, {x}, rng));
    auto y = random({3, 5}, rng);
    cases.push_back(op_case([y] { return slice(y, 1, 2, 3); }, {y}, rng));
    auto z = random({6}, rng);
    cases.push_back(op_case([z] { return slice(z, 0, 1, 4); }, {z}, rng));
    return cases;
  });
  b.add("row", "op", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    for (auto [s, i] : {std::pair<Shape, std::size_t>{{3, 4}, 1}, {{2, 5}, 0}, {{4, 2}, 3}}) {
      auto x = random(s, rng);
      cases.push_back(op_case([x, i] { return row(x, i); }, {x}, rng));
    }
    return cases;
  });
  b.add("gather", "op", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    const std::vector<std::vector<std::size_t>> idx = {{5, 0, 2, 2}, {1}, {0, 3, 3, 1, 2, 0}};
    const std::vector<Shape> in = {{2, 3}, {2, 2}, {4}};
    const std::vector<Shape> out = {{2, 2}, {1}, {3, 2}};
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto x = random(in[k], rng);
      auto index = idx[k];
      auto shape = out[k];
      cases.push_back(op_case([x, index, shape] { return gather(x, std::span<const std::size_t>(index), shape); }, {x}, rng));
    }
    return cases;
  });
  b.add("softmax", "op", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    for (auto [s, axis] : {std::pair<Shape, std::size_t>{{2, 3}, 1}, {{3, 2}, 0}, {{4}, 0}}) {
      auto x = random(s, rng);
      cases.push_back(op_case([x, axis] { return softmax(x, axis); }, {x}, rng));
    }
    return cases;
  });
  b.add("masked_softmax", "op", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    const std::vector<std::pair<Shape, std::vector<std::uint8_t>>> specs = {
        {{3, 3}, {1, 1, 0, 0, 1, 1, 1, 0, 1}},
        {{2, 4}, {1, 0, 1, 1, 0, 1, 1, 0}},
        {{5, 5}, window_mask(5, 1, WindowSpec{2, 1})}};
    for (const auto& [s, mask] : specs) {
      auto x = random(s, rng);
      cases.push_back(op_case([x, mask] { return masked_softmax(x, std::span<const std::uint8_t>(mask)); }, {x}, rng));
    }
    return cases;
  });
  b.add("layer_norm", "op", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    for (auto [r, d] : {std::pair<std::size_t, std::size_t>{2, 4}, {3, 6}, {1, 8}}) {
      auto x = random({r, d}, rng), g = random({d}, rng), be = random({d}, rng);
      cases.push_back(op_case([x, g, be] { return layer_norm(x, g, be, D(1e-5)); }, {x, g, be}, rng));
    }
    return cases;
  });
  b.add("embedding", "op", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    const std::vector<std::pair<Shape, std::vector<std::int32_t>>> specs = {
        {{5, 3}, {0, 2, 2, 4}}, {{4, 2}, {3}}, {{6, 4}, {1, 5, 0}}};
    for (const auto& [s, ids] : specs) {
      auto table = random(s, rng);
      cases.push_back(op_case([table, ids] { return embedding(table, std::span<const std::int32_t>(ids)); }, {table}, rng));
    }
    return cases;
  });
  b.add("cross_entropy", "op", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    {
      auto x = random({3, 2}, rng);
      std::vector<std::int32_t> y = {0, 1, 1};
      cases.push_back({[x, y] { return cross_entropy(x, std::span<const std::int32_t>(y)); }, {x}});
    }
    {
      auto x = random({4, 3}, rng);
      std::vector<std::int32_t> y = {2, 0, 1, 2};
      std::vector<D> w = {0.5, 1.5, 2.0};
      cases.push_back({[x, y, w] { return cross_entropy(x, std::span<const std::int32_t>(y), std::span<const D>(w)); }, {x}});
    }
    {
      auto x = random({1, 2}, rng);
      std::vector<std::int32_t> y = {1};
      cases.push_back({[x, y] { return cross_entropy(x, std::span<const std::int32_t>(y)); }, {x}});
    }
    return cases;
  });
  b.add("dropout", "op", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    for (auto [s, p] : {std::pair<Shape, D>{{3, 4}, 0.3}, {{5}, 0.5}, {{2, 2}, 0.1}}) {
      auto x = random(s, rng);
      const auto seed = static_cast<std::uint64_t>(rng.integer(0, 1 << 30));
      cases.push_back(op_case([x, p, seed] {
        std::mt19937_64 mask_rng(seed);
        return dropout(x, p, mask_rng);
      }, {x}, rng));
    }
    return cases;
  });
  b.add("linear", "op", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    {
      auto x = random({2, 3}, rng), w = random({3, 4}, rng), bias = random({4}, rng);
      cases.push_back(op_case([x, w, bias] { return linear(x, w, bias); }, {x, w, bias}, rng));
    }
    {
      auto x = random({3, 2}, rng), w = random({2, 2}, rng);
      cases.push_back(op_case([x, w] { return linear(x, w, TD()); }, {x, w}, rng));
    }
    {
      auto x = random({1, 5}, rng), w = random({5, 2}, rng), bias = random({2}, rng);
      cases.push_back(op_case([x, w, bias] { return linear(x, w, bias); }, {x, w, bias}, rng));
    }
    return cases;
  });

  // -------------------------------------------------------------------------
  // Blocks

  auto attention_cases = [](bool windowed) {
    return [windowed](Rng& rng) {
      std::vector<Case> cases;
      struct Spec { std::size_t len, d, heads; WindowSpec w; };
      const std::vector<Spec> specs = windowed
          ? std::vector<Spec>{{5, 4, 2, {2, 0}}, {5, 4, 2, {2, 1}}, {9, 6, 3, {4, 2}}}
          : std::vector<Spec>{{3, 4, 2, {}}, {5, 8, 2, {}}, {2, 6, 3, {}}};
      for (const auto& s : specs) {
        ParameterStore<D> store;
        auto p = make_attention(store, "attn", s.d, s.heads, true, rng);
        roughen(store, rng);
        auto x = random({s.len, s.d}, rng);
        auto inputs = store.tensors();
        inputs.push_back(x);
        auto w = s.w;
        cases.push_back(op_case([x, p, w, windowed] {
          return windowed ? windowed_self_attention(x, p, w) : multi_head_self_attention(x, p);
        }, inputs, rng));
      }
      return cases;
    };
  };
  b.add_tensorwise("block/attention", "block", op_tol, attention_cases(false));
  b.add_tensorwise("block/windowed_attention", "block", op_tol, attention_cases(true));

  b.add_tensorwise("block/transformer", "block", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    struct Spec { std::size_t len, d, heads; Activation act; std::optional<WindowSpec> w; };
    const std::vector<Spec> specs = {{3, 8, 2, Activation::gelu, std::nullopt},
                                     {4, 6, 3, Activation::gelu, std::nullopt},
                                     {5, 8, 2, Activation::gelu, WindowSpec{2, 1}}};
    for (const auto& s : specs) {
      ParameterStore<D> store;
      auto p = make_block(store, "block", small_block(s.d, s.heads, s.act), rng);
      roughen(store, rng);
      auto x = random({s.len, s.d}, rng);
      auto inputs = store.tensors();
      inputs.push_back(x);
      AttentionKind kind{s.w, 1};
      cases.push_back(op_case([x, p, kind] { return transformer_block(x, p, kind); }, inputs, rng));
    }
    return cases;
  });

  b.add_tensorwise("block/text_encoder", "block", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    const std::vector<std::int32_t> ids = {3, 7, 4, 4, 8};
    const std::vector<std::int32_t> segs = {0, 0, 1, 1, 1};
    for (auto v : {TextVariant::base, TextVariant::roberta, TextVariant::albert}) {
      ParameterStore<D> store;
      auto enc = std::make_shared<TextEncoder<D>>(tiny_text(v), store, rng);
      roughen(store, rng);
      cases.push_back(op_case([enc, ids, segs] { return enc->encode(ids, segs); }, store.tensors(), rng));
    }
    return cases;
  });

  b.add_tensorwise("block/image_encoder", "block", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    for (auto v : {ImageVariant::standard, ImageVariant::windowed, ImageVariant::distill_token}) {
      ParameterStore<D> store;
      const auto cfg = tiny_image(v);
      auto enc = std::make_shared<ImageEncoder<D>>(cfg, store, rng);
      roughen(store, rng);
      auto image = image_tensor<D>(random_image(cfg, rng));
      auto inputs = store.tensors();
      inputs.push_back(image);
      cases.push_back(op_case([enc, image] { return enc->encode(image); }, inputs, rng));
    }
    return cases;
  });

  b.add_tensorwise("block/fusion", "block", op_tol, [](Rng& rng) {
    std::vector<Case> cases;
    struct Spec { std::size_t d, heads, hidden; };
    for (const auto& s : {Spec{4, 2, 0}, Spec{8, 2, 6}, Spec{6, 3, 0}}) {
      ParameterStore<D> store;
      FusionConfig fc;
      fc.num_heads = s.heads;
      fc.hidden = s.hidden;
      auto p = make_fusion(store, "fusion", s.d, s.d, fc, rng);
      roughen(store, rng);
      auto t = random({s.d}, rng), im = random({s.d}, rng);
      auto inputs = store.tensors();
      inputs.push_back(t);
      inputs.push_back(im);
      cases.push_back(op_case([p, t, im] { return classify_logits(fuse(splice(t, im), p), p); }, inputs, rng));
    }
    return cases;
  });

  // -------------------------------------------------------------------------
  // Full multimodal model: cross-entropy over two samples, every parameter.

  b.add_tensorwise("model/multimodal", "model", options.model_tolerance, [](Rng& rng) {
    std::vector<Case> cases;
    struct Spec { ImageVariant image; TextVariant text; std::size_t hidden; };
    for (const auto& s : {Spec{ImageVariant::standard, TextVariant::base, 0},
                          Spec{ImageVariant::windowed, TextVariant::roberta, 0},
                          Spec{ImageVariant::distill_token, TextVariant::albert, 4}}) {
      ModelConfig mc;
      mc.text = tiny_text(s.text);
      mc.image = tiny_image(s.image);
      mc.fusion.num_heads = 2;
      mc.fusion.hidden = s.hidden;
      auto model = std::make_shared<MultitransModel<D>>(mc, static_cast<std::uint64_t>(rng.integer(1, 1 << 20)));
      roughen(model->parameters(), rng);
      auto images = std::make_shared<std::vector<Image>>();
      images->push_back(random_image(mc.image, rng));
      images->push_back(random_image(mc.image, rng));
      const std::vector<std::vector<std::int32_t>> ids = {{3, 5, 8}, {4, 4, 6, 7}};
      const std::vector<std::vector<std::int32_t>> segs = {{0, 0, 1}, {0, 1, 1, 1}};
      const std::vector<std::int32_t> labels = {0, 1};
      cases.push_back({[model, images, ids, segs, labels] {
                         std::vector<TD> rows;
                         for (std::size_t i = 0; i < 2; ++i) {
                           rows.push_back(model->logits(ModelInput{&(*images)[i], ids[i], segs[i]}));
                         }
                         return cross_entropy(concat(rows, 0), std::span<const std::int32_t>(labels));
                       },
                       model->parameters().tensors()});
    }
    return cases;
  });

  return std::move(b.entries);
}

}  // namespace multitrans
