#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <unistd.h>

#include "multitrans/data.hpp"

using namespace multitrans;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("multitrans_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void put(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

SynthConfig small(std::size_t n, std::uint64_t seed = 1) {
  SynthConfig c;
  c.n = n;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("mRS dichotomy") {
  CHECK(dichotomize_mrs(0) == kGoodOutcome);
  CHECK(dichotomize_mrs(2) == kGoodOutcome);
  CHECK(dichotomize_mrs(3) == kPoorOutcome);
  CHECK(dichotomize_mrs(6) == kPoorOutcome);
  for (int s = 0; s < 6; ++s) CHECK(dichotomize_mrs(s + 1) >= dichotomize_mrs(s));
  CHECK_THROWS_AS(dichotomize_mrs(7), DataError);
  CHECK_THROWS_AS(dichotomize_mrs(-1), DataError);
}

TEST_CASE("image payload") {
  TempDir dir("img");
  Image img{2, 3, 1, {0.0f, 0.25f, 0.5f, 0.75f, 1.0f, 0.125f}};
  write_image(dir.path / "a.mtimg", img);
  const auto bytes = slurp(dir.path / "a.mtimg");
  CHECK(bytes.size() == 6 + 12 + 6 * 4);
  CHECK(bytes.substr(0, 6) == "MTIMG1");
  CHECK(bytes[6] == 2);
  CHECK(bytes[10] == 3);
  CHECK(read_image(dir.path / "a.mtimg") == img);
  put(dir.path / "bad.mtimg", "MTIMG0xxxxxxxxxxxx");
  CHECK_THROWS_AS(read_image(dir.path / "bad.mtimg"), DataError);
  put(dir.path / "short.mtimg", bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(read_image(dir.path / "short.mtimg"), DataError);
}

TEST_CASE("generator") {
  auto a = generate_synthetic(small(200));
  REQUIRE(a.dataset.samples.size() == 200);
  REQUIRE(a.log.size() == 200);
  for (std::size_t i = 0; i < 200; ++i) {
    const auto& r = a.log[i];
    const auto& s = a.dataset.samples[i];
    CHECK(r.label == (r.image_bit ^ r.text_bit));
    CHECK(s.label == r.label);
    CHECK(dichotomize_mrs(s.mrs) == s.label);
    CHECK(s.tokens.size() + 1 <= 32);
    if (r.image_leaked) CHECK(r.image_marker == r.label);
    if (r.text_leaked) CHECK(r.text_marker == r.label);
  }
  auto b = generate_synthetic(small(200));
  for (std::size_t i = 0; i < 200; ++i) {
    CHECK(a.dataset.samples[i].image == b.dataset.samples[i].image);
    CHECK(a.dataset.samples[i].text == b.dataset.samples[i].text);
  }
  auto c = generate_synthetic(small(200, 2));
  CHECK(c.dataset.samples[0].image != a.dataset.samples[0].image);
}

TEST_CASE("marker agreement matches the ceiling over 10k samples") {
  for (double u : {0.5, 0.75, 0.9}) {
    auto cfg = small(10000, 5);
    cfg.image_ceiling = u;
    cfg.text_ceiling = u;
    cfg.height = 8;
    cfg.width = 8;
    auto d = generate_synthetic(cfg);
    std::size_t image_agree = 0, text_agree = 0, bit_agree = 0;
    for (const auto& r : d.log) {
      image_agree += r.image_marker == r.label;
      text_agree += r.text_marker == r.label;
      bit_agree += r.image_bit == r.label;
    }
    CHECK(std::abs(image_agree / 1e4 - u) <= 0.02);
    CHECK(std::abs(text_agree / 1e4 - u) <= 0.02);
    CHECK(std::abs(bit_agree / 1e4 - 0.5) <= 0.02);
  }
}

TEST_CASE("generator config validation") {
  auto c = small(10);
  c.image_ceiling = 1.0;
  CHECK_THROWS_AS(generate_synthetic(c), ConfigError);
  c = small(10);
  c.filler_min = 4;
  c.filler_max = 2;
  CHECK_THROWS_AS(generate_synthetic(c), ConfigError);
  c = small(0);
  CHECK_THROWS_AS(generate_synthetic(c), ConfigError);
}

TEST_CASE("dataset round trip") {
  TempDir dir("ds");
  auto data = generate_synthetic(small(12));
  const auto manifest = write_dataset(data.dataset, dir.path / "d");
  CHECK(manifest.filename() == "manifest.tsv");
  CHECK(resolve_manifest(dir.path / "d") == manifest);
  auto loaded = load_dataset(manifest);
  REQUIRE(loaded.samples.size() == 12);
  CHECK(loaded.vocab.tokens() == data.dataset.vocab.tokens());
  for (std::size_t i = 0; i < 12; ++i) {
    const auto& x = data.dataset.samples[i];
    const auto& y = loaded.samples[i];
    CHECK(x.id == y.id);
    CHECK(x.image == y.image);
    CHECK(x.tokens == y.tokens);
    CHECK(x.segments == y.segments);
    CHECK(x.mrs == y.mrs);
    CHECK(x.label == y.label);
  }
  const auto first = slurp(manifest);
  const auto image0 = slurp(dir.path / "d" / "images" / (data.dataset.samples[0].id + ".mtimg"));
  write_dataset(data.dataset, dir.path / "d");
  CHECK(slurp(manifest) == first);
  CHECK(slurp(dir.path / "d" / "images" / (data.dataset.samples[0].id + ".mtimg")) == image0);
}

TEST_CASE("one-sample dataset writes three files and the manifest") {
  TempDir dir("one");
  auto data = generate_synthetic(small(1));
  write_dataset(data.dataset, dir.path);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path)) files += e.is_regular_file();
  CHECK(files == 4);
}

TEST_CASE("manifest errors name the row") {
  TempDir dir("bad");
  auto data = generate_synthetic(small(2));
  const auto manifest = write_dataset(data.dataset, dir.path);
  const auto header = std::string("#multitrans-manifest\t1\n#dims\t32\t32\t1\n#vocab\tvocab.txt\n");

  put(manifest, header);
  CHECK(load_dataset(manifest).samples.empty());

  const auto& id = data.dataset.samples[0].id;
  put(manifest, header + id + "\timages/" + id + ".mtimg\ttexts/" + id + ".txt\t7\n");
  try {
    load_dataset(manifest);
    FAIL("mrs 7 accepted");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":4") != std::string::npos);
    CHECK(msg.find("mrs 7") != std::string::npos);
  }
  put(manifest, header + id + "\timages/missing.mtimg\ttexts/" + id + ".txt\t1\n");
  CHECK_THROWS_AS(load_dataset(manifest), DataError);
  put(manifest, header + id + "\tx\n");
  CHECK_THROWS_AS(load_dataset(manifest), DataError);
  CHECK_THROWS_AS(load_dataset(dir.path / "nope.tsv"), DataError);
}

TEST_CASE("8-bit images are rescaled on load") {
  TempDir dir("scale");
  Dataset ds;
  ds.height = 2;
  ds.width = 2;
  Sample s;
  s.id = "a";
  s.image = Image{2, 2, 1, {0.0f, 255.0f, 51.0f, 102.0f}};
  s.text = "findings: none.";
  s.mrs = 1;
  ds.samples.push_back(s);
  auto loaded = load_dataset(write_dataset(ds, dir.path));
  CHECK(loaded.samples[0].image.pixels[1] == 1.0f);
  CHECK(loaded.samples[0].image.pixels[2] == doctest::Approx(0.2f));
}
