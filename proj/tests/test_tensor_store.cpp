#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <fstream>
#include <random>

#include <png.h>
#include <json.hpp>

#include "attnseg/error.hpp"
#include "attnseg/tensor_store.hpp"
#include "helpers.hpp"

using namespace attnseg;
using testing::TempDir;

namespace {

void patch_manifest(const std::filesystem::path& dir, const std::function<void(nlohmann::json&)>& edit) {
  nlohmann::json j;
  {
    std::ifstream in(dir / "manifest.json");
    j = nlohmann::json::parse(in);
  }
  edit(j);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << j.dump(2);
}

}  // namespace

TEST_CASE("write_bundle lays out manifest plus one raw file per matrix") {
  TempDir tmp("ts_layout");
  write_bundle(testing::small_bundle(), tmp.path());
  CHECK(std::filesystem::exists(tmp / "manifest.json"));
  CHECK(std::filesystem::file_size(tmp / "cross_4.f32") == 48);
  CHECK(std::filesystem::file_size(tmp / "self.f32") == 64);

  std::ifstream in(tmp / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j.at("format_version") == 1);
  CHECK(j.at("token_manifest").at("entries")[0].at("token_span") == nlohmann::json::array({1, 1}));
}

TEST_CASE("raw payloads are little-endian f32 without header") {
  TempDir tmp("ts_le");
  write_f32(tmp / "x.f32", {1.0f, -2.5f});
  std::ifstream in(tmp / "x.f32", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  REQUIRE(bytes.size() == 8);
  // 1.0f = 0x3f800000, -2.5f = 0xc0200000
  CHECK(bytes == std::vector<unsigned char>{0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x20, 0xc0});
}

TEST_CASE("bundle round trip is bitwise") {
  TempDir tmp("ts_rt");
  auto b = testing::small_bundle();
  b.self_map(0, 0) = 0.1f;
  b.self_map(0, 1) = 0.4f;
  b.extraction_note = "post-softmax, head mean";
  write_bundle(b, tmp.path());
  const auto back = read_bundle(tmp.path());
  CHECK(back == b);
  CHECK(std::memcmp(back.self_map.data.data(), b.self_map.data.data(), b.self_map.size() * 4) == 0);
}

TEST_CASE("invariant violations are rejected before writing") {
  TempDir tmp("ts_reject");
  auto b = testing::small_bundle();
  for (auto& v : b.self_map.row(2)) v = 0.225f;  // row sums to 0.9
  CHECK_THROWS_AS(write_bundle(b, tmp / "out"), ValidationError);
  CHECK_FALSE(std::filesystem::exists(tmp / "out" / "manifest.json"));

  auto c = testing::small_bundle();
  c.token_manifest.entries.push_back({"dog", TokenKind::category, {1, 2}});
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("overlap"), ValidationError);

  auto d = testing::small_bundle();
  d.token_manifest.entries.push_back({"cat", TokenKind::category, {2, 2}});
  CHECK_THROWS_WITH_AS(validate(d), doctest::Contains("duplicate"), ValidationError);

  auto e = testing::small_bundle();
  e.token_manifest.entries.push_back({"dog", TokenKind::category, {3, 3}});
  CHECK_THROWS_WITH_AS(validate(e), doctest::Contains("exceeds"), ValidationError);

  auto f = testing::small_bundle();
  f.cross_layers.push_back(f.cross_layers.front());
  f.cross_layers.back().layer_index = 5;
  f.cross_layers.back().tokens = 2;
  CHECK_THROWS_AS(validate(f), ValidationError);
}

TEST_CASE("read_bundle errors") {
  TempDir tmp("ts_errors");
  const auto dir = tmp / "b";

  SUBCASE("truncated raw file") {
    write_bundle(testing::small_bundle(), dir);
    std::filesystem::resize_file(dir / "cross_4.f32", 44);
    CHECK_THROWS_WITH_AS(read_bundle(dir), doctest::Contains("shape mismatch"), ValidationError);
  }
  SUBCASE("empty token span") {
    write_bundle(testing::small_bundle(), dir);
    patch_manifest(dir, [](nlohmann::json& j) { j["token_manifest"]["entries"][0]["token_span"] = {5, 4}; });
    CHECK_THROWS_WITH_AS(read_bundle(dir), doctest::Contains("empty"), ValidationError);
  }
  SUBCASE("unsupported version") {
    write_bundle(testing::small_bundle(), dir);
    patch_manifest(dir, [](nlohmann::json& j) { j["format_version"] = 2; });
    CHECK_THROWS_WITH_AS(read_bundle(dir), doctest::Contains("format_version"), ValidationError);
  }
  SUBCASE("missing raw file") {
    write_bundle(testing::small_bundle(), dir);
    std::filesystem::remove(dir / "self.f32");
    CHECK_THROWS_AS(read_bundle(dir), IoError);
  }
  SUBCASE("missing manifest") { CHECK_THROWS_AS(read_bundle(dir), IoError); }
  SUBCASE("NaN payload") {
    write_bundle(testing::small_bundle(), dir);
    std::vector<float> v(12, 0.0f);
    v[0] = std::nanf("");
    write_f32(dir / "cross_4.f32", v);
    CHECK_THROWS_WITH_AS(read_bundle(dir), doctest::Contains("non-finite"), ValidationError);
  }
}

TEST_CASE("random corruptions never yield an invalid bundle") {
  TempDir tmp("ts_fuzz");
  const auto dir = tmp / "b";
  write_bundle(testing::small_bundle(), dir);
  std::ifstream in(dir / "self.f32", std::ios::binary);
  const std::vector<char> pristine((std::istreambuf_iterator<char>(in)), {});
  std::ifstream cin_(dir / "cross_4.f32", std::ios::binary);
  const std::vector<char> pristine_cross((std::istreambuf_iterator<char>(cin_)), {});

  std::mt19937_64 rng(7);
  int rejected = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const bool self_file = trial % 2 == 0;
    auto bytes = self_file ? pristine : pristine_cross;
    const auto pos = rng() % bytes.size();
    bytes[pos] = static_cast<char>(bytes[pos] ^ static_cast<char>(1u << (rng() % 8)));
    std::ofstream out(dir / (self_file ? "self.f32" : "cross_4.f32"), std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    try {
      const auto b = read_bundle(dir);
      CHECK_NOTHROW(validate(b));
    } catch (const ValidationError&) {
      ++rejected;
    }
    std::ofstream restore(dir / (self_file ? "self.f32" : "cross_4.f32"), std::ios::binary | std::ios::trunc);
    const auto& orig = self_file ? pristine : pristine_cross;
    restore.write(orig.data(), static_cast<std::streamsize>(orig.size()));
  }
  CHECK(rejected > 100);
}

TEST_CASE("mask PNG round trip") {
  TempDir tmp("ts_mask");
  LabelMask m(2, 2);
  m.labels = {0, 1, 1, 0};
  m.uncertain = {0, 0, 1, 0};
  write_mask(m, tmp / "m.png");
  CHECK(std::filesystem::exists(tmp / "m_uncertain.png"));
  CHECK(read_mask(tmp / "m.png") == m);

  LabelMask ignore(3, 1);
  ignore.labels = {255, 3, 0};
  write_mask(ignore, tmp / "ignore.png");
  CHECK(read_mask(tmp / "ignore.png").labels == ignore.labels);

  // Without a sibling flag file every pixel is certain.
  std::filesystem::remove(tmp / "ignore_uncertain.png");
  CHECK(read_mask(tmp / "ignore.png").uncertain == std::vector<std::uint8_t>{0, 0, 0});
}

TEST_CASE("16-bit PNG masks are rejected") {
  TempDir tmp("ts_16");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = 2;
  image.height = 2;
  image.format = PNG_FORMAT_LINEAR_Y;
  const std::uint16_t px[4] = {0, 1000, 2000, 65535};
  REQUIRE(png_image_write_to_file(&image, (tmp / "deep.png").c_str(), 0, px, 0, nullptr));
  CHECK_THROWS_WITH_AS(read_mask(tmp / "deep.png"), doctest::Contains("8-bit"), ValidationError);
}

TEST_CASE("palette PNGs load their indices") {
  TempDir tmp("ts_palette");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = 3;
  image.height = 1;
  image.format = PNG_FORMAT_RGB_COLORMAP;
  image.colormap_entries = 256;
  std::vector<std::uint8_t> colormap(3 * 256, 0);
  for (int i = 0; i < 256; ++i) colormap[3 * i] = static_cast<std::uint8_t>(i);
  const std::uint8_t idx[3] = {0, 15, 255};
  REQUIRE(png_image_write_to_file(&image, (tmp / "voc.png").c_str(), 0, idx, 0, colormap.data()));
  CHECK(read_mask(tmp / "voc.png").labels == std::vector<std::uint8_t>{0, 15, 255});
}

TEST_CASE("correlation map round trip") {
  TempDir tmp("ts_sc");
  CorrelationMap sc;
  sc.channels = {{"background", 0}, {"cat", 8}};
  sc.width = 2;
  sc.height = 1;
  sc.stage = ResolutionStage::image;
  sc.data = {0.1f, 0.2f, 0.9f, 0.8f};
  write_correlation(sc, tmp.path());
  CHECK(read_correlation(tmp.path()) == sc);
}
