#include <doctest.h>

#include <cmath>
#include <random>

#include "attnseg/densecrf.hpp"
#include "attnseg/error.hpp"
#include "attnseg/fusion.hpp"
#include "oracles.hpp"

using namespace attnseg;

namespace {

RgbImage two_colour(std::size_t w, std::size_t h) {
  RgbImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(3 * w * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::uint8_t v = x < w / 2 ? 40 : 200;
      for (int c = 0; c < 3; ++c) img.pixels[3 * (y * w + x) + c] = v;
    }
  return img;
}

// Left half leans background, right half leans class 5; `flipped` pixels get
// the opposite unary.
CorrelationMap leaning_map(std::size_t w, std::size_t h, const std::vector<std::size_t>& flipped) {
  CorrelationMap sc;
  sc.channels = {{"background", 0}, {"cat", 5}};
  sc.width = w;
  sc.height = h;
  sc.stage = ResolutionStage::image;
  sc.data.resize(2 * w * h);
  for (std::size_t p = 0; p < w * h; ++p) {
    bool right = (p % w) >= w / 2;
    for (auto f : flipped)
      if (f == p) right = !right;
    sc.at(0, p) = right ? 0.3f : 0.7f;
    sc.at(1, p) = right ? 0.7f : 0.3f;
  }
  return sc;
}

CrfParams single_threaded() {
  CrfParams p;
  p.threads = 1;
  return p;
}

}  // namespace

TEST_CASE("unary_distribution") {
  CorrelationMap sc;
  sc.channels = {{"background", 0}, {"a", 1}, {"b", 2}};
  sc.width = 2;
  sc.height = 1;
  sc.data = {0.0f, 1.0f, 2.0f, 2.0f, 1.0f, 2.0f};
  const auto q = unary_distribution(sc, 1e-8f);
  CHECK(q[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(q[2] == doctest::Approx(2.0 / 3.0));
  CHECK(q[4] == doctest::Approx(1.0 / 3.0));
  CHECK(q[1] == doctest::Approx(0.2));
  CHECK(q[0] > 0.0f);

  sc.data = {0.0f, 1.0f, 0.0f, 1.0f, 0.0f, 1.0f};
  CHECK_THROWS_WITH_AS(unary_distribution(sc, 1e-8f), doctest::Contains("pixel 0"), ValidationError);
}

TEST_CASE("zero-weight CRF is the identity on the unary distribution") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0.05f, 1.0f);
  CorrelationMap sc = leaning_map(12, 9, {});
  for (auto& v : sc.data) v = u(rng);
  CrfParams p = single_threaded();
  p.appearance_weight = 0.0f;
  p.smoothness_weight = 0.0f;
  const auto out = refine(two_colour(12, 9), sc, p);
  const auto q0 = unary_distribution(sc, p.unary_epsilon);
  REQUIRE(out.data.size() == q0.size());
  for (std::size_t k = 0; k < q0.size(); ++k) CHECK(std::abs(out.data[k] - q0[k]) <= 1e-6);
}

TEST_CASE("uniform image with uniform unaries stays uniform") {
  RgbImage img;
  img.width = 6;
  img.height = 6;
  img.pixels.assign(3 * 36, 90);
  CorrelationMap sc = leaning_map(6, 6, {});
  std::fill(sc.data.begin(), sc.data.end(), 0.5f);
  const auto out = refine(img, sc, single_threaded());
  for (float v : out.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("three flipped pixels are corrected and match the reference mean-field") {
  const std::size_t w = 16, h = 16;
  const std::vector<std::size_t> flipped{3 * w + 2, 8 * w + 12, 14 * w + 7};
  const auto img = two_colour(w, h);
  const auto sc = leaning_map(w, h, flipped);
  const CrfParams p = single_threaded();

  const auto before = argmax_labels(sc, 0.0f);
  const auto out = refine(img, sc, p);
  const auto after = argmax_mask(out, 0.0f);
  for (std::size_t i = 0; i < w * h; ++i) {
    const std::uint8_t expected = (i % w) >= w / 2 ? 5 : 0;
    CHECK(after.labels[i] == expected);
  }
  for (auto f : flipped) CHECK(before.labels[f] != after.labels[f]);

  const auto q0f = unary_distribution(sc, p.unary_epsilon);
  const std::vector<double> q0(q0f.begin(), q0f.end());
  const auto ref = oracle::mean_field_reference(img, q0, 2, p.iterations, p.appearance_weight, p.appearance_sxy,
                                                p.appearance_srgb, p.smoothness_weight, p.smoothness_sxy);
  double diff = 0.0;
  for (std::size_t k = 0; k < ref.size(); ++k) diff = std::max(diff, std::abs(ref[k] - out.data[k]));
  CHECK(diff < 1e-4);
}

TEST_CASE("Q stays a distribution after every iteration") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t w = 10 + trial, h = 8;
    CorrelationMap sc;
    sc.channels = {{"background", 0}, {"a", 1}, {"b", 2}, {"c", 3}};
    sc.width = w;
    sc.height = h;
    sc.data.resize(4 * w * h);
    for (auto& v : sc.data) v = u(rng) + 0.01f;
    RgbImage img;
    img.width = w;
    img.height = h;
    img.pixels.resize(3 * w * h);
    for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng() % 256);

    int calls = 0;
    refine(img, sc, single_threaded(), [&](const CrfIteration& it) {
      ++calls;
      CHECK(it.iteration == calls);
      const std::size_t n = w * h;
      for (std::size_t p = 0; p < n; ++p) {
        double s = 0.0;
        for (std::size_t l = 0; l < 4; ++l) s += it.q[l * n + p];
        CHECK(std::abs(s - 1.0) <= 1e-5);
      }
    });
    CHECK(calls == 10);
  }
}

TEST_CASE("refinement is independent of thread count") {
  const auto img = two_colour(20, 18);
  const auto sc = leaning_map(20, 18, {5, 77, 200});
  CrfParams one = single_threaded();
  CrfParams many = one;
  many.threads = 4;
  CHECK(refine(img, sc, one) == refine(img, sc, many));
}

TEST_CASE("pixel cap refines a subsample and returns a full-resolution distribution") {
  const std::size_t w = 30, h = 24;
  const auto img = two_colour(w, h);
  const auto sc = leaning_map(w, h, {});
  CrfParams p = single_threaded();
  p.pixel_cap = 100;
  std::size_t seen = 0;
  const auto out = refine(img, sc, p, [&](const CrfIteration& it) { seen = it.q.size() / 2; });
  CHECK(seen <= 100);
  CHECK(seen > 0);
  REQUIRE(out.width == w);
  REQUIRE(out.height == h);
  for (std::size_t q = 0; q < w * h; ++q) CHECK(out.at(0, q) + out.at(1, q) == doctest::Approx(1.0).epsilon(1e-5));
  const auto mask = argmax_mask(out, 0.0f);
  CHECK(mask.at(0, 0) == 0);
  CHECK(mask.at(w - 1, h - 1) == 5);
}

TEST_CASE("CrfParams validation") {
  CrfParams p;
  p.iterations = 0;
  CHECK_THROWS_WITH_AS(p.validate(), doctest::Contains("--crf.iterations"), ValidationError);
  p = {};
  p.appearance_srgb = 0.0f;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p = {};
  p.unary_epsilon = 0.0f;
  CHECK_THROWS_AS(p.validate(), ValidationError);

  CorrelationMap sc = leaning_map(4, 4, {});
  CHECK_THROWS_AS(refine(two_colour(5, 4), sc, CrfParams{}), ValidationError);
}
