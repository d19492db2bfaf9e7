#include "attnseg/interp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace attnseg {

namespace {

struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

std::vector<Tap> make_taps(std::size_t src, std::size_t dst) {
  std::vector<Tap> taps(dst);
  for (std::size_t i = 0; i < dst; ++i) {
    if (src == 1 || dst == 1) {
      taps[i] = {0, 0, 0.0};
      continue;
    }
    const double pos = static_cast<double>(i) * static_cast<double>(src - 1) / static_cast<double>(dst - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    lo = std::min(lo, src - 1);
    const std::size_t hi = std::min(lo + 1, src - 1);
    taps[i] = {lo, hi, pos - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

std::vector<float> resize_bilinear(std::span<const float> src, std::size_t src_w, std::size_t src_h,
                                   std::size_t dst_w, std::size_t dst_h) {
  if (src.size() != src_w * src_h || src_w == 0 || src_h == 0) {
    throw std::invalid_argument("resize_bilinear: source shape mismatch");
  }
  if (src_w == dst_w && src_h == dst_h) {
    return {src.begin(), src.end()};
  }
  const auto xt = make_taps(src_w, dst_w);
  const auto yt = make_taps(src_h, dst_h);
  std::vector<float> out(dst_w * dst_h);
  for (std::size_t y = 0; y < dst_h; ++y) {
    const auto& ty = yt[y];
    for (std::size_t x = 0; x < dst_w; ++x) {
      const auto& tx = xt[x];
      const double a = src[ty.lo * src_w + tx.lo];
      const double b = src[ty.lo * src_w + tx.hi];
      const double c = src[ty.hi * src_w + tx.lo];
      const double d = src[ty.hi * src_w + tx.hi];
      const double top = a + (b - a) * tx.frac;
      const double bottom = c + (d - c) * tx.frac;
      out[y * dst_w + x] = static_cast<float>(top + (bottom - top) * ty.frac);
    }
  }
  return out;
}

}  // namespace attnseg
