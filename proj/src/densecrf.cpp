#include "attnseg/densecrf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "attnseg/error.hpp"
#include "attnseg/fusion.hpp"
#include "attnseg/interp.hpp"

namespace attnseg {

void CrfParams::validate() const {
  if (iterations < 1) throw ValidationError("invalid value for --crf.iterations: must be >= 1");
  if (!(appearance_sxy > 0.0f)) throw ValidationError("invalid value for --crf.sxy-a: must be > 0");
  if (!(appearance_srgb > 0.0f)) throw ValidationError("invalid value for --crf.srgb: must be > 0");
  if (!(smoothness_sxy > 0.0f)) throw ValidationError("invalid value for --crf.sxy-s: must be > 0");
  if (!(appearance_weight >= 0.0f)) throw ValidationError("invalid value for --crf.w1: must be >= 0");
  if (!(smoothness_weight >= 0.0f)) throw ValidationError("invalid value for --crf.w2: must be >= 0");
  if (!(unary_epsilon > 0.0f && unary_epsilon < 1.0f)) {
    throw ValidationError("invalid value for --crf.epsilon: must be in (0, 1)");
  }
}

std::vector<float> unary_distribution(const CorrelationMap& sc, float epsilon) {
  const std::size_t n = sc.plane_size();
  const std::size_t m = sc.num_channels();
  std::vector<float> q(m * n);
  for (std::size_t p = 0; p < n; ++p) {
    double sum = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const float v = sc.at(c, p);
      if (!(v >= 0.0f) || !std::isfinite(v)) {
        throw ValidationError("crf: negative or non-finite score at pixel " + std::to_string(p));
      }
      sum += v;
    }
    if (!(sum > 0.0)) throw ValidationError("crf: all-zero channel sum at pixel " + std::to_string(p));
    double clamped_sum = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const double v = std::max(sc.at(c, p) / sum, static_cast<double>(epsilon));
      q[c * n + p] = static_cast<float>(v);
      clamped_sum += v;
    }
    for (std::size_t c = 0; c < m; ++c) q[c * n + p] = static_cast<float>(q[c * n + p] / clamped_sum);
  }
  return q;
}

namespace {

struct Features {
  std::vector<double> x, y, r, g, b;
};

// Runs fn(begin, end) over [0, n) split into contiguous chunks; each index
// is written by exactly one worker so results do not depend on scheduling.
template <class Fn>
void parallel_ranges(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n < 256) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

std::vector<float> mean_field(const Features& f, std::vector<float> q0, std::size_t labels, const CrfParams& params,
                              const CrfObserver& observer) {
  const std::size_t n = f.x.size();
  std::vector<double> unary(labels * n);
  for (std::size_t k = 0; k < unary.size(); ++k) unary[k] = -std::log(static_cast<double>(q0[k]));

  const double w1 = params.appearance_weight;
  const double w2 = params.smoothness_weight;
  const double ia = 1.0 / (2.0 * params.appearance_sxy * params.appearance_sxy);
  const double ic = 1.0 / (2.0 * params.appearance_srgb * params.appearance_srgb);
  const double is = 1.0 / (2.0 * params.smoothness_sxy * params.smoothness_sxy);
  const unsigned threads =
      params.threads ? params.threads : std::max(1u, std::thread::hardware_concurrency());

  std::vector<float> q = std::move(q0);
  std::vector<float> next(q.size());
  for (int it = 0; it < params.iterations; ++it) {
    parallel_ranges(n, threads, [&](std::size_t begin, std::size_t end) {
      std::vector<double> msg(labels);
      std::vector<double> logit(labels);
      for (std::size_t i = begin; i < end; ++i) {
        std::fill(msg.begin(), msg.end(), 0.0);
        if (w1 != 0.0 || w2 != 0.0) {
          for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dx = f.x[i] - f.x[j];
            const double dy = f.y[i] - f.y[j];
            const double d2 = dx * dx + dy * dy;
            const double dr = f.r[i] - f.r[j];
            const double dg = f.g[i] - f.g[j];
            const double db = f.b[i] - f.b[j];
            const double c2 = dr * dr + dg * dg + db * db;
            const double k = w1 * std::exp(-d2 * ia - c2 * ic) + w2 * std::exp(-d2 * is);
            if (k == 0.0) continue;
            for (std::size_t l = 0; l < labels; ++l) msg[l] += k * q[l * n + j];
          }
        }
        // Potts: penalty for label l is sum over l' != l of msg[l'], which
        // equals total - msg[l]; the constant total cancels in the softmax.
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t l = 0; l < labels; ++l) {
          logit[l] = -unary[l * n + i] + msg[l];
          peak = std::max(peak, logit[l]);
        }
        double z = 0.0;
        for (std::size_t l = 0; l < labels; ++l) {
          logit[l] = std::exp(logit[l] - peak);
          z += logit[l];
        }
        for (std::size_t l = 0; l < labels; ++l) next[l * n + i] = static_cast<float>(logit[l] / z);
      }
    });
    double change = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) {
      change = std::max(change, static_cast<double>(std::abs(next[k] - q[k])));
    }
    q.swap(next);
    if (observer) observer({it + 1, q, change});
  }
  return q;
}

Features make_features(const RgbImage& image, std::size_t stride, std::size_t w, std::size_t h) {
  Features f;
  const std::size_t n = w * h;
  f.x.resize(n);
  f.y.resize(n);
  f.r.resize(n);
  f.g.resize(n);
  f.b.resize(n);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = std::min(x * stride, image.width - 1);
      const std::size_t sy = std::min(y * stride, image.height - 1);
      const auto* px = image.at(sx, sy);
      const std::size_t i = y * w + x;
      f.x[i] = static_cast<double>(sx);
      f.y[i] = static_cast<double>(sy);
      f.r[i] = px[0];
      f.g[i] = px[1];
      f.b[i] = px[2];
    }
  }
  return f;
}

}  // namespace

CorrelationMap refine(const RgbImage& image, const CorrelationMap& sc, const CrfParams& params,
                      const CrfObserver& observer) {
  params.validate();
  if (image.width != sc.width || image.height != sc.height || image.pixels.size() != 3 * image.width * image.height) {
    throw ValidationError("crf: image and correlation map dimensions differ");
  }
  if (sc.data.size() != sc.num_channels() * sc.plane_size() || sc.num_channels() == 0) {
    throw ValidationError("crf: malformed correlation map");
  }
  const std::size_t labels = sc.num_channels();

  std::size_t stride = 1;
  if (params.pixel_cap > 0) {
    while (((sc.width + stride - 1) / stride) * ((sc.height + stride - 1) / stride) > params.pixel_cap) ++stride;
  }

  CorrelationMap out;
  out.channels = sc.channels;
  out.width = sc.width;
  out.height = sc.height;
  out.stage = ResolutionStage::image;

  if (stride == 1) {
    const auto features = make_features(image, 1, sc.width, sc.height);
    out.data = mean_field(features, unary_distribution(sc, params.unary_epsilon), labels, params, observer);
    return out;
  }

  // Strided subsample; positions keep full-resolution coordinates so the
  // spatial sigmas mean the same thing at every stride.
  const std::size_t w = (sc.width + stride - 1) / stride;
  const std::size_t h = (sc.height + stride - 1) / stride;
  CorrelationMap small;
  small.channels = sc.channels;
  small.width = w;
  small.height = h;
  small.stage = ResolutionStage::image;
  small.data.resize(labels * w * h);
  for (std::size_t c = 0; c < labels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sx = std::min(x * stride, sc.width - 1);
        const std::size_t sy = std::min(y * stride, sc.height - 1);
        small.data[c * w * h + y * w + x] = sc.at(c, sy * sc.width + sx);
      }
    }
  }
  const auto features = make_features(image, stride, w, h);
  const auto q = mean_field(features, unary_distribution(small, params.unary_epsilon), labels, params, observer);

  // The last sample may sit short of the border; sample positions are
  // x*stride clamped to the edge, matched here by a corner-aligned resize
  // over the covered extent followed by edge replication.
  const std::size_t cover_w = std::min((w - 1) * stride + 1, sc.width);
  const std::size_t cover_h = std::min((h - 1) * stride + 1, sc.height);
  out.data.assign(labels * sc.plane_size(), 0.0f);
  for (std::size_t c = 0; c < labels; ++c) {
    const auto up = resize_bilinear(std::span<const float>(q.data() + c * w * h, w * h), w, h, cover_w, cover_h);
    for (std::size_t y = 0; y < sc.height; ++y) {
      for (std::size_t x = 0; x < sc.width; ++x) {
        out.data[c * sc.plane_size() + y * sc.width + x] =
            up[std::min(y, cover_h - 1) * cover_w + std::min(x, cover_w - 1)];
      }
    }
  }
  // Renormalize after interpolation.
  for (std::size_t p = 0; p < sc.plane_size(); ++p) {
    double s = 0.0;
    for (std::size_t c = 0; c < labels; ++c) s += out.data[c * sc.plane_size() + p];
    for (std::size_t c = 0; c < labels; ++c) {
      out.data[c * sc.plane_size() + p] = static_cast<float>(out.data[c * sc.plane_size() + p] / s);
    }
  }
  return out;
}

LabelMask argmax_mask(const CorrelationMap& refined, float band) { return argmax_labels(refined, band); }

}  // namespace attnseg
