#include "attnseg/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "attnseg/error.hpp"
#include "attnseg/interp.hpp"

namespace attnseg {

void FusionConfig::validate() const {
  if (order < 0) throw ValidationError("invalid value for --order: must be >= 0, got " + std::to_string(order));
  if (cross_layer_ids.empty()) throw ValidationError("invalid value for --cross-layers: list is empty");
  if (!(bg_threshold > 0.0f && bg_threshold <= 1.5f)) {
    throw ValidationError("invalid value for --bg-thr: must be in (0, 1.5], got " + std::to_string(bg_threshold));
  }
  if (!(bg_power > 0.0f) || !std::isfinite(bg_power)) {
    throw ValidationError("invalid value for --bg-power: must be > 0, got " + std::to_string(bg_power));
  }
  if (!(uncertainty_band >= 0.0f) || !std::isfinite(uncertainty_band)) {
    throw ValidationError("invalid value for --band: must be >= 0, got " + std::to_string(uncertainty_band));
  }
}

Matrix aggregate_cross(const AttentionBundle& bundle, std::span<const int> layer_ids) {
  if (layer_ids.empty()) throw ValidationError("aggregate_cross: no layers requested");
  const std::size_t w = bundle.self_width;
  const std::size_t h = bundle.self_height;
  const std::size_t cells = w * h;
  const std::size_t tokens = bundle.tokens();

  std::vector<double> acc(cells * tokens, 0.0);
  std::vector<float> column;
  for (int id : layer_ids) {
    const CrossLayer* layer = bundle.layer(id);
    if (!layer) throw ValidationError("missing cross layer " + std::to_string(id));
    column.resize(layer->width * layer->height);
    for (std::size_t t = 0; t < tokens; ++t) {
      for (std::size_t p = 0; p < column.size(); ++p) column[p] = layer->data(p, t);
      const auto resized = resize_bilinear(column, layer->width, layer->height, w, h);
      for (std::size_t p = 0; p < cells; ++p) acc[p * tokens + t] += resized[p];
    }
  }

  Matrix out(cells, tokens);
  for (std::size_t p = 0; p < cells; ++p) {
    double sum = 0.0;
    for (std::size_t t = 0; t < tokens; ++t) sum += acc[p * tokens + t];
    if (!(sum > 0.0)) {
      throw ValidationError("aggregate_cross: zero-sum row " + std::to_string(p) + " after interpolation");
    }
    for (std::size_t t = 0; t < tokens; ++t) out(p, t) = static_cast<float>(acc[p * tokens + t] / sum);
  }
  return out;
}

namespace {

// dst[0..L) = sum_j srow[j] * src[j * stride + 0..L)
template <std::size_t L>
void row_times(const float* srow, const double* src, std::size_t n, std::size_t stride, double* dst) {
  double acc[L] = {};
  for (std::size_t j = 0; j < n; ++j) {
    const double s = srow[j];
    const double* v = src + j * stride;
    for (std::size_t t = 0; t < L; ++t) acc[t] += s * v[t];
  }
  for (std::size_t t = 0; t < L; ++t) dst[t] = acc[t];
}

}  // namespace

Matrix propagate(const Matrix& self_map, const Matrix& cross, int order) {
  if (order < 0) throw ValidationError("propagate: order must be >= 0");
  if (self_map.rows != self_map.cols || self_map.cols != cross.rows) {
    std::ostringstream os;
    os << "propagate: dimension mismatch, self " << self_map.rows << "x" << self_map.cols << ", cross " << cross.rows
       << "x" << cross.cols;
    throw ValidationError(os.str());
  }
  if (order == 0) return cross;

  const std::size_t n = cross.rows;
  const std::size_t l = cross.cols;
  std::vector<double> cur(cross.data.begin(), cross.data.end());
  std::vector<double> next(n * l);
  for (int step = 0; step < order; ++step) {
    for (std::size_t i = 0; i < n; ++i) {
      const float* srow = self_map.data.data() + i * n;
      for (std::size_t t0 = 0; t0 < l; t0 += 8) {
        const std::size_t width = std::min<std::size_t>(8, l - t0);
        double* dst = next.data() + i * l + t0;
        const double* src = cur.data() + t0;
        switch (width) {
          case 1: row_times<1>(srow, src, n, l, dst); break;
          case 2: row_times<2>(srow, src, n, l, dst); break;
          case 3: row_times<3>(srow, src, n, l, dst); break;
          case 4: row_times<4>(srow, src, n, l, dst); break;
          case 5: row_times<5>(srow, src, n, l, dst); break;
          case 6: row_times<6>(srow, src, n, l, dst); break;
          case 7: row_times<7>(srow, src, n, l, dst); break;
          default: row_times<8>(srow, src, n, l, dst); break;
        }
      }
    }
    cur.swap(next);
  }
  Matrix out(n, l);
  for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = static_cast<float>(cur[k]);
  return out;
}

Matrix class_attribution(const Matrix& selfcross, const TokenSpan& span, std::size_t width, std::size_t height) {
  if (selfcross.rows != width * height) throw ValidationError("class_attribution: grid does not match rows");
  if (span.first > span.last || span.last >= selfcross.cols) {
    throw ValidationError("class_attribution: token span outside [0, " + std::to_string(selfcross.cols) + ")");
  }
  const double count = static_cast<double>(span.length());
  std::vector<double> mean(selfcross.rows);
  for (std::size_t p = 0; p < selfcross.rows; ++p) {
    double s = 0.0;
    for (std::size_t t = span.first; t <= span.last; ++t) s += selfcross(p, t);
    mean[p] = s / count;
  }
  const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
  const double min = *lo;
  const double range = *hi - min;

  Matrix out(height, width, 0.0f);
  if (range > 0.0) {
    for (std::size_t p = 0; p < mean.size(); ++p) out.data[p] = static_cast<float>((mean[p] - min) / range);
  }
  return out;
}

Matrix class_attribution(const Matrix& selfcross, const TokenManifest& manifest, const std::string& label,
                         std::size_t width, std::size_t height) {
  const TokenEntry* entry = manifest.find(label, TokenKind::category);
  if (!entry) entry = manifest.find(label, TokenKind::identifier);
  if (!entry) throw ValidationError("no category or identifier span for '" + label + "'");
  return class_attribution(selfcross, entry->span, width, height);
}

Matrix background_map(std::span<const Matrix> fg, float thr, float power) {
  if (fg.empty()) throw ValidationError("background_map: empty class set");
  const auto& first = fg.front();
  for (const auto& m : fg) {
    if (m.rows != first.rows || m.cols != first.cols) throw ValidationError("background_map: channel shape mismatch");
  }
  Matrix out(first.rows, first.cols);
  for (std::size_t p = 0; p < out.size(); ++p) {
    float max_fg = fg.front().data[p];
    for (const auto& m : fg) max_fg = std::max(max_fg, m.data[p]);
    const double base = std::max(static_cast<double>(thr) - static_cast<double>(max_fg), 0.0);
    out.data[p] = static_cast<float>(std::pow(base, static_cast<double>(power)));
  }
  return out;
}

namespace {

CorrelationMap stack_channels(std::vector<Channel> channels, const std::vector<Matrix>& planes, std::size_t w,
                              std::size_t h) {
  CorrelationMap sc;
  sc.channels = std::move(channels);
  sc.width = w;
  sc.height = h;
  sc.stage = ResolutionStage::grid;
  sc.data.reserve(planes.size() * w * h);
  for (const auto& p : planes) sc.data.insert(sc.data.end(), p.data.begin(), p.data.end());
  return sc;
}

void check_layout(const CorrelationMap& a, const CorrelationMap& b) {
  if (a.channels != b.channels || a.width != b.width || a.height != b.height || a.stage != b.stage ||
      a.data.size() != b.data.size()) {
    throw ValidationError("ensemble: correlation maps differ in channel layout or dimensions");
  }
}

std::vector<Matrix> foreground_planes(const CorrelationMap& sc) {
  std::vector<Matrix> planes;
  for (std::size_t c = 1; c < sc.num_channels(); ++c) {
    Matrix m(sc.height, sc.width);
    std::copy_n(sc.plane(c), sc.plane_size(), m.data.begin());
    planes.push_back(std::move(m));
  }
  return planes;
}

}  // namespace

CorrelationMap fuse(const AttentionBundle& bundle, const PromptPlan& plan, const FusionConfig& config) {
  config.validate();
  const auto& manifest = bundle.token_manifest;
  require_valid_manifest(plan, manifest);

  const Matrix cross = aggregate_cross(bundle, config.cross_layer_ids);
  const Matrix selfcross = propagate(bundle.self_map, cross, config.order);

  const auto parts = plan.foreground_parts();
  if (parts.empty()) throw ValidationError("fuse: plan has no category or identifier parts");

  std::vector<Channel> channels{{"background", 0}};
  std::vector<Matrix> fg;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto* part = parts[i];
    const TokenEntry* entry = manifest.find(part->label, part->kind);
    fg.push_back(class_attribution(selfcross, entry->span, bundle.self_width, bundle.self_height));
    const auto id = manifest.class_ids.find(part->label);
    channels.push_back({part->label, id != manifest.class_ids.end() ? id->second : static_cast<int>(i + 1)});
  }
  std::vector<Matrix> planes;
  planes.push_back(background_map(fg, config.bg_threshold, config.bg_power));
  planes.insert(planes.end(), fg.begin(), fg.end());
  return stack_channels(std::move(channels), planes, bundle.self_width, bundle.self_height);
}

CorrelationMap ensemble(std::span<const CorrelationMap> maps) {
  if (maps.empty()) throw ValidationError("ensemble: no correlation maps");
  for (const auto& m : maps) check_layout(maps.front(), m);
  CorrelationMap out = maps.front();
  if (maps.size() == 1) return out;
  const double n = static_cast<double>(maps.size());
  for (std::size_t k = 0; k < out.data.size(); ++k) {
    double s = 0.0;
    for (const auto& m : maps) s += m.data[k];
    out.data[k] = static_cast<float>(s / n);
  }
  return out;
}

CorrelationMap fuse_samples(std::span<const AttentionBundle> samples, const PromptPlan& plan,
                            const FusionConfig& config) {
  std::vector<CorrelationMap> maps;
  maps.reserve(samples.size());
  for (const auto& b : samples) maps.push_back(fuse(b, plan, config));
  auto out = ensemble(maps);
  if (config.bg_after_ensemble) {
    const auto bg = background_map(foreground_planes(out), config.bg_threshold, config.bg_power);
    std::copy(bg.data.begin(), bg.data.end(), out.plane(0));
  }
  return out;
}

CorrelationMap upsample(const CorrelationMap& sc, std::size_t image_w, std::size_t image_h) {
  CorrelationMap out;
  out.channels = sc.channels;
  out.width = image_w;
  out.height = image_h;
  out.stage = ResolutionStage::image;
  out.data.reserve(sc.num_channels() * image_w * image_h);
  for (std::size_t c = 0; c < sc.num_channels(); ++c) {
    const auto plane = resize_bilinear(std::span<const float>(sc.plane(c), sc.plane_size()), sc.width, sc.height,
                                       image_w, image_h);
    out.data.insert(out.data.end(), plane.begin(), plane.end());
  }
  return out;
}

LabelMask argmax_labels(const CorrelationMap& sc, float band) {
  if (sc.num_channels() == 0) throw ValidationError("argmax: correlation map has no channels");
  for (const auto& c : sc.channels) {
    if (c.class_id < 0 || c.class_id > 255) {
      throw ValidationError("class id " + std::to_string(c.class_id) + " of '" + c.label + "' does not fit a mask");
    }
  }
  LabelMask mask(sc.width, sc.height);
  for (std::size_t p = 0; p < sc.plane_size(); ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < sc.num_channels(); ++c) {
      const float v = sc.at(c, p);
      const float b = sc.at(best, p);
      if (v > b || (v == b && sc.channels[c].class_id < sc.channels[best].class_id)) best = c;
    }
    float second = -std::numeric_limits<float>::infinity();
    for (std::size_t c = 0; c < sc.num_channels(); ++c) {
      if (c != best) second = std::max(second, sc.at(c, p));
    }
    mask.labels[p] = static_cast<std::uint8_t>(sc.channels[best].class_id);
    mask.uncertain[p] = (sc.at(best, p) - second) < band ? 1 : 0;
  }
  return mask;
}

LabelMask to_mask(const CorrelationMap& sc, std::size_t image_w, std::size_t image_h, float band) {
  if (sc.width == image_w && sc.height == image_h) return argmax_labels(sc, band);
  return argmax_labels(upsample(sc, image_w, image_h), band);
}

}  // namespace attnseg
