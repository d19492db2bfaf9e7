#include "attnseg/synth_fixtures.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <set>

#include "attnseg/error.hpp"

namespace attnseg {

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{{200, 40, 40},
                                                              {40, 160, 60},
                                                              {40, 70, 200},
                                                              {220, 200, 40},
                                                              {160, 60, 180},
                                                              {40, 190, 190},
                                                              {240, 140, 30},
                                                              {110, 80, 40}}};
constexpr std::array<std::uint8_t, 3> kBackgroundColor{128, 128, 128};

void check_rects(const std::vector<Rect>& rects, std::size_t w, std::size_t h) {
  for (std::size_t i = 0; i < rects.size(); ++i) {
    const auto& r = rects[i];
    if (r.x0 >= r.x1 || r.y0 >= r.y1 || r.x1 > w || r.y1 > h) {
      throw ValidationError("fixture: rectangle " + std::to_string(i) + " is empty or outside the grid");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (r.overlaps(rects[j])) {
        throw ValidationError("fixture: rectangles " + std::to_string(j) + " and " + std::to_string(i) + " overlap");
      }
    }
  }
}

// Region index per grid cell, -1 for background.
std::vector<int> region_grid(const std::vector<Rect>& rects, std::size_t w, std::size_t h) {
  std::vector<int> g(w * h, -1);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t r = 0; r < rects.size(); ++r) {
        if (rects[r].contains(x, y)) g[y * w + x] = static_cast<int>(r);
      }
    }
  }
  return g;
}

Matrix make_self_map(const std::vector<int>& regions, double beta, double jitter, std::mt19937_64& rng) {
  const std::size_t n = regions.size();
  std::vector<double> raw(n * n);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) raw[p * n + q] = regions[p] == regions[q] ? beta : 1.0 - beta;
  }
  if (jitter > 0.0) {
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p; q < n; ++q) {
        const double j = jitter * uniform01(rng);
        raw[p * n + q] += j;
        if (q != p) raw[q * n + p] += j;
      }
    }
  }
  Matrix s(n, n);
  for (std::size_t p = 0; p < n; ++p) {
    double sum = 0.0;
    for (std::size_t q = 0; q < n; ++q) sum += raw[p * n + q];
    for (std::size_t q = 0; q < n; ++q) s(p, q) = static_cast<float>(raw[p * n + q] / sum);
  }
  return s;
}

std::vector<LayerSpec> resolve_layers(const std::vector<LayerSpec>& layers, std::size_t w, std::size_t h) {
  std::vector<LayerSpec> out = layers;
  if (out.empty()) {
    for (int id = 4; id <= 8; ++id) out.push_back({id, w, h});
  }
  for (auto& l : out) {
    if (l.width == 0) l.width = w;
    if (l.height == 0) l.height = h;
  }
  return out;
}

// rowfn(grid cell region, row) fills a row of token masses summing to 1.
template <class RowFn>
CrossLayer make_cross_layer(const LayerSpec& ls, const std::vector<int>& regions, std::size_t grid_w,
                            std::size_t grid_h, std::size_t tokens, double jitter, std::mt19937_64& rng,
                            RowFn&& rowfn) {
  CrossLayer layer;
  layer.layer_index = ls.layer_index;
  layer.width = ls.width;
  layer.height = ls.height;
  layer.tokens = tokens;
  layer.data = Matrix(ls.width * ls.height, tokens);
  std::vector<double> row(tokens);
  for (std::size_t y = 0; y < ls.height; ++y) {
    for (std::size_t x = 0; x < ls.width; ++x) {
      const auto gx = std::min(grid_w - 1, static_cast<std::size_t>((x + 0.5) * grid_w / ls.width));
      const auto gy = std::min(grid_h - 1, static_cast<std::size_t>((y + 0.5) * grid_h / ls.height));
      std::fill(row.begin(), row.end(), 0.0);
      rowfn(regions[gy * grid_w + gx], row);
      if (jitter > 0.0) {
        for (auto& v : row) v += jitter * uniform01(rng);
      }
      double sum = 0.0;
      for (double v : row) sum += v;
      const std::size_t p = y * ls.width + x;
      for (std::size_t t = 0; t < tokens; ++t) layer.data(p, t) = static_cast<float>(row[t] / sum);
    }
  }
  return layer;
}

RgbImage make_image(const std::vector<int>& regions, std::size_t grid_w, std::size_t grid_h, std::size_t scale) {
  RgbImage img;
  img.width = grid_w * scale;
  img.height = grid_h * scale;
  img.pixels.resize(3 * img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const int r = regions[(y / scale) * grid_w + (x / scale)];
      const auto& c = r < 0 ? kBackgroundColor : kPalette[static_cast<std::size_t>(r) % kPalette.size()];
      std::copy(c.begin(), c.end(), img.pixels.begin() + 3 * (y * img.width + x));
    }
  }
  return img;
}

}  // namespace

Fixture make_fixture(const SceneSpec& spec, std::uint64_t seed) {
  if (spec.grid_w == 0 || spec.grid_h == 0 || spec.image_scale == 0) throw ValidationError("fixture: empty grid");
  if (spec.regions.empty()) throw ValidationError("fixture: no regions");
  if (!(spec.beta > 0.0 && spec.beta <= 1.0)) throw ValidationError("fixture: beta must be in (0, 1]");
  if (spec.cross_jitter < 0.0 || spec.self_jitter < 0.0) throw ValidationError("fixture: negative jitter");

  std::vector<Rect> rects;
  std::set<std::string> labels;
  for (const auto& r : spec.regions) {
    if (!(r.alpha > 0.0 && r.alpha <= 1.0)) throw ValidationError("fixture: alpha must be in (0, 1]");
    if (r.span_tokens == 0) throw ValidationError("fixture: span_tokens must be >= 1");
    if (r.class_id <= 0 || r.class_id > 254) throw ValidationError("fixture: class ids must be in [1, 254]");
    if (!labels.insert(r.label).second) throw ValidationError("fixture: duplicate region label '" + r.label + "'");
    rects.push_back(r.rect);
  }
  check_rects(rects, spec.grid_w, spec.grid_h);

  Fixture fx;
  fx.plan = compose_query(labels, {}, spec.background_prompts);

  // <sot> a photo including <spans...> , ... . <eot>
  TokenManifest manifest;
  manifest.prompt_text = fx.plan.sentence();
  std::size_t pos = 4;
  std::vector<std::size_t> bg_tokens;
  std::vector<TokenSpan> region_span(spec.regions.size());
  for (const auto& part : fx.plan.parts) {
    if (part.kind == TokenKind::category) {
      const auto it = std::find_if(spec.regions.begin(), spec.regions.end(),
                                   [&](const RegionSpec& r) { return r.label == part.label; });
      const auto idx = static_cast<std::size_t>(it - spec.regions.begin());
      region_span[idx] = {pos, pos + it->span_tokens - 1};
      manifest.entries.push_back({part.label, TokenKind::category, region_span[idx]});
      manifest.class_ids[part.label] = it->class_id;
      pos += it->span_tokens + 1;
    } else {
      manifest.entries.push_back({part.label, TokenKind::background, {pos, pos}});
      bg_tokens.push_back(pos);
      pos += 2;
    }
  }
  const std::size_t tokens = std::max(spec.tokens, pos + 1);

  const auto regions = region_grid(rects, spec.grid_w, spec.grid_h);
  std::mt19937_64 rng(seed);

  AttentionBundle& b = fx.bundle;
  b.image_id = spec.image_id;
  b.image_width = spec.grid_w * spec.image_scale;
  b.image_height = spec.grid_h * spec.image_scale;
  b.self_width = spec.grid_w;
  b.self_height = spec.grid_h;
  b.sample_index = spec.sample_index;
  b.timestep = spec.timestep;
  b.extraction_note = "synthetic fixture";
  b.token_manifest = manifest;
  b.self_map = make_self_map(regions, spec.beta, spec.self_jitter, rng);

  const double uniform = 1.0 / static_cast<double>(tokens);
  for (const auto& ls : resolve_layers(spec.layers, spec.grid_w, spec.grid_h)) {
    b.cross_layers.push_back(make_cross_layer(
        ls, regions, spec.grid_w, spec.grid_h, tokens, spec.cross_jitter, rng, [&](int region, std::vector<double>& row) {
          double alpha = 0.0;
          if (region >= 0) {
            alpha = spec.regions[region].alpha;
            const auto& span = region_span[region];
            for (std::size_t t = span.first; t <= span.last; ++t) row[t] += alpha / static_cast<double>(span.length());
          } else if (!bg_tokens.empty() && spec.bg_prompt_alpha > 0.0) {
            alpha = spec.bg_prompt_alpha;
            for (auto t : bg_tokens) row[t] += alpha / static_cast<double>(bg_tokens.size());
          }
          for (auto& v : row) v += (1.0 - alpha) * uniform;
        }));
  }

  fx.ground_truth = LabelMask(b.image_width, b.image_height);
  for (std::size_t y = 0; y < b.image_height; ++y) {
    for (std::size_t x = 0; x < b.image_width; ++x) {
      const int r = regions[(y / spec.image_scale) * spec.grid_w + (x / spec.image_scale)];
      fx.ground_truth.at(x, y) = r < 0 ? 0 : static_cast<std::uint8_t>(spec.regions[r].class_id);
    }
  }
  fx.image = make_image(regions, spec.grid_w, spec.grid_h, spec.image_scale);
  validate(b);
  return fx;
}

InstanceFixture make_instance_fixture(const InstanceSceneSpec& spec, std::uint64_t seed) {
  const std::size_t n = spec.instances.size();
  if (n == 0) throw ValidationError("instance fixture: no instances");
  if (!(spec.alpha > 0.0 && spec.alpha <= 1.0)) throw ValidationError("instance fixture: alpha must be in (0, 1]");
  if (!(spec.beta > 0.0 && spec.beta <= 1.0)) throw ValidationError("instance fixture: beta must be in (0, 1]");
  check_rects(spec.instances, spec.grid_w, spec.grid_h);

  auto weights = spec.identifier_weights;
  if (weights.empty()) {
    weights.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) weights[i][i] = 1.0;
  }
  if (weights.size() != n) throw ValidationError("instance fixture: one weight row per instance required");
  for (const auto& row : weights) {
    if (row.size() != n) throw ValidationError("instance fixture: weight rows must have one entry per instance");
    for (double w : row) {
      if (w < 0.0 || w > 1.0) throw ValidationError("instance fixture: weights must be in [0, 1]");
    }
  }
  if (spec.swap_identifiers) std::rotate(weights.begin(), weights.begin() + 1, weights.end());

  const auto regions = region_grid(spec.instances, spec.grid_w, spec.grid_h);
  std::mt19937_64 rng(seed);
  const Matrix self_map = make_self_map(regions, spec.beta, spec.self_jitter, rng);
  const auto layers = resolve_layers(spec.layers, spec.grid_w, spec.grid_h);

  auto base_bundle = [&](const std::string& id, TokenManifest manifest) {
    AttentionBundle b;
    b.image_id = id;
    b.image_width = spec.grid_w;
    b.image_height = spec.grid_h;
    b.self_width = spec.grid_w;
    b.self_height = spec.grid_h;
    b.self_map = self_map;
    b.token_manifest = std::move(manifest);
    b.extraction_note = "synthetic instance fixture";
    return b;
  };

  InstanceFixture fx;
  {
    // <sot> a photo including mug . <eot>
    const auto plan = compose_query({spec.class_label});
    TokenManifest m;
    m.prompt_text = plan.sentence();
    m.entries.push_back({spec.class_label, TokenKind::category, {4, 4}});
    m.class_ids[spec.class_label] = spec.class_id;
    const std::size_t tokens = 8;
    const double uniform = 1.0 / static_cast<double>(tokens);
    fx.scene = base_bundle(spec.image_id, m);
    for (const auto& ls : layers) {
      fx.scene.cross_layers.push_back(make_cross_layer(
          ls, regions, spec.grid_w, spec.grid_h, tokens, spec.cross_jitter, rng,
          [&](int region, std::vector<double>& row) {
            const double a = region >= 0 ? spec.alpha : 0.0;
            row[4] += a;
            for (auto& v : row) v += (1.0 - a) * uniform;
          }));
    }
    validate(fx.scene);
  }

  for (std::size_t i = 0; i < n; ++i) {
    // <sot> a photo including <newI> mug . <eot>
    const std::string ident = "<new" + std::to_string(i + 1) + ">";
    const auto plan = compose_identifier_query(spec.class_label, ident);
    TokenManifest m;
    m.prompt_text = plan.sentence();
    m.entries.push_back({ident, TokenKind::identifier, {4, 4}});
    m.entries.push_back({spec.class_label, TokenKind::category, {5, 5}});
    m.class_ids[spec.class_label] = spec.class_id;
    const std::size_t tokens = 8;
    const double uniform = 1.0 / static_cast<double>(tokens);
    auto b = base_bundle(spec.image_id + "_id" + std::to_string(i + 1), m);
    for (const auto& ls : layers) {
      b.cross_layers.push_back(make_cross_layer(
          ls, regions, spec.grid_w, spec.grid_h, tokens, spec.cross_jitter, rng,
          [&](int region, std::vector<double>& row) {
            double used = 0.0;
            if (region >= 0) {
              const double id_mass = 0.5 * spec.alpha * weights[i][static_cast<std::size_t>(region)];
              const double cls_mass = 0.5 * spec.alpha;
              row[4] += id_mass;
              row[5] += cls_mass;
              used = id_mass + cls_mass;
            }
            for (auto& v : row) v += (1.0 - used) * uniform;
          }));
    }
    validate(b);
    fx.identifiers.push_back(std::move(b));
  }

  fx.instance_grid.resize(regions.size());
  fx.ground_truth = LabelMask(spec.grid_w, spec.grid_h);
  for (std::size_t p = 0; p < regions.size(); ++p) {
    fx.instance_grid[p] = regions[p] + 1;
    fx.ground_truth.labels[p] = regions[p] >= 0 ? static_cast<std::uint8_t>(spec.class_id) : 0;
  }
  return fx;
}

namespace {

Rect rect_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw ValidationError("rect must be [x0, y0, x1, y1]");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>(), j[3].get<std::size_t>()};
}

std::vector<LayerSpec> layers_from_json(const nlohmann::json& j) {
  std::vector<LayerSpec> out;
  if (!j.contains("layers")) return out;
  for (const auto& l : j.at("layers")) {
    out.push_back({l.at("layer_index").get<int>(), l.value("width", std::size_t{0}), l.value("height", std::size_t{0})});
  }
  return out;
}

}  // namespace

SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  try {
    SceneSpec s;
    s.image_id = j.value("image_id", s.image_id);
    s.grid_w = j.value("grid_w", s.grid_w);
    s.grid_h = j.value("grid_h", s.grid_h);
    s.image_scale = j.value("image_scale", s.image_scale);
    s.tokens = j.value("tokens", s.tokens);
    s.background_prompts = j.value("background_prompts", s.background_prompts);
    s.bg_prompt_alpha = j.value("bg_prompt_alpha", s.bg_prompt_alpha);
    s.beta = j.value("beta", s.beta);
    s.cross_jitter = j.value("cross_jitter", s.cross_jitter);
    s.self_jitter = j.value("self_jitter", s.self_jitter);
    s.timestep = j.value("timestep", s.timestep);
    s.sample_index = j.value("sample_index", s.sample_index);
    s.layers = layers_from_json(j);
    for (const auto& r : j.at("regions")) {
      s.regions.push_back({r.at("label").get<std::string>(), r.value("class_id", 1), rect_from_json(r.at("rect")),
                           r.value("alpha", 1.0), r.value("span_tokens", std::size_t{1})});
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("scene spec: ") + e.what());
  }
}

InstanceSceneSpec instance_spec_from_json(const nlohmann::json& j) {
  try {
    InstanceSceneSpec s;
    s.image_id = j.value("image_id", s.image_id);
    s.class_label = j.value("class_label", s.class_label);
    s.class_id = j.value("class_id", s.class_id);
    s.grid_w = j.value("grid_w", s.grid_w);
    s.grid_h = j.value("grid_h", s.grid_h);
    for (const auto& r : j.at("instances")) s.instances.push_back(rect_from_json(r));
    s.identifier_weights = j.value("identifier_weights", s.identifier_weights);
    s.swap_identifiers = j.value("swap_identifiers", s.swap_identifiers);
    s.alpha = j.value("alpha", s.alpha);
    s.beta = j.value("beta", s.beta);
    s.cross_jitter = j.value("cross_jitter", s.cross_jitter);
    s.self_jitter = j.value("self_jitter", s.self_jitter);
    s.layers = layers_from_json(j);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("instance spec: ") + e.what());
  }
}

}  // namespace attnseg
