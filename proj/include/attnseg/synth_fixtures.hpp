#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnseg/prompt_plan.hpp"
#include "attnseg/tensor_store.hpp"
#include "attnseg/types.hpp"

namespace attnseg {

/// Half-open rectangle of grid cells [x0, x1) x [y0, y1).
struct Rect {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool contains(std::size_t x, std::size_t y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool overlaps(const Rect& o) const { return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1; }
};

struct RegionSpec {
  std::string label;
  int class_id = 1;
  Rect rect;
  double alpha = 1.0;         // token mass concentrated on the class span inside the region
  std::size_t span_tokens = 1;
};

struct LayerSpec {
  int layer_index = 4;
  std::size_t width = 0;  // 0 = self grid size
  std::size_t height = 0;
};

/// Synthetic scene. Cross rows: inside region k the class-k span holds mass
/// alpha on top of a uniform floor; elsewhere uniform (or background-prompt
/// mass). Self map: affinity beta within a region, 1 - beta across regions.
/// Both get additive uniform jitter followed by row renormalization.
struct SceneSpec {
  std::string image_id = "synthetic";
  std::size_t grid_w = 16;
  std::size_t grid_h = 16;
  std::size_t image_scale = 1;
  std::size_t tokens = 0;  // 0 = just enough for the layout
  std::vector<RegionSpec> regions;
  std::vector<std::string> background_prompts;
  double bg_prompt_alpha = 0.0;
  std::vector<LayerSpec> layers;  // empty = layers 4..8 at grid size
  double beta = 1.0;
  double cross_jitter = 0.0;
  double self_jitter = 0.0;
  int timestep = 150;
  int sample_index = 0;
};

struct Fixture {
  AttentionBundle bundle;
  LabelMask ground_truth;
  RgbImage image;
  PromptPlan plan;
};

Fixture make_fixture(const SceneSpec& spec, std::uint64_t seed);

struct InstanceSceneSpec {
  std::string image_id = "instances";
  std::string class_label = "mug";
  int class_id = 1;
  std::size_t grid_w = 16;
  std::size_t grid_h = 16;
  std::vector<Rect> instances;
  // weights[i][r]: identifier i's attention on instance r, in [0, 1].
  // Empty = identity.
  std::vector<std::vector<double>> identifier_weights;
  bool swap_identifiers = false;  // identifier i attends to instance i+1
  double alpha = 1.0;
  double beta = 1.0;
  double cross_jitter = 0.0;
  double self_jitter = 0.0;
  std::vector<LayerSpec> layers;
};

struct InstanceFixture {
  AttentionBundle scene;
  std::vector<AttentionBundle> identifiers;
  std::vector<int> instance_grid;  // 0 = background, r + 1 = instance r
  LabelMask ground_truth;
};

InstanceFixture make_instance_fixture(const InstanceSceneSpec& spec, std::uint64_t seed);

SceneSpec scene_spec_from_json(const nlohmann::json& j);
InstanceSceneSpec instance_spec_from_json(const nlohmann::json& j);

}  // namespace attnseg
