#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "attnseg/matrix.hpp"
#include "attnseg/prompt_plan.hpp"
#include "attnseg/tensor_store.hpp"
#include "attnseg/types.hpp"

namespace attnseg {

struct FusionConfig {
  int order = 2;
  std::vector<int> cross_layer_ids{4, 5, 6, 7, 8};
  float bg_threshold = 1.0f;
  float bg_power = 2.0f;
  float uncertainty_band = 0.05f;
  // When set, ensembling averages foreground channels only and recomputes
  // the background channel from the averaged stack.
  bool bg_after_ensemble = false;

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

/// Averages the requested layers at the self-attention grid resolution.
/// Output rows are renormalized to sum to 1.
Matrix aggregate_cross(const AttentionBundle& bundle, std::span<const int> layer_ids);

/// self_map^order * cross, by repeated multiplication (f64 accumulation).
Matrix propagate(const Matrix& self_map, const Matrix& cross, int order);

/// Min-max normalized mean of the span's columns, as a width x height grid.
/// A constant map normalizes to all zeros.
Matrix class_attribution(const Matrix& selfcross, const TokenSpan& span, std::size_t width, std::size_t height);
Matrix class_attribution(const Matrix& selfcross, const TokenManifest& manifest, const std::string& label,
                         std::size_t width, std::size_t height);

/// Per pixel max(thr - max_k fg_k, 0)^power.
Matrix background_map(std::span<const Matrix> fg_channels, float thr, float power);

CorrelationMap fuse(const AttentionBundle& bundle, const PromptPlan& plan, const FusionConfig& config);

/// Elementwise mean of identically laid out maps.
CorrelationMap ensemble(std::span<const CorrelationMap> maps);
/// Fuses each sample then ensembles, honoring config.bg_after_ensemble.
CorrelationMap fuse_samples(std::span<const AttentionBundle> samples, const PromptPlan& plan,
                            const FusionConfig& config);

/// Bilinear upsampling of every channel to image resolution.
CorrelationMap upsample(const CorrelationMap& sc, std::size_t image_w, std::size_t image_h);

/// Per-pixel argmax over channels at the map's own resolution. Ties go to the
/// lower class id; pixels with top1 - top2 < band are flagged uncertain.
LabelMask argmax_labels(const CorrelationMap& sc, float band);

LabelMask to_mask(const CorrelationMap& sc, std::size_t image_w, std::size_t image_h, float band);

}  // namespace attnseg
