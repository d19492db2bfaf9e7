#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "attnseg/types.hpp"

namespace attnseg {

/// Fully connected CRF parameters. Kernel:
///   k(i,j) = w1 exp(-|p_i-p_j|^2 / 2 sxy_a^2 - |I_i-I_j|^2 / 2 srgb^2)
///          + w2 exp(-|p_i-p_j|^2 / 2 sxy_s^2)
struct CrfParams {
  int iterations = 10;
  float appearance_weight = 4.0f;  // w1
  float appearance_sxy = 67.0f;
  float appearance_srgb = 3.0f;
  float smoothness_weight = 3.0f;  // w2
  float smoothness_sxy = 1.0f;
  float unary_epsilon = 1e-8f;
  // Above this many pixels, refine on a uniformly strided subsample and
  // upsample the result. 0 disables the cap.
  std::size_t pixel_cap = 160 * 160;
  unsigned threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

/// Per-iteration diagnostics: q is labels-major (label * N + pixel).
struct CrfIteration {
  int iteration = 0;
  std::span<const float> q;
  double max_change = 0.0;
};
using CrfObserver = std::function<void(const CrfIteration&)>;

/// Normalized, epsilon-clamped per-pixel distribution derived from sc.
std::vector<float> unary_distribution(const CorrelationMap& sc, float epsilon);

/// Mean-field refinement with Potts compatibility and exact O(N^2) messages.
/// sc must be at image resolution, matching the image.
CorrelationMap refine(const RgbImage& image, const CorrelationMap& sc, const CrfParams& params,
                      const CrfObserver& observer = {});

LabelMask argmax_mask(const CorrelationMap& refined, float band);

}  // namespace attnseg
