#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace attnseg {

/// Per-pixel class ids (0 = background, 255 = ignore by VOC convention) plus
/// an uncertainty flag per pixel.
struct LabelMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> uncertain;  // 0 or 1

  LabelMask() = default;
  LabelMask(std::size_t w, std::size_t h)
      : width(w), height(h), labels(w * h, 0), uncertain(w * h, 0) {}

  std::uint8_t& at(std::size_t x, std::size_t y) { return labels[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return labels[y * width + x]; }

  friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

enum class ResolutionStage { grid, image };

struct Channel {
  std::string label;
  int class_id = 0;

  friend bool operator==(const Channel&, const Channel&) = default;
};

/// Stack of per-class attribution maps. Channel 0 is always background
/// (class id 0). Planes are row-major width x height, concatenated.
struct CorrelationMap {
  std::vector<Channel> channels;
  std::size_t width = 0;
  std::size_t height = 0;
  ResolutionStage stage = ResolutionStage::grid;
  std::vector<float> data;

  std::size_t plane_size() const { return width * height; }
  std::size_t num_channels() const { return channels.size(); }

  float* plane(std::size_t c) { return data.data() + c * plane_size(); }
  const float* plane(std::size_t c) const { return data.data() + c * plane_size(); }

  float& at(std::size_t c, std::size_t p) { return data[c * plane_size() + p]; }
  float at(std::size_t c, std::size_t p) const { return data[c * plane_size() + p]; }

  friend bool operator==(const CorrelationMap&, const CorrelationMap&) = default;
};

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB

  const std::uint8_t* at(std::size_t x, std::size_t y) const { return pixels.data() + 3 * (y * width + x); }
};

}  // namespace attnseg
