#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "attnseg/matrix.hpp"

namespace attnseg {

// Corner-aligned bilinear resampling: source corners map onto target corners.
// A source axis of length 1 is broadcast.
std::vector<float> resize_bilinear(std::span<const float> src, std::size_t src_w, std::size_t src_h,
                                   std::size_t dst_w, std::size_t dst_h);

inline Matrix resize_bilinear(const Matrix& grid, std::size_t dst_w, std::size_t dst_h) {
  Matrix out;
  out.rows = dst_h;
  out.cols = dst_w;
  out.data = resize_bilinear(grid.data, grid.cols, grid.rows, dst_w, dst_h);
  return out;
}

}  // namespace attnseg
