#pragma once

#include <cstddef>
#include <vector>

#include "malfuse/imaging.hpp"

namespace malfuse::texture {

struct GaborFilterBank {
  std::size_t scales = 0;
  std::size_t orientations = 0;
  std::size_t kernel_size = 0;
  // scales*orientations kernels, each kernel_size^2 row-major, zero-mean.
  std::vector<std::vector<double>> filters;
};

struct GistDescriptor {
  std::size_t scales = 0;
  std::size_t orientations = 0;
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  // layout: [scale][orientation][grid_row][grid_col]
  std::vector<double> values;
};

struct LbpHistogram {
  std::vector<double> bins;  // 256
  bool normalized = true;
};

// Zero-mean Gabor kernels: wavelengths geometrically spaced from 4 px,
// orientations evenly spaced in [0, pi).
GaborFilterBank gabor_bank(std::size_t scales = 4, std::size_t orientations = 8,
                           std::size_t kernel_size = 15);

// Per filter: zero-padded same-size convolution, absolute response, block
// means over the grid (remainder pixels join the last block).
GistDescriptor gist(const imaging::GrayImage& image, const GaborFilterBank& bank,
                    std::size_t grid_rows = 4, std::size_t grid_cols = 4);
GistDescriptor gist_serial(const imaging::GrayImage& image, const GaborFilterBank& bank,
                           std::size_t grid_rows = 4, std::size_t grid_cols = 4);

// 256-bin histogram of P-neighbor radius-R codes over interior pixels.
// strict=false uses s(x)=1 iff x>=0; strict=true uses x>0.
LbpHistogram lbp(const imaging::GrayImage& image, std::size_t P = 8, std::size_t R = 1,
                 bool normalized = true, bool strict = false);
LbpHistogram lbp_serial(const imaging::GrayImage& image, std::size_t P = 8, std::size_t R = 1,
                        bool normalized = true, bool strict = false);

// Single-pixel LBP code at an interior pixel.
unsigned lbp_code(const imaging::GrayImage& image, std::size_t row, std::size_t col,
                  std::size_t P, std::size_t R, bool strict);

std::vector<double> combine_texture(const GistDescriptor& g, const LbpHistogram& l);

}  // namespace malfuse::texture
