#include "malfuse/texture.hpp"

#include <cmath>
#include <numbers>

#include "malfuse/errors.hpp"

namespace malfuse::texture {

GaborFilterBank gabor_bank(std::size_t scales, std::size_t orientations,
                           std::size_t kernel_size) {
  if (scales < 1 || orientations < 1) throw DataError("gabor bank needs scales, orientations >= 1");
  if (kernel_size % 2 == 0) throw DataError("gabor kernel size must be odd");
  GaborFilterBank bank;
  bank.scales = scales;
  bank.orientations = orientations;
  bank.kernel_size = kernel_size;
  const int half = static_cast<int>(kernel_size) / 2;
  const double gamma = 0.5;  // aspect ratio
  // sigma/lambda ratio for a 1-octave bandwidth
  const double sigma_ratio =
      (1.0 / std::numbers::pi) * std::sqrt(std::numbers::ln2 / 2.0) * 3.0;

  for (std::size_t s = 0; s < scales; ++s) {
    double lambda = 4.0 * static_cast<double>(1u << s);  // 4, 8, 16, 32, ...
    double sigma = sigma_ratio * lambda;
    for (std::size_t o = 0; o < orientations; ++o) {
      double theta = std::numbers::pi * static_cast<double>(o) /
                     static_cast<double>(orientations);
      std::vector<double> kernel(kernel_size * kernel_size);
      double sum = 0.0;
      for (int y = -half; y <= half; ++y) {
        for (int x = -half; x <= half; ++x) {
          double xr = x * std::cos(theta) + y * std::sin(theta);
          double yr = -x * std::sin(theta) + y * std::cos(theta);
          double v = std::exp(-(xr * xr + gamma * gamma * yr * yr) / (2.0 * sigma * sigma)) *
                     std::cos(2.0 * std::numbers::pi * xr / lambda);
          kernel[(y + half) * kernel_size + (x + half)] = v;
          sum += v;
        }
      }
      double mean = sum / static_cast<double>(kernel.size());
      for (auto& v : kernel) v -= mean;
      bank.filters.push_back(std::move(kernel));
    }
  }
  return bank;
}

// abs of zero-padded same-size convolution with one kernel, over a
// mean-subtracted image so padding matches the interior baseline
static std::vector<double> abs_response(const std::vector<double>& pixels, std::size_t width,
                                        std::size_t height, const std::vector<double>& kernel,
                                        std::size_t kernel_size) {
  const int half = static_cast<int>(kernel_size) / 2;
  const int w = static_cast<int>(width);
  const int h = static_cast<int>(height);
  std::vector<double> out(pixels.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int ky = -half; ky <= half; ++ky) {
        int sy = y + ky;
        if (sy < 0 || sy >= h) continue;
        for (int kx = -half; kx <= half; ++kx) {
          int sx = x + kx;
          if (sx < 0 || sx >= w) continue;
          acc += kernel[(ky + half) * kernel_size + (kx + half)] * pixels[sy * w + sx];
        }
      }
      out[y * w + x] = std::fabs(acc);
    }
  }
  return out;
}

static void block_means(const std::vector<double>& response, std::size_t width,
                        std::size_t height, std::size_t grid_rows, std::size_t grid_cols,
                        double* out) {
  std::size_t bh = height / grid_rows;
  std::size_t bw = width / grid_cols;
  for (std::size_t gr = 0; gr < grid_rows; ++gr) {
    std::size_t y0 = gr * bh;
    std::size_t y1 = (gr + 1 == grid_rows) ? height : y0 + bh;  // remainder joins last block
    for (std::size_t gc = 0; gc < grid_cols; ++gc) {
      std::size_t x0 = gc * bw;
      std::size_t x1 = (gc + 1 == grid_cols) ? width : x0 + bw;
      double acc = 0.0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) acc += response[y * width + x];
      out[gr * grid_cols + gc] =
          acc / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  }
}

static GistDescriptor gist_impl(const imaging::GrayImage& image, const GaborFilterBank& bank,
                                std::size_t grid_rows, std::size_t grid_cols, bool parallel) {
  if (image.height < grid_rows || image.width < grid_cols)
    throw DataError("image smaller than gist grid");
  GistDescriptor d;
  d.scales = bank.scales;
  d.orientations = bank.orientations;
  d.grid_rows = grid_rows;
  d.grid_cols = grid_cols;
  const std::size_t cells = grid_rows * grid_cols;
  d.values.assign(bank.filters.size() * cells, 0.0);

  double mean = 0.0;
  for (auto p : image.pixels) mean += static_cast<double>(p);
  mean /= static_cast<double>(image.pixels.size());
  std::vector<double> centered(image.pixels.size());
  for (std::size_t i = 0; i < centered.size(); ++i)
    centered[i] = static_cast<double>(image.pixels[i]) - mean;

#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(bank.filters.size()); ++k) {
    auto response = abs_response(centered, image.width, image.height, bank.filters[k],
                                 bank.kernel_size);
    block_means(response, image.width, image.height, grid_rows, grid_cols,
                d.values.data() + static_cast<std::size_t>(k) * cells);
  }
  return d;
}

GistDescriptor gist(const imaging::GrayImage& image, const GaborFilterBank& bank,
                    std::size_t grid_rows, std::size_t grid_cols) {
  return gist_impl(image, bank, grid_rows, grid_cols, true);
}

GistDescriptor gist_serial(const imaging::GrayImage& image, const GaborFilterBank& bank,
                           std::size_t grid_rows, std::size_t grid_cols) {
  return gist_impl(image, bank, grid_rows, grid_cols, false);
}

unsigned lbp_code(const imaging::GrayImage& image, std::size_t row, std::size_t col,
                  std::size_t P, std::size_t R, bool strict) {
  const double center = image.at(row, col);
  unsigned code = 0;
  for (std::size_t p = 0; p < P; ++p) {
    double angle = 2.0 * std::numbers::pi * static_cast<double>(p) / static_cast<double>(P);
    // angle 0 points right, proceeding counter-clockwise on screen
    long dc = std::lround(static_cast<double>(R) * std::cos(angle));
    long dr = -std::lround(static_cast<double>(R) * std::sin(angle));
    double neighbor = image.at(row + dr, col + dc);
    double diff = neighbor - center;
    bool bit = strict ? (diff > 0.0) : (diff >= 0.0);
    if (bit) code |= 1u << p;
  }
  return code;
}

static LbpHistogram lbp_impl(const imaging::GrayImage& image, std::size_t P, std::size_t R,
                             bool normalized, bool strict, bool parallel) {
  if (image.width < 2 * R + 1 || image.height < 2 * R + 1)
    throw DataError("image too small for lbp radius");
  if (P < 1 || P > 8) throw DataError("lbp needs 1 <= P <= 8 for a 256-bin histogram");
  std::vector<std::uint64_t> counts(256, 0);
  const std::ptrdiff_t r0 = static_cast<std::ptrdiff_t>(R);
  const std::ptrdiff_t r1 = static_cast<std::ptrdiff_t>(image.height - R);

#pragma omp parallel if (parallel)
  {
    std::vector<std::uint64_t> local(256, 0);
#pragma omp for schedule(static) nowait
    for (std::ptrdiff_t row = r0; row < r1; ++row)
      for (std::size_t col = R; col < image.width - R; ++col)
        ++local[lbp_code(image, static_cast<std::size_t>(row), col, P, R, strict)];
#pragma omp critical
    for (std::size_t i = 0; i < 256; ++i) counts[i] += local[i];
  }

  LbpHistogram h;
  h.normalized = normalized;
  h.bins.resize(256);
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  for (std::size_t i = 0; i < 256; ++i)
    h.bins[i] = normalized ? static_cast<double>(counts[i]) / static_cast<double>(total)
                           : static_cast<double>(counts[i]);
  return h;
}

LbpHistogram lbp(const imaging::GrayImage& image, std::size_t P, std::size_t R,
                 bool normalized, bool strict) {
  return lbp_impl(image, P, R, normalized, strict, true);
}

LbpHistogram lbp_serial(const imaging::GrayImage& image, std::size_t P, std::size_t R,
                        bool normalized, bool strict) {
  return lbp_impl(image, P, R, normalized, strict, false);
}

std::vector<double> combine_texture(const GistDescriptor& g, const LbpHistogram& l) {
  std::vector<double> out;
  out.reserve(g.values.size() + l.bins.size());
  out.insert(out.end(), g.values.begin(), g.values.end());
  out.insert(out.end(), l.bins.begin(), l.bins.end());
  return out;
}

}  // namespace malfuse::texture
