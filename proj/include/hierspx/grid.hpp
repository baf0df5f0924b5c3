#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hierspx/error.hpp"

namespace hierspx {

struct Dims {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t pixels() const noexcept { return height * width; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

inline std::string to_string(Dims d) {
  return std::to_string(d.height) + "x" + std::to_string(d.width);
}

// Ceiling-halved grid; the seed grid of a fine grid with these dims.
inline Dims half_dims(Dims d) noexcept {
  return {(d.height + 1) / 2, (d.width + 1) / 2};
}

// Dense H x W x C grid of doubles, row-major (h, w, c).
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t height, std::size_t width, std::size_t channels,
             double fill = 0.0)
      : height_(height), width_(width), channels_(channels),
        data_(height * width * channels, fill) {}
  FeatureMap(Dims dims, std::size_t channels, double fill = 0.0)
      : FeatureMap(dims.height, dims.width, channels, fill) {}
  FeatureMap(std::size_t height, std::size_t width, std::size_t channels,
             std::vector<double> data)
      : height_(height), width_(width), channels_(channels),
        data_(std::move(data)) {
    if (data_.size() != height_ * width_ * channels_)
      throw InvalidInput("FeatureMap: data length does not match dimensions");
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  Dims dims() const noexcept { return {height_, width_}; }
  std::size_t pixels() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& at(std::size_t h, std::size_t w, std::size_t c) noexcept {
    return data_[(h * width_ + w) * channels_ + c];
  }
  double at(std::size_t h, std::size_t w, std::size_t c) const noexcept {
    return data_[(h * width_ + w) * channels_ + c];
  }

  std::span<double> pixel(std::size_t flat) noexcept {
    return {data_.data() + flat * channels_, channels_};
  }
  std::span<const double> pixel(std::size_t flat) const noexcept {
    return {data_.data() + flat * channels_, channels_};
  }
  std::span<double> pixel(std::size_t h, std::size_t w) noexcept {
    return pixel(h * width_ + w);
  }
  std::span<const double> pixel(std::size_t h, std::size_t w) const noexcept {
    return pixel(h * width_ + w);
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

// Dense H x W grid of non-negative integer labels.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(std::size_t height, std::size_t width, std::uint32_t fill = 0)
      : height_(height), width_(width), labels_(height * width, fill) {}
  LabelMap(Dims dims, std::uint32_t fill = 0)
      : LabelMap(dims.height, dims.width, fill) {}
  LabelMap(std::size_t height, std::size_t width,
           std::vector<std::uint32_t> labels)
      : height_(height), width_(width), labels_(std::move(labels)) {
    if (labels_.size() != height_ * width_)
      throw InvalidInput("LabelMap: label count does not match dimensions");
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  Dims dims() const noexcept { return {height_, width_}; }
  std::size_t size() const noexcept { return labels_.size(); }

  std::uint32_t& at(std::size_t h, std::size_t w) noexcept {
    return labels_[h * width_ + w];
  }
  std::uint32_t at(std::size_t h, std::size_t w) const noexcept {
    return labels_[h * width_ + w];
  }
  std::uint32_t& operator[](std::size_t i) noexcept { return labels_[i]; }
  std::uint32_t operator[](std::size_t i) const noexcept { return labels_[i]; }

  std::vector<std::uint32_t>& labels() noexcept { return labels_; }
  const std::vector<std::uint32_t>& labels() const noexcept { return labels_; }

  // One past the largest label (0 for an empty map).
  std::size_t label_bound() const noexcept {
    if (labels_.empty()) return 0;
    return std::size_t{*std::max_element(labels_.begin(), labels_.end())} + 1;
  }

  std::size_t distinct_labels() const {
    std::vector<std::uint32_t> sorted = labels_;
    std::sort(sorted.begin(), sorted.end());
    return static_cast<std::size_t>(
        std::unique(sorted.begin(), sorted.end()) - sorted.begin());
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint32_t> labels_;
};

// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t r, std::size_t c) noexcept {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols_ + c];
  }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// out = m * v
inline void matvec(const Matrix& m, std::span<const double> v,
                   std::span<double> out) noexcept {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* row = m.data().data() + r * m.cols();
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) acc += row[c] * v[c];
    out[r] = acc;
  }
}

enum class Downsample { average, strided };

// 2x2 mean pooling with ceiling output dims; border blocks shrink to whatever
// input pixels they cover.
inline FeatureMap avg_pool2(const FeatureMap& map) {
  if (map.height() < 2 || map.width() < 2)
    throw InvalidInput("avg_pool2: height and width must be >= 2, got " +
                       to_string(map.dims()));
  Dims out_dims = half_dims(map.dims());
  std::size_t ch = map.channels();
  FeatureMap out(out_dims, ch);
  for (std::size_t oh = 0; oh < out_dims.height; ++oh) {
    std::size_t h1 = std::min(map.height(), 2 * oh + 2);
    for (std::size_t ow = 0; ow < out_dims.width; ++ow) {
      std::size_t w1 = std::min(map.width(), 2 * ow + 2);
      auto dst = out.pixel(oh, ow);
      std::size_t n = 0;
      for (std::size_t h = 2 * oh; h < h1; ++h)
        for (std::size_t w = 2 * ow; w < w1; ++w, ++n) {
          auto src = map.pixel(h, w);
          for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c];
        }
      for (std::size_t c = 0; c < ch; ++c) dst[c] /= static_cast<double>(n);
    }
  }
  return out;
}

// Keeps the top-left pixel of every 2x2 block.
inline FeatureMap subsample2(const FeatureMap& map) {
  if (map.height() < 2 || map.width() < 2)
    throw InvalidInput("subsample2: height and width must be >= 2, got " +
                       to_string(map.dims()));
  Dims out_dims = half_dims(map.dims());
  FeatureMap out(out_dims, map.channels());
  for (std::size_t oh = 0; oh < out_dims.height; ++oh)
    for (std::size_t ow = 0; ow < out_dims.width; ++ow) {
      auto src = map.pixel(2 * oh, 2 * ow);
      std::copy(src.begin(), src.end(), out.pixel(oh, ow).begin());
    }
  return out;
}

inline FeatureMap downsample2(const FeatureMap& map, Downsample mode) {
  return mode == Downsample::average ? avg_pool2(map) : subsample2(map);
}

// Source taps for one output coordinate of a bilinear resize
// (align_corners = false, edge clamped).
struct BilinearTap {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double frac = 0.0;
};

inline BilinearTap bilinear_tap(std::size_t out_index, std::size_t factor,
                                std::size_t in_size) noexcept {
  double src = (static_cast<double>(out_index) + 0.5) /
                   static_cast<double>(factor) -
               0.5;
  if (src < 0.0) src = 0.0;
  auto lo = static_cast<std::size_t>(src);
  if (lo > in_size - 1) lo = in_size - 1;
  std::size_t hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, src - static_cast<double>(lo)};
}

inline FeatureMap bilinear_upsample(const FeatureMap& map, std::size_t factor) {
  if (factor == 0) throw InvalidInput("bilinear_upsample: factor must be >= 1");
  if (factor == 1) return map;
  std::size_t oh_n = map.height() * factor;
  std::size_t ow_n = map.width() * factor;
  std::size_t ch = map.channels();
  FeatureMap out(oh_n, ow_n, ch);
  std::vector<BilinearTap> col_taps(ow_n);
  for (std::size_t ow = 0; ow < ow_n; ++ow)
    col_taps[ow] = bilinear_tap(ow, factor, map.width());
  for (std::size_t oh = 0; oh < oh_n; ++oh) {
    BilinearTap ty = bilinear_tap(oh, factor, map.height());
    for (std::size_t ow = 0; ow < ow_n; ++ow) {
      const BilinearTap& tx = col_taps[ow];
      auto p00 = map.pixel(ty.lo, tx.lo);
      auto p01 = map.pixel(ty.lo, tx.hi);
      auto p10 = map.pixel(ty.hi, tx.lo);
      auto p11 = map.pixel(ty.hi, tx.hi);
      double w00 = (1 - ty.frac) * (1 - tx.frac), w01 = (1 - ty.frac) * tx.frac;
      double w10 = ty.frac * (1 - tx.frac), w11 = ty.frac * tx.frac;
      auto dst = out.pixel(oh, ow);
      for (std::size_t c = 0; c < ch; ++c)
        dst[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
    }
  }
  return out;
}

// Applies a K x C matrix to every pixel feature.
inline FeatureMap project(const FeatureMap& map, const Matrix& weights) {
  if (weights.cols() != map.channels())
    throw InvalidInput("project: weight matrix has " +
                       std::to_string(weights.cols()) + " columns, map has " +
                       std::to_string(map.channels()) + " channels");
  const std::size_t k = weights.rows(), ch = map.channels();
  std::vector<double> wt(k * ch);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < ch; ++c) wt[c * k + r] = weights(r, c);
  FeatureMap out(map.dims(), k);
  for (std::size_t p = 0; p < map.pixels(); ++p) {
    const double* src = map.pixel(p).data();
    double* dst = out.pixel(p).data();
    for (std::size_t c = 0; c < ch; ++c) {
      double v = src[c];
      const double* col = wt.data() + c * k;
      for (std::size_t r = 0; r < k; ++r) dst[r] += v * col[r];
    }
  }
  return out;
}

}  // namespace hierspx
