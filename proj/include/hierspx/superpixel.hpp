#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "hierspx/clustering.hpp"
#include "hierspx/decode.hpp"
#include "hierspx/error.hpp"
#include "hierspx/grid.hpp"
#include "hierspx/metrics.hpp"

namespace hierspx {

enum class ColorSpace { lab, rgb };

struct PipelineConfig {
  std::size_t levels = 3;
  double tau = kDefaultTau;
  Similarity similarity = Similarity::neg_sq_euclidean;
  double pos_weight = 0.5;
  ColorSpace color = ColorSpace::lab;
  Downsample downsample = Downsample::average;

  void validate() const {
    if (levels < 1 || levels > 5)
      throw InvalidConfig("pipeline: levels must be in 1..5, got " +
                          std::to_string(levels));
    if (!(tau > 0.0)) throw InvalidConfig("pipeline: tau must be > 0");
    if (!(pos_weight >= 0.0))
      throw InvalidConfig("pipeline: position weight must be >= 0");
  }

  ClusteringConfig clustering() const {
    ClusteringConfig c;
    c.tau = tau;
    c.k_dim = 5;
    c.similarity = similarity;
    return c;
  }
};

// sRGB in [0,1] to CIE L*a*b* under D65.
inline std::array<double, 3> srgb_to_lab(double r, double g, double b) {
  auto linear = [](double c) {
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
  };
  double rl = linear(r), gl = linear(g), bl = linear(b);
  double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
  double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
  double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
  constexpr double xn = 0.95047, yn = 1.0, zn = 1.08883;
  constexpr double delta = 6.0 / 29.0;
  auto f = [](double t) {
    return t > delta * delta * delta ? std::cbrt(t)
                                     : t / (3.0 * delta * delta) + 4.0 / 29.0;
  };
  double fx = f(x / xn), fy = f(y / yn), fz = f(z / zn);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

// Five channels per pixel: colour triple, then pos_weight * (y/H, x/W).
// Lab colours are divided by 100 so they share a scale with position.
inline FeatureMap pixel_features(const FeatureMap& image,
                                 const PipelineConfig& config) {
  if (image.channels() != 3)
    throw InvalidInput("pixel_features: expected a 3-channel image, got " +
                       std::to_string(image.channels()));
  FeatureMap out(image.dims(), 5);
  double hn = static_cast<double>(image.height());
  double wn = static_cast<double>(image.width());
  for (std::size_t h = 0; h < image.height(); ++h)
    for (std::size_t w = 0; w < image.width(); ++w) {
      auto src = image.pixel(h, w);
      auto dst = out.pixel(h, w);
      if (config.color == ColorSpace::lab) {
        auto lab = srgb_to_lab(src[0], src[1], src[2]);
        for (int c = 0; c < 3; ++c) dst[c] = lab[c] / 100.0;
      } else {
        for (int c = 0; c < 3; ++c) dst[c] = src[c];
      }
      dst[3] = config.pos_weight * static_cast<double>(h) / hn;
      dst[4] = config.pos_weight * static_cast<double>(w) / wn;
    }
  return out;
}

struct SuperpixelLevel {
  AssignmentField field;  // soft field at this boundary
  LabelMap labels;        // full-resolution hard labels for this level
};

// Training-free hierarchy: level l clusters level l-1 features against their
// own 2x2 downsampling, with identity projections.
inline std::vector<SuperpixelLevel> hierarchical_superpixels(
    const FeatureMap& image, const PipelineConfig& config,
    unsigned threads = 1) {
  config.validate();
  std::size_t need = std::size_t{1} << config.levels;
  if (image.height() < need || image.width() < need)
    throw InvalidInput("hierarchical_superpixels: image " +
                       to_string(image.dims()) + " too small for " +
                       std::to_string(config.levels) + " levels (need >= " +
                       std::to_string(need) + " per axis)");
  ClusteringConfig cc = config.clustering();
  ProjectionPair identity = ProjectionPair::identity(5);
  FeatureMap features = pixel_features(image, config);
  std::vector<SuperpixelLevel> levels;
  levels.reserve(config.levels);
  for (std::size_t l = 0; l < config.levels; ++l) {
    SeedGrid seeds = SeedGrid::from(features, config.downsample);
    levels.push_back({soft_assign(features, seeds, identity, cc, threads), {}});
    features = std::move(seeds.features);
  }
  for (std::size_t l = 0; l < levels.size(); ++l) {
    std::vector<std::reference_wrapper<const AssignmentField>> chain;
    for (std::size_t k = l + 1; k-- > 0;) chain.emplace_back(levels[k].field);
    levels[l].labels = compose_hard_labels(chain);
  }
  return levels;
}

inline FeatureMap overlay_boundaries(const FeatureMap& image,
                                     const LabelMap& labels) {
  if (image.dims() != labels.dims())
    throw InvalidInput("overlay_boundaries: image " + to_string(image.dims()) +
                       " vs labels " + to_string(labels.dims()));
  if (image.channels() != 3)
    throw InvalidInput("overlay_boundaries: expected a 3-channel image");
  FeatureMap out = image;
  auto mask = boundary_mask(labels);
  for (std::size_t p = 0; p < mask.size(); ++p)
    if (mask[p]) {
      auto px = out.pixel(p);
      px[0] = 1.0;
      px[1] = 1.0;
      px[2] = 0.0;
    }
  return out;
}

// Regular rows x cols block partition, the baseline for ASA comparisons.
inline LabelMap grid_partition(Dims dims, std::size_t rows, std::size_t cols) {
  LabelMap out(dims);
  for (std::size_t h = 0; h < dims.height; ++h)
    for (std::size_t w = 0; w < dims.width; ++w)
      out.at(h, w) = static_cast<std::uint32_t>((h * rows / dims.height) * cols +
                                                w * cols / dims.width);
  return out;
}

}  // namespace hierspx
