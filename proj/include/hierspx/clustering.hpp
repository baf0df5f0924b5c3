#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hierspx/binary.hpp"
#include "hierspx/error.hpp"
#include "hierspx/grid.hpp"
#include "hierspx/parallel.hpp"

namespace hierspx {

inline constexpr std::size_t kMaxCandidates = 9;
inline constexpr double kDefaultTau = 0.07;
inline constexpr std::size_t kDefaultProjectionDim = 64;

enum class Similarity { cosine, neg_sq_euclidean };

struct ClusteringConfig {
  double tau = kDefaultTau;
  std::size_t k_dim = kDefaultProjectionDim;
  Similarity similarity = Similarity::cosine;
  double epsilon_norm = 1e-12;

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau))
      throw InvalidConfig("clustering: tau must be > 0, got " +
                          std::to_string(tau));
    if (!(epsilon_norm > 0.0))
      throw InvalidConfig("clustering: epsilon_norm must be > 0");
    if (k_dim == 0) throw InvalidConfig("clustering: k_dim must be > 0");
  }
};

// Learnable maps of fine features (K x N) and seed features (K x M) into the
// shared K-dimensional similarity space.
struct ProjectionPair {
  Matrix w_fine;
  Matrix w_seed;

  static ProjectionPair identity(std::size_t channels) {
    return {Matrix::identity(channels), Matrix::identity(channels)};
  }

  std::size_t k_dim() const noexcept { return w_fine.rows(); }

  void validate(std::size_t fine_channels, std::size_t seed_channels) const {
    if (w_fine.rows() != w_seed.rows())
      throw InvalidInput("projection pair: row counts differ (" +
                         std::to_string(w_fine.rows()) + " vs " +
                         std::to_string(w_seed.rows()) + ")");
    if (w_fine.cols() != fine_channels || w_seed.cols() != seed_channels)
      throw InvalidInput("projection pair: expected " +
                         std::to_string(fine_channels) + "/" +
                         std::to_string(seed_channels) + " input channels, got " +
                         std::to_string(w_fine.cols()) + "/" +
                         std::to_string(w_seed.cols()));
    if (!w_fine.all_finite() || !w_seed.all_finite())
      throw InvalidInput("projection pair: non-finite weights");
  }
};

// Downsampled feature map whose pixels act as cluster seeds.
struct SeedGrid {
  FeatureMap features;

  Dims dims() const noexcept { return features.dims(); }

  static SeedGrid from(const FeatureMap& fine,
                       Downsample mode = Downsample::average) {
    return {downsample2(fine, mode)};
  }
};

// The in-bounds part of the 3x3 seed-cell window around a fine pixel's own
// cell, as flat seed indices in row-major (dy, dx) order.
struct Candidates {
  std::array<std::uint32_t, kMaxCandidates> index{};
  std::uint8_t count = 0;

  const std::uint32_t* begin() const noexcept { return index.data(); }
  const std::uint32_t* end() const noexcept { return index.data() + count; }
  std::size_t size() const noexcept { return count; }
};

inline Candidates candidate_seeds_unchecked(std::size_t h, std::size_t w,
                                            Dims seed) noexcept {
  Candidates out;
  auto ch = static_cast<std::ptrdiff_t>(h / 2);
  auto cw = static_cast<std::ptrdiff_t>(w / 2);
  auto sh = static_cast<std::ptrdiff_t>(seed.height);
  auto sw = static_cast<std::ptrdiff_t>(seed.width);
  for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
    std::ptrdiff_t y = ch + dy;
    if (y < 0 || y >= sh) continue;
    for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
      std::ptrdiff_t x = cw + dx;
      if (x < 0 || x >= sw) continue;
      out.index[out.count++] = static_cast<std::uint32_t>(y * sw + x);
    }
  }
  return out;
}

inline Candidates candidate_seeds(std::size_t h, std::size_t w, Dims seed) {
  if (h / 2 >= seed.height || w / 2 >= seed.width)
    throw InvalidInput("candidate_seeds: pixel (" + std::to_string(h) + ", " +
                       std::to_string(w) + ") outside the grid of seed dims " +
                       to_string(seed));
  return candidate_seeds_unchecked(h, w, seed);
}

// Per fine pixel, up to nine (seed index, weight) entries stored in fixed
// slots of nine. Soft fields keep every in-bounds candidate; hard fields keep
// one entry of weight 1.
class AssignmentField {
 public:
  AssignmentField() = default;
  AssignmentField(Dims fine, Dims seed)
      : fine_(fine), seed_(seed), count_(fine.pixels(), 0),
        index_(fine.pixels() * kMaxCandidates, 0),
        weight_(fine.pixels() * kMaxCandidates, 0.0) {}

  Dims fine_dims() const noexcept { return fine_; }
  Dims seed_dims() const noexcept { return seed_; }
  std::size_t pixels() const noexcept { return fine_.pixels(); }

  std::size_t count(std::size_t p) const noexcept { return count_[p]; }
  std::span<const std::uint32_t> seeds(std::size_t p) const noexcept {
    return {index_.data() + p * kMaxCandidates, count_[p]};
  }
  std::span<const double> weights(std::size_t p) const noexcept {
    return {weight_.data() + p * kMaxCandidates, count_[p]};
  }
  std::span<double> weights(std::size_t p) noexcept {
    return {weight_.data() + p * kMaxCandidates, count_[p]};
  }

  void set(std::size_t p, std::span<const std::uint32_t> seeds,
           std::span<const double> weights) {
    if (seeds.size() != weights.size() || seeds.size() > kMaxCandidates)
      throw InvalidInput("AssignmentField::set: bad entry count");
    count_[p] = static_cast<std::uint8_t>(seeds.size());
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      index_[p * kMaxCandidates + k] = seeds[k];
      weight_[p * kMaxCandidates + k] = weights[k];
    }
  }

  // Slot-major weight storage (pixel * 9 + slot); gradients use this layout.
  const std::vector<double>& raw_weights() const noexcept { return weight_; }
  std::vector<double>& raw_weights() noexcept { return weight_; }

  std::size_t total_entries() const noexcept {
    std::size_t n = 0;
    for (auto c : count_) n += c;
    return n;
  }

  // Throws InvalidInput describing the first violated invariant.
  void check(double sum_tolerance = 1e-9) const {
    if (half_dims(fine_) != seed_)
      throw InvalidInput("assignment field: seed dims " + to_string(seed_) +
                         " do not halve fine dims " + to_string(fine_));
    for (std::size_t p = 0; p < pixels(); ++p) {
      if (count_[p] == 0)
        throw InvalidInput("assignment field: pixel " + std::to_string(p) +
                           " has no entries");
      Candidates allowed =
          candidate_seeds_unchecked(p / fine_.width, p % fine_.width, seed_);
      double sum = 0.0;
      for (std::size_t k = 0; k < count_[p]; ++k) {
        std::uint32_t s = index_[p * kMaxCandidates + k];
        double w = weight_[p * kMaxCandidates + k];
        if (std::find(allowed.begin(), allowed.end(), s) == allowed.end())
          throw InvalidInput("assignment field: pixel " + std::to_string(p) +
                             " references non-candidate seed " +
                             std::to_string(s));
        if (!(w >= 0.0 && w <= 1.0))
          throw InvalidInput("assignment field: weight out of [0,1] at pixel " +
                             std::to_string(p));
        sum += w;
      }
      if (std::abs(sum - 1.0) > sum_tolerance)
        throw InvalidInput("assignment field: row " + std::to_string(p) +
                           " sums to " + std::to_string(sum));
    }
  }

  friend bool operator==(const AssignmentField&,
                         const AssignmentField&) = default;

 private:
  Dims fine_;
  Dims seed_;
  std::vector<std::uint8_t> count_;
  std::vector<std::uint32_t> index_;
  std::vector<double> weight_;
};

inline double similarity(std::span<const double> a, std::span<const double> b,
                         const ClusteringConfig& config) {
  if (a.size() != b.size())
    throw InvalidInput("similarity: vector lengths differ");
  if (config.similarity == Similarity::neg_sq_euclidean) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return -d;
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::max(std::sqrt(na), config.epsilon_norm) *
                std::max(std::sqrt(nb), config.epsilon_norm));
}

namespace detail {

inline void check_clustering_inputs(const FeatureMap& fine,
                                    const SeedGrid& seeds,
                                    const ProjectionPair& proj,
                                    const ClusteringConfig& config) {
  config.validate();
  proj.validate(fine.channels(), seeds.features.channels());
  if (fine.pixels() == 0)
    throw InvalidInput("soft_assign: empty fine map");
  if (seeds.dims() != half_dims(fine.dims()))
    throw InvalidInput("soft_assign: seed dims " + to_string(seeds.dims()) +
                       " inconsistent with fine dims " +
                       to_string(fine.dims()));
}

// Projected features, ready for a dot product. In cosine mode every vector is
// divided by max(norm, eps), so similarity reduces to a dot product.
struct Embedding {
  FeatureMap vectors;
  std::vector<double> norms;  // raw L2 norms before scaling
};

inline Embedding embed(const FeatureMap& map, const Matrix& w,
                       const ClusteringConfig& config) {
  Embedding e{project(map, w), std::vector<double>(map.pixels(), 0.0)};
  for (std::size_t p = 0; p < map.pixels(); ++p) {
    auto v = e.vectors.pixel(p);
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    e.norms[p] = std::sqrt(n2);
    if (config.similarity == Similarity::cosine) {
      double denom = std::max(e.norms[p], config.epsilon_norm);
      for (double& x : v) x /= denom;
    }
  }
  return e;
}

inline double embedded_similarity(std::span<const double> a,
                                  std::span<const double> b,
                                  Similarity mode) noexcept {
  const double* ap = a.data();
  const double* bp = b.data();
  const std::size_t n = a.size();
  double acc = 0.0;
  if (mode == Similarity::cosine) {
    for (std::size_t i = 0; i < n; ++i) acc += ap[i] * bp[i];
    return acc;
  }
  for (std::size_t i = 0; i < n; ++i) acc += (ap[i] - bp[i]) * (ap[i] - bp[i]);
  return -acc;
}

// Numerically stable temperature softmax in place over `logits`.
inline void temperature_softmax(std::span<double> sims, double tau) noexcept {
  double mx = -std::numeric_limits<double>::infinity();
  for (double s : sims) mx = std::max(mx, s);
  double sum = 0.0;
  for (double& s : sims) {
    s = std::exp((s - mx) / tau);
    sum += s;
  }
  for (double& s : sims) s /= sum;
}

}  // namespace detail

// Restricted soft assignment: per fine pixel, a temperature softmax of
// projected similarities over the in-bounds candidate seeds only.
inline AssignmentField soft_assign(const FeatureMap& fine, const SeedGrid& seeds,
                                   const ProjectionPair& proj,
                                   const ClusteringConfig& config,
                                   unsigned threads = 1) {
  detail::check_clustering_inputs(fine, seeds, proj, config);
  auto a = detail::embed(fine, proj.w_fine, config);
  auto b = detail::embed(seeds.features, proj.w_seed, config);
  Dims fd = fine.dims(), sd = seeds.dims();
  AssignmentField field(fd, sd);
  parallel_for(fd.height, threads, [&](std::size_t h0, std::size_t h1) {
    std::array<double, kMaxCandidates> w{};
    for (std::size_t h = h0; h < h1; ++h)
      for (std::size_t x = 0; x < fd.width; ++x) {
        std::size_t p = h * fd.width + x;
        Candidates cand = candidate_seeds_unchecked(h, x, sd);
        for (std::size_t k = 0; k < cand.size(); ++k)
          w[k] = detail::embedded_similarity(
              a.vectors.pixel(p), b.vectors.pixel(cand.index[k]),
              config.similarity);
        std::span<double> ws(w.data(), cand.size());
        detail::temperature_softmax(ws, config.tau);
        field.set(p, {cand.index.data(), cand.size()}, ws);
      }
  });
  return field;
}

// Unrestricted softmax over every seed: a U x V row-stochastic matrix. Only
// usable as a test oracle on small grids.
inline constexpr std::size_t kDenseAssignLimit = 10'000'000;

inline Matrix full_soft_assign(const FeatureMap& fine, const SeedGrid& seeds,
                               const ProjectionPair& proj,
                               const ClusteringConfig& config) {
  std::size_t u = fine.pixels(), v = seeds.features.pixels();
  if (v != 0 && u > kDenseAssignLimit / v)
    throw ResourceLimit("full_soft_assign: " + std::to_string(u) + " x " +
                        std::to_string(v) + " dense matrix exceeds the " +
                        std::to_string(kDenseAssignLimit) + "-entry limit");
  detail::check_clustering_inputs(fine, seeds, proj, config);
  auto a = detail::embed(fine, proj.w_fine, config);
  auto b = detail::embed(seeds.features, proj.w_seed, config);
  Matrix dense(u, v);
  std::vector<double> row(v);
  for (std::size_t i = 0; i < u; ++i) {
    for (std::size_t j = 0; j < v; ++j)
      row[j] = detail::embedded_similarity(a.vectors.pixel(i),
                                           b.vectors.pixel(j), config.similarity);
    detail::temperature_softmax(row, config.tau);
    std::copy(row.begin(), row.end(), dense.data().begin() + i * v);
  }
  return dense;
}

struct HardAssignment {
  AssignmentField field;  // one entry per pixel, weight 1
  LabelMap labels;        // winning seed flat index per fine pixel
};

// Per-pixel argmax of a soft field. Ties go to the lowest slot in the
// row-major candidate window.
inline HardAssignment hard_assign(const AssignmentField& soft) {
  HardAssignment out{AssignmentField(soft.fine_dims(), soft.seed_dims()),
                     LabelMap(soft.fine_dims())};
  const double one = 1.0;
  for (std::size_t p = 0; p < soft.pixels(); ++p) {
    auto ws = soft.weights(p);
    auto ss = soft.seeds(p);
    if (ws.empty()) throw InvalidInput("hard_assign: pixel without entries");
    std::size_t best = 0;
    for (std::size_t k = 1; k < ws.size(); ++k)
      if (ws[k] > ws[best]) best = k;
    out.field.set(p, ss.subspan(best, 1), {&one, 1});
    out.labels[p] = ss[best];
  }
  return out;
}

// Dense U x V view of a sparse field.
inline Matrix to_dense(const AssignmentField& field) {
  std::size_t u = field.pixels(), v = field.seed_dims().pixels();
  if (v != 0 && u > kDenseAssignLimit / v)
    throw ResourceLimit("to_dense: field too large to materialize");
  Matrix m(u, v);
  for (std::size_t p = 0; p < u; ++p) {
    auto ss = field.seeds(p);
    auto ws = field.weights(p);
    for (std::size_t k = 0; k < ss.size(); ++k) m(p, ss[k]) += ws[k];
  }
  return m;
}

// Binary format: "ASF1", fine h/w and seed h/w as u32, then per pixel a u8
// entry count followed by (u32 seed index, f64 weight) pairs. Little-endian.
inline void write_assignment_field(std::ostream& os,
                                   const AssignmentField& field) {
  os.write("ASF1", 4);
  for (std::size_t v : {field.fine_dims().height, field.fine_dims().width,
                        field.seed_dims().height, field.seed_dims().width})
    binary::put(os, static_cast<std::uint32_t>(v));
  for (std::size_t p = 0; p < field.pixels(); ++p) {
    binary::put(os, static_cast<std::uint8_t>(field.count(p)));
    auto ss = field.seeds(p);
    auto ws = field.weights(p);
    for (std::size_t k = 0; k < ss.size(); ++k) {
      binary::put(os, ss[k]);
      binary::put(os, ws[k]);
    }
  }
  if (!os) throw IoError("write_assignment_field: stream write failed");
}

inline AssignmentField read_assignment_field(std::istream& is) {
  binary::expect_magic(is, "ASF1");
  Dims fine{binary::get<std::uint32_t>(is, "fine height"),
            binary::get<std::uint32_t>(is, "fine width")};
  Dims seed{binary::get<std::uint32_t>(is, "seed height"),
            binary::get<std::uint32_t>(is, "seed width")};
  if (half_dims(fine) != seed)
    throw ParseError("assignment field: seed dims do not halve fine dims", 4);
  AssignmentField field(fine, seed);
  std::array<std::uint32_t, kMaxCandidates> idx{};
  std::array<double, kMaxCandidates> w{};
  for (std::size_t p = 0; p < fine.pixels(); ++p) {
    auto n = binary::get<std::uint8_t>(is, "entry count");
    if (n > kMaxCandidates)
      throw ParseError("assignment field: entry count " + std::to_string(n) +
                           " exceeds 9",
                       static_cast<std::size_t>(is.tellg()) - 1);
    for (std::size_t k = 0; k < n; ++k) {
      idx[k] = binary::get<std::uint32_t>(is, "seed index");
      w[k] = binary::get<double>(is, "weight");
    }
    field.set(p, {idx.data(), n}, {w.data(), n});
  }
  return field;
}

}  // namespace hierspx
