#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hierspx/clustering.hpp"
#include "hierspx/decode.hpp"
#include "hierspx/error.hpp"
#include "hierspx/grid.hpp"

namespace hierspx {

// Gradients of a scalar loss with respect to the inputs of decode_once.
// `d_weight` uses the field's slot layout (pixel * 9 + slot).
struct DecodeAdjoint {
  FeatureMap d_coarse;
  std::vector<double> d_weight;
};

inline DecodeAdjoint backward_decode(const AssignmentField& field,
                                     const FeatureMap& coarse,
                                     const FeatureMap& upstream) {
  if (coarse.dims() != field.seed_dims())
    throw InvalidInput("backward_decode: coarse dims do not match field");
  if (upstream.dims() != field.fine_dims() ||
      upstream.channels() != coarse.channels())
    throw InvalidInput("backward_decode: upstream shape " +
                       to_string(upstream.dims()) + "x" +
                       std::to_string(upstream.channels()) +
                       " does not match the decoded map");
  std::size_t ch = coarse.channels();
  DecodeAdjoint adj{FeatureMap(coarse.dims(), ch),
                    std::vector<double>(field.pixels() * kMaxCandidates, 0.0)};
  // Serial scatter keeps the summation order fixed.
  for (std::size_t p = 0; p < field.pixels(); ++p) {
    auto ss = field.seeds(p);
    auto ws = field.weights(p);
    const double* up = upstream.pixel(p).data();
    for (std::size_t k = 0; k < ss.size(); ++k) {
      double* dc = adj.d_coarse.pixel(ss[k]).data();
      const double* cv = coarse.pixel(ss[k]).data();
      double dot = 0.0;
      for (std::size_t c = 0; c < ch; ++c) {
        dc[c] += ws[k] * up[c];
        dot += up[c] * cv[c];
      }
      adj.d_weight[p * kMaxCandidates + k] = dot;
    }
  }
  return adj;
}

// Adjoint of bilinear_upsample: scatters each output gradient back onto its
// four source taps.
inline FeatureMap bilinear_upsample_backward(const FeatureMap& upstream,
                                             Dims input, std::size_t factor) {
  if (factor == 0)
    throw InvalidInput("bilinear_upsample_backward: factor must be >= 1");
  if (upstream.height() != input.height * factor ||
      upstream.width() != input.width * factor)
    throw InvalidInput("bilinear_upsample_backward: upstream dims mismatch");
  if (factor == 1) return upstream;
  std::size_t ch = upstream.channels();
  FeatureMap grad(input, ch);
  for (std::size_t oh = 0; oh < upstream.height(); ++oh) {
    BilinearTap ty = bilinear_tap(oh, factor, input.height);
    for (std::size_t ow = 0; ow < upstream.width(); ++ow) {
      BilinearTap tx = bilinear_tap(ow, factor, input.width);
      double w00 = (1 - ty.frac) * (1 - tx.frac), w01 = (1 - ty.frac) * tx.frac;
      double w10 = ty.frac * (1 - tx.frac), w11 = ty.frac * tx.frac;
      auto up = upstream.pixel(oh, ow);
      auto g00 = grad.pixel(ty.lo, tx.lo), g01 = grad.pixel(ty.lo, tx.hi);
      auto g10 = grad.pixel(ty.hi, tx.lo), g11 = grad.pixel(ty.hi, tx.hi);
      for (std::size_t c = 0; c < ch; ++c) {
        g00[c] += w00 * up[c];
        g01[c] += w01 * up[c];
        g10[c] += w10 * up[c];
        g11[c] += w11 * up[c];
      }
    }
  }
  return grad;
}

struct SoftAssignAdjoint {
  FeatureMap d_fine;
  FeatureMap d_seeds;
  Matrix d_w_fine;
  Matrix d_w_seed;
};

// Chain rule through the per-pixel softmax, the similarity and both linear
// projections. `upstream` holds dL/dweight in the field's slot layout.
inline SoftAssignAdjoint backward_soft_assign(const FeatureMap& fine,
                                              const SeedGrid& seeds,
                                              const ProjectionPair& proj,
                                              const ClusteringConfig& config,
                                              std::span<const double> upstream) {
  detail::check_clustering_inputs(fine, seeds, proj, config);
  if (upstream.size() != fine.pixels() * kMaxCandidates)
    throw InvalidInput("backward_soft_assign: upstream has " +
                       std::to_string(upstream.size()) + " entries, expected " +
                       std::to_string(fine.pixels() * kMaxCandidates));
  const bool cosine = config.similarity == Similarity::cosine;
  const double eps = config.epsilon_norm;
  auto a = detail::embed(fine, proj.w_fine, config);
  auto b = detail::embed(seeds.features, proj.w_seed, config);
  std::size_t kd = proj.k_dim();
  Dims fd = fine.dims(), sd = seeds.dims();

  // Gradients w.r.t. the raw projected vectors.
  FeatureMap d_a(fd, kd), d_b(sd, kd);
  std::array<double, kMaxCandidates> sim{}, w{}, d_sim{};
  for (std::size_t h = 0; h < fd.height; ++h)
    for (std::size_t x = 0; x < fd.width; ++x) {
      std::size_t p = h * fd.width + x;
      Candidates cand = candidate_seeds_unchecked(h, x, sd);
      std::size_t n = cand.size();
      auto av = a.vectors.pixel(p);
      for (std::size_t k = 0; k < n; ++k)
        sim[k] = w[k] = detail::embedded_similarity(
            av, b.vectors.pixel(cand.index[k]), config.similarity);
      detail::temperature_softmax({w.data(), n}, config.tau);
      const double* g = upstream.data() + p * kMaxCandidates;
      double mean_g = 0.0;
      for (std::size_t k = 0; k < n; ++k) mean_g += w[k] * g[k];
      for (std::size_t k = 0; k < n; ++k)
        d_sim[k] = w[k] * (g[k] - mean_g) / config.tau;

      double* da = d_a.pixel(p).data();
      const double* ap = av.data();
      double na = std::max(a.norms[p], eps);
      bool a_active = a.norms[p] > eps;
      for (std::size_t k = 0; k < n; ++k) {
        std::uint32_t j = cand.index[k];
        const double* bp = b.vectors.pixel(j).data();
        double* db = d_b.pixel(j).data();
        if (cosine) {
          // d cos / d a = (b_hat - cos * a_hat) / |a|, symmetric for b.
          double nb = std::max(b.norms[j], eps);
          double ca = d_sim[k] / na, sa = a_active ? ca * sim[k] : 0.0;
          double cb = d_sim[k] / nb, sb = b.norms[j] > eps ? cb * sim[k] : 0.0;
          for (std::size_t c = 0; c < kd; ++c) {
            double bv = bp[c], avc = ap[c];
            da[c] += ca * bv - sa * avc;
            db[c] += cb * avc - sb * bv;
          }
        } else {
          double two = 2.0 * d_sim[k];
          for (std::size_t c = 0; c < kd; ++c) {
            double diff = ap[c] - bp[c];
            da[c] -= two * diff;
            db[c] += two * diff;
          }
        }
      }
    }

  auto pull_back = [kd](const FeatureMap& input, const FeatureMap& d_proj,
                        const Matrix& wm, FeatureMap& d_input, Matrix& d_w) {
    std::size_t ch = input.channels();
    for (std::size_t p = 0; p < input.pixels(); ++p) {
      const double* dv = d_proj.pixel(p).data();
      const double* xv = input.pixel(p).data();
      double* di = d_input.pixel(p).data();
      for (std::size_t r = 0; r < kd; ++r) {
        double g = dv[r];
        const double* wrow = wm.data().data() + r * ch;
        double* dwrow = d_w.data().data() + r * ch;
        for (std::size_t c = 0; c < ch; ++c) {
          di[c] += wrow[c] * g;
          dwrow[c] += g * xv[c];
        }
      }
    }
  };

  SoftAssignAdjoint adj{FeatureMap(fd, fine.channels()),
                        FeatureMap(sd, seeds.features.channels()),
                        Matrix(kd, fine.channels()),
                        Matrix(kd, seeds.features.channels())};
  pull_back(fine, d_a, proj.w_fine, adj.d_fine, adj.d_w_fine);
  pull_back(seeds.features, d_b, proj.w_seed, adj.d_seeds, adj.d_w_seed);
  return adj;
}

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
};

using ScalarFunction = std::function<double(std::span<const double>)>;

// Compares an analytic gradient to central differences coordinate by
// coordinate; error is |g - g_num| / max(1, |g_num|).
inline FiniteDiffReport finite_diff_check(const ScalarFunction& fn,
                                          std::span<const double> analytic,
                                          std::span<const double> point,
                                          double eps) {
  if (!(eps >= 1e-8 && eps <= 1e-3))
    throw InvalidInput("finite_diff_check: eps must lie in [1e-8, 1e-3]");
  if (analytic.size() != point.size())
    throw InvalidInput("finite_diff_check: gradient and point sizes differ");
  std::vector<double> x(point.begin(), point.end());
  FiniteDiffReport report;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = x[i];
    x[i] = orig + eps;
    double fp = fn(x);
    x[i] = orig - eps;
    double fm = fn(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericalError("finite_diff_check: non-finite function value at "
                           "coordinate " + std::to_string(i),
                           i);
    if (!std::isfinite(analytic[i]))
      throw NumericalError("finite_diff_check: non-finite analytic gradient at "
                           "coordinate " + std::to_string(i),
                           i);
    double numeric = (fp - fm) / (2.0 * eps);
    double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_coordinate = i;
    }
  }
  return report;
}

}  // namespace hierspx
