#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hierspx/clustering.hpp"
#include "hierspx/decode.hpp"
#include "hierspx/error.hpp"
#include "hierspx/grid.hpp"
#include "hierspx/io.hpp"

namespace hierspx::bench {

struct BenchConfig {
  std::size_t height = 1024;
  std::size_t width = 2048;
  std::size_t levels = 2;
  std::size_t trials = 100;
  std::size_t channels = 8;
  std::uint64_t seed = 42;
  unsigned threads = 1;  // > 1 additionally times the parallel sparse path
};

struct KernelStats {
  std::string name;
  bool skipped = false;
  std::size_t trials = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double min_ms = 0.0;
  double checksum = 0.0;
};

struct BenchReport {
  BenchConfig config;
  std::vector<KernelStats> kernels;
  std::size_t sparse_macs = 0;        // multiply-adds of one sparse decode
  std::size_t sparse_mac_bound = 0;   // fine pixels over levels * 9 * channels
  std::optional<double> sparse_dense_max_diff;

  const KernelStats& kernel(const std::string& name) const {
    for (const auto& k : kernels)
      if (k.name == name) return k;
    throw InvalidInput("bench: no kernel named " + name);
  }
};

// Random row-stochastic field: positive weights on every in-bounds candidate.
inline AssignmentField random_field(Dims fine, std::mt19937_64& rng) {
  Dims seed = half_dims(fine);
  AssignmentField field(fine, seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::array<double, kMaxCandidates> w{};
  for (std::size_t h = 0; h < fine.height; ++h)
    for (std::size_t x = 0; x < fine.width; ++x) {
      Candidates c = candidate_seeds_unchecked(h, x, seed);
      double sum = 0.0;
      for (std::size_t k = 0; k < c.size(); ++k) sum += (w[k] = u(rng));
      for (std::size_t k = 0; k < c.size(); ++k) w[k] /= sum;
      field.set(h * fine.width + x, {c.index.data(), c.size()}, {w.data(), c.size()});
    }
  return field;
}

namespace detail {

inline double checksum(const FeatureMap& m) {
  return std::accumulate(m.data().begin(), m.data().end(), 0.0);
}

// `kernel` returns a map or a reference to one; either way the result is
// complete when the call returns.
template <typename Kernel>
inline KernelStats time_kernel(const std::string& name, std::size_t trials,
                               Kernel&& kernel) {
  using clock = std::chrono::steady_clock;
  KernelStats s;
  s.name = name;
  s.trials = trials;
  s.checksum = checksum(kernel());  // warm-up, not timed
  std::vector<double> ms;
  ms.reserve(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    auto t0 = clock::now();
    [[maybe_unused]] auto out = kernel();  // freed after the clock stops
    auto t1 = clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  s.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(trials);
  s.min_ms = *std::min_element(ms.begin(), ms.end());
  std::sort(ms.begin(), ms.end());
  std::size_t mid = trials / 2;
  s.median_ms = trials % 2 ? ms[mid] : 0.5 * (ms[mid - 1] + ms[mid]);
  return s;
}

// Sequential dense application of each level's U x V matrix.
inline FeatureMap dense_decode(const std::vector<Matrix>& dense_coarse_to_fine,
                               const std::vector<Dims>& fine_dims,
                               const FeatureMap& coarsest) {
  FeatureMap cur = coarsest;
  std::size_t ch = coarsest.channels();
  for (std::size_t l = 0; l < dense_coarse_to_fine.size(); ++l) {
    const Matrix& a = dense_coarse_to_fine[l];
    FeatureMap next(fine_dims[l], ch);
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double* dst = next.pixel(i).data();
      const double* row = a.data().data() + i * a.cols();
      for (std::size_t j = 0; j < a.cols(); ++j) {
        double w = row[j];
        const double* src = cur.pixel(j).data();
        for (std::size_t c = 0; c < ch; ++c) dst[c] += w * src[c];
      }
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace detail

// Times sparse cluster decode, bilinear upsampling and (when it fits the dense
// size guard) dense-matrix decode over the same synthetic hierarchy.
inline BenchReport run_bench(const BenchConfig& cfg) {
  if (cfg.levels < 1 || cfg.levels > 8)
    throw InvalidInput("bench: levels must be in 1..8");
  std::size_t stride = std::size_t{1} << cfg.levels;
  if (cfg.height == 0 || cfg.width == 0 || cfg.height % stride || cfg.width % stride)
    throw InvalidInput("bench: dims " + std::to_string(cfg.height) + "x" +
                       std::to_string(cfg.width) + " must be divisible by " +
                       std::to_string(stride));
  if (cfg.trials == 0) throw InvalidInput("bench: trials must be >= 1");
  if (cfg.channels == 0) throw InvalidInput("bench: channels must be >= 1");

  std::mt19937_64 rng(cfg.seed);
  // fields[0] is the coarsest boundary.
  std::vector<AssignmentField> fields(cfg.levels);
  std::vector<Dims> fine_dims(cfg.levels);
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    std::size_t s = std::size_t{1} << (cfg.levels - 1 - l);
    fine_dims[l] = {cfg.height / s, cfg.width / s};
    fields[l] = random_field(fine_dims[l], rng);
  }
  Dims coarse_dims{cfg.height / stride, cfg.width / stride};
  FeatureMap coarse(coarse_dims, cfg.channels);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : coarse.data()) v = u(rng);

  std::vector<DecodePlan::FieldRef> refs(fields.begin(), fields.end());
  DecodePlan plan(refs, 1);

  BenchReport report;
  report.config = cfg;
  DecodeOptions counting{1, &report.sparse_macs};
  FeatureMap sparse_out = decode_hierarchy(plan, coarse, counting);
  for (const auto& d : fine_dims)
    report.sparse_mac_bound += d.pixels() * kMaxCandidates * cfg.channels;

  // Sparse decode reuses its level buffers across trials, as a forward pass
  // over same-sized inputs would; otherwise large outputs are timed mostly as
  // fresh page faults.
  DecodeWorkspace ws;
  report.kernels.push_back(detail::time_kernel("sparse_decode", cfg.trials, [&] {
    return std::cref(decode_hierarchy(plan, coarse, ws));
  }));
  if (cfg.threads > 1) {
    DecodeWorkspace pws;
    report.kernels.push_back(detail::time_kernel("sparse_decode_parallel", cfg.trials, [&] {
      return std::cref(decode_hierarchy(plan, coarse, pws, {cfg.threads, nullptr}));
    }));
  }
  report.kernels.push_back(detail::time_kernel(
      "bilinear", cfg.trials, [&] { return bilinear_upsample(coarse, stride); }));

  bool dense_fits = std::all_of(fields.begin(), fields.end(), [](const auto& f) {
    std::size_t v = f.seed_dims().pixels();
    return v == 0 || f.pixels() <= kDenseAssignLimit / v;
  });
  if (dense_fits) {
    std::vector<Matrix> dense;
    for (const auto& f : fields) dense.push_back(to_dense(f));
    report.kernels.push_back(detail::time_kernel("dense_decode", cfg.trials, [&] {
      return detail::dense_decode(dense, fine_dims, coarse);
    }));
    FeatureMap dense_out = detail::dense_decode(dense, fine_dims, coarse);
    double diff = 0.0;
    for (std::size_t i = 0; i < dense_out.size(); ++i)
      diff = std::max(diff, std::abs(dense_out.data()[i] - sparse_out.data()[i]));
    report.sparse_dense_max_diff = diff;
  } else {
    KernelStats skipped;
    skipped.name = "dense_decode";
    skipped.skipped = true;
    report.kernels.push_back(skipped);
  }
  return report;
}

inline Json to_json(const BenchReport& r) {
  Json j;
  j["height"] = r.config.height;
  j["width"] = r.config.width;
  j["levels"] = r.config.levels;
  j["trials"] = r.config.trials;
  j["channels"] = r.config.channels;
  j["seed"] = r.config.seed;
  j["threads"] = r.config.threads;
  Json ks = Json::array();
  for (const auto& k : r.kernels) {
    Json e;
    e["name"] = k.name;
    e["skipped"] = k.skipped;
    if (!k.skipped) {
      e["trials"] = k.trials;
      e["mean_ms"] = k.mean_ms;
      e["median_ms"] = k.median_ms;
      e["min_ms"] = k.min_ms;
      e["checksum"] = k.checksum;
    }
    ks.push_back(e);
  }
  j["kernels"] = ks;
  j["sparse_macs"] = r.sparse_macs;
  j["sparse_mac_bound"] = r.sparse_mac_bound;
  if (r.sparse_dense_max_diff)
    j["sparse_dense_max_diff"] = *r.sparse_dense_max_diff;
  else
    j["sparse_dense_max_diff"] = nullptr;
  return j;
}

}  // namespace hierspx::bench
