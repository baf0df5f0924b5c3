#pragma once

// Finite-difference verification of every hand-written adjoint. Used by the
// `gradcheck` CLI verb and the test suites.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hierspx/bench.hpp"
#include "hierspx/clustering.hpp"
#include "hierspx/decode.hpp"
#include "hierspx/gradients.hpp"
#include "hierspx/grid.hpp"
#include "hierspx/io.hpp"
#include "hierspx/toy_fcn.hpp"

namespace hierspx::gradcheck {

inline constexpr double kThreshold = 1e-5;

struct Entry {
  std::string operation;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

inline FeatureMap random_map(Dims d, std::size_t ch, std::mt19937_64& rng,
                             double lo = -1.0, double hi = 1.0) {
  FeatureMap m(d, ch);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : m.data()) v = u(rng);
  return m;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Matrix m(r, c);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : m.data()) v = u(rng);
  return m;
}

// Linear functional sum(r * y) of a map y, with r fixed.
inline double dot(const FeatureMap& a, const FeatureMap& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

inline Entry check(const std::string& name, const ScalarFunction& fn,
                   const std::vector<double>& analytic,
                   const std::vector<double>& point, double eps) {
  FiniteDiffReport r = finite_diff_check(fn, analytic, point, eps);
  return {name, r.max_rel_error, point.size()};
}

// decode_once adjoints on a random 6x6 / 3x3 instance.
inline std::vector<Entry> check_decode(std::mt19937_64& rng, double eps) {
  Dims fine{6, 6};
  AssignmentField field = bench::random_field(fine, rng);
  FeatureMap coarse = random_map(half_dims(fine), 3, rng);
  FeatureMap r = random_map(fine, 3, rng);
  DecodeAdjoint adj = backward_decode(field, coarse, r);

  std::vector<Entry> out;
  out.push_back(check(
      "backward_decode.coarse",
      [&](std::span<const double> x) {
        FeatureMap c = coarse;
        std::copy(x.begin(), x.end(), c.data().begin());
        return dot(decode_once(field, c), r);
      },
      adj.d_coarse.data(), coarse.data(), eps));

  // Perturb raw weights slot by slot (no renormalisation).
  std::vector<std::size_t> slots;
  for (std::size_t p = 0; p < field.pixels(); ++p)
    for (std::size_t k = 0; k < field.count(p); ++k) slots.push_back(p * kMaxCandidates + k);
  std::vector<double> point, analytic;
  for (auto s : slots) {
    point.push_back(field.raw_weights()[s]);
    analytic.push_back(adj.d_weight[s]);
  }
  out.push_back(check(
      "backward_decode.weights",
      [&](std::span<const double> x) {
        AssignmentField f = field;
        for (std::size_t i = 0; i < slots.size(); ++i) f.raw_weights()[slots[i]] = x[i];
        return dot(decode_once(f, coarse), r);
      },
      analytic, point, eps));
  return out;
}

// soft_assign adjoints for the objective sum(r_ij * w_ij) in one similarity mode.
inline std::vector<Entry> check_soft_assign(std::mt19937_64& rng, double eps,
                                            Similarity mode) {
  Dims fine{6, 6};
  FeatureMap x = random_map(fine, 4, rng);
  SeedGrid seeds{random_map(half_dims(fine), 5, rng)};
  ProjectionPair proj{random_matrix(3, 4, rng), random_matrix(3, 5, rng)};
  ClusteringConfig cfg;
  cfg.k_dim = 3;
  cfg.similarity = mode;
  cfg.tau = mode == Similarity::cosine ? kDefaultTau : 1.0;
  std::vector<double> r(fine.pixels() * kMaxCandidates);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : r) v = u(rng);

  auto objective = [&](const FeatureMap& xf, const SeedGrid& sg,
                       const ProjectionPair& pp) {
    AssignmentField f = soft_assign(xf, sg, pp, cfg);
    double s = 0.0;
    for (std::size_t p = 0; p < f.pixels(); ++p) {
      auto ws = f.weights(p);
      for (std::size_t k = 0; k < ws.size(); ++k) s += r[p * kMaxCandidates + k] * ws[k];
    }
    return s;
  };
  SoftAssignAdjoint adj = backward_soft_assign(x, seeds, proj, cfg, r);
  std::string prefix = std::string("backward_soft_assign") +
                       (mode == Similarity::cosine ? "" : "[nse]");
  std::vector<Entry> out;
  out.push_back(check(prefix + ".fine",
                      [&](std::span<const double> v) {
                        FeatureMap xf = x;
                        std::copy(v.begin(), v.end(), xf.data().begin());
                        return objective(xf, seeds, proj);
                      },
                      adj.d_fine.data(), x.data(), eps));
  out.push_back(check(prefix + ".seeds",
                      [&](std::span<const double> v) {
                        SeedGrid sg = seeds;
                        std::copy(v.begin(), v.end(), sg.features.data().begin());
                        return objective(x, sg, proj);
                      },
                      adj.d_seeds.data(), seeds.features.data(), eps));
  out.push_back(check(prefix + ".w_fine",
                      [&](std::span<const double> v) {
                        ProjectionPair pp = proj;
                        std::copy(v.begin(), v.end(), pp.w_fine.data().begin());
                        return objective(x, seeds, pp);
                      },
                      adj.d_w_fine.data(), proj.w_fine.data(), eps));
  out.push_back(check(prefix + ".w_seed",
                      [&](std::span<const double> v) {
                        ProjectionPair pp = proj;
                        std::copy(v.begin(), v.end(), pp.w_seed.data().begin());
                        return objective(x, seeds, pp);
                      },
                      adj.d_w_seed.data(), proj.w_seed.data(), eps));
  return out;
}

// Entropy of the soft field as a function of both projection matrices.
inline Entry check_assignment_entropy(std::mt19937_64& rng, double eps) {
  Dims fine{6, 6};
  FeatureMap x = random_map(fine, 4, rng);
  SeedGrid seeds{random_map(half_dims(fine), 4, rng)};
  ProjectionPair proj{random_matrix(3, 4, rng), random_matrix(3, 4, rng)};
  ClusteringConfig cfg;
  cfg.k_dim = 3;
  cfg.tau = 0.5;

  auto entropy_and_upstream = [&](const ProjectionPair& pp, std::vector<double>* up) {
    AssignmentField f = soft_assign(x, seeds, pp, cfg);
    double h = 0.0;
    if (up) up->assign(f.pixels() * kMaxCandidates, 0.0);
    for (std::size_t p = 0; p < f.pixels(); ++p) {
      auto ws = f.weights(p);
      for (std::size_t k = 0; k < ws.size(); ++k) {
        h -= ws[k] * std::log(ws[k]);
        if (up) (*up)[p * kMaxCandidates + k] = -(std::log(ws[k]) + 1.0);
      }
    }
    return h;
  };
  std::vector<double> up;
  entropy_and_upstream(proj, &up);
  SoftAssignAdjoint adj = backward_soft_assign(x, seeds, proj, cfg, up);
  std::vector<double> point = proj.w_fine.data(), analytic = adj.d_w_fine.data();
  point.insert(point.end(), proj.w_seed.data().begin(), proj.w_seed.data().end());
  analytic.insert(analytic.end(), adj.d_w_seed.data().begin(), adj.d_w_seed.data().end());
  std::size_t nf = proj.w_fine.data().size();
  return check("soft_assign_entropy.projections",
               [&](std::span<const double> v) {
                 ProjectionPair pp = proj;
                 std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(nf),
                           pp.w_fine.data().begin());
                 std::copy(v.begin() + static_cast<std::ptrdiff_t>(nf), v.end(),
                           pp.w_seed.data().begin());
                 return entropy_and_upstream(pp, nullptr);
               },
               analytic, point, eps);
}

inline Entry check_bilinear(std::mt19937_64& rng, double eps) {
  FeatureMap coarse = random_map({3, 4}, 2, rng);
  FeatureMap r = random_map({12, 16}, 2, rng);
  FeatureMap g = bilinear_upsample_backward(r, coarse.dims(), 4);
  return check("bilinear_upsample_backward",
               [&](std::span<const double> v) {
                 FeatureMap c = coarse;
                 std::copy(v.begin(), v.end(), c.data().begin());
                 return dot(bilinear_upsample(c, 4), r);
               },
               g.data(), coarse.data(), eps);
}

// Full network loss w.r.t. every parameter on an 8x8 input.
inline Entry check_toy_fcn(std::mt19937_64& rng, double eps, toy::Decoder mode) {
  toy::ToyNetParams params = toy::ToyNetParams::init({}, rng());
  FeatureMap image = random_map({8, 8}, 3, rng, 0.0, 1.0);
  LabelMap labels(8, 8);
  std::uniform_int_distribution<std::uint32_t> cls(0, toy::kClasses - 1);
  for (auto& l : labels.labels()) l = cls(rng);
  toy::LossGrad lg = toy::loss_and_grad(params, image, labels, mode);
  toy::ToyNetParams probe = params;
  return check(std::string("toy_fcn.loss[") + toy::to_string(mode) + "]",
               [&](std::span<const double> v) {
                 probe.assign(v);
                 return toy::loss_only(probe, image, labels, mode);
               },
               lg.grad.flatten(), params.flatten(), eps);
}

inline std::vector<Entry> run_all(std::uint64_t seed, double eps = 1e-6) {
  std::mt19937_64 rng(seed);
  std::vector<Entry> out = check_decode(rng, eps);
  for (auto& e : check_soft_assign(rng, eps, Similarity::cosine)) out.push_back(e);
  for (auto& e : check_soft_assign(rng, eps, Similarity::neg_sq_euclidean)) out.push_back(e);
  out.push_back(check_assignment_entropy(rng, eps));
  out.push_back(check_bilinear(rng, eps));
  out.push_back(check_toy_fcn(rng, eps, toy::Decoder::cluster));
  out.push_back(check_toy_fcn(rng, eps, toy::Decoder::bilinear));
  return out;
}

inline Json to_json(const std::vector<Entry>& entries, std::uint64_t seed,
                    double eps, double threshold = kThreshold) {
  Json j;
  j["seed"] = seed;
  j["eps"] = eps;
  j["threshold"] = threshold;
  Json ops = Json::array();
  bool pass = true;
  for (const auto& e : entries) {
    Json o;
    o["operation"] = e.operation;
    o["max_rel_error"] = e.max_rel_error;
    o["coordinates"] = e.coordinates;
    o["pass"] = e.max_rel_error < threshold;
    pass = pass && e.max_rel_error < threshold;
    ops.push_back(o);
  }
  j["operations"] = ops;
  j["pass"] = pass;
  return j;
}

}  // namespace hierspx::gradcheck
