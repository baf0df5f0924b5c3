#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "hierspx/clustering.hpp"
#include "hierspx/error.hpp"
#include "hierspx/grid.hpp"
#include "hierspx/parallel.hpp"

namespace hierspx {

struct DecodeOptions {
  unsigned threads = 1;
  // When set, incremented by the number of multiply-adds performed.
  std::size_t* mac_counter = nullptr;
};

// Fine pixel i receives sum_j weight_ij * coarse_j over its stored entries.
// Writes into `out`, reusing its storage when the shape already matches.
// `out` must not alias `coarse`.
inline void decode_once_into(const AssignmentField& field, const FeatureMap& coarse,
                             FeatureMap& out, DecodeOptions opts = {}) {
  if (coarse.dims() != field.seed_dims())
    throw InvalidInput("decode_once: coarse dims " + to_string(coarse.dims()) +
                       " != field seed dims " + to_string(field.seed_dims()));
  std::size_t ch = coarse.channels();
  if (out.dims() != field.fine_dims() || out.channels() != ch)
    out = FeatureMap(field.fine_dims(), ch);
  parallel_for(field.pixels(), opts.threads, [&](std::size_t p0, std::size_t p1) {
    for (std::size_t p = p0; p < p1; ++p) {
      auto ss = field.seeds(p);
      auto ws = field.weights(p);
      double* dst = out.pixel(p).data();
      for (std::size_t c = 0; c < ch; ++c) dst[c] = 0.0;
      for (std::size_t k = 0; k < ss.size(); ++k) {
        const double* src = coarse.pixel(ss[k]).data();
        double w = ws[k];
        for (std::size_t c = 0; c < ch; ++c) dst[c] += w * src[c];
      }
    }
  });
  if (opts.mac_counter) *opts.mac_counter += field.total_entries() * ch;
}

inline FeatureMap decode_once(const AssignmentField& field,
                              const FeatureMap& coarse,
                              DecodeOptions opts = {}) {
  FeatureMap out;
  decode_once_into(field, coarse, out, opts);
  return out;
}

// Assignment fields ordered coarsest boundary first, plus the bilinear factor
// applied after the last (finest) field.
class DecodePlan {
 public:
  using FieldRef = std::reference_wrapper<const AssignmentField>;

  explicit DecodePlan(std::vector<FieldRef> coarse_to_fine,
                      std::size_t final_factor = 1)
      : fields_(std::move(coarse_to_fine)), final_factor_(final_factor) {
    if (final_factor_ == 0)
      throw InvalidInput("DecodePlan: final bilinear factor must be >= 1");
    for (std::size_t l = 0; l + 1 < fields_.size(); ++l) {
      const AssignmentField& coarser = fields_[l];
      const AssignmentField& finer = fields_[l + 1];
      if (coarser.fine_dims() != finer.seed_dims())
        throw InvalidInput("DecodePlan: level " + std::to_string(l) +
                           " fine dims " + to_string(coarser.fine_dims()) +
                           " do not match level " + std::to_string(l + 1) +
                           " seed dims " + to_string(finer.seed_dims()));
    }
  }

  const std::vector<FieldRef>& fields() const noexcept { return fields_; }
  std::size_t final_factor() const noexcept { return final_factor_; }

 private:
  std::vector<FieldRef> fields_;
  std::size_t final_factor_;
};

// Per-level output buffers kept between decodes of the same plan.
struct DecodeWorkspace {
  std::vector<FeatureMap> levels;
  FeatureMap upsampled;
};

// Applies every field in turn (coarse to fine), then the bilinear handoff.
// The product of the assignment matrices is never formed. The result lives
// in `ws` until the next call.
inline const FeatureMap& decode_hierarchy(const DecodePlan& plan,
                                          const FeatureMap& coarsest,
                                          DecodeWorkspace& ws,
                                          DecodeOptions opts = {}) {
  if (!plan.fields().empty() &&
      plan.fields().front().get().seed_dims() != coarsest.dims())
    throw InvalidInput("decode_hierarchy: coarsest map dims " +
                       to_string(coarsest.dims()) +
                       " do not match the deepest field's seed dims");
  ws.levels.resize(plan.fields().size());
  const FeatureMap* current = &coarsest;
  for (std::size_t l = 0; l < plan.fields().size(); ++l) {
    decode_once_into(plan.fields()[l], *current, ws.levels[l], opts);
    current = &ws.levels[l];
  }
  if (plan.final_factor() == 1) {
    if (current == &coarsest) ws.upsampled = coarsest;
    return current == &coarsest ? ws.upsampled : *current;
  }
  ws.upsampled = bilinear_upsample(*current, plan.final_factor());
  return ws.upsampled;
}

inline FeatureMap decode_hierarchy(const DecodePlan& plan,
                                   const FeatureMap& coarsest,
                                   DecodeOptions opts = {}) {
  DecodeWorkspace ws;
  decode_hierarchy(plan, coarsest, ws, opts);
  if (plan.final_factor() == 1 && !ws.levels.empty()) return std::move(ws.levels.back());
  return std::move(ws.upsampled);
}

// Follows per-level argmax winners from the finest pixel down to a seed of the
// coarsest field. Fields ordered coarsest first.
inline LabelMap compose_hard_labels(
    const std::vector<std::reference_wrapper<const AssignmentField>>& fields) {
  if (fields.empty())
    throw InvalidInput("compose_hard_labels: no fields");
  DecodePlan check(fields);  // validates the chain
  (void)check;
  std::vector<LabelMap> winners;
  winners.reserve(fields.size());
  for (const AssignmentField& f : fields) winners.push_back(hard_assign(f).labels);
  LabelMap out = winners.back();
  for (std::size_t l = winners.size() - 1; l-- > 0;)
    for (auto& label : out.labels()) label = winners[l][label];
  return out;
}

}  // namespace hierspx
