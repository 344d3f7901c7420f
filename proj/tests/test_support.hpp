#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "poisonrec/dataset.hpp"
#include "poisonrec/neumf.hpp"

#ifndef POISONREC_DATA_DIR
#define POISONREC_DATA_DIR "data"
#endif

namespace poisonrec::test {

inline std::filesystem::path data_dir() { return POISONREC_DATA_DIR; }
inline std::filesystem::path ml100k_path() { return data_dir() / "ml-100k" / "u.data"; }
inline bool has_ml100k() { return std::filesystem::exists(ml100k_path()); }

/// Every user gets at least one rating; explicit scores are integers in [1, 5].
inline InteractionMatrix random_matrix(std::size_t users, std::size_t items, double density, DatasetKind kind,
                                       std::uint64_t seed) {
  auto rng = make_rng(seed, 900);
  std::vector<Triplet> t;
  for (std::size_t u = 0; u < users; ++u) {
    bool any = false;
    for (std::size_t i = 0; i < items; ++i) {
      if (uniform_real(rng) < density) {
        t.push_back({static_cast<Index>(u), static_cast<Index>(i), 1.0 + static_cast<double>(uniform_index(rng, 5)),
                     kNoTimestamp});
        any = true;
      }
    }
    if (!any) {
      t.push_back({static_cast<Index>(u), static_cast<Index>(uniform_index(rng, items)),
                   1.0 + static_cast<double>(uniform_index(rng, 5)), kNoTimestamp});
    }
  }
  return InteractionMatrix::from_triplets(users, items, kind == DatasetKind::implicit ? 1.0 : 5.0, kind, t);
}

/// Largest |a - n| / max(|a|, |n|, floor) over all parameters, where n is the
/// central difference of `loss` with step h.
template <typename LossFn>
double max_relative_gradient_error(NeumfModel model, const std::vector<double>& analytic, LossFn loss,
                                   double h = 1e-4, double floor = 1e-6) {
  double worst = 0.0;
  auto params = model.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = params[k];
    params[k] = saved + h;
    const double up = loss(model);
    params[k] = saved - h;
    const double down = loss(model);
    params[k] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[k] - numeric) / denom);
  }
  return worst;
}

}  // namespace poisonrec::test
