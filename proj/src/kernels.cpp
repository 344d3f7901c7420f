#include "poisonrec/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace poisonrec {

int kernel_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

ScoreMatrix predict_matrix_serial(const NeumfModel& model) {
  ScoreMatrix out(model.num_users(), model.num_items());
  for (std::size_t u = 0; u < model.num_users(); ++u) {
    for (std::size_t i = 0; i < model.num_items(); ++i) out(u, i) = forward(model, u, i);
  }
  return out;
}

namespace {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Precomputed halves of the first dense layer: z1(u, i) = user_part[u] + item_part[i].
struct FirstLayerSplit {
  std::size_t width = 0;
  std::vector<double> user_part;  // users x width
  std::vector<double> item_part;  // items x width (bias folded in)
};

FirstLayerSplit split_first_layer(const NeumfModel& model, std::span<const Index> users) {
  const auto& L = model.layout();
  const double* p = model.params().data();
  FirstLayerSplit s;
  if (L.layers.empty()) return s;
  const auto& d = L.layers.front();
  s.width = d.out;
  s.user_part.assign(users.size() * d.out, 0.0);
  s.item_part.assign(L.num_items * d.out, 0.0);
  const double* w = p + d.weight;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(users.size()); ++k) {
    const double* e = p + L.mlp_user + users[static_cast<std::size_t>(k)] * L.mlp_dim;
    for (std::size_t r = 0; r < d.out; ++r) {
      double z = 0.0;
      for (std::size_t c = 0; c < L.mlp_dim; ++c) z += w[r * d.in + c] * e[c];
      s.user_part[static_cast<std::size_t>(k) * d.out + r] = z;
    }
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(L.num_items); ++i) {
    const double* e = p + L.mlp_item + static_cast<std::size_t>(i) * L.mlp_dim;
    for (std::size_t r = 0; r < d.out; ++r) {
      double z = p[d.bias + r];
      for (std::size_t c = 0; c < L.mlp_dim; ++c) z += w[r * d.in + L.mlp_dim + c] * e[c];
      s.item_part[static_cast<std::size_t>(i) * d.out + r] = z;
    }
  }
  return s;
}

void predict_into(const NeumfModel& model, std::span<const Index> users, ScoreMatrix& out) {
  const auto& L = model.layout();
  const double* p = model.params().data();
  const auto split = split_first_layer(model, users);
  const double* h = p + L.out_weight;
  const double bias = p[L.out_bias];

#pragma omp parallel
  {
    std::vector<std::vector<double>> act;
    act.emplace_back(L.layers.empty() ? 2 * L.mlp_dim : L.layers.front().out);
    for (std::size_t l = 1; l < L.layers.size(); ++l) act.emplace_back(L.layers[l].out);

#pragma omp for schedule(static)
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(users.size()); ++k) {
      const std::size_t u = users[static_cast<std::size_t>(k)];
      const double* pu = p + L.mf_user + u * L.mf_dim;
      auto row = out.row(static_cast<std::size_t>(k));
      for (std::size_t i = 0; i < L.num_items; ++i) {
        const double* qi = p + L.mf_item + i * L.mf_dim;
        double logit = bias;
        for (std::size_t c = 0; c < L.mf_dim; ++c) logit += h[c] * pu[c] * qi[c];
        if (L.layers.empty()) {
          const double* mu = p + L.mlp_user + u * L.mlp_dim;
          const double* mi = p + L.mlp_item + i * L.mlp_dim;
          for (std::size_t c = 0; c < L.mlp_dim; ++c) {
            logit += h[L.mf_dim + c] * mu[c] + h[L.mf_dim + L.mlp_dim + c] * mi[c];
          }
        } else {
          const double* up = split.user_part.data() + static_cast<std::size_t>(k) * split.width;
          const double* ip = split.item_part.data() + i * split.width;
          auto& a0 = act[0];
          for (std::size_t r = 0; r < split.width; ++r) {
            const double z = up[r] + ip[r];
            a0[r] = z > 0.0 ? z : 0.0;
          }
          for (std::size_t l = 1; l < L.layers.size(); ++l) {
            const auto& d = L.layers[l];
            const double* w = p + d.weight;
            const auto& in = act[l - 1];
            auto& o = act[l];
            for (std::size_t r = 0; r < d.out; ++r) {
              double z = p[d.bias + r];
              for (std::size_t c = 0; c < d.in; ++c) z += w[r * d.in + c] * in[c];
              o[r] = z > 0.0 ? z : 0.0;
            }
          }
          const auto& last = act.back();
          for (std::size_t c = 0; c < last.size(); ++c) logit += h[L.mf_dim + c] * last[c];
        }
        row[i] = sigmoid(logit);
      }
    }
  }
}

struct ByScore {
  std::span<const double> scores;
  bool operator()(Index a, Index b) const {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  }
};

std::vector<Index> unrated_items(std::size_t n, std::span<const Interaction> rated) {
  std::vector<Index> out;
  out.reserve(n - std::min(n, rated.size()));
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (r < rated.size() && rated[r].item < i) ++r;
    if (r < rated.size() && rated[r].item == i) continue;
    out.push_back(static_cast<Index>(i));
  }
  return out;
}

}  // namespace

ScoreMatrix predict_matrix(const NeumfModel& model) {
  std::vector<Index> users(model.num_users());
  for (std::size_t u = 0; u < users.size(); ++u) users[u] = static_cast<Index>(u);
  return predict_rows(model, users);
}

ScoreMatrix predict_rows(const NeumfModel& model, std::span<const Index> users) {
  for (Index u : users) {
    if (u >= model.num_users()) throw std::out_of_range("predict_rows: user index out of range");
  }
  ScoreMatrix out(users.size(), model.num_items());
  predict_into(model, users, out);
  return out;
}

std::vector<Index> top_k_row(std::span<const double> scores, std::span<const Interaction> rated, std::size_t k) {
  auto cand = unrated_items(scores.size(), rated);
  const std::size_t take = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(), ByScore{scores});
  cand.resize(take);
  return cand;
}

std::vector<Index> top_k_row_serial(std::span<const double> scores, std::span<const Interaction> rated,
                                    std::size_t k) {
  std::vector<Index> cand;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    bool is_rated = false;
    for (const auto& e : rated) is_rated = is_rated || e.item == i;
    if (!is_rated) cand.push_back(static_cast<Index>(i));
  }
  std::sort(cand.begin(), cand.end(), ByScore{scores});
  if (cand.size() > k) cand.resize(k);
  return cand;
}

std::vector<std::vector<Index>> top_k_all(const ScoreMatrix& scores, const InteractionMatrix& rated, std::size_t users,
                                          std::size_t k) {
  std::vector<std::vector<Index>> out(users);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t u = 0; u < static_cast<std::ptrdiff_t>(users); ++u) {
    const auto uu = static_cast<std::size_t>(u);
    out[uu] = top_k_row(scores.row(uu), rated.row(uu), k);
  }
  return out;
}

std::vector<std::vector<Index>> top_k_all_serial(const ScoreMatrix& scores, const InteractionMatrix& rated,
                                                 std::size_t users, std::size_t k) {
  std::vector<std::vector<Index>> out(users);
  for (std::size_t u = 0; u < users; ++u) out[u] = top_k_row_serial(scores.row(u), rated.row(u), k);
  return out;
}

}  // namespace poisonrec
