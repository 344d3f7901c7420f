#include "poisonrec/recsys.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace poisonrec {

std::vector<RecommendationList> top_k(const ScoreMatrix& predictions, const InteractionMatrix& train, std::size_t k) {
  if (k == 0) throw Error("top_k: K must be >= 1");
  if (predictions.rows() < train.num_normal_users() || predictions.cols() != train.num_items()) {
    throw Error("top_k: prediction matrix does not cover the training matrix");
  }
  const std::size_t users = train.num_normal_users();
  auto items = top_k_all(predictions, train, users, k);
  std::vector<RecommendationList> out(users);
  for (std::size_t u = 0; u < users; ++u) {
    out[u].user = static_cast<Index>(u);
    out[u].items = std::move(items[u]);
    for (Index i : out[u].items) out[u].scores.push_back(predictions(u, i));
  }
  return out;
}

double hit_ratio(std::span<const RecommendationList> lists, Index target, const InteractionMatrix& train) {
  std::size_t eligible = 0, hits = 0;
  for (const auto& list : lists) {
    if (list.user >= train.num_normal_users()) continue;
    if (train.has(list.user, target)) continue;
    ++eligible;
    if (std::find(list.items.begin(), list.items.end(), target) != list.items.end()) ++hits;
  }
  if (eligible == 0) throw Error("hit_ratio: no normal user is eligible for target " + std::to_string(target));
  return static_cast<double>(hits) / static_cast<double>(eligible);
}

std::vector<double> hit_ratios(const ScoreMatrix& predictions, const InteractionMatrix& train,
                               std::span<const Index> targets, std::size_t k) {
  const auto lists = top_k(predictions, train, k);
  std::vector<double> out;
  out.reserve(targets.size());
  for (Index t : targets) out.push_back(hit_ratio(lists, t, train));
  return out;
}

namespace {

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Population standard deviation.
double std_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

HitRatioReport evaluate_hr(const InteractionMatrix& matrix, const NeumfConfig& cfg, std::span<const Index> targets,
                           std::size_t k, std::size_t runs) {
  if (runs == 0) throw Error("evaluate_hr: runs must be >= 1");
  if (targets.empty()) throw Error("evaluate_hr: no targets");
  HitRatioReport report;
  report.targets.assign(targets.begin(), targets.end());
  report.runs = runs;
  report.per_run.assign(runs, {});

  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(runs); ++r) {
    try {
      NeumfConfig run_cfg = cfg;
      run_cfg.seed = mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(r));
      const auto trained = train(matrix, run_cfg);
      const auto predictions = predict_matrix(trained.model);
      report.per_run[static_cast<std::size_t>(r)] = hit_ratios(predictions, matrix, targets, k);
    } catch (...) {
#pragma omp critical
      failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t t = 0; t < targets.size(); ++t) {
    std::vector<double> values;
    for (const auto& run : report.per_run) values.push_back(run[t]);
    report.per_target.push_back(mean_of(values));
    report.per_target_run_std.push_back(std_of(values));
  }
  report.mean_hr = mean_of(report.per_target);
  report.std_hr = std_of(report.per_target);
  return report;
}

std::vector<HitRatioRow> report_rows(const HitRatioReport& report, const std::string& dataset,
                                     const std::string& attack, double attack_size, std::size_t k,
                                     const std::string& target_kind) {
  std::vector<HitRatioRow> rows;
  for (std::size_t t = 0; t < report.targets.size(); ++t) {
    rows.push_back({dataset, attack, attack_size, k, target_kind, static_cast<std::int64_t>(report.targets[t]),
                    report.per_target[t], report.per_target_run_std[t], report.runs});
  }
  rows.push_back({dataset, attack, attack_size, k, target_kind, -1, report.mean_hr, report.std_hr, report.runs});
  return rows;
}

void write_hit_ratio_csv(std::ostream& out, std::span<const HitRatioRow> rows) {
  out << "dataset,attack,attack_size,K,target_kind,target_id,mean_hr,std_hr,runs\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.dataset << ',' << r.attack << ',' << r.attack_size << ',' << r.k << ',' << r.target_kind << ','
        << r.target_id << ',' << r.mean_hr << ',' << r.std_hr << ',' << r.runs << '\n';
  }
}

}  // namespace poisonrec
