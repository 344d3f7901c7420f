#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "poisonrec/dataset.hpp"
#include "poisonrec/kernels.hpp"
#include "poisonrec/neumf.hpp"

namespace poisonrec {

struct RecommendationList {
  Index user = 0;
  std::vector<Index> items;
  std::vector<double> scores;
};

/// Top-K unrated items for every normal user (fake rows are never listed).
/// Ties go to the lower item index, so top-K is a prefix of top-(K+1).
std::vector<RecommendationList> top_k(const ScoreMatrix& predictions, const InteractionMatrix& train, std::size_t k);

/// HR_t: among normal users who have not rated `target`, the fraction whose
/// list contains it. Throws when no such user exists.
double hit_ratio(std::span<const RecommendationList> lists, Index target, const InteractionMatrix& train);

struct HitRatioReport {
  std::vector<Index> targets;
  /// Run-averaged HR per target (same order as targets).
  std::vector<double> per_target;
  /// Standard deviation over runs, per target (0 when runs == 1).
  std::vector<double> per_target_run_std;
  /// Raw values, runs x targets.
  std::vector<std::vector<double>> per_run;
  double mean_hr = 0.0;
  /// Standard deviation of per_target across targets.
  double std_hr = 0.0;
  std::size_t runs = 0;
};

/// Trains `runs` independently seeded models (seed derived from cfg.seed and the
/// run index) on `matrix` and measures HR_t@K for each target over normal users.
/// Runs are independent and execute in parallel when OpenMP has threads.
HitRatioReport evaluate_hr(const InteractionMatrix& matrix, const NeumfConfig& cfg, std::span<const Index> targets,
                           std::size_t k, std::size_t runs);

/// HR_t for each target from one prediction matrix.
std::vector<double> hit_ratios(const ScoreMatrix& predictions, const InteractionMatrix& train,
                               std::span<const Index> targets, std::size_t k);

struct HitRatioRow {
  std::string dataset;
  std::string attack;
  double attack_size = 0.0;
  std::size_t k = 0;
  std::string target_kind;
  std::int64_t target_id = -1;  // -1 for the per-kind aggregate row
  double mean_hr = 0.0;
  double std_hr = 0.0;
  std::size_t runs = 0;
};

/// CSV with columns dataset,attack,attack_size,K,target_kind,target_id,mean_hr,std_hr,runs.
/// Emits one row per target plus an aggregate row (target_id -1).
std::vector<HitRatioRow> report_rows(const HitRatioReport& report, const std::string& dataset,
                                     const std::string& attack, double attack_size, std::size_t k,
                                     const std::string& target_kind);
void write_hit_ratio_csv(std::ostream& out, std::span<const HitRatioRow> rows);

}  // namespace poisonrec
