#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "poisonrec/attack.hpp"
#include "poisonrec/dataset.hpp"
#include "poisonrec/detect.hpp"
#include "poisonrec/neumf.hpp"

namespace poisonrec {

enum class TargetKind { random, unpopular };
enum class AttackKind { none, ours, random, bandwagon, mf };
enum class KnowledgeMode { full, partial_ratings, partial_users };

std::string to_string(TargetKind k);
std::string to_string(AttackKind k);
std::string to_string(KnowledgeMode k);
TargetKind parse_target_kind(const std::string& s);
AttackKind parse_attack_kind(const std::string& s);
KnowledgeMode parse_knowledge_mode(const std::string& s);

/// Items with fewer ratings than this count as unpopular: 6 for ml-100k, 10
/// for ml-1m, 12 for lastfm, 6 otherwise.
std::size_t default_unpopular_threshold(const std::string& dataset_format);

/// Uniform sample without replacement from the whole item set (random) or from
/// the items with fewer than `threshold` ratings (unpopular).
std::vector<Index> sample_targets(const InteractionMatrix& matrix, TargetKind kind, std::size_t count,
                                  std::size_t threshold, std::uint64_t seed);

/// Attacker's view of the data. partial_ratings keeps each rating with
/// probability `fraction`; partial_users keeps every rating of a uniform
/// round(fraction * M) sample of users.
InteractionMatrix restrict_knowledge(const InteractionMatrix& matrix, KnowledgeMode mode, double fraction,
                                     std::uint64_t seed);

struct ExperimentPlan {
  std::string name = "plan";
  std::filesystem::path dataset_path;
  std::string dataset_format = "ml-100k";
  std::size_t k_core = 0;

  std::vector<AttackKind> attack_kinds{AttackKind::none, AttackKind::ours, AttackKind::random,
                                       AttackKind::bandwagon, AttackKind::mf};
  std::vector<double> attack_sizes{0.03, 0.05};
  std::vector<std::size_t> k_values{10};
  std::vector<std::size_t> n_values{30};
  std::vector<double> delta_values{0.9};
  std::vector<TargetKind> target_kinds{TargetKind::random, TargetKind::unpopular};
  std::size_t targets_count = 3;
  std::optional<std::size_t> unpopular_threshold;
  std::size_t runs = 5;

  KnowledgeMode knowledge = KnowledgeMode::full;
  double knowledge_fraction = 1.0;

  /// Victim / baseline architecture and training settings.
  NeumfConfig neumf;
  /// Poison-model architecture; empty means the victim's.
  std::vector<std::size_t> surrogate_mlp_dims;
  std::vector<std::size_t> victim_mlp_dims;
  /// Without explicit victim dims, the victim gets one more MLP layer than the
  /// surrogate (half the width of its last layer).
  bool gray_box = false;

  /// Shared attack knobs (kappa, eta, lambda, s, epochs, include_target_by_default);
  /// target, m, n, K and delta come from the plan axes.
  AttackConfig attack;
  MfAttackConfig mf;

  std::optional<DetectionConfig> detection;
  std::size_t detection_fixture_s = 10;

  std::size_t workers = 1;
  std::uint64_t seed = 0;

  void validate() const;
  NeumfConfig victim_config() const;
  NeumfConfig surrogate_config() const;
};

/// Flat `key = value` plan file with comma-separated lists. Unknown keys are
/// an error. See the README for the schema.
ExperimentPlan parse_plan(std::istream& in, const std::string& source = "<plan>");
ExperimentPlan load_plan(const std::filesystem::path& path);

struct ResultRow {
  std::string dataset;
  std::string attack;
  double attack_size = 0.0;
  std::size_t k = 10;
  std::size_t n = 0;
  double delta = 0.0;
  std::string target_kind;
  std::string knowledge;
  double knowledge_fraction = 1.0;
  std::string surrogate;  // mlp dims joined by '-'
  std::string victim;
  std::vector<Index> targets;
  std::vector<double> per_target_hr;
  double mean_hr = 0.0;
  double std_hr = 0.0;
  std::size_t runs = 0;
  std::size_t promoted_count = 0;
  std::optional<double> fpr;
  std::optional<double> fnr;
  std::string error;

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

/// Per-target no-attack HR keyed by (K, victim architecture, runs, seed, target).
using BaselineKey = std::tuple<std::size_t, std::string, std::size_t, std::uint64_t, Index>;
using BaselineCache = std::map<BaselineKey, double>;

/// Crafted fake users keyed by everything that determines them except the
/// count; a shorter request takes a prefix when that matches a fresh run.
using CampaignCache = std::map<std::string, std::vector<FakeUserProfile>>;

using LogFn = std::function<void(const std::string&)>;

/// Runs every cell of the plan. HR is always measured on the full matrix; the
/// attack sees the knowledge-restricted one. Failed cells carry the message in
/// `error` and the plan continues. Rows come back sorted.
std::vector<ResultRow> run_plan(const ExperimentPlan& plan, const InteractionMatrix& full, BaselineCache* cache = nullptr,
                                const LogFn& log = {}, CampaignCache* campaigns = nullptr);
std::vector<ResultRow> run_plan(const ExperimentPlan& plan, const LogFn& log = {});

enum class ReportFormat { csv, markdown };
ReportFormat parse_report_format(const std::string& s);

void write_results_csv(std::ostream& out, std::span<const ResultRow> rows);
std::vector<ResultRow> read_results_csv(std::istream& in);
/// One table per (K, n, delta, knowledge, surrogate, victim, detection): rows dataset x
/// attack, columns target kind x attack size.
void write_results_markdown(std::ostream& out, std::span<const ResultRow> rows);
void emit_report(std::span<const ResultRow> rows, ReportFormat format, const std::filesystem::path& path);

/// `<root>/run-YYYYmmdd-HHMMSS[-k]`, created.
std::filesystem::path make_run_directory(const std::filesystem::path& root);

}  // namespace poisonrec
