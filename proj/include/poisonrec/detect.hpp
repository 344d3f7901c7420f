#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "poisonrec/attack.hpp"
#include "poisonrec/dataset.hpp"

namespace poisonrec {

struct UserFeatures {
  double rdma = 0.0, wda = 0.0, wdma = 0.0, meanvar = 0.0, fmtd = 0.0;

  static constexpr std::size_t size = 5;
  std::array<double, size> to_array() const { return {rdma, wda, wdma, meanvar, fmtd}; }
  static UserFeatures from_array(const std::array<double, size>& a) { return {a[0], a[1], a[2], a[3], a[4]}; }
  friend bool operator==(const UserFeatures&, const UserFeatures&) = default;
};

/// Rating-statistics features of one user against the item means and counts of
/// the whole matrix. FMTD compares the user's maximum-scored items with the
/// rest; with no "rest" the second mean is 0. Throws for a user with no ratings.
UserFeatures extract_features(const InteractionMatrix& matrix, std::size_t user);

/// Features for every user (users without ratings get all zeros). Item
/// statistics are computed once and users are processed in parallel.
std::vector<UserFeatures> extract_all_features(const InteractionMatrix& matrix);
/// Reference: extract_features() per user.
std::vector<UserFeatures> extract_all_features_serial(const InteractionMatrix& matrix);

/// Per-feature standardization fitted on a training set.
struct FeatureScaler {
  std::array<double, UserFeatures::size> mean{}, scale{};
  std::vector<std::string> warnings;

  std::array<double, UserFeatures::size> transform(const UserFeatures& f) const;
  UserFeatures inverse(const std::array<double, UserFeatures::size>& x) const;
};

/// Zero-variance columns keep scale 1 (and add a warning). Throws on empty input.
FeatureScaler scale_features(std::span<const UserFeatures> train);

struct DetectionConfig {
  double tau_fraction = 0.004;
  std::size_t training_pairs = 300;
  std::size_t cv_folds = 5;
  std::vector<double> svm_grid{0.01, 0.1, 1.0, 10.0, 100.0};
  std::size_t max_epochs = 1000;
  std::uint64_t seed = 0;
};

using FeatureVector = std::array<double, UserFeatures::size>;

struct LinearSvm {
  FeatureVector weights{};
  double bias = 0.0;
  double c = 1.0;
  double cv_accuracy = 0.0;

  double decision(const FeatureVector& x) const;
  bool predict(const FeatureVector& x) const { return decision(x) > 0.0; }
};

/// Soft-margin linear SVM (hinge loss) for one regularization constant, trained
/// by dual coordinate descent; the bias is learned as an extra constant feature.
LinearSvm fit_linear_svm(std::span<const FeatureVector> x, std::span<const int> labels, double c,
                         std::size_t max_epochs, std::uint64_t seed);

/// Stratified k-fold grid search over cfg.svm_grid (ties keep the smaller C),
/// then a final fit on all data. Labels are 1 (fake) / 0 (normal).
LinearSvm train_svm(std::span<const FeatureVector> x, std::span<const int> labels, const DetectionConfig& cfg);

struct TiaResult {
  std::size_t tau = 0;
  std::vector<Index> flagged_targets;
  std::vector<Index> predicted_fake;
};

/// Items max-rated (score == r_max) by more than tau = ceil(tau_fraction *
/// normal_count) suspicious users are flagged; suspicious users who max-rated
/// a flagged item are predicted fake.
TiaResult tia_phase(std::span<const Index> suspicious, const InteractionMatrix& matrix, double tau_fraction,
                    std::size_t normal_count);

/// Labeled training set: `pairs` fake profiles injected into the clean matrix
/// plus `pairs` normal users sampled without replacement.
struct DetectionFixture {
  std::vector<UserFeatures> features;
  std::vector<int> labels;
};
DetectionFixture build_fixture(const InteractionMatrix& clean, std::span<const FakeUserProfile> fakes,
                               std::size_t pairs, std::uint64_t seed);

struct DetectionReport {
  std::vector<Index> suspicious_after_svm;
  std::vector<Index> flagged_targets;
  std::vector<Index> predicted_fake;
  double fpr_svm = 0.0;
  std::optional<double> fnr_svm;
  double fpr = 0.0;
  std::optional<double> fnr;  // empty when no fake users were present
  std::size_t tau = 0;
  double svm_c = 0.0;
  double cv_accuracy = 0.0;
};

/// SVM phase trained on the fixture (scaler fitted there too), applied to every
/// user of the matrix, then TIA with the normal-user count.
DetectionReport run_detection(const InteractionMatrix& matrix_with_fakes, std::span<const Index> true_fakes,
                              const DetectionFixture& fixture, const DetectionConfig& cfg);

/// Drops every predicted-fake user and re-indexes.
InteractionMatrix filter_matrix(const InteractionMatrix& matrix_with_fakes, const DetectionReport& report);

struct DetectionRow {
  std::string attack;
  double attack_size = 0.0;
  DetectionReport report;
};
/// Columns attack,attack_size,fpr_svm,fnr_svm,fpr_tia,fnr_tia ("n/a" when undefined).
void write_detection_csv(std::ostream& out, std::span<const DetectionRow> rows);

}  // namespace poisonrec
