#include "poisonrec/detect.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

namespace poisonrec {

namespace {

struct ItemMoments {
  std::vector<double> mean;
  std::vector<std::uint32_t> count;
};

ItemMoments item_moments(const InteractionMatrix& matrix) {
  ItemMoments m{std::vector<double>(matrix.num_items(), 0.0), std::vector<std::uint32_t>(matrix.num_items(), 0)};
  for (std::size_t u = 0; u < matrix.num_users(); ++u) {
    for (const auto& e : matrix.row(u)) {
      m.mean[e.item] += e.score;
      ++m.count[e.item];
    }
  }
  for (std::size_t i = 0; i < m.mean.size(); ++i) {
    if (m.count[i] > 0) m.mean[i] /= m.count[i];
  }
  return m;
}

UserFeatures features_from(std::span<const Interaction> row, const ItemMoments& items) {
  UserFeatures f;
  double top = -INFINITY;
  for (const auto& e : row) top = std::max(top, e.score);
  double max_sum = 0.0, other_sum = 0.0;
  std::size_t max_n = 0, other_n = 0;
  for (const auto& e : row) {
    const double dev = e.score - items.mean[e.item];
    const double c = items.count[e.item];
    f.wda += std::abs(dev) / c;
    f.wdma += std::abs(dev) / (c * c);
    f.meanvar += dev * dev;
    if (e.score == top) {
      max_sum += e.score;
      ++max_n;
    } else {
      other_sum += e.score;
      ++other_n;
    }
  }
  const double n = static_cast<double>(row.size());
  f.rdma = f.wda / n;
  f.wdma /= n;
  f.meanvar /= n;
  f.fmtd = std::abs(max_sum / static_cast<double>(max_n) - (other_n > 0 ? other_sum / static_cast<double>(other_n) : 0.0));
  return f;
}

}  // namespace

UserFeatures extract_features(const InteractionMatrix& matrix, std::size_t user) {
  if (user >= matrix.num_users()) throw std::out_of_range("extract_features: user out of range");
  const auto row = matrix.row(user);
  if (row.empty()) throw Error("extract_features: user " + std::to_string(user) + " has no ratings");
  return features_from(row, item_moments(matrix));
}

std::vector<UserFeatures> extract_all_features(const InteractionMatrix& matrix) {
  const auto items = item_moments(matrix);
  std::vector<UserFeatures> out(matrix.num_users());
#pragma omp parallel for schedule(dynamic, 32)
  for (std::ptrdiff_t u = 0; u < static_cast<std::ptrdiff_t>(out.size()); ++u) {
    const auto row = matrix.row(static_cast<std::size_t>(u));
    if (!row.empty()) out[static_cast<std::size_t>(u)] = features_from(row, items);
  }
  return out;
}

std::vector<UserFeatures> extract_all_features_serial(const InteractionMatrix& matrix) {
  std::vector<UserFeatures> out(matrix.num_users());
  for (std::size_t u = 0; u < out.size(); ++u) {
    if (!matrix.row(u).empty()) out[u] = extract_features(matrix, u);
  }
  return out;
}

FeatureVector FeatureScaler::transform(const UserFeatures& f) const {
  auto x = f.to_array();
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = (x[j] - mean[j]) / scale[j];
  return x;
}

UserFeatures FeatureScaler::inverse(const FeatureVector& x) const {
  FeatureVector a;
  for (std::size_t j = 0; j < a.size(); ++j) a[j] = x[j] * scale[j] + mean[j];
  return UserFeatures::from_array(a);
}

FeatureScaler scale_features(std::span<const UserFeatures> train) {
  if (train.empty()) throw Error("scale_features: empty training set");
  static const char* names[] = {"rdma", "wda", "wdma", "meanvar", "fmtd"};
  FeatureScaler s;
  const double n = static_cast<double>(train.size());
  for (const auto& f : train) {
    const auto a = f.to_array();
    for (std::size_t j = 0; j < a.size(); ++j) s.mean[j] += a[j];
  }
  for (auto& m : s.mean) m /= n;
  std::array<double, UserFeatures::size> var{};
  for (const auto& f : train) {
    const auto a = f.to_array();
    for (std::size_t j = 0; j < a.size(); ++j) var[j] += (a[j] - s.mean[j]) * (a[j] - s.mean[j]);
  }
  for (std::size_t j = 0; j < var.size(); ++j) {
    const double sd = std::sqrt(var[j] / n);
    if (sd > 0.0) {
      s.scale[j] = sd;
    } else {
      s.scale[j] = 1.0;
      s.warnings.push_back(std::string("feature ") + names[j] + " has zero variance");
    }
  }
  return s;
}

double LinearSvm::decision(const FeatureVector& x) const {
  double z = bias;
  for (std::size_t j = 0; j < x.size(); ++j) z += weights[j] * x[j];
  return z;
}

LinearSvm fit_linear_svm(std::span<const FeatureVector> x, std::span<const int> labels, double c,
                         std::size_t max_epochs, std::uint64_t seed) {
  if (x.size() != labels.size()) throw Error("svm: features and labels differ in length");
  if (x.empty()) throw Error("svm: empty training set");
  constexpr std::size_t d = UserFeatures::size;
  const std::size_t n = x.size();
  std::vector<double> alpha(n, 0.0), qii(n), y(n);
  std::array<double, d + 1> w{};
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = labels[i] == 1 ? 1.0 : -1.0;
    qii[i] = 1.0;
    for (double v : x[i]) qii[i] += v * v;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, 51);
  for (std::size_t epoch = 0; epoch < max_epochs; ++epoch) {
    shuffle(order, rng);
    double pg_max = -INFINITY, pg_min = INFINITY;
    for (std::size_t i : order) {
      double wx = w[d];
      for (std::size_t j = 0; j < d; ++j) wx += w[j] * x[i][j];
      const double g = y[i] * wx - 1.0;
      double pg = g;
      if (alpha[i] == 0.0) pg = std::min(g, 0.0);
      else if (alpha[i] == c) pg = std::max(g, 0.0);
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (std::abs(pg) < 1e-12) continue;
      const double old = alpha[i];
      alpha[i] = std::clamp(old - g / qii[i], 0.0, c);
      const double delta = (alpha[i] - old) * y[i];
      for (std::size_t j = 0; j < d; ++j) w[j] += delta * x[i][j];
      w[d] += delta;
    }
    if (pg_max - pg_min < 1e-4) break;
  }
  LinearSvm svm;
  std::copy_n(w.begin(), d, svm.weights.begin());
  svm.bias = w[d];
  svm.c = c;
  return svm;
}

LinearSvm train_svm(std::span<const FeatureVector> x, std::span<const int> labels, const DetectionConfig& cfg) {
  if (x.size() != labels.size()) throw Error("svm: features and labels differ in length");
  if (cfg.svm_grid.empty()) throw Error("svm: empty grid");
  if (cfg.cv_folds < 2) throw Error("svm: need at least 2 folds");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) throw Error("svm: training data must contain both classes");

  auto rng = make_rng(cfg.seed, 52);
  shuffle(pos, rng);
  shuffle(neg, rng);
  std::vector<std::size_t> fold(labels.size());
  for (std::size_t k = 0; k < pos.size(); ++k) fold[pos[k]] = k % cfg.cv_folds;
  for (std::size_t k = 0; k < neg.size(); ++k) fold[neg[k]] = k % cfg.cv_folds;

  double best_acc = -1.0, best_c = cfg.svm_grid.front();
  for (double c : cfg.svm_grid) {
    std::size_t correct = 0, total = 0;
    for (std::size_t f = 0; f < cfg.cv_folds; ++f) {
      std::vector<FeatureVector> tx;
      std::vector<int> ty;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (fold[i] != f) {
          tx.push_back(x[i]);
          ty.push_back(labels[i]);
        }
      }
      if (std::find(ty.begin(), ty.end(), 1) == ty.end() || std::find(ty.begin(), ty.end(), 0) == ty.end()) continue;
      const auto svm = fit_linear_svm(tx, ty, c, cfg.max_epochs, mix_seed(cfg.seed, f));
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (fold[i] != f) continue;
        ++total;
        if (svm.predict(x[i]) == (labels[i] == 1)) ++correct;
      }
    }
    const double acc = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    if (acc > best_acc) {
      best_acc = acc;
      best_c = c;
    }
  }
  auto svm = fit_linear_svm(x, labels, best_c, cfg.max_epochs, cfg.seed);
  svm.cv_accuracy = best_acc;
  return svm;
}

TiaResult tia_phase(std::span<const Index> suspicious, const InteractionMatrix& matrix, double tau_fraction,
                    std::size_t normal_count) {
  TiaResult r;
  r.tau = static_cast<std::size_t>(std::ceil(tau_fraction * static_cast<double>(normal_count) - 1e-9));
  std::vector<std::size_t> max_count(matrix.num_items(), 0);
  const double top = matrix.r_max();
  for (Index u : suspicious) {
    for (const auto& e : matrix.row(u)) {
      if (e.score == top) ++max_count[e.item];
    }
  }
  std::vector<char> flagged(matrix.num_items(), 0);
  for (std::size_t i = 0; i < max_count.size(); ++i) {
    if (max_count[i] > r.tau) {
      flagged[i] = 1;
      r.flagged_targets.push_back(static_cast<Index>(i));
    }
  }
  for (Index u : suspicious) {
    const auto row = matrix.row(u);
    if (std::any_of(row.begin(), row.end(), [&](const Interaction& e) { return e.score == top && flagged[e.item]; })) {
      r.predicted_fake.push_back(u);
    }
  }
  return r;
}

DetectionFixture build_fixture(const InteractionMatrix& clean, std::span<const FakeUserProfile> fakes,
                               std::size_t pairs, std::uint64_t seed) {
  if (fakes.size() < pairs) {
    throw Error("build_fixture: need " + std::to_string(pairs) + " fake profiles, got " + std::to_string(fakes.size()));
  }
  if (clean.num_normal_users() < pairs) throw Error("build_fixture: not enough normal users");
  const auto injected = inject(clean, fakes.first(pairs));
  const auto features = extract_all_features(injected);

  std::vector<Index> normals(clean.num_normal_users());
  std::iota(normals.begin(), normals.end(), Index{0});
  auto rng = make_rng(seed, 53);
  for (std::size_t j = 0; j < pairs; ++j) std::swap(normals[j], normals[j + uniform_index(rng, normals.size() - j)]);

  DetectionFixture fx;
  for (std::size_t j = 0; j < pairs; ++j) {
    fx.features.push_back(features[normals[j]]);
    fx.labels.push_back(0);
  }
  for (std::size_t j = 0; j < pairs; ++j) {
    fx.features.push_back(features[clean.num_users() + j]);
    fx.labels.push_back(1);
  }
  return fx;
}

DetectionReport run_detection(const InteractionMatrix& matrix_with_fakes, std::span<const Index> true_fakes,
                              const DetectionFixture& fixture, const DetectionConfig& cfg) {
  const auto scaler = scale_features(fixture.features);
  std::vector<FeatureVector> x;
  for (const auto& f : fixture.features) x.push_back(scaler.transform(f));
  const auto svm = train_svm(x, fixture.labels, cfg);

  const std::size_t users = matrix_with_fakes.num_users();
  std::vector<char> is_fake(users, 0);
  for (Index v : true_fakes) {
    if (v >= users) throw Error("run_detection: fake user index out of range");
    is_fake[v] = 1;
  }
  const std::size_t fake_count = static_cast<std::size_t>(std::count(is_fake.begin(), is_fake.end(), 1));
  const std::size_t normal_count = users - fake_count;

  DetectionReport rep;
  rep.svm_c = svm.c;
  rep.cv_accuracy = svm.cv_accuracy;
  const auto features = extract_all_features(matrix_with_fakes);
  for (std::size_t u = 0; u < users; ++u) {
    if (matrix_with_fakes.row(u).empty()) continue;
    if (svm.predict(scaler.transform(features[u]))) rep.suspicious_after_svm.push_back(static_cast<Index>(u));
  }
  auto tia = tia_phase(rep.suspicious_after_svm, matrix_with_fakes, cfg.tau_fraction, normal_count);
  rep.tau = tia.tau;
  rep.flagged_targets = std::move(tia.flagged_targets);
  rep.predicted_fake = std::move(tia.predicted_fake);

  auto rates = [&](std::span<const Index> predicted, double& fpr, std::optional<double>& fnr) {
    std::size_t fp = 0, tp = 0;
    for (Index u : predicted) (is_fake[u] ? tp : fp)++;
    fpr = normal_count > 0 ? static_cast<double>(fp) / static_cast<double>(normal_count) : 0.0;
    if (fake_count > 0) fnr = static_cast<double>(fake_count - tp) / static_cast<double>(fake_count);
    else fnr.reset();
  };
  rates(rep.suspicious_after_svm, rep.fpr_svm, rep.fnr_svm);
  rates(rep.predicted_fake, rep.fpr, rep.fnr);
  return rep;
}

InteractionMatrix filter_matrix(const InteractionMatrix& matrix_with_fakes, const DetectionReport& report) {
  return matrix_with_fakes.without_users(report.predicted_fake);
}

void write_detection_csv(std::ostream& out, std::span<const DetectionRow> rows) {
  out << "attack,attack_size,fpr_svm,fnr_svm,fpr_tia,fnr_tia\n" << std::setprecision(10);
  auto opt = [&](const std::optional<double>& v) {
    if (v) out << *v;
    else out << "n/a";
  };
  for (const auto& r : rows) {
    out << r.attack << ',' << r.attack_size << ',' << r.report.fpr_svm << ',';
    opt(r.report.fnr_svm);
    out << ',' << r.report.fpr << ',';
    opt(r.report.fnr);
    out << '\n';
  }
}

}  // namespace poisonrec
