#include "poisonrec/attack.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace poisonrec {

void AttackConfig::validate(std::size_t num_items) const {
  if (target >= num_items) throw Error("attack: target " + std::to_string(target) + " out of range");
  if (m == 0) throw Error("attack: m must be >= 1");
  if (n == 0) throw Error("attack: n must be >= 1");
  if (include_target_by_default ? n > num_items - 1 : n + 1 > num_items) {
    throw Error("attack: n = " + std::to_string(n) + " exceeds the available items");
  }
  if (k == 0 || k > num_items) throw Error("attack: K must be in [1, N]");
  if (!(kappa >= 0.0)) throw Error("attack: kappa must be >= 0");
  if (!(eta > 0.0)) throw Error("attack: eta must be > 0");
  if (!(lambda >= 0.0)) throw Error("attack: lambda must be >= 0");
  if (!(delta >= 0.0 && delta <= 1.0)) throw Error("attack: delta must be in [0, 1]");
  if (s == 0) throw Error("attack: s must be >= 1");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& source, std::size_t line) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParseError(source, line, "expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& v, const std::string& source, std::size_t line) {
  std::istringstream in(v);
  T x{};
  in >> x;
  if (!in || !(in >> std::ws).eof()) throw ParseError(source, line, "bad number '" + v + "'");
  return x;
}

}  // namespace

AttackConfig parse_attack_config(std::istream& in, AttackConfig cfg) {
  const std::string source = "<attack config>";
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (const auto hash = text.find('#'); hash != std::string::npos) text.resize(hash);
    text = trim(text);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ParseError(source, line, "expected key = value");
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    auto size = [&] { return parse_number<std::size_t>(value, source, line); };
    auto real = [&] { return parse_number<double>(value, source, line); };
    if (key == "target") cfg.target = static_cast<Index>(size());
    else if (key == "m") cfg.m = size();
    else if (key == "n") cfg.n = size();
    else if (key == "K" || key == "k") cfg.k = size();
    else if (key == "kappa") cfg.kappa = real();
    else if (key == "eta") cfg.eta = real();
    else if (key == "lambda") cfg.lambda = real();
    else if (key == "delta") cfg.delta = real();
    else if (key == "s") cfg.s = size();
    else if (key == "include_target_by_default") cfg.include_target_by_default = parse_bool(value, source, line);
    else if (key == "pretrain_epochs") cfg.pretrain_epochs = size();
    else if (key == "poison_epochs") cfg.poison_epochs = size();
    else if (key == "auto_scale_lambda") cfg.auto_scale_lambda = parse_bool(value, source, line);
    else if (key == "objective_user_sample") cfg.objective_user_sample = size();
    else if (key == "objective_item_sample") cfg.objective_item_sample = size();
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(value, source, line);
    else throw ParseError(source, line, "unknown key '" + key + "'");
  }
  return cfg;
}

AttackConfig load_attack_config(const std::filesystem::path& path, AttackConfig base) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_attack_config(in, std::move(base));
}

InteractionMatrix inject(const InteractionMatrix& matrix, std::span<const FakeUserProfile> profiles) {
  std::vector<std::vector<Interaction>> rows;
  rows.reserve(profiles.size());
  for (const auto& p : profiles) rows.push_back(p.ratings);
  return matrix.with_appended_users(rows);
}

void write_profiles(std::ostream& out, const InteractionMatrix& matrix, std::span<const FakeUserProfile> profiles) {
  const bool named = !matrix.item_ids().empty();
  for (const auto& p : profiles) {
    for (const auto& e : p.ratings) {
      out << p.user << ' ';
      if (named) out << matrix.item_ids()[e.item];
      else out << e.item;
      out << ' ' << e.score << '\n';
    }
  }
}

std::vector<FakeUserProfile> read_profiles(std::istream& in, const InteractionMatrix& matrix,
                                           const std::string& source) {
  std::unordered_map<std::string, Index> item_index;
  for (std::size_t i = 0; i < matrix.item_ids().size(); ++i) item_index[matrix.item_ids()[i]] = static_cast<Index>(i);
  std::vector<FakeUserProfile> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    std::istringstream fields(text);
    std::string user, item;
    double score = 0.0;
    if (!(fields >> user)) continue;
    if (!(fields >> item >> score)) throw ParseError(source, line, "expected `user item score`");
    const auto u = parse_number<std::uint64_t>(user, source, line);
    if (u < matrix.num_users()) throw ParseError(source, line, "fake user id below M");
    Index i = 0;
    if (!item_index.empty()) {
      const auto it = item_index.find(item);
      if (it == item_index.end()) throw ParseError(source, line, "unknown item '" + item + "'");
      i = it->second;
    } else {
      i = static_cast<Index>(parse_number<std::uint64_t>(item, source, line));
      if (i >= matrix.num_items()) throw ParseError(source, line, "item out of range");
    }
    if (out.empty() || out.back().user != u) {
      for (const auto& p : out) {
        if (p.user == u) throw ParseError(source, line, "user " + user + " is not contiguous");
      }
      out.push_back({static_cast<Index>(u), {}});
    }
    out.back().ratings.push_back({i, score, kNoTimestamp});
  }
  for (auto& p : out) {
    std::sort(p.ratings.begin(), p.ratings.end(), [](const Interaction& a, const Interaction& b) { return a.item < b.item; });
  }
  return out;
}

// ---- losses -----------------------------------------------------------------------

double loss_user(std::span<const double> predictions, std::span<const Interaction> rated, Index target, std::size_t k,
                 double kappa) {
  const auto list = top_k_row(predictions, rated, k);
  if (list.empty()) throw Error("loss_user: user has no unrated items");
  const double inner =
      std::log(clamp_probability(predictions[list.back()])) - std::log(clamp_probability(predictions[target]));
  return std::max(inner, -kappa);
}

double loss_all(const ScoreMatrix& predictions, const InteractionMatrix& train, Index target, std::size_t k,
                double kappa) {
  double total = 0.0;
  std::size_t eligible = 0;
  for (std::size_t u = 0; u < train.num_normal_users(); ++u) {
    if (train.has(u, target)) continue;
    ++eligible;
    total += loss_user(predictions.row(u), train.row(u), target, k, kappa);
  }
  if (eligible == 0) throw Error("loss_all: every normal user has rated target " + std::to_string(target));
  return total;
}

double attack_objective(std::span<const double> fake_row, double lprime, double eta) {
  double sq = 0.0;
  for (double y : fake_row) sq += y * y;
  return sq + eta * lprime;
}

PromotionObjective::PromotionObjective(std::span<const Index> fake_users, std::span<const Index> fake_items,
                                       double item_scale, std::span<const UserAnchor> anchors, double user_scale,
                                       Index target, double kappa, double eta)
    : item_scale_(item_scale), user_scale_(user_scale), kappa_(kappa), eta_(eta) {
  cells_.reserve(fake_users.size() * fake_items.size() + 2 * anchors.size());
  for (Index v : fake_users) {
    for (Index i : fake_items) cells_.push_back({v, i});
  }
  fake_cells_ = cells_.size();
  for (const auto& a : anchors) {
    cells_.push_back({a.user, a.list_min_item});
    cells_.push_back({a.user, target});
  }
}

double PromotionObjective::evaluate(std::span<const double> scores, std::span<double> dscores) const {
  double norm = 0.0;
  for (std::size_t c = 0; c < fake_cells_; ++c) {
    norm += scores[c] * scores[c];
    dscores[c] = 2.0 * item_scale_ * scores[c];
  }
  auto dlog = [](double y) { return (y > kProbabilityFloor && y < 1.0 - kProbabilityFloor) ? 1.0 / y : 0.0; };
  double margin = 0.0;
  const double w = eta_ * user_scale_;
  for (std::size_t c = fake_cells_; c < cells_.size(); c += 2) {
    const double low = scores[c], tgt = scores[c + 1];
    const double inner = std::log(clamp_probability(low)) - std::log(clamp_probability(tgt));
    if (inner > -kappa_) {
      margin += inner;
      dscores[c] = w * dlog(low);
      dscores[c + 1] = -w * dlog(tgt);
    } else {
      margin -= kappa_;
      dscores[c] = 0.0;
      dscores[c + 1] = 0.0;
    }
  }
  return item_scale_ * norm + w * margin;
}

std::vector<PromotionObjective::UserAnchor> list_anchors(const ScoreMatrix& predictions,
                                                         const InteractionMatrix& train, Index target,
                                                         std::size_t k) {
  std::vector<Index> users;
  for (std::size_t u = 0; u < train.num_normal_users(); ++u) {
    if (!train.has(u, target)) users.push_back(static_cast<Index>(u));
  }
  std::vector<PromotionObjective::UserAnchor> out(users.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t x = 0; x < static_cast<std::ptrdiff_t>(users.size()); ++x) {
    const Index u = users[static_cast<std::size_t>(x)];
    const auto list = top_k_row(predictions.row(u), train.row(u), k);
    out[static_cast<std::size_t>(x)] = {u, list.back()};
  }
  return out;
}

// ---- poison model -------------------------------------------------------------------

namespace {

std::vector<Index> all_items(std::size_t n) {
  std::vector<Index> v(n);
  std::iota(v.begin(), v.end(), Index{0});
  return v;
}

void check_fakes(const PoisonModelState& state, std::span<const Index> fake_users) {
  if (state.model.num_users() != state.matrix.num_users()) {
    throw Error("poison model has " + std::to_string(state.model.num_users()) + " users, matrix has " +
                std::to_string(state.matrix.num_users()));
  }
  for (Index v : fake_users) {
    if (v >= state.matrix.num_users()) throw Error("fake user " + std::to_string(v) + " is not in the matrix");
  }
}

}  // namespace

PromotionObjective exact_objective(const PoisonModelState& state, std::span<const Index> fake_users,
                                   const AttackConfig& cfg) {
  check_fakes(state, fake_users);
  const auto predictions = predict_matrix(state.model);
  const auto anchors = list_anchors(predictions, state.matrix, cfg.target, cfg.k);
  if (anchors.empty()) throw Error("poison loss: no normal user is eligible for the target");
  const auto items = all_items(state.matrix.num_items());
  return PromotionObjective(fake_users, items, 1.0, anchors, 1.0, cfg.target, cfg.kappa, cfg.eta);
}

double poison_loss(const PoisonModelState& state, std::span<const Index> fake_users, const AttackConfig& cfg,
                   std::span<const Example> batch, double lambda) {
  const auto objective = exact_objective(state, fake_users, cfg);
  return evaluate_loss(state.model, {batch, &objective, lambda});
}

PoisonModelState pretrain_poison_model(const InteractionMatrix& matrix, const NeumfConfig& cfg,
                                       const std::optional<NeumfModel>& warm_start, std::size_t warm_epochs) {
  if (!warm_start) return {train(matrix, cfg).model, matrix};
  if (warm_start->num_users() > matrix.num_users() || warm_start->num_items() != matrix.num_items()) {
    throw Error("pretrain: warm start does not fit the working matrix");
  }
  NeumfModel model = warm_start->num_users() < matrix.num_users()
                         ? warm_start->with_added_users(matrix.num_users() - warm_start->num_users(),
                                                        mix_seed(cfg.seed, 7))
                         : *warm_start;
  if (warm_epochs == 0) return {std::move(model), matrix};
  NeumfConfig warm = cfg;
  warm.epochs = warm_epochs;
  return {train(matrix, warm, model).model, matrix};
}

double effective_lambda(const PoisonModelState& state, std::span<const Index> fake_users, const AttackConfig& attack,
                        const NeumfConfig& cfg) {
  if (!attack.auto_scale_lambda || attack.lambda == 0.0) return attack.lambda;
  check_fakes(state, fake_users);

  auto rng = make_rng(cfg.seed, 31);
  auto sample = sample_epoch(state.matrix, cfg.negatives_per_positive, rng);
  if (sample.size() > 20000) sample.resize(20000);
  const double bce = sample.empty() ? 0.0 : bce_loss(state.model, sample);

  const auto predictions = predict_matrix(state.model);
  double g = attack.eta * loss_all(predictions, state.matrix, attack.target, attack.k, attack.kappa);
  for (Index v : fake_users) {
    for (double y : predictions.row(v)) g += y * y;
  }
  if (std::abs(g) < 1e-12 || bce == 0.0) return attack.lambda;
  return bce / std::abs(g);
}

namespace {

// Draws `count` distinct entries of `pool` by a partial Fisher-Yates pass.
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T>& pool, std::size_t count, Rng& rng) {
  count = std::min(count, pool.size());
  for (std::size_t j = 0; j < count; ++j) {
    std::swap(pool[j], pool[j + uniform_index(rng, pool.size() - j)]);
  }
  return {pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count)};
}

struct StochasticObjective {
  const InteractionMatrix* matrix;
  std::vector<Index> fakes;
  const AttackConfig* attack;
  std::vector<PromotionObjective::UserAnchor> anchors;
  std::vector<Index> items;
  Rng rng;
  std::unique_ptr<PromotionObjective> current;

  void refresh(const NeumfModel& model) {
    const auto predictions = predict_matrix(model);
    anchors = list_anchors(predictions, *matrix, attack->target, attack->k);
    if (anchors.empty()) throw Error("poison training: no normal user is eligible for the target");
  }

  const ScoreTerm* next() {
    const std::size_t bu = attack->objective_user_sample;
    const std::size_t bi = attack->objective_item_sample;
    std::vector<PromotionObjective::UserAnchor> users;
    double user_scale = 1.0;
    if (bu == 0 || bu >= anchors.size()) {
      users = anchors;
    } else {
      users = sample_without_replacement(anchors, bu, rng);
      user_scale = static_cast<double>(anchors.size()) / static_cast<double>(bu);
    }
    std::vector<Index> picked;
    double item_scale = 1.0;
    if (bi == 0 || bi >= items.size()) {
      picked = items;
    } else {
      picked = sample_without_replacement(items, bi, rng);
      item_scale = static_cast<double>(items.size()) / static_cast<double>(bi);
    }
    current = std::make_unique<PromotionObjective>(fakes, picked, item_scale, users, user_scale, attack->target,
                                                   attack->kappa, attack->eta);
    return current.get();
  }
};

}  // namespace

PoisonModelState poison_train(const PoisonModelState& state, std::span<const Index> fake_users,
                              const AttackConfig& attack, const NeumfConfig& cfg, double* lambda_used) {
  check_fakes(state, fake_users);
  if (attack.poison_epochs == 0) return state;

  NeumfConfig run = cfg;
  run.epochs = attack.poison_epochs;
  const double lambda = effective_lambda(state, fake_users, attack, cfg);
  if (lambda_used != nullptr) *lambda_used = lambda;

  StochasticObjective objective{&state.matrix,
                                {fake_users.begin(), fake_users.end()},
                                &attack,
                                {},
                                all_items(state.matrix.num_items()),
                                make_rng(cfg.seed, 41),
                                nullptr};
  TrainHooks hooks;
  hooks.extra_weight = lambda;
  if (lambda != 0.0) {
    hooks.on_epoch_start = [&](const NeumfModel& model, std::size_t) { objective.refresh(model); };
    hooks.extra_term = [&](const NeumfModel&) { return objective.next(); };
  }
  return {train(state.matrix, run, state.model, {}, hooks).model, state.matrix};
}

// ---- filler selection ---------------------------------------------------------------

std::vector<Index> select_fillers(std::span<const double> predicted_row, SelectionProbabilities& p,
                                  const AttackConfig& cfg) {
  const std::size_t n_items = predicted_row.size();
  if (p.p.size() != n_items) throw Error("select_fillers: selection vector has the wrong size");
  const bool exclude_target = cfg.include_target_by_default;
  const std::size_t count = exclude_target ? cfg.n : cfg.n + 1;
  const std::size_t available = exclude_target ? n_items - 1 : n_items;
  if (cfg.target >= n_items || count > available) throw Error("select_fillers: n exceeds the available items");

  std::vector<double> r(n_items);
  for (std::size_t i = 0; i < n_items; ++i) r[i] = predicted_row[i] * p.p[i];
  std::vector<Index> cand;
  cand.reserve(available);
  for (std::size_t i = 0; i < n_items; ++i) {
    if (!(exclude_target && i == cfg.target)) cand.push_back(static_cast<Index>(i));
  }
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(count), cand.end(),
                    [&](Index a, Index b) { return r[a] != r[b] ? r[a] > r[b] : a < b; });
  cand.resize(count);

  for (Index i : cand) p.p[i] *= cfg.delta;
  if (std::all_of(p.p.begin(), p.p.end(), [](double x) { return x < 1.0; })) std::fill(p.p.begin(), p.p.end(), 1.0);
  return cand;
}

ItemRatingStats compute_item_stats(const InteractionMatrix& matrix) {
  const std::size_t n = matrix.num_items();
  ItemRatingStats st;
  st.mean.assign(n, 0.0);
  st.std.assign(n, 0.0);
  st.count.assign(n, 0);
  std::vector<double> sq(n, 0.0);
  double total = 0.0, total_sq = 0.0;
  std::size_t all = 0;
  for (std::size_t u = 0; u < matrix.num_users(); ++u) {
    for (const auto& e : matrix.row(u)) {
      st.mean[e.item] += e.score;
      sq[e.item] += e.score * e.score;
      ++st.count[e.item];
      total += e.score;
      total_sq += e.score * e.score;
      ++all;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (st.count[i] == 0) continue;
    const double c = st.count[i];
    st.mean[i] /= c;
    st.std[i] = std::sqrt(std::max(0.0, sq[i] / c - st.mean[i] * st.mean[i]));
  }
  if (all > 0) {
    st.global_mean = total / static_cast<double>(all);
    st.global_std =
        std::sqrt(std::max(0.0, total_sq / static_cast<double>(all) - st.global_mean * st.global_mean));
  }
  return st;
}

std::vector<Interaction> generate_filler_scores(std::span<const Index> fillers, const ItemRatingStats& stats,
                                                double r_max, DatasetKind kind, Rng& rng) {
  std::vector<Interaction> out;
  out.reserve(fillers.size());
  for (Index i : fillers) {
    double score = 1.0;
    if (kind == DatasetKind::explicit_ratings) {
      const bool known = i < stats.count.size() && stats.count[i] > 0;
      const double mean = known ? stats.mean[i] : stats.global_mean;
      const double sd = known ? stats.std[i] : stats.global_std;
      score = std::round(std::clamp(mean + sd * standard_normal(rng), 1.0, r_max));
    }
    out.push_back({i, score, kNoTimestamp});
  }
  std::sort(out.begin(), out.end(), [](const Interaction& a, const Interaction& b) { return a.item < b.item; });
  return out;
}

// ---- attacks ------------------------------------------------------------------------

namespace {

// Assembles one profile: filler scores plus the target at r_max when forced.
FakeUserProfile make_profile(Index user, std::span<const Index> fillers, const ItemRatingStats& stats,
                             const InteractionMatrix& matrix, const AttackConfig& cfg, Rng& rng) {
  FakeUserProfile p;
  p.user = user;
  p.ratings = generate_filler_scores(fillers, stats, matrix.r_max(), matrix.kind(), rng);
  if (cfg.include_target_by_default) {
    const double top = matrix.kind() == DatasetKind::implicit ? 1.0 : matrix.r_max();
    auto pos = std::lower_bound(p.ratings.begin(), p.ratings.end(), cfg.target,
                                [](const Interaction& e, Index t) { return e.item < t; });
    p.ratings.insert(pos, Interaction{cfg.target, top, kNoTimestamp});
  }
  return p;
}

std::vector<Index> candidate_items(std::size_t n_items, const AttackConfig& cfg) {
  std::vector<Index> out;
  for (std::size_t i = 0; i < n_items; ++i) {
    if (!(cfg.include_target_by_default && i == cfg.target)) out.push_back(static_cast<Index>(i));
  }
  return out;
}

std::size_t filler_count(const AttackConfig& cfg) { return cfg.include_target_by_default ? cfg.n : cfg.n + 1; }

}  // namespace

std::vector<FakeUserProfile> run_our_attack(const InteractionMatrix& matrix, const NeumfConfig& neumf_cfg,
                                            const AttackConfig& cfg, const ProgressFn& progress) {
  cfg.validate(matrix.num_items());
  neumf_cfg.validate();
  const auto stats = compute_item_stats(matrix);
  const double top = matrix.kind() == DatasetKind::implicit ? 1.0 : matrix.r_max();
  InteractionMatrix working = matrix;
  SelectionProbabilities p(matrix.num_items());
  std::optional<NeumfModel> model;
  auto score_rng = make_rng(cfg.seed, 21);
  std::vector<FakeUserProfile> profiles;

  for (std::size_t round = 0; profiles.size() < cfg.m; ++round) {
    const std::size_t batch = std::min(cfg.s, cfg.m - profiles.size());
    std::vector<std::vector<Interaction>> pending(batch);
    if (cfg.include_target_by_default) {
      for (auto& row : pending) row.push_back({cfg.target, top, kNoTimestamp});
    }
    const Index first = static_cast<Index>(working.num_users());
    working = working.with_appended_users(pending);
    std::vector<Index> fakes(batch);
    std::iota(fakes.begin(), fakes.end(), first);

    NeumfConfig round_cfg = neumf_cfg;
    round_cfg.seed = mix_seed(cfg.seed, 100 + round);
    auto state = pretrain_poison_model(working, round_cfg, model, cfg.pretrain_epochs);
    round_cfg.seed = mix_seed(round_cfg.seed, 1);
    double lambda = 0.0;
    state = poison_train(state, fakes, cfg, round_cfg, &lambda);
    if (!state.model.all_finite()) throw TrainingError("poison model diverged in round " + std::to_string(round));

    const auto rows = predict_rows(state.model, fakes);
    for (std::size_t j = 0; j < batch; ++j) {
      const auto fillers = select_fillers(rows.row(j), p, cfg);
      auto profile = make_profile(fakes[j], fillers, stats, matrix, cfg, score_rng);
      working = working.with_row(fakes[j], profile.ratings);
      profiles.push_back(std::move(profile));
    }
    model = std::move(state.model);
    if (progress) progress({profiles.size(), cfg.m, lambda});
  }
  return profiles;
}

std::vector<FakeUserProfile> run_random_attack(const InteractionMatrix& matrix, const AttackConfig& cfg,
                                               std::uint64_t seed) {
  cfg.validate(matrix.num_items());
  const auto stats = compute_item_stats(matrix);
  auto rng = make_rng(seed, 22);
  auto pool = candidate_items(matrix.num_items(), cfg);
  const Index base = static_cast<Index>(matrix.num_users());
  std::vector<FakeUserProfile> out;
  for (std::size_t v = 0; v < cfg.m; ++v) {
    const auto fillers = sample_without_replacement(pool, filler_count(cfg), rng);
    out.push_back(make_profile(base + static_cast<Index>(v), fillers, stats, matrix, cfg, rng));
  }
  return out;
}

std::vector<FakeUserProfile> run_bandwagon_attack(const InteractionMatrix& matrix, const AttackConfig& cfg,
                                                  std::uint64_t seed) {
  cfg.validate(matrix.num_items());
  const auto stats = compute_item_stats(matrix);
  std::vector<double> popularity(matrix.num_items());
  for (std::size_t i = 0; i < popularity.size(); ++i) {
    popularity[i] = matrix.kind() == DatasetKind::implicit ? static_cast<double>(stats.count[i]) : stats.mean[i];
  }
  auto ranked = candidate_items(matrix.num_items(), cfg);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [&](Index a, Index b) { return popularity[a] > popularity[b]; });
  const std::size_t top_size = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(matrix.num_items())));
  const std::size_t count = filler_count(cfg);
  const std::size_t popular = std::min<std::size_t>(
      static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(count))), std::min(top_size, ranked.size()));

  auto rng = make_rng(seed, 23);
  const Index base = static_cast<Index>(matrix.num_users());
  std::vector<FakeUserProfile> out;
  for (std::size_t v = 0; v < cfg.m; ++v) {
    std::vector<Index> top_set(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(std::min(top_size, ranked.size())));
    auto fillers = sample_without_replacement(top_set, popular, rng);
    std::vector<Index> rest;
    for (Index i : ranked) {
      if (std::find(fillers.begin(), fillers.end(), i) == fillers.end()) rest.push_back(i);
    }
    const auto others = sample_without_replacement(rest, count - popular, rng);
    fillers.insert(fillers.end(), others.begin(), others.end());
    out.push_back(make_profile(base + static_cast<Index>(v), fillers, stats, matrix, cfg, rng));
  }
  return out;
}

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// One half-sweep of implicit-feedback ALS: solves every row of `solve` with the
// other side fixed. Observed entries have preference 1 and weight 1 + alpha,
// every other entry preference 0 and weight 1.
void als_half_sweep(Mat& solve, const Mat& fixed, const std::vector<std::vector<Index>>& observed, double alpha,
                    double reg) {
  const Eigen::Index d = fixed.cols();
  const Mat gram = fixed.transpose() * fixed;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(observed.size()); ++r) {
    Mat a = gram + reg * Mat::Identity(d, d);
    Vec b = Vec::Zero(d);
    for (Index j : observed[static_cast<std::size_t>(r)]) {
      const auto f = fixed.row(j).transpose();
      a.noalias() += alpha * f * f.transpose();
      b.noalias() += (1.0 + alpha) * f;
    }
    solve.row(r) = a.ldlt().solve(b).transpose();
  }
}

}  // namespace

std::vector<FakeUserProfile> run_mf_attack(const InteractionMatrix& matrix, const AttackConfig& cfg,
                                           const MfAttackConfig& mf_cfg) {
  cfg.validate(matrix.num_items());
  if (mf_cfg.dim == 0) throw Error("mf attack: dim must be >= 1");
  const std::size_t users = matrix.num_users(), items = matrix.num_items();
  const auto d = static_cast<Eigen::Index>(mf_cfg.dim);
  const double r_max = matrix.kind() == DatasetKind::implicit ? 1.0 : matrix.r_max();

  std::vector<std::vector<Index>> by_user(users), by_item(items);
  for (std::size_t u = 0; u < users; ++u) {
    for (const auto& e : matrix.row(u)) {
      by_user[u].push_back(e.item);
      by_item[e.item].push_back(static_cast<Index>(u));
    }
  }

  auto rng = make_rng(mf_cfg.seed, 24);
  Mat X(static_cast<Eigen::Index>(users), d), V(static_cast<Eigen::Index>(items), d);
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    for (Eigen::Index c = 0; c < d; ++c) X(r, c) = 0.1 * standard_normal(rng);
  for (Eigen::Index r = 0; r < V.rows(); ++r)
    for (Eigen::Index c = 0; c < d; ++c) V(r, c) = 0.1 * standard_normal(rng);
  for (std::size_t sweep = 0; sweep < mf_cfg.als_sweeps; ++sweep) {
    als_half_sweep(X, V, by_user, mf_cfg.confidence, mf_cfg.regularization);
    als_half_sweep(V, X, by_item, mf_cfg.confidence, mf_cfg.regularization);
    if (!X.allFinite() || !V.allFinite()) throw TrainingError("mf attack: surrogate diverged");
  }

  // Fresh-user prior fitted to the normal users' factors.
  Vec mean = Vec::Zero(d), sd = Vec::Zero(d), audience = Vec::Zero(d);
  std::size_t normal = matrix.num_normal_users(), eligible = 0;
  for (std::size_t u = 0; u < normal; ++u) mean += X.row(static_cast<Eigen::Index>(u)).transpose();
  if (normal > 0) mean /= static_cast<double>(normal);
  for (std::size_t u = 0; u < normal; ++u) {
    const Vec diff = X.row(static_cast<Eigen::Index>(u)).transpose() - mean;
    sd += diff.cwiseProduct(diff);
    if (!matrix.has(u, cfg.target)) {
      audience += X.row(static_cast<Eigen::Index>(u)).transpose();
      ++eligible;
    }
  }
  if (normal > 0) sd = (sd / static_cast<double>(normal)).cwiseSqrt();
  if (eligible > 0) audience /= static_cast<double>(eligible);

  // Dense fold-in of a rating vector y: x_v = A y / r_max.
  const Mat A = (V.transpose() * V + mf_cfg.regularization * Mat::Identity(d, d)).ldlt().solve(V.transpose());
  const Vec vt = V.row(cfg.target).transpose();

  const auto stats = compute_item_stats(matrix);
  auto score_rng = make_rng(mf_cfg.seed, 25);
  const Index base = static_cast<Index>(users);
  const std::size_t count = filler_count(cfg);
  std::vector<FakeUserProfile> out;
  for (std::size_t v = 0; v < cfg.m; ++v) {
    Vec x0(d);
    for (Eigen::Index c = 0; c < d; ++c) x0(c) = mean(c) + sd(c) * standard_normal(rng);
    const Vec raw = V * x0;
    Vec y = (r_max * raw).cwiseMax(0.0).cwiseMin(r_max);
    if (cfg.include_target_by_default) y(cfg.target) = r_max;

    // Ascent on J(y) = (1 - x.v_t)(a.x): the audience's first-order gain on the
    // target after the fake's rating pulls v_t toward x.
    for (std::size_t step = 0; step < mf_cfg.ascent_steps; ++step) {
      const Vec x = A * y / r_max;
      const Vec gx = (1.0 - x.dot(vt)) * audience - audience.dot(x) * vt;
      Vec gy = A.transpose() * gx / r_max;
      if (cfg.include_target_by_default) gy(cfg.target) = 0.0;
      const double scale = gy.cwiseAbs().maxCoeff();
      if (!std::isfinite(scale)) throw TrainingError("mf attack: non-finite ascent direction");
      if (scale == 0.0) break;
      y = (y + mf_cfg.step_size * r_max / scale * gy).cwiseMax(0.0).cwiseMin(r_max);
    }

    auto pool = candidate_items(items, cfg);
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count), pool.end(),
                      [&](Index a, Index b) {
                        if (y(a) != y(b)) return y(a) > y(b);
                        if (raw(a) != raw(b)) return raw(a) > raw(b);
                        return a < b;
                      });
    pool.resize(count);
    out.push_back(make_profile(base + static_cast<Index>(v), pool, stats, matrix, cfg, score_rng));
  }
  return out;
}

}  // namespace poisonrec
