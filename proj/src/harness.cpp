#include "poisonrec/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "poisonrec/recsys.hpp"

namespace poisonrec {

std::string to_string(TargetKind k) { return k == TargetKind::random ? "random" : "unpopular"; }

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::none: return "none";
    case AttackKind::ours: return "ours";
    case AttackKind::random: return "random";
    case AttackKind::bandwagon: return "bandwagon";
    case AttackKind::mf: return "mf";
  }
  return "?";
}

std::string to_string(KnowledgeMode k) {
  switch (k) {
    case KnowledgeMode::full: return "full";
    case KnowledgeMode::partial_ratings: return "partial_ratings";
    case KnowledgeMode::partial_users: return "partial_users";
  }
  return "?";
}

TargetKind parse_target_kind(const std::string& s) {
  if (s == "random") return TargetKind::random;
  if (s == "unpopular") return TargetKind::unpopular;
  throw Error("unknown target kind '" + s + "'");
}

AttackKind parse_attack_kind(const std::string& s) {
  for (auto k : {AttackKind::none, AttackKind::ours, AttackKind::random, AttackKind::bandwagon, AttackKind::mf}) {
    if (s == to_string(k)) return k;
  }
  throw Error("unknown attack kind '" + s + "'");
}

KnowledgeMode parse_knowledge_mode(const std::string& s) {
  for (auto k : {KnowledgeMode::full, KnowledgeMode::partial_ratings, KnowledgeMode::partial_users}) {
    if (s == to_string(k)) return k;
  }
  throw Error("unknown knowledge mode '" + s + "'");
}

std::size_t default_unpopular_threshold(const std::string& format) {
  if (format == "ml-1m") return 10;
  if (format == "lastfm") return 12;
  return 6;
}

std::vector<Index> sample_targets(const InteractionMatrix& matrix, TargetKind kind, std::size_t count,
                                  std::size_t threshold, std::uint64_t seed) {
  if (count == 0) throw Error("sample_targets: count must be >= 1");
  std::vector<Index> pool;
  for (std::size_t i = 0; i < matrix.num_items(); ++i) {
    if (kind == TargetKind::random || matrix.item_counts()[i] < threshold) pool.push_back(static_cast<Index>(i));
  }
  if (pool.size() < count) {
    throw Error("sample_targets: need " + std::to_string(count) + " " + to_string(kind) + " targets but the pool has " +
                std::to_string(pool.size()));
  }
  auto rng = make_rng(seed, 61);
  for (std::size_t j = 0; j < count; ++j) std::swap(pool[j], pool[j + uniform_index(rng, pool.size() - j)]);
  pool.resize(count);
  return pool;
}

InteractionMatrix restrict_knowledge(const InteractionMatrix& matrix, KnowledgeMode mode, double fraction,
                                     std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("restrict_knowledge: fraction must be in (0, 1]");
  if (mode == KnowledgeMode::full || fraction == 1.0) return matrix;
  auto rng = make_rng(seed, 62);
  InteractionMatrix out;
  if (mode == KnowledgeMode::partial_ratings) {
    out = matrix.filter_entries([&](std::size_t, const Interaction&) { return uniform_real(rng) < fraction; });
  } else {
    std::vector<Index> users(matrix.num_normal_users());
    std::iota(users.begin(), users.end(), Index{0});
    shuffle(users, rng);
    users.resize(static_cast<std::size_t>(std::lround(fraction * static_cast<double>(users.size()))));
    std::sort(users.begin(), users.end());
    out = matrix.select_users(users);
  }
  if (out.empty()) throw EmptyDatasetError("restrict_knowledge: restriction left no ratings");
  return out;
}

// ---- plan --------------------------------------------------------------------------

void ExperimentPlan::validate() const {
  for (double s : attack_sizes) {
    if (!(s > 0.0 && s <= 1.0)) throw Error("plan: attack sizes must be in (0, 1]");
  }
  if (targets_count == 0) throw Error("plan: targets_count must be >= 1");
  if (runs == 0) throw Error("plan: runs must be >= 1");
  if (attack_kinds.empty() || k_values.empty() || n_values.empty() || delta_values.empty() || target_kinds.empty()) {
    throw Error("plan: every axis needs at least one value");
  }
  if (!(knowledge_fraction > 0.0 && knowledge_fraction <= 1.0)) throw Error("plan: knowledge_fraction must be in (0, 1]");
  victim_config().validate();
  surrogate_config().validate();
}

NeumfConfig ExperimentPlan::victim_config() const {
  NeumfConfig c = neumf;
  if (!victim_mlp_dims.empty()) {
    c.mlp_dims = victim_mlp_dims;
  } else if (gray_box) {
    c.mlp_dims = surrogate_config().mlp_dims;
    c.mlp_dims.push_back(std::max<std::size_t>(1, c.mlp_dims.back() / 2));
  }
  c.seed = seed;
  return c;
}

NeumfConfig ExperimentPlan::surrogate_config() const {
  NeumfConfig c = neumf;
  if (!surrogate_mlp_dims.empty()) c.mlp_dims = surrogate_mlp_dims;
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

template <typename T>
T number(const std::string& v, const std::string& source, std::size_t line) {
  std::istringstream in(v);
  T x{};
  in >> x;
  if (!in || !(in >> std::ws).eof()) throw ParseError(source, line, "bad number '" + v + "'");
  return x;
}

bool boolean(const std::string& v, const std::string& source, std::size_t line) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParseError(source, line, "expected a boolean, got '" + v + "'");
}

template <typename T>
std::vector<T> number_list(const std::string& v, const std::string& source, std::size_t line) {
  std::vector<T> out;
  for (const auto& f : split(v, ',')) out.push_back(number<T>(f, source, line));
  return out;
}

std::string dims_label(const std::vector<std::size_t>& dims) {
  std::string s;
  for (std::size_t j = 0; j < dims.size(); ++j) s += (j ? "-" : "") + std::to_string(dims[j]);
  return s;
}

}  // namespace

ExperimentPlan parse_plan(std::istream& in, const std::string& source) {
  ExperimentPlan p;
  std::string text;
  std::size_t line = 0;
  auto detection = [&]() -> DetectionConfig& {
    if (!p.detection) p.detection = DetectionConfig{};
    return *p.detection;
  };
  while (std::getline(in, text)) {
    ++line;
    if (const auto hash = text.find('#'); hash != std::string::npos) text.resize(hash);
    text = trim(text);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ParseError(source, line, "expected key = value");
    const std::string key = trim(text.substr(0, eq));
    const std::string v = trim(text.substr(eq + 1));
    auto size = [&] { return number<std::size_t>(v, source, line); };
    auto real = [&] { return number<double>(v, source, line); };
    try {
      if (key == "name") p.name = v;
      else if (key == "dataset") p.dataset_path = v;
      else if (key == "format") p.dataset_format = v;
      else if (key == "k_core") p.k_core = size();
      else if (key == "attacks") {
        p.attack_kinds.clear();
        for (const auto& f : split(v, ',')) p.attack_kinds.push_back(parse_attack_kind(f));
      } else if (key == "sizes") p.attack_sizes = number_list<double>(v, source, line);
      else if (key == "K") p.k_values = number_list<std::size_t>(v, source, line);
      else if (key == "n") p.n_values = number_list<std::size_t>(v, source, line);
      else if (key == "delta") p.delta_values = number_list<double>(v, source, line);
      else if (key == "target_kinds") {
        p.target_kinds.clear();
        for (const auto& f : split(v, ',')) p.target_kinds.push_back(parse_target_kind(f));
      } else if (key == "targets") p.targets_count = size();
      else if (key == "unpopular_threshold") p.unpopular_threshold = size();
      else if (key == "runs") p.runs = size();
      else if (key == "knowledge") p.knowledge = parse_knowledge_mode(v);
      else if (key == "knowledge_fraction") p.knowledge_fraction = real();
      else if (key == "mf_dim") p.neumf.mf_dim = size();
      else if (key == "mlp_dims") p.neumf.mlp_dims = number_list<std::size_t>(v, source, line);
      else if (key == "epochs") p.neumf.epochs = size();
      else if (key == "batch_size") p.neumf.batch_size = size();
      else if (key == "negatives") p.neumf.negatives_per_positive = size();
      else if (key == "learning_rate") p.neumf.learning_rate = real();
      else if (key == "surrogate_mlp_dims") p.surrogate_mlp_dims = number_list<std::size_t>(v, source, line);
      else if (key == "victim_mlp_dims") p.victim_mlp_dims = number_list<std::size_t>(v, source, line);
      else if (key == "gray_box") p.gray_box = boolean(v, source, line);
      else if (key == "kappa") p.attack.kappa = real();
      else if (key == "eta") p.attack.eta = real();
      else if (key == "lambda") p.attack.lambda = real();
      else if (key == "s") p.attack.s = size();
      else if (key == "include_target_by_default") p.attack.include_target_by_default = boolean(v, source, line);
      else if (key == "pretrain_epochs") p.attack.pretrain_epochs = size();
      else if (key == "poison_epochs") p.attack.poison_epochs = size();
      else if (key == "auto_scale_lambda") p.attack.auto_scale_lambda = boolean(v, source, line);
      else if (key == "objective_user_sample") p.attack.objective_user_sample = size();
      else if (key == "objective_item_sample") p.attack.objective_item_sample = size();
      else if (key == "detection") {
        if (boolean(v, source, line)) detection();
        else p.detection.reset();
      } else if (key == "tau_fraction") detection().tau_fraction = real();
      else if (key == "training_pairs") detection().training_pairs = size();
      else if (key == "cv_folds") detection().cv_folds = size();
      else if (key == "svm_grid") detection().svm_grid = number_list<double>(v, source, line);
      else if (key == "detection_fixture_s") p.detection_fixture_s = size();
      else if (key == "workers") p.workers = size();
      else if (key == "seed") p.seed = number<std::uint64_t>(v, source, line);
      else throw ParseError(source, line, "unknown key '" + key + "'");
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(source, line, e.what());
    }
  }
  return p;
}

ExperimentPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  auto plan = parse_plan(in, path.string());
  if (plan.dataset_path.is_relative() && !plan.dataset_path.empty()) {
    const auto beside = path.parent_path() / plan.dataset_path;
    if (std::filesystem::exists(beside)) plan.dataset_path = beside;
  }
  return plan;
}

// ---- execution -----------------------------------------------------------------------

namespace {

struct PlanCell {
  AttackKind attack;
  std::size_t k, n;
  double delta;
  TargetKind kind;
  std::size_t n_index, delta_index;
};

// Independent of the attack size: smaller sizes reuse a prefix of the largest
// campaign's fake users.
std::uint64_t cell_seed(const ExperimentPlan& plan, const PlanCell& c, Index target) {
  std::uint64_t s = mix_seed(plan.seed, 300 + static_cast<std::uint64_t>(c.attack));
  s = mix_seed(s, c.k);
  s = mix_seed(s, c.n_index);
  s = mix_seed(s, c.delta_index);
  return mix_seed(s, target);
}

std::vector<FakeUserProfile> craft(const ExperimentPlan& plan, AttackKind kind, const InteractionMatrix& known,
                                   const AttackConfig& cfg, std::uint64_t seed) {
  switch (kind) {
    case AttackKind::ours: {
      AttackConfig c = cfg;
      c.seed = seed;
      NeumfConfig surrogate = plan.surrogate_config();
      surrogate.seed = mix_seed(seed, 1);
      return run_our_attack(known, surrogate, c);
    }
    case AttackKind::random: return run_random_attack(known, cfg, seed);
    case AttackKind::bandwagon: return run_bandwagon_attack(known, cfg, seed);
    case AttackKind::mf: {
      MfAttackConfig mf = plan.mf;
      mf.seed = seed;
      return run_mf_attack(known, cfg, mf);
    }
    case AttackKind::none: break;
  }
  return {};
}

std::string campaign_key(const ExperimentPlan& plan, const InteractionMatrix& full, AttackKind kind,
                         const AttackConfig& cfg, std::uint64_t seed) {
  std::ostringstream k;
  k << std::setprecision(17) << plan.dataset_format << '|' << full.num_users() << 'x' << full.num_items() << 'x' << full.nnz()
    << '|' << to_string(plan.knowledge) << ':' << plan.knowledge_fraction << ':' << plan.seed << '|'
    << to_string(kind) << '|' << seed << '|' << cfg.target << ' ' << cfg.n << ' ' << cfg.k << ' ' << cfg.kappa
    << ' ' << cfg.eta << ' ' << cfg.lambda << ' ' << cfg.delta << ' ' << cfg.s << ' ' << cfg.include_target_by_default
    << ' ' << cfg.pretrain_epochs << ' ' << cfg.poison_epochs << ' ' << cfg.auto_scale_lambda << ' '
    << cfg.objective_user_sample << ' ' << cfg.objective_item_sample;
  if (kind == AttackKind::ours) {
    const auto nc = plan.surrogate_config();
    k << '|' << nc.mf_dim << ' ' << dims_label(nc.mlp_dims) << ' ' << nc.learning_rate << ' ' << nc.epochs << ' '
      << nc.batch_size << ' ' << nc.negatives_per_positive;
  }
  if (kind == AttackKind::mf) {
    k << '|' << plan.mf.dim << ' ' << plan.mf.regularization << ' ' << plan.mf.confidence << ' ' << plan.mf.als_sweeps
      << ' ' << plan.mf.ascent_steps << ' ' << plan.mf.step_size;
  }
  return k.str();
}

// Our attack crafts s users per round, so a prefix only matches a fresh run
// when it ends on a round boundary.
std::vector<FakeUserProfile> craft_cached(const ExperimentPlan& plan, const InteractionMatrix& full, AttackKind kind,
                                          const InteractionMatrix& known, const AttackConfig& cfg, std::uint64_t seed,
                                          CampaignCache& cache) {
  const auto key = campaign_key(plan, full, kind, cfg, seed);
  std::vector<FakeUserProfile> hit;
  bool found = false;
#pragma omp critical(plan_campaigns)
  {
    const auto it = cache.find(key);
    if (it != cache.end() && cfg.m <= it->second.size() &&
        (kind != AttackKind::ours || cfg.m == it->second.size() || cfg.m % cfg.s == 0)) {
      hit.assign(it->second.begin(), it->second.begin() + static_cast<std::ptrdiff_t>(cfg.m));
      found = true;
    }
  }
  if (found) return hit;
  auto fakes = craft(plan, kind, known, cfg, seed);
#pragma omp critical(plan_campaigns)
  {
    auto& slot = cache[key];
    if (fakes.size() > slot.size()) slot = fakes;
  }
  return fakes;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int attack_order(const std::string& a) {
  int i = 0;
  for (auto k : {AttackKind::none, AttackKind::ours, AttackKind::random, AttackKind::bandwagon, AttackKind::mf}) {
    if (a == to_string(k)) return i;
    ++i;
  }
  return i;
}

bool row_less(const ResultRow& a, const ResultRow& b) {
  return std::make_tuple(a.dataset, a.k, a.n, a.delta, a.knowledge, a.knowledge_fraction, a.victim,
                         attack_order(a.attack), a.attack, a.surrogate, a.target_kind, a.attack_size) <
         std::make_tuple(b.dataset, b.k, b.n, b.delta, b.knowledge, b.knowledge_fraction, b.victim,
                         attack_order(b.attack), b.attack, b.surrogate, b.target_kind, b.attack_size);
}

}  // namespace

std::vector<ResultRow> run_plan(const ExperimentPlan& plan, const InteractionMatrix& full, BaselineCache* cache,
                                const LogFn& log, CampaignCache* campaigns) {
  plan.validate();
  auto say = [&](const std::string& s) {
    if (log) {
#pragma omp critical(plan_log)
      log(s);
    }
  };
  BaselineCache local;
  BaselineCache& baseline = cache != nullptr ? *cache : local;
  CampaignCache local_campaigns;
  CampaignCache& crafted = campaigns != nullptr ? *campaigns : local_campaigns;

  const NeumfConfig victim = plan.victim_config();
  const std::string victim_label = dims_label(victim.mlp_dims);
  const std::string surrogate_label = dims_label(plan.surrogate_config().mlp_dims);
  const std::size_t threshold = plan.unpopular_threshold.value_or(default_unpopular_threshold(plan.dataset_format));
  const auto known = restrict_knowledge(full, plan.knowledge, plan.knowledge_fraction, mix_seed(plan.seed, 20));
  const std::string dataset = plan.name;

  std::map<TargetKind, std::vector<Index>> targets;
  for (auto kind : plan.target_kinds) {
    targets[kind] = sample_targets(full, kind, plan.targets_count, threshold,
                                   mix_seed(plan.seed, 10 + static_cast<std::uint64_t>(kind)));
  }

  // Baseline HR for every target, once per K.
  for (std::size_t k : plan.k_values) {
    std::vector<Index> missing;
    for (const auto& [kind, ts] : targets) {
      for (Index t : ts) {
        if (!baseline.count(BaselineKey{k, victim_label, plan.runs, plan.seed, t}) &&
            std::find(missing.begin(), missing.end(), t) == missing.end()) {
          missing.push_back(t);
        }
      }
    }
    if (missing.empty()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    const auto report = evaluate_hr(full, victim, missing, k, plan.runs);
    for (std::size_t j = 0; j < missing.size(); ++j) {
      baseline[BaselineKey{k, victim_label, plan.runs, plan.seed, missing[j]}] = report.per_target[j];
    }
    say("baseline K=" + std::to_string(k) + " targets=" + std::to_string(missing.size()) + " " +
        std::to_string(seconds_since(t0)) + "s");
  }

  std::vector<PlanCell> cells;
  for (auto attack : plan.attack_kinds) {
    for (std::size_t k : plan.k_values) {
      for (auto kind : plan.target_kinds) {
        if (attack == AttackKind::none) {
          cells.push_back({attack, k, 0, 0.0, kind, 0, 0});
          continue;
        }
        for (std::size_t ni = 0; ni < plan.n_values.size(); ++ni) {
          for (std::size_t di = 0; di < plan.delta_values.size(); ++di) {
            cells.push_back({attack, k, plan.n_values[ni], plan.delta_values[di], kind, ni, di});
          }
        }
      }
    }
  }

  // Largest size first so smaller ones can take a prefix.
  std::vector<double> sizes = plan.attack_sizes;
  std::sort(sizes.begin(), sizes.end(), std::greater<>());
  auto fake_count = [&](double size) {
    return static_cast<std::size_t>(std::max<long>(1, std::lround(size * static_cast<double>(full.num_normal_users()))));
  };

  std::vector<std::vector<ResultRow>> cell_rows(cells.size());
  const int workers = static_cast<int>(std::max<std::size_t>(1, plan.workers));
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(cells.size()); ++ci) {
    const PlanCell& c = cells[static_cast<std::size_t>(ci)];
    const std::vector<double> cell_sizes = c.attack == AttackKind::none ? std::vector<double>{0.0} : sizes;
    auto& out = cell_rows[static_cast<std::size_t>(ci)];
    for (double size : cell_sizes) {
      ResultRow row;
      row.dataset = dataset;
      row.attack = to_string(c.attack);
      row.attack_size = size;
      row.k = c.k;
      row.n = c.n;
      row.delta = c.delta;
      row.target_kind = to_string(c.kind);
      row.knowledge = to_string(plan.knowledge);
      row.knowledge_fraction = plan.knowledge_fraction;
      row.surrogate = c.attack == AttackKind::ours ? surrogate_label : "";
      row.victim = victim_label;
      row.targets = targets.at(c.kind);
      row.runs = plan.runs;
      out.push_back(std::move(row));
    }

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::vector<double>> fprs(out.size()), fnrs(out.size());
    for (Index t : out.front().targets) {
      std::optional<DetectionFixture> fixture;
      std::uint64_t fx_seed = 0;
      for (std::size_t si = 0; si < out.size(); ++si) {
        ResultRow& row = out[si];
        if (!row.error.empty()) continue;
        try {
          const double base = baseline.at(BaselineKey{c.k, victim_label, plan.runs, plan.seed, t});
          if (c.attack == AttackKind::none) {
            row.per_target_hr.push_back(base);
            continue;
          }
          AttackConfig cfg = plan.attack;
          cfg.target = t;
          cfg.m = fake_count(row.attack_size);
          cfg.n = c.n;
          cfg.k = c.k;
          cfg.delta = c.delta;
          const auto seed = cell_seed(plan, c, t);
          const auto fakes = craft_cached(plan, full, c.attack, known, cfg, seed, crafted);
          InteractionMatrix poisoned = inject(full, fakes);
          if (plan.detection) {
            if (!fixture) {
              AttackConfig fx_cfg = cfg;
              fx_cfg.m = plan.detection->training_pairs;
              fx_cfg.s = std::max(cfg.s, plan.detection_fixture_s);
              fx_seed = mix_seed(seed, 77);
              const auto fixture_fakes = craft_cached(plan, full, c.attack, known, fx_cfg, fx_seed, crafted);
              fixture = build_fixture(full, fixture_fakes, plan.detection->training_pairs, fx_seed);
            }
            std::vector<Index> injected(fakes.size());
            std::iota(injected.begin(), injected.end(), static_cast<Index>(full.num_users()));
            DetectionConfig dcfg = *plan.detection;
            dcfg.seed = mix_seed(fx_seed, 1);
            const auto report = run_detection(poisoned, injected, *fixture, dcfg);
            fprs[si].push_back(report.fpr);
            if (report.fnr) fnrs[si].push_back(*report.fnr);
            poisoned = filter_matrix(poisoned, report);
          }
          const std::vector<Index> one{t};
          const double hr = evaluate_hr(poisoned, victim, one, c.k, plan.runs).mean_hr;
          row.per_target_hr.push_back(hr);
          if (hr > base) ++row.promoted_count;
        } catch (const std::exception& e) {
          row.error = e.what();
        }
      }
    }
    for (std::size_t si = 0; si < out.size(); ++si) {
      ResultRow& row = out[si];
      if (row.error.empty()) {
        row.mean_hr = mean_of(row.per_target_hr);
        row.std_hr = std_of(row.per_target_hr);
        if (plan.detection && c.attack != AttackKind::none) {
          row.fpr = mean_of(fprs[si]);
          if (!fnrs[si].empty()) row.fnr = mean_of(fnrs[si]);
        }
      } else {
        row.per_target_hr.clear();
        row.promoted_count = 0;
      }
      std::ostringstream msg;
      msg << "cell attack=" << row.attack << " size=" << row.attack_size << " K=" << row.k << " n=" << row.n
          << " delta=" << row.delta << " targets=" << row.target_kind << " mean_hr=" << row.mean_hr
          << " wall=" << std::fixed << std::setprecision(1) << seconds_since(t0) << "s"
          << (row.error.empty() ? "" : " error=" + row.error);
      say(msg.str());
    }
  }
  std::vector<ResultRow> rows;
  for (auto& group : cell_rows) {
    for (auto& r : group) rows.push_back(std::move(r));
  }
  std::sort(rows.begin(), rows.end(), row_less);
  return rows;
}

std::vector<ResultRow> run_plan(const ExperimentPlan& plan, const LogFn& log) {
  const auto full = load_dataset(plan.dataset_path, plan.dataset_format, plan.k_core);
  return run_plan(plan, full, nullptr, log);
}

// ---- reports -------------------------------------------------------------------------

ReportFormat parse_report_format(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  throw Error("unknown report format '" + s + "'");
}

namespace {

const char* kCsvHeader =
    "dataset,attack,attack_size,K,n,delta,target_kind,knowledge,knowledge_fraction,surrogate,victim,targets,"
    "per_target_hr,mean_hr,std_hr,runs,promoted_count,fpr,fnr,error";

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(17) << x;
  return s.str();
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_results_csv(std::ostream& out, std::span<const ResultRow> rows) {
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    std::string ts, hs;
    for (std::size_t j = 0; j < r.targets.size(); ++j) ts += (j ? ";" : "") + std::to_string(r.targets[j]);
    for (std::size_t j = 0; j < r.per_target_hr.size(); ++j) hs += (j ? ";" : "") + fmt(r.per_target_hr[j]);
    out << csv_escape(r.dataset) << ',' << r.attack << ',' << fmt(r.attack_size) << ',' << r.k << ',' << r.n << ','
        << fmt(r.delta) << ',' << r.target_kind << ',' << r.knowledge << ',' << fmt(r.knowledge_fraction) << ','
        << r.surrogate << ',' << r.victim << ',' << ts << ',' << hs << ',' << fmt(r.mean_hr) << ',' << fmt(r.std_hr)
        << ',' << r.runs << ',' << r.promoted_count << ',' << (r.fpr ? fmt(*r.fpr) : "") << ','
        << (r.fnr ? fmt(*r.fnr) : "") << ',' << csv_escape(r.error) << '\n';
  }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw ParseError("<results>", 1, "unexpected header");
  std::vector<ResultRow> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = csv_fields(line);
    if (f.size() != 20) throw ParseError("<results>", n, "expected 20 fields");
    ResultRow r;
    r.dataset = f[0];
    r.attack = f[1];
    r.attack_size = std::stod(f[2]);
    r.k = std::stoul(f[3]);
    r.n = std::stoul(f[4]);
    r.delta = std::stod(f[5]);
    r.target_kind = f[6];
    r.knowledge = f[7];
    r.knowledge_fraction = std::stod(f[8]);
    r.surrogate = f[9];
    r.victim = f[10];
    if (!f[11].empty()) {
      for (const auto& t : split(f[11], ';')) r.targets.push_back(static_cast<Index>(std::stoul(t)));
    }
    if (!f[12].empty()) {
      for (const auto& h : split(f[12], ';')) r.per_target_hr.push_back(std::stod(h));
    }
    r.mean_hr = std::stod(f[13]);
    r.std_hr = std::stod(f[14]);
    r.runs = std::stoul(f[15]);
    r.promoted_count = std::stoul(f[16]);
    if (!f[17].empty()) r.fpr = std::stod(f[17]);
    if (!f[18].empty()) r.fnr = std::stod(f[18]);
    r.error = f[19];
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_results_markdown(std::ostream& out, std::span<const ResultRow> rows) {
  using GroupKey =
      std::tuple<std::size_t, std::size_t, double, std::string, double, std::string, std::string, bool>;
  std::map<GroupKey, std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) {
    const std::string surrogate = r.surrogate == r.victim ? "" : r.surrogate;
    groups[{r.k, r.n, r.delta, r.knowledge, r.knowledge_fraction, surrogate, r.victim, r.fpr.has_value()}].push_back(
        &r);
  }
  // "none" rows have no size and no surrogate; fold them into every table of
  // the same K and dataset.
  std::vector<const ResultRow*> none_rows;
  for (const auto& r : rows) {
    if (r.attack == "none") none_rows.push_back(&r);
  }
  bool first = true;
  for (const auto& [key, members] : groups) {
    const auto& [k, n, delta, knowledge, fraction, surrogate, victim, detection] = key;
    if (std::all_of(members.begin(), members.end(), [](const ResultRow* r) { return r->attack == "none"; }) &&
        groups.size() > 1) {
      continue;
    }
    std::vector<const ResultRow*> table = members;
    std::set<std::string> datasets;
    for (const auto* r : members) datasets.insert(r->dataset);
    for (const auto* r : none_rows) {
      if (r->k == k && datasets.count(r->dataset) && std::find(table.begin(), table.end(), r) == table.end()) {
        table.push_back(r);
      }
    }
    std::set<std::pair<std::string, double>> columns;
    std::set<double> sizes;
    std::set<std::string> kinds;
    for (const auto* r : table) {
      if (r->attack == "none") continue;
      sizes.insert(r->attack_size);
      kinds.insert(r->target_kind);
    }
    if (kinds.empty()) {
      for (const auto* r : table) kinds.insert(r->target_kind);
    }
    for (const auto& kind : kinds) {
      for (double s : sizes) columns.insert({kind, s});
    }
    if (!first) out << '\n';
    first = false;
    out << "### K=" << k << ", n=" << n << ", delta=" << delta << ", knowledge=" << knowledge;
    if (knowledge != "full") out << " (" << fraction << ")";
    out << ", victim=" << victim;
    if (!surrogate.empty()) out << ", surrogate=" << surrogate;
    if (detection) out << ", detection=svm-tia";
    out << "\n\n| Dataset | Attack |";
    for (const auto& [kind, s] : columns) out << ' ' << kind << ' ' << fmt(s * 100.0) << "% |";
    out << "\n|---|---|";
    for (std::size_t j = 0; j < columns.size(); ++j) out << "---|";
    out << '\n';

    std::vector<std::pair<std::string, std::string>> row_keys;
    for (const auto* r : table) {
      std::pair<std::string, std::string> rk{r->dataset, r->attack};
      if (std::find(row_keys.begin(), row_keys.end(), rk) == row_keys.end()) row_keys.push_back(rk);
    }
    std::stable_sort(row_keys.begin(), row_keys.end(), [](const auto& a, const auto& b) {
      return std::make_pair(a.first, attack_order(a.second)) < std::make_pair(b.first, attack_order(b.second));
    });
    for (const auto& [ds, attack] : row_keys) {
      out << "| " << ds << " | " << attack << " |";
      for (const auto& [kind, s] : columns) {
        const ResultRow* hit = nullptr;
        for (const auto* r : table) {
          if (r->dataset == ds && r->attack == attack && r->target_kind == kind &&
              (attack == "none" || r->attack_size == s)) {
            hit = r;
          }
        }
        out << ' ';
        if (hit == nullptr) out << '-';
        else if (!hit->error.empty()) out << "error";
        else out << std::fixed << std::setprecision(4) << hit->mean_hr << std::defaultfloat;
        out << " |";
      }
      out << '\n';
    }
  }
}

void emit_report(std::span<const ResultRow> rows, ReportFormat format, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  if (format == ReportFormat::csv) write_results_csv(out, rows);
  else write_results_markdown(out, rows);
}

std::filesystem::path make_run_directory(const std::filesystem::path& root) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream name;
  name << "run-" << std::put_time(&tm, "%Y%m%d-%H%M%S");
  auto dir = root / name.str();
  for (int k = 1; std::filesystem::exists(dir); ++k) dir = root / (name.str() + "-" + std::to_string(k));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace poisonrec
