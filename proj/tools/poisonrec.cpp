#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <memory>

#include "poisonrec/attack.hpp"
#include "poisonrec/detect.hpp"
#include "poisonrec/harness.hpp"
#include "poisonrec/recsys.hpp"

using namespace poisonrec;

namespace {

struct DataArgs {
  std::string path;
  std::string format = "canonical";
  std::size_t k_core = 0;

  void add(CLI::App* app) {
    app->add_option("--data", path, "Dataset file")->required();
    app->add_option("--format", format, "canonical | ml-100k | ml-1m | movielens | lastfm");
    app->add_option("--k-core", k_core, "k-core filter applied after loading");
  }
  InteractionMatrix load() const { return load_dataset(path, format, k_core); }
};

std::ostream& open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw Error("cannot write " + path);
  return file;
}

std::vector<FakeUserProfile> craft_fakes(const std::string& kind, const InteractionMatrix& m, const AttackConfig& cfg,
                                         const NeumfConfig& neumf, std::uint64_t seed) {
  switch (parse_attack_kind(kind)) {
    case AttackKind::ours: {
      AttackConfig c = cfg;
      c.seed = seed;
      return run_our_attack(m, neumf, c, [](const AttackProgress& p) {
        std::clog << "fake users " << p.produced << "/" << p.total << " lambda " << p.lambda << '\n';
      });
    }
    case AttackKind::random: return run_random_attack(m, cfg, seed);
    case AttackKind::bandwagon: return run_bandwagon_attack(m, cfg, seed);
    case AttackKind::mf: {
      MfAttackConfig mf;
      mf.seed = seed;
      return run_mf_attack(m, cfg, mf);
    }
    case AttackKind::none: break;
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Poisoning attacks and defenses for a NeuMF recommender"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::string out;
  app.add_option("--seed", seed, "Master seed")->capture_default_str();
  app.add_option("--out", out, "Output file or directory (default: stdout)");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Load a raw rating file and write the canonical matrix");
  DataArgs pre_data;
  pre_data.add(pre);

  // attack
  auto* atk = app.add_subcommand("attack", "Craft fake user profiles");
  DataArgs atk_data;
  atk_data.add(atk);
  std::string atk_kind = "ours", atk_config;
  double atk_size = 0.0;
  AttackConfig atk_cfg;
  NeumfConfig atk_neumf;
  atk->add_option("--attack", atk_kind, "ours | random | bandwagon | mf");
  atk->add_option("--config", atk_config, "Attack config file (key = value)");
  atk->add_option("--target", atk_cfg.target, "Target item index");
  atk->add_option("--m", atk_cfg.m, "Number of fake users");
  atk->add_option("--size", atk_size, "Fake users as a fraction of normal users (overrides --m)");
  atk->add_option("--n", atk_cfg.n, "Filler items per fake user");
  atk->add_option("--K", atk_cfg.k, "Recommendation list length");
  atk->add_option("--delta", atk_cfg.delta, "Selection-probability attenuation");
  atk->add_option("--s", atk_cfg.s, "Fake users per poison-model round");
  atk->add_option("--epochs", atk_neumf.epochs, "Poison-model pretraining epochs (first round)");
  atk->add_flag("!--no-default-target", atk_cfg.include_target_by_default, "Do not force the target into profiles");

  // detect
  auto* det = app.add_subcommand("detect", "Inject an attack and run SVM-TIA detection");
  DataArgs det_data;
  det_data.add(det);
  std::string det_kind = "random";
  double det_size = 0.05;
  AttackConfig det_cfg;
  DetectionConfig det_dcfg;
  std::size_t det_fixture_s = 10;
  det->add_option("--attack", det_kind, "ours | random | bandwagon | mf");
  det->add_option("--target", det_cfg.target, "Target item index");
  det->add_option("--size", det_size, "Attack size");
  det->add_option("--n", det_cfg.n, "Filler items per fake user");
  det->add_option("--tau-fraction", det_dcfg.tau_fraction, "TIA threshold as a fraction of normal users");
  det->add_option("--training-pairs", det_dcfg.training_pairs, "Fixture fake and normal users per class");
  det->add_option("--fixture-s", det_fixture_s, "Fake users per round when crafting the fixture (ours)");
  det->add_flag("!--no-default-target", det_cfg.include_target_by_default, "Do not force the target into profiles");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Train the recommender and report HR@K");
  DataArgs ev_data;
  ev_data.add(ev);
  std::string ev_fakes;
  std::vector<Index> ev_targets;
  std::size_t ev_k = 10, ev_runs = 5;
  NeumfConfig ev_neumf;
  ev->add_option("--fakes", ev_fakes, "Fake profiles to inject (`u i score` lines)");
  ev->add_option("--targets", ev_targets, "Target item indices")->required();
  ev->add_option("--K", ev_k, "Recommendation list length");
  ev->add_option("--runs", ev_runs, "Independently seeded trainings");
  ev->add_option("--epochs", ev_neumf.epochs, "Training epochs");

  // plan
  auto* pl = app.add_subcommand("plan", "Run an experiment plan into a run-stamped directory");
  std::string plan_path, plan_format = "both";
  pl->add_option("plan", plan_path, "Plan file")->required();
  pl->add_option("--format", plan_format, "csv | markdown | both");

  CLI11_PARSE(app, argc, argv);

  try {
    std::ofstream file;
    if (*pre) {
      const auto m = pre_data.load();
      std::clog << "users " << m.num_users() << " items " << m.num_items() << " ratings " << m.nnz() << '\n';
      write_matrix(open_out(out, file), m);
    } else if (*atk) {
      const auto m = atk_data.load();
      AttackConfig cfg = atk_config.empty() ? atk_cfg : load_attack_config(atk_config, atk_cfg);
      if (atk_size > 0.0) cfg.m = std::max<std::size_t>(1, std::lround(atk_size * m.num_normal_users()));
      NeumfConfig neumf = atk_neumf;
      neumf.seed = mix_seed(seed, 1);
      const auto fakes = craft_fakes(atk_kind, m, cfg, neumf, seed);
      write_profiles(open_out(out, file), m, fakes);
    } else if (*det) {
      const auto m = det_data.load();
      AttackConfig cfg = det_cfg;
      cfg.m = std::max<std::size_t>(1, std::lround(det_size * m.num_normal_users()));
      NeumfConfig neumf;
      neumf.seed = mix_seed(seed, 1);
      const auto fakes = craft_fakes(det_kind, m, cfg, neumf, seed);
      AttackConfig fx = cfg;
      fx.m = det_dcfg.training_pairs;
      fx.s = std::max(cfg.s, det_fixture_s);
      const auto fixture_fakes = craft_fakes(det_kind, m, fx, neumf, mix_seed(seed, 77));
      const auto fixture = build_fixture(m, fixture_fakes, det_dcfg.training_pairs, mix_seed(seed, 78));
      std::vector<Index> injected(fakes.size());
      for (std::size_t j = 0; j < fakes.size(); ++j) injected[j] = static_cast<Index>(m.num_users() + j);
      det_dcfg.seed = seed;
      const auto report = run_detection(inject(m, fakes), injected, fixture, det_dcfg);
      const DetectionRow row{det_kind, det_size, report};
      write_detection_csv(open_out(out, file), std::span<const DetectionRow>(&row, 1));
    } else if (*ev) {
      auto m = ev_data.load();
      if (!ev_fakes.empty()) {
        std::ifstream in(ev_fakes);
        if (!in) throw Error("cannot open " + ev_fakes);
        m = inject(m, read_profiles(in, m, ev_fakes));
      }
      NeumfConfig neumf = ev_neumf;
      neumf.seed = seed;
      const auto report = evaluate_hr(m, neumf, ev_targets, ev_k, ev_runs);
      const auto rows = report_rows(report, ev_data.path, ev_fakes.empty() ? "none" : "injected", 0.0, ev_k, "given");
      write_hit_ratio_csv(open_out(out, file), rows);
    } else if (*pl) {
      auto plan = load_plan(plan_path);
      if (app.get_option("--seed")->count() > 0) plan.seed = seed;
      const auto dir = make_run_directory(out.empty() ? std::filesystem::path("runs") : std::filesystem::path(out));
      std::ofstream log(dir / "run.log");
      const auto t0 = std::chrono::steady_clock::now();
      const auto rows = run_plan(plan, [&](const std::string& line) {
        std::clog << line << '\n';
        log << line << '\n' << std::flush;
      });
      if (plan_format == "csv" || plan_format == "both") emit_report(rows, ReportFormat::csv, dir / "results.csv");
      if (plan_format == "markdown" || plan_format == "both") {
        emit_report(rows, ReportFormat::markdown, dir / "results.md");
      }
      log << "total " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << "s\n";
      std::cout << dir.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
