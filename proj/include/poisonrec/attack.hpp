#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "poisonrec/dataset.hpp"
#include "poisonrec/kernels.hpp"
#include "poisonrec/neumf.hpp"

namespace poisonrec {

struct AttackConfig {
  Index target = 0;
  std::size_t m = 1;   // fake users to inject
  std::size_t n = 30;  // filler items per fake user
  std::size_t k = 10;  // recommendation list length
  double kappa = 1.0;
  double eta = 100.0;
  double lambda = 0.01;
  double delta = 0.9;
  std::size_t s = 1;  // fake users generated per poison-model round
  bool include_target_by_default = true;
  std::size_t pretrain_epochs = 3;
  std::size_t poison_epochs = 3;
  /// Rescale lambda once per round so lambda * G matches the BCE magnitude.
  bool auto_scale_lambda = true;
  /// Minibatch estimate of G: normal users and fake-row items sampled per step
  /// (0 = use all, i.e. the exact objective every step).
  std::size_t objective_user_sample = 64;
  std::size_t objective_item_sample = 64;
  std::uint64_t seed = 0;

  void validate(std::size_t num_items) const;
};

/// Flat `key = value` file; unknown keys are an error. Keys: target, m, n, K,
/// kappa, eta, lambda, delta, s, include_target_by_default, pretrain_epochs,
/// poison_epochs, auto_scale_lambda, objective_user_sample,
/// objective_item_sample, seed.
AttackConfig load_attack_config(const std::filesystem::path& path, AttackConfig base = {});
AttackConfig parse_attack_config(std::istream& in, AttackConfig base = {});

struct FakeUserProfile {
  Index user = 0;
  std::vector<Interaction> ratings;  // sorted by item
};

/// Appends the profiles (in order) as injected users.
InteractionMatrix inject(const InteractionMatrix& matrix, std::span<const FakeUserProfile> profiles);
/// `u i score` lines, user ids as stored in the profiles (starting at M).
void write_profiles(std::ostream& out, const InteractionMatrix& matrix, std::span<const FakeUserProfile> profiles);
/// Inverse of write_profiles: users must be >= M and appear in one contiguous
/// block each; items are resolved through the matrix's item ids when present.
std::vector<FakeUserProfile> read_profiles(std::istream& in, const InteractionMatrix& matrix,
                                           const std::string& source = "<profiles>");

// ---- hit-ratio surrogate losses ----------------------------------------------------

/// Per-user margin loss max{ min_{i in L_u} log y_ui - log y_ut, -kappa } where
/// L_u is the user's current top-K over unrated items. Logs use clamped
/// probabilities. `rated` sorted by item; the target must be unrated.
double loss_user(std::span<const double> predictions, std::span<const Interaction> rated, Index target,
                 std::size_t k, double kappa);

/// Sum of loss_user over normal users that have not rated the target.
double loss_all(const ScoreMatrix& predictions, const InteractionMatrix& train, Index target, std::size_t k,
                double kappa);

/// ||fake_row||^2 + eta * lprime.
double attack_objective(std::span<const double> fake_row, double lprime, double eta);

/// The promotion objective G = sum_v ||y_hat_v||^2 + eta * l' as a ScoreTerm,
/// optionally estimated on sampled users / items (scaled to stay unbiased).
/// The argmin item of each user's list is fixed at construction.
class PromotionObjective : public ScoreTerm {
 public:
  struct UserAnchor {
    Index user;
    Index list_min_item;
  };
  PromotionObjective(std::span<const Index> fake_users, std::span<const Index> fake_items, double item_scale,
                     std::span<const UserAnchor> anchors, double user_scale, Index target, double kappa, double eta);

  std::span<const Cell> cells() const override { return cells_; }
  double evaluate(std::span<const double> scores, std::span<double> dscores) const override;

 private:
  std::vector<Cell> cells_;
  std::size_t fake_cells_ = 0;
  double item_scale_, user_scale_;
  double kappa_, eta_;
};

/// For every normal user who has not rated the target: the lowest-scored item
/// of its current top-K list.
std::vector<PromotionObjective::UserAnchor> list_anchors(const ScoreMatrix& predictions,
                                                         const InteractionMatrix& train, Index target,
                                                         std::size_t k);

// ---- poison model -----------------------------------------------------------------

struct PoisonModelState {
  NeumfModel model;
  InteractionMatrix matrix;
};

/// Exact promotion objective for `fake_users` under the state's current model.
PromotionObjective exact_objective(const PoisonModelState& state, std::span<const Index> fake_users,
                                   const AttackConfig& cfg);

/// L(batch) + lambda * G, with G evaluated exactly.
double poison_loss(const PoisonModelState& state, std::span<const Index> fake_users, const AttackConfig& cfg,
                   std::span<const Example> batch, double lambda);

/// Trains the poison model on `matrix` with plain BCE: from scratch with
/// cfg.epochs when no warm start is given, otherwise `warm_epochs` epochs from
/// the warm start (expanded with fresh rows for users it does not know yet).
PoisonModelState pretrain_poison_model(const InteractionMatrix& matrix, const NeumfConfig& cfg,
                                       const std::optional<NeumfModel>& warm_start, std::size_t warm_epochs);

/// lambda actually used by poison_train for this state.
double effective_lambda(const PoisonModelState& state, std::span<const Index> fake_users, const AttackConfig& attack,
                        const NeumfConfig& cfg);

/// attack.poison_epochs of minibatch Adam on BCE + lambda * G. Lists (and
/// their argmin anchors) are refreshed at the start of every epoch.
PoisonModelState poison_train(const PoisonModelState& state, std::span<const Index> fake_users,
                              const AttackConfig& attack, const NeumfConfig& cfg, double* lambda_used = nullptr);

// ---- filler selection -----------------------------------------------------------

/// Per-item selection weights; start at 1 and decay by delta on each pick.
struct SelectionProbabilities {
  std::vector<double> p;
  explicit SelectionProbabilities(std::size_t num_items = 0) : p(num_items, 1.0) {}
};

/// Picks the items with the largest y_hat * p (ties: lower index): n non-target
/// items when the target is included by default, otherwise n + 1 items of any
/// kind. Picked entries decay p_i *= delta; when every p_i < 1 the vector
/// resets to all ones.
std::vector<Index> select_fillers(std::span<const double> predicted_row, SelectionProbabilities& p,
                                  const AttackConfig& cfg);

struct ItemRatingStats {
  std::vector<double> mean, std;
  std::vector<std::uint32_t> count;
  double global_mean = 0.0, global_std = 0.0;
};

/// Per-item normal fit (mean, population std) of the explicit scores.
ItemRatingStats compute_item_stats(const InteractionMatrix& matrix);

/// Explicit: Normal(mean_i, std_i) clamped to [1, r_max] and rounded to an
/// integer; items without ratings use the global fit. Implicit: 1.0.
std::vector<Interaction> generate_filler_scores(std::span<const Index> fillers, const ItemRatingStats& stats,
                                                double r_max, DatasetKind kind, Rng& rng);

// ---- attacks -----------------------------------------------------------------------

struct AttackProgress {
  std::size_t produced = 0;
  std::size_t total = 0;
  double lambda = 0.0;
};
using ProgressFn = std::function<void(const AttackProgress&)>;

/// The poison-model attack: per round, expand and pretrain the poison model,
/// poison-train it, predict the pending fake users' rows, select fillers with
/// the selection probabilities, draw scores, inject.
std::vector<FakeUserProfile> run_our_attack(const InteractionMatrix& matrix, const NeumfConfig& neumf_cfg,
                                            const AttackConfig& cfg, const ProgressFn& progress = {});

/// Uniformly random fillers.
std::vector<FakeUserProfile> run_random_attack(const InteractionMatrix& matrix, const AttackConfig& cfg,
                                               std::uint64_t seed);

/// round(0.1 n) fillers from the top-10% popularity items (mean score when
/// explicit, frequency when implicit), the rest uniformly from all other items.
std::vector<FakeUserProfile> run_bandwagon_attack(const InteractionMatrix& matrix, const AttackConfig& cfg,
                                                  std::uint64_t seed);

struct MfAttackConfig {
  std::size_t dim = 16;
  double regularization = 0.1;
  double confidence = 10.0;  // weight of observed entries relative to unobserved
  std::size_t als_sweeps = 10;
  std::size_t ascent_steps = 50;
  double step_size = 0.1;
  std::uint64_t seed = 0;
};

/// Matrix-factorization surrogate attack: fit an L2-regularized MF surrogate by
/// alternating least squares, then per fake user run projected gradient ascent
/// on a continuous rating vector in [0, r_max] to maximise the surrogate's
/// average predicted uplift of the target; the top-n coordinates become fillers.
std::vector<FakeUserProfile> run_mf_attack(const InteractionMatrix& matrix, const AttackConfig& cfg,
                                           const MfAttackConfig& mf_cfg);

}  // namespace poisonrec
