#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "poisonrec/common.hpp"
#include "poisonrec/dataset.hpp"

namespace poisonrec {

/// NeuMF architecture and training hyperparameters.
///
/// Embedding sizes, optimizer and epoch counts are not fixed by the model
/// family; the defaults are the usual NCF settings (Adam at 1e-3, 4 sampled
/// negatives per positive).
struct NeumfConfig {
  std::size_t mf_dim = 8;
  /// mlp_dims[0] is the width of the concatenated MLP embeddings (so each side
  /// gets mlp_dims[0] / 2); every later entry is a ReLU layer width.
  std::vector<std::size_t> mlp_dims{32, 16, 8};
  double learning_rate = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  std::size_t negatives_per_positive = 4;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t mlp_embedding_dim() const { return mlp_dims.front() / 2; }
};

/// Offsets of every parameter tensor inside one flat buffer. Shared by the
/// model and its gradients.
struct NeumfLayout {
  struct Dense {
    std::size_t in = 0, out = 0;
    std::size_t weight = 0;  // out x in, row-major
    std::size_t bias = 0;
  };
  std::size_t num_users = 0, num_items = 0;
  std::size_t mf_dim = 0, mlp_dim = 0;
  std::size_t mf_user = 0, mlp_user = 0, mf_item = 0, mlp_item = 0;
  std::vector<Dense> layers;
  std::size_t out_weight = 0, out_bias = 0;
  std::size_t total = 0;

  NeumfLayout() = default;
  NeumfLayout(std::size_t users, std::size_t items, const NeumfConfig& cfg);

  std::size_t output_width() const { return mf_dim + (layers.empty() ? 2 * mlp_dim : layers.back().out); }

  struct Named {
    std::string name;
    std::size_t offset, rows, cols;
  };
  std::vector<Named> tensors() const;
  friend bool operator==(const NeumfLayout& a, const NeumfLayout& b);
};

class NeumfModel {
 public:
  NeumfModel() = default;
  /// All-zero parameters.
  NeumfModel(std::size_t num_users, std::size_t num_items, NeumfConfig cfg);
  /// Gaussian(0, 0.01) embeddings, LeCun-uniform dense layers, zero biases.
  static NeumfModel initialized(std::size_t num_users, std::size_t num_items, NeumfConfig cfg,
                                std::uint64_t seed);

  std::size_t num_users() const { return layout_.num_users; }
  std::size_t num_items() const { return layout_.num_items; }
  const NeumfConfig& config() const { return cfg_; }
  const NeumfLayout& layout() const { return layout_; }

  std::span<double> params() { return values_; }
  std::span<const double> params() const { return values_; }

  std::span<const double> mf_user(std::size_t u) const { return row(layout_.mf_user, layout_.mf_dim, u); }
  std::span<const double> mf_item(std::size_t i) const { return row(layout_.mf_item, layout_.mf_dim, i); }
  std::span<const double> mlp_user(std::size_t u) const { return row(layout_.mlp_user, layout_.mlp_dim, u); }
  std::span<const double> mlp_item(std::size_t i) const { return row(layout_.mlp_item, layout_.mlp_dim, i); }

  /// Copy with `count` extra users appended; new embedding rows are drawn from
  /// the same initializer as a fresh model, existing parameters are preserved.
  NeumfModel with_added_users(std::size_t count, std::uint64_t seed) const;

  bool all_finite() const;
  friend bool operator==(const NeumfModel& a, const NeumfModel& b);

 private:
  std::span<const double> row(std::size_t base, std::size_t width, std::size_t r) const {
    return std::span<const double>(values_).subspan(base + r * width, width);
  }

  NeumfConfig cfg_;
  NeumfLayout layout_;
  std::vector<double> values_;
};

/// Gradient in model layout. `touched_users` / `touched_items` list the
/// embedding rows that may be non-zero.
struct NeumfGradient {
  NeumfLayout layout;
  std::vector<double> values;
  std::vector<Index> touched_users;
  std::vector<Index> touched_items;

  NeumfGradient() = default;
  explicit NeumfGradient(const NeumfLayout& l) : layout(l), values(l.total, 0.0) {}
  /// Zeroes only what the last accumulation could have written.
  void clear();
};

// ---- forward -------------------------------------------------------------------

/// sigmoid(h . [p_u (*) q_i, MLP(p'_u, q'_i)] + b). Throws std::out_of_range on
/// bad indices.
double forward(const NeumfModel& model, std::size_t user, std::size_t item);

inline constexpr double kProbabilityFloor = 1e-7;
inline double clamp_probability(double p) {
  return p < kProbabilityFloor ? kProbabilityFloor : (p > 1.0 - kProbabilityFloor ? 1.0 - kProbabilityFloor : p);
}

// ---- losses ----------------------------------------------------------------------

struct Example {
  Index user = 0;
  Index item = 0;
  double label = 0.0;
};

struct Cell {
  Index user = 0;
  Index item = 0;
};

/// A differentiable function of a finite set of predicted entries y_hat[u][i].
/// evaluate() receives predictions for cells() (same order) and writes
/// d(value)/d(prediction) into dscores.
class ScoreTerm {
 public:
  virtual ~ScoreTerm() = default;
  virtual std::span<const Cell> cells() const = 0;
  virtual double evaluate(std::span<const double> scores, std::span<double> dscores) const = 0;
};

/// Total loss = mean BCE over `batch` + extra_weight * extra.
struct LossSpec {
  std::span<const Example> batch;
  const ScoreTerm* extra = nullptr;
  double extra_weight = 0.0;
};

/// Mean binary cross entropy with probabilities clamped to [1e-7, 1 - 1e-7].
double bce_loss(const NeumfModel& model, std::span<const Example> batch);
double evaluate_loss(const NeumfModel& model, const LossSpec& spec);

/// Exact gradient of evaluate_loss(model, spec) w.r.t. every parameter.
NeumfGradient gradient(const NeumfModel& model, const LossSpec& spec, double* loss = nullptr);
/// Accumulating form used by training: adds into `grad` (which must be clear
/// or intentionally pre-filled) and returns the loss.
double accumulate_gradient(const NeumfModel& model, const LossSpec& spec, NeumfGradient& grad);

// ---- optimizer -------------------------------------------------------------------

/// Adam with lazy updates for embedding rows: dense layers step every call,
/// embedding rows step only when they appear in the gradient.
class Adam {
 public:
  Adam(const NeumfLayout& layout, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double epsilon = 1e-7);
  void step(NeumfModel& model, const NeumfGradient& grad);

 private:
  void update(std::span<double> params, std::size_t offset, std::size_t count, const NeumfGradient& g,
              double lr_t);

  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

// ---- training ---------------------------------------------------------------------

struct TrainRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  /// HR@10 of held-out positives against their sampled negatives; NaN when no
  /// validation set was given.
  double validation_metric = 0.0;
};

struct TrainResult {
  NeumfModel model;
  std::vector<TrainRecord> history;
};

/// Hooks for composite objectives (used by poison training). Both are optional.
struct TrainHooks {
  /// Called before each epoch's minibatches with the current model.
  std::function<void(const NeumfModel&, std::size_t epoch)> on_epoch_start;
  /// Returns the extra term for the next minibatch (may return nullptr).
  std::function<const ScoreTerm*(const NeumfModel&)> extra_term;
  double extra_weight = 0.0;
};

/// One positive per stored rating plus cfg.negatives_per_positive unrated items
/// per positive, shuffled.
std::vector<Example> sample_epoch(const InteractionMatrix& matrix, std::size_t negatives_per_positive, Rng& rng);

/// Minibatch Adam on mean BCE. Warm-starts from `init` when given (its shape must
/// match the matrix); optimizer state always starts fresh. Deterministic for a
/// fixed cfg.seed. Throws TrainingError on a non-finite loss.
TrainResult train(const InteractionMatrix& matrix, const NeumfConfig& cfg,
                  const std::optional<NeumfModel>& init = std::nullopt,
                  std::span<const ValidationCase> validation = {}, const TrainHooks& hooks = {});

/// Fraction of validation cases whose positive ranks within the top `k` among
/// itself and its negatives.
double validation_hit_ratio(const NeumfModel& model, std::span<const ValidationCase> validation,
                            std::size_t k = 10);

// ---- checkpoints ------------------------------------------------------------------
//
// One JSON header line (dims, config, tensor table) followed by the raw
// little-endian float64 parameter buffer.

void save_checkpoint(std::ostream& out, const NeumfModel& model);
void save_checkpoint(const std::filesystem::path& path, const NeumfModel& model);
NeumfModel load_checkpoint(std::istream& in);
NeumfModel load_checkpoint(const std::filesystem::path& path);

}  // namespace poisonrec
