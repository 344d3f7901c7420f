#include "poisonrec/neumf.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace poisonrec {

void NeumfConfig::validate() const {
  if (mlp_dims.empty()) throw Error("mlp_dims must not be empty");
  if (mlp_dims.front() == 0 || mlp_dims.front() % 2 != 0) throw Error("mlp_dims[0] must be even and positive");
  for (auto d : mlp_dims) {
    if (d == 0) throw Error("mlp_dims entries must be positive");
  }
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be > 0");
  if (batch_size == 0) throw Error("batch_size must be > 0");
}

NeumfLayout::NeumfLayout(std::size_t users, std::size_t items, const NeumfConfig& cfg)
    : num_users(users), num_items(items), mf_dim(cfg.mf_dim), mlp_dim(cfg.mlp_embedding_dim()) {
  std::size_t at = 0;
  mf_user = at;
  at += users * mf_dim;
  mlp_user = at;
  at += users * mlp_dim;
  mf_item = at;
  at += items * mf_dim;
  mlp_item = at;
  at += items * mlp_dim;
  for (std::size_t l = 1; l < cfg.mlp_dims.size(); ++l) {
    Dense d;
    d.in = cfg.mlp_dims[l - 1];
    d.out = cfg.mlp_dims[l];
    d.weight = at;
    at += d.in * d.out;
    d.bias = at;
    at += d.out;
    layers.push_back(d);
  }
  out_weight = at;
  at += output_width();
  out_bias = at;
  at += 1;
  total = at;
}

std::vector<NeumfLayout::Named> NeumfLayout::tensors() const {
  std::vector<Named> t{{"mf_user_emb", mf_user, num_users, mf_dim},
                       {"mlp_user_emb", mlp_user, num_users, mlp_dim},
                       {"mf_item_emb", mf_item, num_items, mf_dim},
                       {"mlp_item_emb", mlp_item, num_items, mlp_dim}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    t.push_back({"mlp_w" + std::to_string(l), layers[l].weight, layers[l].out, layers[l].in});
    t.push_back({"mlp_b" + std::to_string(l), layers[l].bias, layers[l].out, 1});
  }
  t.push_back({"out_w", out_weight, 1, output_width()});
  t.push_back({"out_b", out_bias, 1, 1});
  return t;
}

bool operator==(const NeumfLayout& a, const NeumfLayout& b) {
  if (a.total != b.total || a.num_users != b.num_users || a.num_items != b.num_items || a.mf_dim != b.mf_dim ||
      a.mlp_dim != b.mlp_dim || a.layers.size() != b.layers.size())
    return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].in != b.layers[l].in || a.layers[l].out != b.layers[l].out) return false;
  }
  return true;
}

NeumfModel::NeumfModel(std::size_t num_users, std::size_t num_items, NeumfConfig cfg)
    : cfg_(std::move(cfg)), layout_(num_users, num_items, cfg_), values_(layout_.total, 0.0) {
  cfg_.validate();
}

namespace {

void fill_embeddings(std::span<double> values, Rng& rng) {
  for (auto& v : values) v = 0.01 * standard_normal(rng);
}

void fill_dense(std::span<double> values, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(3.0 / static_cast<double>(fan_in));
  for (auto& v : values) v = limit * (2.0 * uniform_real(rng) - 1.0);
}

}  // namespace

NeumfModel NeumfModel::initialized(std::size_t num_users, std::size_t num_items, NeumfConfig cfg,
                                   std::uint64_t seed) {
  NeumfModel m(num_users, num_items, std::move(cfg));
  const auto& L = m.layout_;
  std::span<double> all(m.values_);
  Rng rng = make_rng(seed, 11);
  fill_embeddings(all.subspan(L.mf_user, L.mf_item - L.mf_user), rng);  // user tables
  Rng item_rng = make_rng(seed, 12);
  fill_embeddings(all.subspan(L.mf_item, num_items * (L.mf_dim + L.mlp_dim)), item_rng);
  Rng dense_rng = make_rng(seed, 13);
  for (const auto& d : L.layers) fill_dense(all.subspan(d.weight, d.in * d.out), d.in, dense_rng);
  fill_dense(all.subspan(L.out_weight, L.output_width()), L.output_width(), dense_rng);
  return m;
}

NeumfModel NeumfModel::with_added_users(std::size_t count, std::uint64_t seed) const {
  NeumfModel out(num_users() + count, num_items(), cfg_);
  const auto& A = layout_;
  const auto& B = out.layout_;
  auto copy = [&](std::size_t from, std::size_t to, std::size_t n) {
    std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(from), n,
                out.values_.begin() + static_cast<std::ptrdiff_t>(to));
  };
  copy(A.mf_user, B.mf_user, A.num_users * A.mf_dim);
  copy(A.mlp_user, B.mlp_user, A.num_users * A.mlp_dim);
  copy(A.mf_item, B.mf_item, A.total - A.mf_item);  // items and dense tail share one block
  Rng rng = make_rng(seed, 14);
  std::span<double> all(out.values_);
  fill_embeddings(all.subspan(B.mf_user + A.num_users * A.mf_dim, count * B.mf_dim), rng);
  fill_embeddings(all.subspan(B.mlp_user + A.num_users * A.mlp_dim, count * B.mlp_dim), rng);
  return out;
}

bool NeumfModel::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool operator==(const NeumfModel& a, const NeumfModel& b) {
  return a.layout_ == b.layout_ && a.values_ == b.values_;
}

void NeumfGradient::clear() {
  const auto& L = layout;
  for (Index u : touched_users) {
    std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(L.mf_user + u * L.mf_dim), L.mf_dim, 0.0);
    std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(L.mlp_user + u * L.mlp_dim), L.mlp_dim, 0.0);
  }
  for (Index i : touched_items) {
    std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(L.mf_item + i * L.mf_dim), L.mf_dim, 0.0);
    std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(L.mlp_item + i * L.mlp_dim), L.mlp_dim, 0.0);
  }
  const std::size_t dense_begin = L.mlp_item + L.num_items * L.mlp_dim;
  std::fill(values.begin() + static_cast<std::ptrdiff_t>(dense_begin), values.end(), 0.0);
  touched_users.clear();
  touched_items.clear();
}

// ---- forward / backward -------------------------------------------------------

namespace {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Activations of one (user, item) evaluation, kept for backprop.
struct Workspace {
  std::vector<double> features;                 // [mf product | last MLP output]
  std::vector<std::vector<double>> activations;  // activations[0] = MLP input, [l+1] = relu(z_l)
  std::vector<std::vector<double>> delta;        // scratch for backprop

  explicit Workspace(const NeumfLayout& L) {
    features.resize(L.output_width());
    activations.emplace_back(2 * L.mlp_dim);
    for (const auto& d : L.layers) activations.emplace_back(d.out);
    delta = activations;
  }
};

double forward_ws(const NeumfModel& model, std::size_t u, std::size_t i, Workspace& ws) {
  const auto& L = model.layout();
  const double* p = model.params().data();
  const double* pu = p + L.mf_user + u * L.mf_dim;
  const double* qi = p + L.mf_item + i * L.mf_dim;
  for (std::size_t k = 0; k < L.mf_dim; ++k) ws.features[k] = pu[k] * qi[k];

  auto& h0 = ws.activations[0];
  std::copy_n(p + L.mlp_user + u * L.mlp_dim, L.mlp_dim, h0.begin());
  std::copy_n(p + L.mlp_item + i * L.mlp_dim, L.mlp_dim, h0.begin() + static_cast<std::ptrdiff_t>(L.mlp_dim));
  for (std::size_t l = 0; l < L.layers.size(); ++l) {
    const auto& d = L.layers[l];
    const auto& in = ws.activations[l];
    auto& out = ws.activations[l + 1];
    const double* w = p + d.weight;
    const double* b = p + d.bias;
    for (std::size_t r = 0; r < d.out; ++r) {
      double z = b[r];
      const double* wr = w + r * d.in;
      for (std::size_t c = 0; c < d.in; ++c) z += wr[c] * in[c];
      out[r] = z > 0.0 ? z : 0.0;
    }
  }
  const auto& last = ws.activations.back();
  std::copy(last.begin(), last.end(), ws.features.begin() + static_cast<std::ptrdiff_t>(L.mf_dim));

  const double* h = p + L.out_weight;
  double logit = p[L.out_bias];
  for (std::size_t k = 0; k < ws.features.size(); ++k) logit += h[k] * ws.features[k];
  return sigmoid(logit);
}

// Adds dlogit * d(logit)/d(theta) into grad. `ws` must hold the forward pass for (u, i).
void backward_ws(const NeumfModel& model, std::size_t u, std::size_t i, double dlogit, Workspace& ws,
                 NeumfGradient& grad) {
  const auto& L = model.layout();
  const double* p = model.params().data();
  double* g = grad.values.data();

  const double* h = p + L.out_weight;
  for (std::size_t k = 0; k < ws.features.size(); ++k) g[L.out_weight + k] += dlogit * ws.features[k];
  g[L.out_bias] += dlogit;

  const double* pu = p + L.mf_user + u * L.mf_dim;
  const double* qi = p + L.mf_item + i * L.mf_dim;
  double* gpu = g + L.mf_user + u * L.mf_dim;
  double* gqi = g + L.mf_item + i * L.mf_dim;
  for (std::size_t k = 0; k < L.mf_dim; ++k) {
    const double df = dlogit * h[k];
    gpu[k] += df * qi[k];
    gqi[k] += df * pu[k];
  }

  // d(logit)/d(last activation)
  auto& top = ws.delta.back();
  for (std::size_t k = 0; k < top.size(); ++k) top[k] = dlogit * h[L.mf_dim + k];
  for (std::size_t l = L.layers.size(); l-- > 0;) {
    const auto& d = L.layers[l];
    auto& dout = ws.delta[l + 1];
    const auto& out = ws.activations[l + 1];
    const auto& in = ws.activations[l];
    auto& din = ws.delta[l];
    std::fill(din.begin(), din.end(), 0.0);
    const double* w = p + d.weight;
    double* gw = g + d.weight;
    double* gb = g + d.bias;
    for (std::size_t r = 0; r < d.out; ++r) {
      if (!(out[r] > 0.0)) continue;  // relu gate
      const double dz = dout[r];
      gb[r] += dz;
      const double* wr = w + r * d.in;
      double* gwr = gw + r * d.in;
      for (std::size_t c = 0; c < d.in; ++c) {
        gwr[c] += dz * in[c];
        din[c] += dz * wr[c];
      }
    }
  }
  const auto& d0 = ws.delta[0];
  double* gmu = g + L.mlp_user + u * L.mlp_dim;
  double* gmi = g + L.mlp_item + i * L.mlp_dim;
  for (std::size_t k = 0; k < L.mlp_dim; ++k) {
    gmu[k] += d0[k];
    gmi[k] += d0[L.mlp_dim + k];
  }
  grad.touched_users.push_back(static_cast<Index>(u));
  grad.touched_items.push_back(static_cast<Index>(i));
}

void check_indices(const NeumfModel& model, std::size_t u, std::size_t i) {
  if (u >= model.num_users() || i >= model.num_items()) {
    throw std::out_of_range("NeuMF index (" + std::to_string(u) + ", " + std::to_string(i) + ") outside " +
                            std::to_string(model.num_users()) + "x" + std::to_string(model.num_items()));
  }
}

double bce_term(double y_hat, double label) {
  const double c = clamp_probability(y_hat);
  return -(label * std::log(c) + (1.0 - label) * std::log(1.0 - c));
}

struct LossParts {
  double bce = 0.0;
  double extra = 0.0;
};

LossParts accumulate(const NeumfModel& model, const LossSpec& spec, NeumfGradient* grad) {
  LossParts parts;
  Workspace ws(model.layout());
  if (!spec.batch.empty()) {
    const double scale = 1.0 / static_cast<double>(spec.batch.size());
    double sum = 0.0;
    for (const auto& ex : spec.batch) {
      check_indices(model, ex.user, ex.item);
      const double y_hat = forward_ws(model, ex.user, ex.item, ws);
      sum += bce_term(y_hat, ex.label);
      if (grad) {
        // d/dz of the clamped BCE: (y_hat - label) inside the clamp, 0 outside.
        const bool inside = y_hat >= kProbabilityFloor && y_hat <= 1.0 - kProbabilityFloor;
        if (inside) backward_ws(model, ex.user, ex.item, scale * (y_hat - ex.label), ws, *grad);
      }
    }
    parts.bce = sum * scale;
  }
  if (spec.extra != nullptr && spec.extra_weight != 0.0) {
    auto cells = spec.extra->cells();
    std::vector<double> scores(cells.size()), dscores(cells.size(), 0.0);
    for (std::size_t k = 0; k < cells.size(); ++k) {
      check_indices(model, cells[k].user, cells[k].item);
      scores[k] = forward_ws(model, cells[k].user, cells[k].item, ws);
    }
    parts.extra = spec.extra->evaluate(scores, dscores);
    if (grad) {
      for (std::size_t k = 0; k < cells.size(); ++k) {
        if (dscores[k] == 0.0) continue;
        forward_ws(model, cells[k].user, cells[k].item, ws);
        const double dlogit = spec.extra_weight * dscores[k] * scores[k] * (1.0 - scores[k]);
        backward_ws(model, cells[k].user, cells[k].item, dlogit, ws, *grad);
      }
    }
  }
  if (grad) {
    auto dedup = [](std::vector<Index>& v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    dedup(grad->touched_users);
    dedup(grad->touched_items);
  }
  return parts;
}

}  // namespace

double forward(const NeumfModel& model, std::size_t user, std::size_t item) {
  check_indices(model, user, item);
  Workspace ws(model.layout());
  return forward_ws(model, user, item, ws);
}

double bce_loss(const NeumfModel& model, std::span<const Example> batch) {
  if (batch.empty()) throw Error("bce_loss: empty batch");
  return accumulate(model, LossSpec{batch}, nullptr).bce;
}

double evaluate_loss(const NeumfModel& model, const LossSpec& spec) {
  auto parts = accumulate(model, spec, nullptr);
  return parts.bce + spec.extra_weight * parts.extra;
}

NeumfGradient gradient(const NeumfModel& model, const LossSpec& spec, double* loss) {
  NeumfGradient g(model.layout());
  const double l = accumulate_gradient(model, spec, g);
  if (loss) *loss = l;
  return g;
}

double accumulate_gradient(const NeumfModel& model, const LossSpec& spec, NeumfGradient& grad) {
  if (!(grad.layout == model.layout())) throw Error("gradient layout does not match model");
  auto parts = accumulate(model, spec, &grad);
  return parts.bce + spec.extra_weight * parts.extra;
}

// ---- Adam -------------------------------------------------------------------------

Adam::Adam(const NeumfLayout& layout, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon), m_(layout.total, 0.0), v_(layout.total, 0.0) {}

void Adam::update(std::span<double> params, std::size_t offset, std::size_t count, const NeumfGradient& g,
                  double lr_t) {
  for (std::size_t k = offset; k < offset + count; ++k) {
    const double gk = g.values[k];
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * gk;
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * gk * gk;
    params[k] -= lr_t * m_[k] / (std::sqrt(v_[k]) + eps_);
  }
}

void Adam::step(NeumfModel& model, const NeumfGradient& grad) {
  const auto& L = model.layout();
  if (m_.size() != L.total) throw Error("Adam state does not match model");
  ++t_;
  const double t = static_cast<double>(t_);
  const double lr_t = lr_ * std::sqrt(1.0 - std::pow(beta2_, t)) / (1.0 - std::pow(beta1_, t));
  auto params = model.params();
  for (Index u : grad.touched_users) {
    update(params, L.mf_user + u * L.mf_dim, L.mf_dim, grad, lr_t);
    update(params, L.mlp_user + u * L.mlp_dim, L.mlp_dim, grad, lr_t);
  }
  for (Index i : grad.touched_items) {
    update(params, L.mf_item + i * L.mf_dim, L.mf_dim, grad, lr_t);
    update(params, L.mlp_item + i * L.mlp_dim, L.mlp_dim, grad, lr_t);
  }
  const std::size_t dense_begin = L.mlp_item + L.num_items * L.mlp_dim;
  update(params, dense_begin, L.total - dense_begin, grad, lr_t);
}

// ---- training ---------------------------------------------------------------------

std::vector<Example> sample_epoch(const InteractionMatrix& matrix, std::size_t negatives_per_positive, Rng& rng) {
  std::vector<Example> out;
  out.reserve(matrix.nnz() * (1 + negatives_per_positive));
  const std::size_t n = matrix.num_items();
  for (std::size_t u = 0; u < matrix.num_users(); ++u) {
    auto row = matrix.row(u);
    const bool can_sample = row.size() < n;
    for (const auto& e : row) {
      out.push_back({static_cast<Index>(u), e.item, 1.0});
      if (!can_sample) continue;
      for (std::size_t k = 0; k < negatives_per_positive; ++k) {
        Index j;
        do {
          j = static_cast<Index>(uniform_index(rng, n));
        } while (matrix.has(u, j));
        out.push_back({static_cast<Index>(u), j, 0.0});
      }
    }
  }
  shuffle(out, rng);
  return out;
}

double validation_hit_ratio(const NeumfModel& model, std::span<const ValidationCase> validation, std::size_t k) {
  if (validation.empty()) return std::nan("");
  Workspace ws(model.layout());
  std::size_t hits = 0;
  for (const auto& vc : validation) {
    const double pos = forward_ws(model, vc.user, vc.positive, ws);
    std::size_t above = 0;
    for (Index j : vc.negatives) {
      if (forward_ws(model, vc.user, j, ws) > pos) ++above;
    }
    if (above < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(validation.size());
}

TrainResult train(const InteractionMatrix& matrix, const NeumfConfig& cfg, const std::optional<NeumfModel>& init,
                  std::span<const ValidationCase> validation, const TrainHooks& hooks) {
  cfg.validate();
  if (matrix.empty()) throw EmptyDatasetError("train: matrix has no interactions");
  TrainResult result;
  if (init) {
    if (init->num_users() != matrix.num_users() || init->num_items() != matrix.num_items()) {
      throw Error("warm-start model is " + std::to_string(init->num_users()) + "x" +
                  std::to_string(init->num_items()) + " but matrix is " + std::to_string(matrix.num_users()) +
                  "x" + std::to_string(matrix.num_items()));
    }
    result.model = *init;
  } else {
    result.model = NeumfModel::initialized(matrix.num_users(), matrix.num_items(), cfg, cfg.seed);
  }
  NeumfModel& model = result.model;
  Rng rng = make_rng(cfg.seed, 2);
  Adam adam(model.layout(), cfg.learning_rate);
  NeumfGradient grad(model.layout());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (hooks.on_epoch_start) hooks.on_epoch_start(model, epoch);
    const auto examples = sample_epoch(matrix, cfg.negatives_per_positive, rng);
    double bce_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < examples.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t len = std::min(cfg.batch_size, examples.size() - start);
      LossSpec spec{std::span<const Example>(examples).subspan(start, len)};
      if (hooks.extra_term && hooks.extra_weight != 0.0) {
        spec.extra = hooks.extra_term(model);
        spec.extra_weight = hooks.extra_weight;
      }
      grad.clear();
      const auto parts = accumulate(model, spec, &grad);
      const double loss = parts.bce + spec.extra_weight * parts.extra;
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite loss " << loss << " at epoch " << epoch << ", batch " << batch_index;
        throw TrainingError(msg.str());
      }
      adam.step(model, grad);
      bce_sum += parts.bce * static_cast<double>(len);
    }
    TrainRecord rec;
    rec.epoch = epoch;
    rec.train_loss = examples.empty() ? 0.0 : bce_sum / static_cast<double>(examples.size());
    rec.validation_metric = validation_hit_ratio(model, validation);
    result.history.push_back(rec);
  }
  return result;
}

// ---- checkpoints --------------------------------------------------------------------

void save_checkpoint(std::ostream& out, const NeumfModel& model) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian");
  const auto& cfg = model.config();
  nlohmann::json header;
  header["format"] = "poisonrec-neumf";
  header["version"] = 1;
  header["num_users"] = model.num_users();
  header["num_items"] = model.num_items();
  header["config"] = {{"mf_dim", cfg.mf_dim},
                      {"mlp_dims", cfg.mlp_dims},
                      {"learning_rate", cfg.learning_rate},
                      {"epochs", cfg.epochs},
                      {"batch_size", cfg.batch_size},
                      {"negatives_per_positive", cfg.negatives_per_positive},
                      {"seed", cfg.seed}};
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : model.layout().tensors()) {
    tensors.push_back({{"name", t.name}, {"offset", t.offset}, {"rows", t.rows}, {"cols", t.cols}});
  }
  header["tensors"] = tensors;
  header["dtype"] = "float64-le";
  header["count"] = model.params().size();
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(model.params().data()),
            static_cast<std::streamsize>(model.params().size() * sizeof(double)));
  if (!out) throw Error("checkpoint write failed");
}

void save_checkpoint(const std::filesystem::path& path, const NeumfModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  save_checkpoint(out, model);
}

NeumfModel load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("checkpoint: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.value("format", "") != "poisonrec-neumf") throw Error("checkpoint: unknown format");
  NeumfConfig cfg;
  const auto& c = header.at("config");
  cfg.mf_dim = c.at("mf_dim");
  cfg.mlp_dims = c.at("mlp_dims").get<std::vector<std::size_t>>();
  cfg.learning_rate = c.at("learning_rate");
  cfg.epochs = c.at("epochs");
  cfg.batch_size = c.at("batch_size");
  cfg.negatives_per_positive = c.at("negatives_per_positive");
  cfg.seed = c.at("seed");
  NeumfModel model(header.at("num_users"), header.at("num_items"), cfg);
  if (header.at("count").get<std::size_t>() != model.params().size()) throw Error("checkpoint: size mismatch");
  in.read(reinterpret_cast<char*>(model.params().data()),
          static_cast<std::streamsize>(model.params().size() * sizeof(double)));
  if (!in) throw Error("checkpoint: truncated parameter buffer");
  return model;
}

NeumfModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return load_checkpoint(in);
}

}  // namespace poisonrec
