#include "gridlearn/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "gridlearn/error.hpp"
#include "gridlearn/rng.hpp"

namespace gridlearn::train {

using models::Kind;
using models::Model;
using models::Task;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (!(l2 >= 0.0)) throw ConfigError("l2 must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (decay.every > 0 && !(decay.factor > 0.0)) throw ConfigError("decay factor must be positive");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  if (decay.every == 0) return lr;
  return lr / std::pow(decay.factor, static_cast<double>(epoch / decay.every));
}

Json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"lr", lr},
          {"l2", l2},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"seed", seed},
          {"lambda", lambda},
          {"decay_every", decay.every},
          {"decay_factor", decay.factor},
          {"batch_size", batch_size}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
  try {
    TrainConfig c;
    c.epochs = require(j, "epochs", "config").get<std::size_t>();
    c.lr = require(j, "lr", "config").get<double>();
    c.l2 = require(j, "l2", "config").get<double>();
    c.beta1 = require(j, "beta1", "config").get<double>();
    c.beta2 = require(j, "beta2", "config").get<double>();
    c.eps = require(j, "eps", "config").get<double>();
    c.seed = require(j, "seed", "config").get<std::uint64_t>();
    c.lambda = require(j, "lambda", "config").get<double>();
    c.decay.every = require(j, "decay_every", "config").get<std::size_t>();
    c.decay.factor = require(j, "decay_factor", "config").get<double>();
    c.batch_size = require(j, "batch_size", "config").get<std::size_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, const std::vector<std::vector<int>>& one_hot) {
  if (logits.shape().size() != 2 || one_hot.size() != logits.dim(0))
    throw ShapeError("cross_entropy: logits " + ad::shape_string(logits.shape()) + " for " +
                     std::to_string(one_hot.size()) + " labels");
  const auto b = logits.dim(0), c = logits.dim(1);
  std::vector<double> y(b * c);
  for (std::size_t i = 0; i < b; ++i) {
    if (one_hot[i].size() != c) throw ShapeError("cross_entropy: label row " + std::to_string(i) + " has wrong length");
    int ones = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (one_hot[i][j] != 0 && one_hot[i][j] != 1) throw ValidationError("cross_entropy: label entries must be 0 or 1");
      ones += one_hot[i][j];
      y[i * c + j] = one_hot[i][j];
    }
    if (ones != 1) throw ValidationError("cross_entropy: label row " + std::to_string(i) + " is not one-hot");
  }
  Tensor logp = ad::log_clamped(ad::softmax(logits), 1e-12);
  return ad::scale(ad::sum(ad::mul(logp, Tensor::constant({b, c}, std::move(y)))), -1.0 / static_cast<double>(b));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  if (logits.shape().size() != 2) throw ShapeError("cross_entropy: logits must be 2-D");
  std::vector<std::vector<int>> y(labels.size(), std::vector<int>(logits.dim(1), 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= logits.dim(1)) throw ValidationError("cross_entropy: label out of range");
    y[i][labels[i]] = 1;
  }
  return cross_entropy(logits, y);
}

Tensor path_mse(const std::vector<Tensor>& pred, const std::vector<Tensor>& target) {
  if (pred.empty() || pred.size() != target.size())
    throw ShapeError("path_mse: " + std::to_string(pred.size()) + " predicted and " + std::to_string(target.size()) +
                     " target steps");
  Tensor total;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (pred[k].shape() != target[k].shape())
      throw ShapeError("path_mse: step " + std::to_string(k) + " shapes " + ad::shape_string(pred[k].shape()) +
                       " and " + ad::shape_string(target[k].shape()));
    Tensor term = ad::sum(ad::square(ad::sub(target[k], pred[k])));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(pred.size()));
}

Tensor pinn_loss(const Tensor& xhat, const std::vector<Tensor>& data, const Tensor& f, double lambda, double dt) {
  if (xhat.shape().size() != 2) throw ShapeError("pinn_loss: xhat must be [K, D]");
  const auto k = xhat.dim(0);
  if (k < 2) throw ConfigError("pinn_loss: needs at least 2 time points");
  if (f.shape() != xhat.shape()) throw ShapeError("pinn_loss: f and xhat differ in shape");
  if (!(lambda >= 0.0)) throw ConfigError("pinn_loss: lambda must be non-negative");
  Tensor total;
  for (const auto& d : data) {
    if (d.shape() != xhat.shape()) throw ShapeError("pinn_loss: data path shape " + ad::shape_string(d.shape()));
    Tensor term = ad::sum(ad::square(ad::sub(xhat, d)));
    total = total.defined() ? ad::add(total, term) : term;
  }
  Tensor next = ad::slice(xhat, 0, 1, k);
  Tensor prev = ad::slice(xhat, 0, 0, k - 1);
  Tensor step = ad::scale(ad::slice(f, 0, 0, k - 1), dt);
  Tensor residual = ad::sum(ad::square(ad::sub(ad::sub(next, prev), step)));
  if (!total.defined() || lambda == 0.0) return residual;
  return ad::add(ad::scale(total, lambda), residual);
}

double accuracy_db(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size())
    throw ShapeError("accuracy_db: " + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()) + " values");
  double err = 0.0, power = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    err += d * d;
    power += truth[i] * truth[i];
  }
  if (!(power > 0.0)) throw ValidationError("accuracy_db: target has zero power");
  if (err == 0.0) return -200.0;
  return std::max(-200.0, 10.0 * std::log10(err / power));
}

double accuracy_db(const std::vector<Tensor>& pred, const std::vector<Tensor>& truth) {
  if (pred.size() != truth.size()) throw ShapeError("accuracy_db: step counts differ");
  std::vector<double> p, t;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (pred[k].shape() != truth[k].shape()) throw ShapeError("accuracy_db: step shapes differ");
    p.insert(p.end(), pred[k].values().begin(), pred[k].values().end());
    t.insert(t.end(), truth[k].values().begin(), truth[k].values().end());
  }
  return accuracy_db(p, t);
}

double top1_accuracy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  if (logits.shape().size() != 2 || logits.dim(0) != labels.size()) throw ShapeError("top1_accuracy: shape mismatch");
  if (labels.empty()) throw ValidationError("top1_accuracy: no samples");
  const auto c = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.values().begin() + static_cast<std::ptrdiff_t>(i * c);
    if (static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(c)) - row) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               const TrainConfig& config, double lr) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient length differs from parameters");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + 2.0 * config.l2 * params[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + config.eps);
  }
}

Adam::Adam(std::vector<Tensor> params, TrainConfig config)
    : params_(std::move(params)), states_(params_.size()), config_(std::move(config)) {
  for (const auto& p : params_)
    if (!p.requires_grad()) throw ConfigError("Adam: parameter does not track gradients");
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) adam_step(params_[i].mutable_values(), params_[i].grad(), states_[i], config_, lr);
}

// ---------------------------------------------------------------------------

Json TrainReport::to_json() const {
  return {{"task", task},
          {"model", model},
          {"metric_name", metric_name},
          {"seed", seed},
          {"config", config.to_json()},
          {"loss", loss},
          {"metric", metric},
          {"final_loss", final_loss},
          {"final_metric", final_metric}};
}

TrainReport TrainReport::from_json(const Json& j) {
  try {
    TrainReport r;
    r.task = require(j, "task", "report").get<std::string>();
    r.model = require(j, "model", "report").get<std::string>();
    r.metric_name = require(j, "metric_name", "report").get<std::string>();
    r.seed = require(j, "seed", "report").get<std::uint64_t>();
    r.config = TrainConfig::from_json(require(j, "config", "report"));
    r.loss = require(j, "loss", "report").get<std::vector<double>>();
    r.metric = require(j, "metric", "report").get<std::vector<double>>();
    r.final_loss = require(j, "final_loss", "report").get<double>();
    r.final_metric = require(j, "final_metric", "report").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("report: " + std::string(e.what()));
  }
}

std::string TrainReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss,metric\n";
  for (std::size_t e = 0; e < loss.size(); ++e) os << e << ',' << loss[e] << ',' << metric[e] << '\n';
  return os.str();
}

namespace {

std::vector<std::size_t> labels_of(const std::vector<FaultSample>& samples) {
  std::vector<std::size_t> labels;
  for (const auto& s : samples) labels.push_back(s.line);
  return labels;
}

void check_localization_set(const Model& model, const std::vector<FaultSample>& samples) {
  if (samples.empty()) throw ValidationError("localization: empty dataset");
  for (const auto& s : samples) {
    if (s.obs != samples[0].obs) throw ValidationError("localization: samples use different observed sets");
    if (s.line_count != model.spec().output_dim)
      throw ValidationError("localization: sample labels cover " + std::to_string(s.line_count) +
                            " lines, model predicts " + std::to_string(model.spec().output_dim));
  }
}

// Shuffled minibatches for one epoch (one batch of everything when full).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, const TrainConfig& config, std::size_t epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (config.batch_size == 0 || config.batch_size >= count) return {order};
  Rng rng = Rng::stream(config.seed, epoch);
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < count; i += config.batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + config.batch_size)));
  return out;
}

template <typename T>
std::vector<T> pick(const std::vector<T>& all, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

std::vector<Tensor> path_targets(const models::DseBatch& batch) {
  return {batch.target.begin() + 1, batch.target.end()};
}

}  // namespace

Tensor localizer_loss(const Model& model, const std::vector<FaultSample>& samples) {
  return cross_entropy(models::localize(model, models::localization_batch(samples)), labels_of(samples));
}

Tensor dse_loss(const Model& model, const models::DseBatch& batch, double lambda) {
  if (model.spec().kind != Kind::pinn) return path_mse(models::predict_path(model, batch), path_targets(batch));
  const auto k = batch.steps, n2 = 2 * model.spec().node_count;
  std::vector<double> times;
  for (std::size_t i = 0; i <= k; ++i) times.push_back(static_cast<double>(i) / static_cast<double>(k));
  Tensor xhat = models::pinn_state(model, times);
  std::vector<Tensor> data;
  for (std::size_t i = 0; i < batch.batch; ++i) {
    std::vector<double> v;
    for (std::size_t t = 0; t <= k; ++t) {
      const auto row = batch.target[t].values().begin() + static_cast<std::ptrdiff_t>(i * n2);
      v.insert(v.end(), row, row + static_cast<std::ptrdiff_t>(n2));
    }
    data.push_back(Tensor::constant({k + 1, n2}, std::move(v)));
  }
  return pinn_loss(xhat, data, models::pinn_physics(model, xhat), lambda, batch.dt);
}

TrainReport train_localizer(Model& model, const std::vector<FaultSample>& samples, const TrainConfig& config) {
  config.validate();
  if (model.spec().task != Task::localize) throw ConfigError(models::to_string(model.spec().kind) + " is not a localizer");
  check_localization_set(model, samples);
  const auto labels = labels_of(samples);
  const auto full = models::localization_batch(samples);

  TrainReport report{"localize", models::to_string(model.spec().kind), "top1", config.seed, config, {}, {}, 0.0, 0.0};
  Adam adam(model.tensors(), config);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    double epoch_metric = 0.0;
    for (const auto& idx : epoch_batches(samples.size(), config, epoch)) {
      const bool whole = idx.size() == samples.size();
      const auto batch = whole ? full : models::localization_batch(pick(samples, idx));
      const auto batch_labels = whole ? labels : pick(labels, idx);
      Tensor logits = models::localize(model, batch);
      Tensor loss = cross_entropy(logits, batch_labels);
      const double w = static_cast<double>(idx.size()) / static_cast<double>(samples.size());
      epoch_loss += w * loss.item();
      epoch_metric += w * top1_accuracy(logits, batch_labels);
      adam.zero_grad();
      ad::backward(loss);
      adam.step(config.lr_at(epoch));
      model.project_constraints();
    }
    report.loss.push_back(epoch_loss);
    report.metric.push_back(epoch_metric);
  }
  Tensor logits = models::localize(model, full);
  report.final_loss = cross_entropy(logits, labels).item();
  report.final_metric = top1_accuracy(logits, labels);
  return report;
}

TrainReport train_dse(Model& model, const std::vector<PathSample>& samples, const TrainConfig& config) {
  config.validate();
  if (model.spec().task == Task::localize)
    throw ConfigError(models::to_string(model.spec().kind) + " was built for localization");
  if (samples.empty()) throw ValidationError("state estimation: empty dataset");
  const auto full = models::dse_batch(samples);

  TrainReport report{models::to_string(model.spec().task), models::to_string(model.spec().kind), "db", config.seed,
                     config, {}, {}, 0.0, 0.0};
  Adam adam(model.tensors(), config);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::vector<double> pred, truth;
    for (const auto& idx : epoch_batches(samples.size(), config, epoch)) {
      const auto batch = idx.size() == samples.size() ? full : models::dse_batch(pick(samples, idx));
      const auto targets = path_targets(batch);
      const auto path = models::predict_path(model, batch);
      Tensor loss = model.spec().kind == Kind::pinn ? dse_loss(model, batch, config.lambda) : path_mse(path, targets);
      epoch_loss += loss.item();
      for (const auto& p : path) pred.insert(pred.end(), p.values().begin(), p.values().end());
      for (const auto& t : targets) truth.insert(truth.end(), t.values().begin(), t.values().end());
      adam.zero_grad();
      ad::backward(loss);
      adam.step(config.lr_at(epoch));
      model.project_constraints();
    }
    report.loss.push_back(epoch_loss);
    report.metric.push_back(accuracy_db(pred, truth));
  }
  report.final_loss = dse_loss(model, full, config.lambda).item();
  report.final_metric = evaluate_dse(model, samples);
  return report;
}

double evaluate_localizer(const Model& model, const std::vector<FaultSample>& samples) {
  check_localization_set(model, samples);
  return top1_accuracy(models::localize(model, models::localization_batch(samples)), labels_of(samples));
}

double evaluate_dse(const Model& model, const std::vector<PathSample>& samples) {
  const auto batch = models::dse_batch(samples);
  return accuracy_db(models::predict_path(model, batch), path_targets(batch));
}

// ---------------------------------------------------------------------------

const std::vector<double>& observability_levels() {
  static const std::vector<double> levels{5, 10, 20, 40, 70, 100};
  return levels;
}

std::size_t level_index(double percent) {
  if (!(percent > 0.0 && percent <= 100.0)) throw ConfigError("observability must lie in (0, 100] percent");
  const auto& levels = observability_levels();
  std::size_t best = 0;
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (std::abs(levels[i] - percent) < std::abs(levels[best] - percent)) best = i;
  return best;
}

Preset dse_preset(Kind kind, double percent) {
  // Columns follow observability_levels(): 5, 10, 20, 40, 70, 100 percent.
  using Row = std::array<Preset, 6>;
  static const auto table = [] {
    std::vector<std::pair<Kind, Row>> t;
    t.push_back({Kind::lr, Row{{{1e-3, 3e-7}, {1e-3, 3e-7}, {1e-3, 3e-7}, {1e-3, 3e-7}, {1e-3, 3e-7}, {1e-3, 3e-7}}}});
    t.push_back({Kind::ffnn, Row{{{1e-2, 5e-8}, {1e-2, 5e-8}, {2e-2, 5e-7}, {1e-2, 1e-7}, {1e-2, 1e-6}, {1e-2, 1e-6}}}});
    t.push_back({Kind::gcnn, Row{{{5e-2, 5e-8}, {1e-2, 3e-6}, {1e-2, 5e-6}, {5e-3, 5e-9}, {5e-3, 5e-8}, {1e-3, 5e-8}}}});
    t.push_back({Kind::linode, Row{{{5e-2, 5e-8}, {5e-2, 5e-8}, {5e-2, 5e-8}, {1e-2, 1e-8}, {1e-2, 1e-8}, {1e-2, 1e-8}}}});
    t.push_back({Kind::graphode, Row{{{2e-2, 0.0}, {5e-2, 5e-9}, {5e-2, 5e-9}, {3e-2, 3e-9}, {2e-2, 3e-9}, {2e-2, 3e-9}}}});
    t.push_back({Kind::pinn, Row{{{5e-3, 8e-5}, {5e-3, 8e-5}, {5e-3, 8e-5}, {5e-3, 3e-8}, {1e-2, 3e-8}, {1e-2, 3e-9}}}});
    t.push_back({Kind::hnn, Row{{{1e-2, 0.0}, {5e-3, 0.0}, {3e-3, 0.0}, {3e-3, 0.0}, {3e-3, 0.0}, {1e-2, 0.0}}}});
    t.push_back({Kind::dirodenn, Row{{{5e-2, 1e-8}, {5e-2, 1e-8}, {5e-2, 1e-8}, {1e-2, 1e-8}, {5e-3, 1e-8}, {5e-3, 1e-8}}}});
    return t;
  }();
  const auto level = level_index(percent);
  if (kind == Kind::alexnet1d) {
    if (level == observability_levels().size() - 1) return {1e-3, 3e-7};
    throw ConfigError("AlexNet1D has no preset below full observability");
  }
  for (const auto& [k, row] : table)
    if (k == kind) return row[level];
  throw ConfigError("no preset for " + models::to_string(kind));
}

TrainConfig dse_defaults(Kind kind, double percent, std::uint64_t seed) {
  const auto preset = dse_preset(kind, percent);
  TrainConfig c;
  c.lr = preset.lr;
  c.l2 = preset.l2;
  c.seed = seed;
  c.epochs = kind == Kind::hnn && level_index(percent) == observability_levels().size() - 1 ? 200 : 1000;
  return c;
}

TrainConfig localize_defaults(std::uint64_t seed) {
  TrainConfig c;
  c.epochs = 1000;
  c.lr = 1e-2;
  c.seed = seed;
  return c;
}

}  // namespace gridlearn::train
