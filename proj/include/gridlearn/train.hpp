#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gridlearn/autodiff.hpp"
#include "gridlearn/models.hpp"
#include "gridlearn/serialize.hpp"
#include "gridlearn/swingsim.hpp"

namespace gridlearn::train {

using ad::Tensor;

/// Step decay: the rate is divided by `factor` every `every` epochs
/// (every = 0 keeps it constant).
struct Schedule {
  std::size_t every = 0;
  double factor = 10.0;

  bool operator==(const Schedule&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 1000;
  double lr = 1e-3;
  double l2 = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  double lambda = 1.0;        // PINN data weight
  Schedule decay;
  std::size_t batch_size = 0; // 0 = full batch

  void validate() const;
  double lr_at(std::size_t epoch) const;
  Json to_json() const;
  static TrainConfig from_json(const Json& j);
  bool operator==(const TrainConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Losses and metrics.

/// Mean over the batch of -sum_c y_c log softmax(logits)_c, log argument
/// clamped at 1e-12. `one_hot` is [B, C] with exactly one 1 per row.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::vector<int>>& one_hot);
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

/// (1/K) sum_k ||target_k - pred_k||^2, summed over the batch rows.
Tensor path_mse(const std::vector<Tensor>& pred, const std::vector<Tensor>& target);

/// lambda * sum_i sum_k ||xhat_k - data_i,k||^2
///   + sum_{k < K-1} ||xhat_{k+1} - xhat_k - dt f_k||^2
/// with xhat and f [K, D] and each data_i [K, D]. Throws ConfigError if K < 2.
Tensor pinn_loss(const Tensor& xhat, const std::vector<Tensor>& data, const Tensor& f, double lambda, double dt);

/// 10 log10(sum (pred - truth)^2 / sum truth^2); -200 when the error is
/// exactly zero. Throws ValidationError on zero target power.
double accuracy_db(const std::vector<double>& pred, const std::vector<double>& truth);
double accuracy_db(const std::vector<Tensor>& pred, const std::vector<Tensor>& truth);

/// Fraction of rows whose argmax equals the label (first maximum wins).
double top1_accuracy(const Tensor& logits, const std::vector<std::size_t>& labels);

// ---------------------------------------------------------------------------
// Optimizer.

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update; l2 adds 2 * l2 * param to the gradient.
void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               const TrainConfig& config, double lr);

/// Adam over a list of parameter leaves, reading their accumulated gradients.
class Adam {
 public:
  Adam(std::vector<Tensor> params, TrainConfig config);
  void zero_grad();
  void step(double lr);
  const std::vector<Tensor>& params() const noexcept { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
  TrainConfig config_;
};

// ---------------------------------------------------------------------------
// Training loops.

struct TrainReport {
  std::string task;
  std::string model;
  std::string metric_name;  // "top1" or "db"
  std::uint64_t seed = 0;
  TrainConfig config;
  std::vector<double> loss;    // one entry per epoch, before that epoch's update
  std::vector<double> metric;  // same points as `loss`
  double final_loss = 0.0;
  double final_metric = 0.0;   // after the last update

  Json to_json() const;
  static TrainReport from_json(const Json& j);
  /// "epoch,loss,metric" rows.
  std::string to_csv() const;
  bool operator==(const TrainReport&) const = default;
};

TrainReport train_localizer(models::Model& model, const std::vector<FaultSample>& samples, const TrainConfig& config);
TrainReport train_dse(models::Model& model, const std::vector<PathSample>& samples, const TrainConfig& config);

double evaluate_localizer(const models::Model& model, const std::vector<FaultSample>& samples);
double evaluate_dse(const models::Model& model, const std::vector<PathSample>& samples);

/// Loss the training loop minimizes, on the whole set.
Tensor localizer_loss(const models::Model& model, const std::vector<FaultSample>& samples);
Tensor dse_loss(const models::Model& model, const models::DseBatch& batch, double lambda);

// ---------------------------------------------------------------------------
// Presets.

/// Observability grid of the experiments, in percent.
const std::vector<double>& observability_levels();
/// Index of the nearest level in observability_levels().
std::size_t level_index(double percent);

struct Preset {
  double lr = 0.0;
  double l2 = 0.0;
};

/// Tabulated (rate, l2) for state estimation by model and level.
Preset dse_preset(models::Kind kind, double percent);
/// Full state-estimation config: preset rate and l2, 1000 epochs (200 for
/// HNN at full observability).
TrainConfig dse_defaults(models::Kind kind, double percent, std::uint64_t seed = 0);
TrainConfig localize_defaults(std::uint64_t seed = 0);

}  // namespace gridlearn::train
