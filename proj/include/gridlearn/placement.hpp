#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gridlearn/autodiff.hpp"
#include "gridlearn/grid.hpp"
#include "gridlearn/models.hpp"
#include "gridlearn/serialize.hpp"
#include "gridlearn/swingsim.hpp"
#include "gridlearn/train.hpp"

namespace gridlearn::placement {

using ad::Tensor;

constexpr std::size_t kLevels = 6;  // one output per entry of train::observability_levels()

struct PlacementSample {
  std::vector<int> placement;  // 0/1 per node
  std::array<std::optional<double>, kLevels> accuracy;
  std::string model = "LR";

  std::size_t observed() const;
  void validate(std::size_t node_count) const;
  Json to_json() const;
  static PlacementSample from_json(const Json& j);
  bool operator==(const PlacementSample&) const = default;
};

std::vector<PlacementSample> load_samples(const std::filesystem::path& path);
void save_samples(const std::filesystem::path& path, const std::vector<PlacementSample>& samples);

// ---------------------------------------------------------------------------
// Gate.

/// Indices of the s largest entries, ties to the lower index, ascending.
std::vector<std::size_t> top_s(const std::vector<double>& alpha, std::size_t s);

/// softmax(alpha) over all entries, zeroed outside the top s.
std::vector<double> soft_top_s_gate(const std::vector<double>& alpha, std::size_t s);

/// Differentiable placement input for alpha [1, n]: the forward value is the
/// 0/1 indicator of top_s(alpha); the gradient flows through softmax(alpha).
Tensor placement_input(const Tensor& alpha, std::size_t s);

// ---------------------------------------------------------------------------
// Placement-to-accuracy predictor.

class OpNet {
 public:
  OpNet() = default;
  /// GraphConv(n, 16) . ReLU . FF(16, 16) . ReLU . FF(16, 16) . ReLU . FF(16, 6) . Sigmoid.
  OpNet(Eigen::MatrixXd adjacency, std::uint64_t seed);

  std::size_t node_count() const noexcept { return static_cast<std::size_t>(adjacency_.rows()); }
  const Eigen::MatrixXd& adjacency() const noexcept { return adjacency_; }
  const std::vector<models::Parameter>& parameters() const noexcept { return params_; }
  std::vector<Tensor> tensors() const;
  /// Parameters of the final FF(16, 6) layer.
  std::vector<Tensor> head() const;
  std::size_t param_count() const;
  std::vector<double> flat() const;
  void set_flat(const std::vector<double>& values);
  OpNet clone() const;
  /// Sets the output biases to the logit of the mean observed accuracy per level.
  void center_head(const std::vector<PlacementSample>& samples);

  /// placements [B, n] -> predicted accuracies [B, 6].
  Tensor forward(const Tensor& placements) const;
  std::array<double, kLevels> predict(const std::vector<int>& placement) const;

  Json to_json() const;
  static OpNet from_json(const Json& j);

 private:
  const Tensor& param(const std::string& name) const;

  Eigen::MatrixXd adjacency_;
  Tensor adjacency_t_;
  std::vector<models::Parameter> params_;
  std::uint64_t seed_ = 0;
};

/// 1200 epochs, rate 0.08 divided by 10 every 300 epochs.
train::TrainConfig stage1_defaults(std::uint64_t seed = 0);
/// 300 epochs, rate 0.01 divided by 10 every 100 epochs.
train::TrainConfig transfer_defaults(std::uint64_t seed = 0);
constexpr std::size_t kStage1Samples = 1600;
constexpr std::size_t kTransferSamples = 350;

struct PredictorFit {
  OpNet net;
  train::TrainReport report;
};

/// Mean squared error over the accuracy entries that are present.
Tensor predictor_loss(const OpNet& net, const std::vector<PlacementSample>& samples);

PredictorFit train_predictor(const std::vector<PlacementSample>& samples, const Eigen::MatrixXd& adjacency,
                             const train::TrainConfig& config);

/// Retrains only the final layer of a copy of `pretrained`; returns the
/// lowest-loss parameters seen, the warm start included.
PredictorFit transfer_retrain(const OpNet& pretrained, const std::vector<PlacementSample>& samples,
                              const train::TrainConfig& config);

// ---------------------------------------------------------------------------
// Stage 2 and the exhaustive oracle.

struct SearchConfig {
  std::size_t steps = 500;
  double lr = 0.05;
  std::size_t restarts = 8;
  std::uint64_t seed = 0;
  double init_scale = 0.5;  // alpha starts ~ U[-init_scale, init_scale]
};

struct PlacementCandidate {
  std::vector<double> alpha;
  std::vector<double> gate;
  std::vector<std::size_t> selected;
  double predicted = 0.0;

  Json to_json() const;
};

/// Differentiable score of a placement input [1, n] (a scalar tensor).
using Predictor = std::function<Tensor(const Tensor& placement)>;

PlacementCandidate optimize_alpha(const Predictor& predictor, std::size_t n, std::size_t s, const SearchConfig& config);
PlacementCandidate optimize_alpha(const OpNet& net, std::size_t s, std::size_t level, const SearchConfig& config);

struct Ranking {
  std::vector<std::pair<std::vector<std::size_t>, double>> entries;  // best first
  std::size_t evaluations = 0;

  const std::vector<std::size_t>& best() const { return entries.front().first; }
  /// 1 + number of placements scoring strictly higher than `set`.
  std::size_t rank_of(const std::vector<std::size_t>& set) const;
};

using Evaluator = std::function<double(const std::vector<std::size_t>& set)>;

/// Scores every s-subset; throws ConfigError when C(n, s) > 1e6.
Ranking brute_force_placement(const Evaluator& evaluator, std::size_t n, std::size_t s);

std::uint64_t binomial(std::size_t n, std::size_t k);

// ---------------------------------------------------------------------------
// Sample generation.

struct MeasureConfig {
  models::Kind kind = models::Kind::lr;
  train::TrainConfig train = train::localize_defaults();
};

/// Trains a localizer on the faults seen through `obs` and returns its top-1
/// training accuracy.
double measure_accuracy(const GridNetwork& net, const std::vector<FaultOutcome>& outcomes, const ObservedSet& obs,
                        const MeasureConfig& config);

/// `count` random placements at the given level, each measured once.
std::vector<PlacementSample> generate_samples(const GridNetwork& net, const std::vector<FaultOutcome>& outcomes,
                                              std::size_t count, double percent, const MeasureConfig& config,
                                              std::uint64_t seed);

}  // namespace gridlearn::placement
