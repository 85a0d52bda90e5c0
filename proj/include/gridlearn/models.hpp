#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gridlearn/autodiff.hpp"
#include "gridlearn/grid.hpp"
#include "gridlearn/serialize.hpp"
#include "gridlearn/swingsim.hpp"

namespace gridlearn::models {

using ad::Tensor;

enum class Kind { lr, ffnn, gcnn, alexnet1d, linode, graphode, pinn, hnn, dirodenn };
enum class Task { localize, dse_step, dse_path };
// shared: dense weights applied to each real channel, outputs summed.
// magnitude: a single channel |x| feeds the network.
enum class ChannelMode { shared, magnitude };

std::string to_string(Kind k);
std::string to_string(Task t);
std::string to_string(ChannelMode c);
Kind parse_kind(const std::string& name);
Task parse_task(const std::string& name);
ChannelMode parse_channel_mode(const std::string& name);
const std::vector<Kind>& all_kinds();

/// Task a kind trains on for state estimation.
Task dse_task(Kind k);

struct ModelSpec {
  Kind kind = Kind::lr;
  Task task = Task::localize;
  std::size_t node_count = 0;  // n
  std::size_t input_dim = 0;   // n for localization, s for state estimation
  std::size_t output_dim = 0;  // line count for localization, n for state estimation
  std::size_t hidden = 32;
  std::size_t ode_steps = 10;
  double ode_dt = 0.1;
  std::vector<std::size_t> observed;  // state estimation: the s observed nodes
  Eigen::MatrixXd adjacency;          // normalized adjacency; GCNN and GraphODE only
  ChannelMode channels = ChannelMode::shared;

  /// Throws ConfigError on an invalid combination. `complete` is false for
  /// count-only specs, which may lack the adjacency and observed list.
  void validate(bool complete = true) const;
  bool projects() const noexcept { return task != Task::localize && input_dim != output_dim; }
  bool operator==(const ModelSpec& o) const;
};

ModelSpec localization_spec(Kind kind, const GridNetwork& net);
ModelSpec dse_spec(Kind kind, const GridNetwork& net, const ObservedSet& obs);
/// Spec without a grid (adjacency left empty), for parameter accounting.
ModelSpec count_spec(Kind kind, Task task, std::size_t n, std::size_t lines_or_n, std::size_t observed);

struct Parameter {
  std::string name;
  Tensor tensor;
};

class Model {
 public:
  Model() = default;
  Model(ModelSpec spec, std::vector<Parameter> params, std::uint64_t seed);

  const ModelSpec& spec() const noexcept { return spec_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  std::vector<Tensor> tensors() const;
  const Tensor& param(const std::string& name) const;
  bool has(const std::string& name) const;
  std::size_t param_count() const;

  /// Flat copy of every parameter value, in parameter order.
  std::vector<double> flat() const;
  void set_flat(const std::vector<double>& values);

  /// Independent copy with fresh parameter leaves.
  Model clone() const;

  /// Keeps learned inertias of the swing-structured model positive.
  void project_constraints();

  // Constant tensors derived from the spec (undefined when unused).
  const Tensor& adjacency_t() const noexcept { return adjacency_t_; }
  const Tensor& embed() const noexcept { return embed_; }
  const Tensor& incidence() const noexcept { return incidence_; }
  const Tensor& incidence_t() const noexcept { return incidence_t_; }

 private:
  void cache_constants();

  ModelSpec spec_;
  std::vector<Parameter> params_;
  std::uint64_t seed_ = 0;
  Tensor adjacency_t_;  // [n, n]
  Tensor embed_;        // [s, n] selection of the observed nodes
  Tensor incidence_;
  Tensor incidence_t_;
};

/// Deterministic build; dense weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)].
Model build(const ModelSpec& spec, std::uint64_t seed);

/// Closed-form count for a spec (adjacency not required).
std::size_t param_count(const ModelSpec& spec);

// ---------------------------------------------------------------------------
// Localization.

/// Real and imaginary parts of x, each [B, n].
struct LocalizationBatch {
  Tensor re;
  Tensor im;
  std::size_t size() const { return re.dim(0); }
};

LocalizationBatch localization_batch(const std::vector<FaultSample>& samples);

/// Raw class scores [B, lines].
Tensor localize(const Model& model, const LocalizationBatch& batch);

// ---------------------------------------------------------------------------
// State estimation.

/// Paths of B samples. input[k] stacks the observed magnitude rows over the
/// phase rows ([2B, s]); target[k] is [B, 2n] with magnitudes first.
struct DseBatch {
  std::size_t batch = 0;
  std::size_t steps = 0;
  double dt = 0.0;
  std::vector<Tensor> input;
  std::vector<Tensor> target;
};

DseBatch dse_batch(const std::vector<PathSample>& samples);

/// Predicted states for k = 1..K, each [B, 2n]. Step models predict each
/// state from the observed previous one; path models unroll from t_0.
std::vector<Tensor> predict_path(const Model& model, const DseBatch& batch);

/// PINN network at normalized times t/T; returns [times, 2n].
Tensor pinn_state(const Model& model, const std::vector<double>& normalized_times);
/// PINN physics map f_psi applied to states [rows, 2n].
Tensor pinn_physics(const Model& model, const Tensor& states);

// ---------------------------------------------------------------------------
// Neural ODE blocks and physics right-hand sides.

/// Euler unrolling of the model's ODE block from x0 [rows, s]. Returns the
/// final state, or all steps + 1 states when `path` is set.
std::vector<Tensor> neural_ode_integrate(const Model& model, const Tensor& x0, std::size_t steps, double dt,
                                         bool path = false);

struct HnnParams {
  Tensor quad;    // [2m] diagonal quadratic coefficients
  Tensor w1;      // [h, 2m]
  Tensor b1;      // [h]
  Tensor w2;      // [h]
  Tensor l;       // packed lower triangle of the dissipation factor, 2m(2m+1)/2
  Tensor source;  // [m] force on the momenta
};

HnnParams hnn_params(const Model& model);
/// H(q, p) per row, [B, 1].
Tensor hnn_hamiltonian(const HnnParams& p, const Tensor& q, const Tensor& mom);
/// (q', p') = (J - L L^T) grad H + (0, F), q and p [B, m].
std::pair<Tensor, Tensor> hnn_rhs(const HnnParams& p, const Tensor& q, const Tensor& mom);

struct SwingParams {
  Tensor inertia;   // [s]
  Tensor damping;   // [s]
  Tensor injection; // [s]
  Tensor coupling;  // one entry per pair a < b, lexicographic
  Tensor incidence;    // [s, pairs], +1 at the first node of a pair, -1 at the second
  Tensor incidence_t;  // [pairs, s]
};

/// Constant incidence matrices of the complete graph on s nodes.
std::pair<Tensor, Tensor> pair_incidence(std::size_t s);

SwingParams dirodenn_params(const Model& model);
/// Parameters copied from a network over all of its nodes.
SwingParams swing_params_from_network(const GridNetwork& net);
/// theta' = omega, omega'_a = (P_a - d_a omega_a - sum_b c_ab sin(th_a - th_b)) / m_a
/// over the complete graph; theta and omega [B, s].
std::pair<Tensor, Tensor> dirodenn_rhs(const SwingParams& p, const Tensor& theta, const Tensor& omega);

// ---------------------------------------------------------------------------
// Checkpoints.

Json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const Json& j);
Json checkpoint_to_json(const Model& model);
Model checkpoint_from_json(const Json& j);

}  // namespace gridlearn::models
