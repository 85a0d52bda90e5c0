#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gridlearn/grid.hpp"

namespace gridlearn {

/// Phase (rad, unwrapped) and frequency deviation (rad/s) per node.
struct GridState {
  std::vector<double> theta;
  std::vector<double> omega;
  double time = 0.0;

  static GridState zero(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0.0}; }
};

/// States on the uniform grid t_k = t_0 + k * dt, k = 0..steps().
struct Trajectory {
  double dt = 0.0;
  std::vector<GridState> states;

  std::size_t steps() const noexcept { return states.empty() ? 0 : states.size() - 1; }
  const GridState& back() const { return states.back(); }
};

enum class Method { euler, rk4 };

Method parse_method(const std::string& name);

// ---------------------------------------------------------------------------
// Generic fixed-step integrator core.

using StateVector = std::vector<double>;
using RhsFunction = std::function<void(const StateVector& x, StateVector& dxdt)>;

/// Returns steps + 1 states starting with x0. Euler is x_{k+1} = x_k + dt f(x_k);
/// rk4 is the classical four-stage scheme. Throws IntegrationError carrying the
/// first step index whose state is not finite.
std::vector<StateVector> integrate_ode(const RhsFunction& rhs, StateVector x0, double dt,
                                       std::size_t steps, Method method);

// ---------------------------------------------------------------------------
// Swing dynamics.

struct SwingDerivative {
  std::vector<double> dtheta;
  std::vector<double> domega;
};

/// m_a w'_a = P_a - d_a w_a - sum_b beta_ab v_a v_b sin(th_a - th_b)
///            - sum_b g_ab v_a (v_a - v_b cos(th_a - th_b)), neighbors summed
/// in ascending index order.
SwingDerivative swing_rhs(const GridNetwork& net, const GridState& state);

/// Power-balance residual P_a - (line flows)_a at phases theta.
std::vector<double> power_mismatch(const GridNetwork& net, const std::vector<double>& theta);

struct SteadyStateOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 100;
};

/// Newton solve of the power balance with node 0 pinned to phase 0 and
/// omega = 0. Throws ConvergenceError when no equilibrium is reached.
GridState steady_state(const GridNetwork& net, const GridState& guess, const SteadyStateOptions& options = {});

Trajectory integrate(const GridNetwork& net, const GridState& x0, double dt, std::size_t steps,
                     Method method = Method::rk4);

/// sum m w^2 / 2 - sum P th - sum_lines beta v_a v_b cos(th_a - th_b). Conserved
/// along lossless undamped trajectories.
double system_energy(const GridNetwork& net, const GridState& state);

// ---------------------------------------------------------------------------
// Datasets.

/// One localization sample: x = Y_sub * dU over the observed nodes, labelled
/// with the index of the removed line in the pre-fault line list.
struct FaultSample {
  Eigen::VectorXcd x;
  std::size_t line = 0;
  std::size_t line_count = 0;
  ObservedSet obs;

  std::vector<int> label() const;
};

/// Full-grid voltage change caused by losing one line; independent of the
/// sensor placement, so it can be reused across placements.
struct FaultOutcome {
  std::size_t line = 0;
  Eigen::VectorXcd delta_u;
};

struct FaultConfig {
  double dt = 0.01;
  std::size_t steps = 2000;   // 20 s horizon
  double settle_tolerance = 1e-6;
  double noise_std = 0.0;     // Gaussian noise on observed dU, off by default
  std::uint64_t noise_seed = 0;
};

/// Removes line `line_id`, integrates from `base` with rk4 and polishes the
/// settled state into the post-fault equilibrium. Throws FaultRejected when
/// the grid islands or does not settle within the horizon.
FaultOutcome simulate_fault(const GridNetwork& net, const GridState& base, std::size_t line_id,
                            const FaultConfig& config = {});

/// `noise_stream` selects the RNG stream when config.noise_std > 0.
FaultSample assemble_fault_sample(const Eigen::MatrixXcd& y, const FaultOutcome& outcome, const ObservedSet& obs,
                                  std::size_t line_count, const FaultConfig& config = {},
                                  std::uint64_t noise_stream = 0);

FaultSample make_fault_sample(const GridNetwork& net, const GridState& base, NodeIndex a, NodeIndex b,
                              const ObservedSet& obs, double dt, std::size_t steps);

struct FaultDataset {
  std::vector<FaultSample> samples;
  std::vector<std::pair<std::size_t, std::string>> rejected;  // line id, reason
};

/// One simulated outage per line, repeated `per_line` times (repeats differ
/// only by measurement noise).
std::vector<FaultOutcome> simulate_all_faults(const GridNetwork& net, const FaultConfig& config,
                                              std::vector<std::pair<std::size_t, std::string>>* rejected);
FaultDataset make_fault_dataset(const GridNetwork& net, const ObservedSet& obs, const FaultConfig& config,
                                std::size_t per_line = 1);

/// Channel-major observed input (2 x s x (K+1)) and full-state target
/// (2 x n x (K+1)); channel 0 is |v|, channel 1 the phase.
struct PathSample {
  ObservedSet obs;
  double dt = 0.0;
  std::size_t steps = 0;
  std::vector<double> input;
  std::vector<double> target;

  std::size_t node_count() const noexcept { return obs.node_count(); }
  double input_at(std::size_t channel, std::size_t i, std::size_t k) const {
    return input[(channel * obs.size() + i) * (steps + 1) + k];
  }
  double target_at(std::size_t channel, std::size_t a, std::size_t k) const {
    return target[(channel * node_count() + a) * (steps + 1) + k];
  }
};

struct Perturbation {
  double theta = 0.01;  // half-width of uniform phase offsets, rad
  double omega = 0.0;   // half-width of uniform frequency offsets, rad/s
};

/// Perturbs the equilibrium with seeded offsets (stream per sample index)
/// and integrates with rk4.
std::vector<PathSample> make_path_dataset(const GridNetwork& net, const Perturbation& perturbation,
                                          const ObservedSet& obs, double dt, std::size_t steps,
                                          std::size_t count, std::uint64_t seed, double noise_std = 0.0);

}  // namespace gridlearn
