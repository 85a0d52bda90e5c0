#include "gridlearn/swingsim.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <optional>

#include "gridlearn/error.hpp"
#include "gridlearn/parallel.hpp"
#include "gridlearn/rng.hpp"

namespace gridlearn {

namespace {

bool all_finite(const StateVector& x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

// Symmetric coupling beta_ab * (v_a * v_b); the product order keeps the
// value bitwise identical for (a, b) and (b, a).
double coupling(const GridNetwork& net, const Line& l) {
  return l.susceptance * (net.node(l.from).voltage * net.node(l.to).voltage);
}

struct FlowTerms {
  std::vector<double> reactive;  // sum_b beta v_a v_b sin(th_a - th_b)
  std::vector<double> resistive; // sum_b g v_a (v_a - v_b cos(th_a - th_b))
};

struct Neighbor {
  NodeIndex node;
  double coupling;
  double conductance;
};

// Per-node neighbor lists in ascending neighbor order.
std::vector<std::vector<Neighbor>> neighbor_table(const GridNetwork& net) {
  std::vector<std::vector<Neighbor>> table(net.node_count());
  const auto adj = net.incident_lines();
  for (NodeIndex a = 0; a < table.size(); ++a)
    for (auto id : adj[a]) {
      const auto& l = net.line(id);
      table[a].push_back({l.from == a ? l.to : l.from, coupling(net, l), l.conductance});
    }
  return table;
}

FlowTerms line_flows(const GridNetwork& net, const std::vector<std::vector<Neighbor>>& table,
                     const std::vector<double>& theta) {
  const auto n = net.node_count();
  FlowTerms f{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  // Separate passes: the compiler would otherwise fuse sin and cos into
  // sincos, whose sine can differ from std::sin in the last bit.
  for (NodeIndex a = 0; a < n; ++a)
    for (const auto& nb : table[a]) f.reactive[a] += nb.coupling * std::sin(theta[a] - theta[nb.node]);
  for (NodeIndex a = 0; a < n; ++a) {
    const double va = net.node(a).voltage;
    for (const auto& nb : table[a])
      if (nb.conductance != 0.0)
        f.resistive[a] += nb.conductance * va * (va - net.node(nb.node).voltage * std::cos(theta[a] - theta[nb.node]));
  }
  return f;
}

FlowTerms line_flows(const GridNetwork& net, const std::vector<double>& theta) {
  return line_flows(net, neighbor_table(net), theta);
}

SwingDerivative swing_rhs_impl(const GridNetwork& net, const std::vector<std::vector<Neighbor>>& table,
                               const std::vector<double>& theta, const std::vector<double>& omega) {
  const auto n = net.node_count();
  const auto flows = line_flows(net, table, theta);
  SwingDerivative d{omega, std::vector<double>(n)};
  for (NodeIndex a = 0; a < n; ++a) {
    const auto& p = net.node(a);
    const double net_power = (p.injection - p.damping * omega[a]) - flows.reactive[a] - flows.resistive[a];
    d.domega[a] = net_power / p.inertia;
  }
  return d;
}

StateVector pack(const GridState& s) {
  StateVector x(s.theta);
  x.insert(x.end(), s.omega.begin(), s.omega.end());
  return x;
}

GridState unpack(const StateVector& x, double t) {
  const auto n = x.size() / 2;
  return {StateVector(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n)),
          StateVector(x.begin() + static_cast<std::ptrdiff_t>(n), x.end()), t};
}

void check_state(const GridNetwork& net, const GridState& s) {
  if (s.theta.size() != net.node_count() || s.omega.size() != net.node_count())
    throw ValidationError("state: expected " + std::to_string(net.node_count()) + " phases and frequencies");
}

}  // namespace

Method parse_method(const std::string& name) {
  if (name == "euler") return Method::euler;
  if (name == "rk4") return Method::rk4;
  throw ConfigError("unknown integration method '" + name + "'");
}

std::vector<StateVector> integrate_ode(const RhsFunction& rhs, StateVector x0, double dt, std::size_t steps,
                                       Method method) {
  if (!(dt > 0.0)) throw ValidationError("dt: step must be positive");
  if (steps < 1) throw ValidationError("K: need at least one step");
  if (!all_finite(x0)) throw IntegrationError("initial state is not finite", 0);
  const auto dim = x0.size();
  std::vector<StateVector> out;
  out.reserve(steps + 1);
  out.push_back(std::move(x0));
  StateVector k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
  for (std::size_t k = 0; k < steps; ++k) {
    const StateVector& x = out.back();
    StateVector next(dim);
    rhs(x, k1);
    if (method == Method::euler) {
      for (std::size_t i = 0; i < dim; ++i) next[i] = x[i] + dt * k1[i];
    } else {
      for (std::size_t i = 0; i < dim; ++i) tmp[i] = x[i] + 0.5 * dt * k1[i];
      rhs(tmp, k2);
      for (std::size_t i = 0; i < dim; ++i) tmp[i] = x[i] + 0.5 * dt * k2[i];
      rhs(tmp, k3);
      for (std::size_t i = 0; i < dim; ++i) tmp[i] = x[i] + dt * k3[i];
      rhs(tmp, k4);
      for (std::size_t i = 0; i < dim; ++i)
        next[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    if (!all_finite(next)) throw IntegrationError("state blew up at step " + std::to_string(k + 1), k + 1);
    out.push_back(std::move(next));
  }
  return out;
}

SwingDerivative swing_rhs(const GridNetwork& net, const GridState& state) {
  check_state(net, state);
  return swing_rhs_impl(net, neighbor_table(net), state.theta, state.omega);
}

std::vector<double> power_mismatch(const GridNetwork& net, const std::vector<double>& theta) {
  const auto flows = line_flows(net, theta);
  std::vector<double> r(net.node_count());
  for (NodeIndex a = 0; a < r.size(); ++a)
    r[a] = net.node(a).injection - flows.reactive[a] - flows.resistive[a];
  return r;
}

GridState steady_state(const GridNetwork& net, const GridState& guess, const SteadyStateOptions& options) {
  check_state(net, guess);
  const auto n = net.node_count();
  std::vector<double> theta(n);
  for (NodeIndex a = 0; a < n; ++a) {
    if (!std::isfinite(guess.theta[a])) throw ValidationError("guess: phase not finite");
    theta[a] = guess.theta[a] - guess.theta[0];
  }
  auto max_abs = [](const std::vector<double>& v, std::size_t from) {
    double m = 0.0;
    for (std::size_t i = from; i < v.size(); ++i) m = std::max(m, std::abs(v[i]));
    return m;
  };

  auto r = power_mismatch(net, theta);
  const auto unknowns = static_cast<Eigen::Index>(n - 1);
  for (std::size_t it = 0; it < options.max_iterations && n > 1; ++it) {
    const double err = max_abs(r, 1);
    if (err < 1e-13) break;
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(unknowns, unknowns);
    Eigen::VectorXd rhs(unknowns);
    for (NodeIndex a = 1; a < n; ++a) rhs(static_cast<Eigen::Index>(a - 1)) = -r[a];
    for (const auto& l : net.lines()) {
      const double diff = theta[l.from] - theta[l.to];
      const double c = coupling(net, l);
      const double vv = net.node(l.from).voltage * net.node(l.to).voltage;
      // d r_a / d th_b for the ordered pairs (from, to) and (to, from).
      const double j_ab = c * std::cos(diff) + l.conductance * vv * std::sin(diff);
      const double j_ba = c * std::cos(diff) - l.conductance * vv * std::sin(diff);
      const auto ia = static_cast<Eigen::Index>(l.from) - 1;
      const auto ib = static_cast<Eigen::Index>(l.to) - 1;
      if (ia >= 0) {
        jac(ia, ia) -= j_ab;
        if (ib >= 0) jac(ia, ib) += j_ab;
      }
      if (ib >= 0) {
        jac(ib, ib) -= j_ba;
        if (ia >= 0) jac(ib, ia) += j_ba;
      }
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
    if (!lu.isInvertible()) throw ConvergenceError("steady_state: singular Jacobian (islanded grid?)");
    const Eigen::VectorXd step = lu.solve(rhs);
    // Backtracking on the residual norm keeps Newton from wandering.
    double scale = 1.0;
    std::vector<double> trial(theta);
    std::vector<double> r_trial;
    for (int bt = 0; bt < 30; ++bt) {
      for (NodeIndex a = 1; a < n; ++a) trial[a] = theta[a] + scale * step(static_cast<Eigen::Index>(a - 1));
      r_trial = power_mismatch(net, trial);
      if (max_abs(r_trial, 1) < err) break;
      scale *= 0.5;
    }
    if (!(max_abs(r_trial, 1) < err)) break;
    theta = trial;
    r = std::move(r_trial);
  }
  const double residual = max_abs(r, 0);
  if (!(residual < options.tolerance))
    throw ConvergenceError("steady_state: no equilibrium found (max power mismatch " + std::to_string(residual) +
                           " p.u.); injections infeasible or guess outside basin");
  return {theta, std::vector<double>(n, 0.0), guess.time};
}

Trajectory integrate(const GridNetwork& net, const GridState& x0, double dt, std::size_t steps, Method method) {
  check_state(net, x0);
  const auto n = net.node_count();
  const auto table = neighbor_table(net);
  std::vector<double> theta(n), omega(n);
  RhsFunction rhs = [&](const StateVector& x, StateVector& dx) {
    std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n), theta.begin());
    std::copy(x.begin() + static_cast<std::ptrdiff_t>(n), x.end(), omega.begin());
    const auto d = swing_rhs_impl(net, table, theta, omega);
    std::copy(d.dtheta.begin(), d.dtheta.end(), dx.begin());
    std::copy(d.domega.begin(), d.domega.end(), dx.begin() + static_cast<std::ptrdiff_t>(n));
  };
  const auto xs = integrate_ode(rhs, pack(x0), dt, steps, method);
  Trajectory traj{dt, {}};
  traj.states.reserve(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k)
    traj.states.push_back(unpack(xs[k], x0.time + static_cast<double>(k) * dt));
  return traj;
}

double system_energy(const GridNetwork& net, const GridState& state) {
  check_state(net, state);
  double kinetic = 0.0, potential = 0.0;
  for (NodeIndex a = 0; a < net.node_count(); ++a) {
    const auto& p = net.node(a);
    kinetic += p.inertia * state.omega[a] * state.omega[a] / 2.0;
    potential -= p.injection * state.theta[a];
  }
  for (const auto& l : net.lines())
    potential -= coupling(net, l) * std::cos(state.theta[l.from] - state.theta[l.to]);
  return kinetic + potential;
}

std::vector<int> FaultSample::label() const {
  std::vector<int> y(line_count, 0);
  y.at(line) = 1;
  return y;
}

FaultOutcome simulate_fault(const GridNetwork& net, const GridState& base, std::size_t line_id,
                            const FaultConfig& config) {
  const auto& l = net.line(line_id);
  const auto post = remove_line(net, l.from, l.to);
  GridState start = base;
  std::fill(start.omega.begin(), start.omega.end(), 0.0);
  Trajectory traj;
  try {
    traj = integrate(post, start, config.dt, config.steps, Method::rk4);
  } catch (const IntegrationError& e) {
    throw FaultRejected("line " + std::to_string(line_id) + ": " + e.what());
  }
  const auto& end = traj.back();
  double max_omega = 0.0;
  for (double w : end.omega) max_omega = std::max(max_omega, std::abs(w));
  if (!(max_omega < config.settle_tolerance))
    throw FaultRejected("line " + std::to_string(line_id) + ": no post-fault steady state within horizon (max |omega| " +
                        std::to_string(max_omega) + ")");
  GridState settled;
  try {
    settled = steady_state(post, end);
  } catch (const ConvergenceError& e) {
    throw FaultRejected("line " + std::to_string(line_id) + ": " + e.what());
  }
  double drift = 0.0;
  for (NodeIndex a = 0; a < net.node_count(); ++a)
    drift = std::max(drift, std::abs(settled.theta[a] - (end.theta[a] - end.theta[0])));
  if (drift > 1e-3)
    throw FaultRejected("line " + std::to_string(line_id) + ": settled state is not the post-fault equilibrium");

  const auto n = static_cast<Eigen::Index>(net.node_count());
  FaultOutcome out{line_id, Eigen::VectorXcd(n)};
  const double ref = base.theta[0];
  for (Eigen::Index a = 0; a < n; ++a) {
    const double v = net.node(static_cast<NodeIndex>(a)).voltage;
    const auto i = static_cast<std::size_t>(a);
    out.delta_u(a) = std::polar(v, settled.theta[i]) - std::polar(v, base.theta[i] - ref);
  }
  return out;
}

FaultSample assemble_fault_sample(const Eigen::MatrixXcd& y, const FaultOutcome& outcome, const ObservedSet& obs,
                                  std::size_t line_count, const FaultConfig& config, std::uint64_t noise_stream) {
  Eigen::VectorXcd du(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t j = 0; j < obs.size(); ++j)
    du(static_cast<Eigen::Index>(j)) = outcome.delta_u(static_cast<Eigen::Index>(obs[j]));
  if (config.noise_std > 0.0) {
    auto rng = Rng::stream(config.noise_seed, noise_stream);
    for (auto& v : du) v += std::complex<double>(config.noise_std * rng.normal(), config.noise_std * rng.normal());
  }
  FaultSample s;
  s.x = observed_submatrix(y, obs) * du;
  s.line = outcome.line;
  s.line_count = line_count;
  s.obs = obs;
  return s;
}

FaultSample make_fault_sample(const GridNetwork& net, const GridState& base, NodeIndex a, NodeIndex b,
                              const ObservedSet& obs, double dt, std::size_t steps) {
  const auto id = net.find_line(a, b);
  if (id == net.line_count())
    throw ValidationError("edge: line {" + std::to_string(a) + "," + std::to_string(b) + "} not in grid");
  FaultConfig config;
  config.dt = dt;
  config.steps = steps;
  const auto outcome = simulate_fault(net, base, id, config);
  return assemble_fault_sample(net.admittance(), outcome, obs, net.line_count(), config);
}

std::vector<FaultOutcome> simulate_all_faults(const GridNetwork& net, const FaultConfig& config,
                                              std::vector<std::pair<std::size_t, std::string>>* rejected) {
  const auto base = steady_state(net, GridState::zero(net.node_count()));
  const auto m = net.line_count();
  std::vector<std::optional<FaultOutcome>> slots(m);
  std::vector<std::string> reasons(m);
  parallel_for(m, [&](std::size_t id) {
    try {
      slots[id] = simulate_fault(net, base, id, config);
    } catch (const FaultRejected& e) {
      reasons[id] = e.what();
    }
  });
  std::vector<FaultOutcome> out;
  for (std::size_t id = 0; id < m; ++id) {
    if (slots[id]) {
      out.push_back(std::move(*slots[id]));
    } else if (rejected) {
      rejected->emplace_back(id, reasons[id]);
    }
  }
  return out;
}

FaultDataset make_fault_dataset(const GridNetwork& net, const ObservedSet& obs, const FaultConfig& config,
                                std::size_t per_line) {
  FaultDataset ds;
  const auto outcomes = simulate_all_faults(net, config, &ds.rejected);
  const auto y = net.admittance();
  for (std::size_t rep = 0; rep < per_line; ++rep)
    for (const auto& o : outcomes)
      ds.samples.push_back(assemble_fault_sample(y, o, obs, net.line_count(), config, rep * net.line_count() + o.line));
  return ds;
}

std::vector<PathSample> make_path_dataset(const GridNetwork& net, const Perturbation& perturbation,
                                          const ObservedSet& obs, double dt, std::size_t steps, std::size_t count,
                                          std::uint64_t seed, double noise_std) {
  if (!(perturbation.theta >= 0.0) || !(perturbation.omega >= 0.0))
    throw ValidationError("perturbation: magnitudes must be non-negative");
  if (obs.node_count() != net.node_count()) throw ValidationError("obs: built for a different grid size");
  const auto n = net.node_count();
  const auto s = obs.size();
  const auto equilibrium = steady_state(net, GridState::zero(n));
  std::vector<PathSample> out(count);
  parallel_for(count, [&](std::size_t i) {
    auto rng = Rng::stream(seed, i);
    GridState x0 = equilibrium;
    for (NodeIndex a = 0; a < n; ++a) {
      x0.theta[a] += rng.uniform(-perturbation.theta, perturbation.theta);
      x0.omega[a] += rng.uniform(-perturbation.omega, perturbation.omega);
    }
    const auto traj = integrate(net, x0, dt, steps, Method::rk4);
    PathSample p{obs, dt, steps, std::vector<double>(2 * s * (steps + 1)), std::vector<double>(2 * n * (steps + 1))};
    auto noise_rng = Rng::stream(seed ^ 0xA5A5A5A5ULL, i);
    for (std::size_t k = 0; k <= steps; ++k) {
      const auto& st = traj.states[k];
      for (NodeIndex a = 0; a < n; ++a) {
        p.target[(0 * n + a) * (steps + 1) + k] = net.node(a).voltage;
        p.target[(1 * n + a) * (steps + 1) + k] = st.theta[a];
      }
      for (std::size_t j = 0; j < s; ++j) {
        const auto a = obs[j];
        double mag = net.node(a).voltage, phase = st.theta[a];
        if (noise_std > 0.0) {
          mag += noise_std * noise_rng.normal();
          phase += noise_std * noise_rng.normal();
        }
        p.input[(0 * s + j) * (steps + 1) + k] = mag;
        p.input[(1 * s + j) * (steps + 1) + k] = phase;
      }
    }
    out[i] = std::move(p);
  });
  return out;
}

}  // namespace gridlearn
