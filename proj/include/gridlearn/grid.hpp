#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gridlearn {

using NodeIndex = std::size_t;

/// Per-node dynamic parameters (per unit).
struct NodeParams {
  double inertia = 1.0;    // m_a > 0
  double damping = 0.0;    // d_a, droop
  double injection = 0.0;  // P_a
  double voltage = 1.0;    // |v_a|, held constant through transients

  bool operator==(const NodeParams&) const = default;
};

/// An undirected transmission line {from, to}; from < to after validation.
struct Line {
  NodeIndex from = 0;
  NodeIndex to = 0;
  double conductance = 0.0;  // g_ab >= 0
  double susceptance = 1.0;  // beta_ab > 0

  bool operator==(const Line&) const = default;
};

/// Power network: nodes, lines and their admittances. Immutable once built;
/// every editing operation returns a fresh network.
class GridNetwork {
 public:
  /// Validates and normalizes (line endpoints ordered from < to). Throws
  /// ValidationError naming the offending field.
  GridNetwork(std::vector<NodeParams> nodes, std::vector<Line> lines);

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t line_count() const noexcept { return lines_.size(); }
  const std::vector<NodeParams>& nodes() const noexcept { return nodes_; }
  const std::vector<Line>& lines() const noexcept { return lines_; }
  const NodeParams& node(NodeIndex a) const { return nodes_.at(a); }
  const Line& line(std::size_t id) const { return lines_.at(id); }

  /// Index of line {a, b} in lines(), or line_count() if absent.
  std::size_t find_line(NodeIndex a, NodeIndex b) const noexcept;

  /// Dense Y with Y_ab = g + i*beta on lines and Y_aa = -sum_b Y_ab.
  Eigen::MatrixXcd admittance() const;

  /// Neighbor lists (ascending neighbor index) as line ids.
  std::vector<std::vector<std::size_t>> incident_lines() const;

  bool operator==(const GridNetwork&) const = default;

 private:
  std::vector<NodeParams> nodes_;
  std::vector<Line> lines_;
};

/// Sorted, duplicate-free subset of node indices carrying sensors.
class ObservedSet {
 public:
  ObservedSet() = default;
  /// Sorts the input; throws ValidationError on duplicates, empty set or an
  /// index >= node_count.
  ObservedSet(std::vector<NodeIndex> nodes, std::size_t node_count);

  static ObservedSet all(std::size_t node_count);
  /// `count` distinct nodes drawn uniformly with the given seed.
  static ObservedSet random(std::size_t node_count, std::size_t count, std::uint64_t seed);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t node_count() const noexcept { return node_count_; }
  const std::vector<NodeIndex>& nodes() const noexcept { return nodes_; }
  NodeIndex operator[](std::size_t i) const { return nodes_[i]; }
  bool full() const noexcept { return nodes_.size() == node_count_; }

  /// 0/1 indicator of length node_count.
  std::vector<int> indicator() const;

  bool operator==(const ObservedSet&) const = default;

 private:
  std::vector<NodeIndex> nodes_;
  std::size_t node_count_ = 0;
};

/// Observed-node count for a percentage level: max(1, round(pct * n / 100)).
std::size_t observed_count_for_percent(double percent, std::size_t node_count);

GridNetwork load_network(const std::filesystem::path& path);
void save_network(const GridNetwork& net, const std::filesystem::path& path);

/// Connected random grid with `round(n * avg_degree / 2)` lines: a random
/// Hamiltonian cycle plus random chords (a random spanning path when only
/// n - 1 lines are requested), so every line outage leaves the grid
/// connected whenever the line count is >= n. Lines are lossless (g = 0),
/// susceptance ~ U[5, 15]; inertia ~ U[0.08, 0.15], damping ~ U[0.8, 1.2],
/// voltage ~ U[0.95, 1.05]. Injections are chosen consistent with a random
/// equilibrium with phases ~ U[-0.1, 0.1], so a steady state always exists.
GridNetwork synthesize_grid(std::size_t n, double avg_degree, std::uint64_t seed);

/// D^{-1/2} A D^{-1/2} with A = |Y|_offdiag + I and D = row sums of A.
Eigen::MatrixXd normalized_adjacency(const GridNetwork& net);

/// Copy of `net` without line {a, b}. Throws ValidationError if absent.
GridNetwork remove_line(const GridNetwork& net, NodeIndex a, NodeIndex b);
GridNetwork add_line(const GridNetwork& net, const Line& line);

/// Columns of Y restricted to the observed nodes (n x s).
Eigen::MatrixXcd observed_submatrix(const Eigen::MatrixXcd& y, const ObservedSet& obs);

}  // namespace gridlearn
