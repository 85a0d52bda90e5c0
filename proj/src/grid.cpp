#include "gridlearn/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <utility>

#include "gridlearn/error.hpp"
#include "gridlearn/rng.hpp"
#include "gridlearn/serialize.hpp"

namespace gridlearn {

GridNetwork::GridNetwork(std::vector<NodeParams> nodes, std::vector<Line> lines)
    : nodes_(std::move(nodes)), lines_(std::move(lines)) {
  if (nodes_.empty()) throw ValidationError("n: grid must have at least one node");
  for (std::size_t a = 0; a < nodes_.size(); ++a) {
    const auto& p = nodes_[a];
    const std::string where = "nodes[" + std::to_string(a) + "]";
    if (!(p.inertia > 0.0) || !std::isfinite(p.inertia))
      throw ValidationError(where + ".m: inertia must be positive");
    if (!std::isfinite(p.damping)) throw ValidationError(where + ".d: not finite");
    if (!std::isfinite(p.injection)) throw ValidationError(where + ".P: not finite");
    if (!std::isfinite(p.voltage)) throw ValidationError(where + ".v: not finite");
  }
  std::set<std::pair<NodeIndex, NodeIndex>> seen;
  for (std::size_t id = 0; id < lines_.size(); ++id) {
    auto& l = lines_[id];
    const std::string where = "lines[" + std::to_string(id) + "]";
    if (l.from >= nodes_.size() || l.to >= nodes_.size())
      throw ValidationError(where + ": endpoint out of range");
    if (l.from == l.to) throw ValidationError(where + ": self-loop at node " + std::to_string(l.from));
    if (l.from > l.to) std::swap(l.from, l.to);
    if (!seen.emplace(l.from, l.to).second)
      throw ValidationError(where + ": duplicate line {" + std::to_string(l.from) + "," +
                            std::to_string(l.to) + "}");
    if (!(l.susceptance > 0.0) || !std::isfinite(l.susceptance))
      throw ValidationError(where + ".b: susceptance must be positive");
    if (!(l.conductance >= 0.0) || !std::isfinite(l.conductance))
      throw ValidationError(where + ".g: conductance must be non-negative");
  }
}

std::size_t GridNetwork::find_line(NodeIndex a, NodeIndex b) const noexcept {
  if (a > b) std::swap(a, b);
  for (std::size_t id = 0; id < lines_.size(); ++id)
    if (lines_[id].from == a && lines_[id].to == b) return id;
  return lines_.size();
}

Eigen::MatrixXcd GridNetwork::admittance() const {
  const auto n = static_cast<Eigen::Index>(nodes_.size());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& l : lines_) {
    const std::complex<double> yab(l.conductance, l.susceptance);
    const auto a = static_cast<Eigen::Index>(l.from);
    const auto b = static_cast<Eigen::Index>(l.to);
    y(a, b) = yab;
    y(b, a) = yab;
  }
  for (Eigen::Index a = 0; a < n; ++a) {
    std::complex<double> s = 0.0;
    for (Eigen::Index b = 0; b < n; ++b)
      if (b != a) s += y(a, b);
    y(a, a) = -s;
  }
  return y;
}

std::vector<std::vector<std::size_t>> GridNetwork::incident_lines() const {
  std::vector<std::vector<std::size_t>> adj(nodes_.size());
  for (std::size_t id = 0; id < lines_.size(); ++id) {
    adj[lines_[id].from].push_back(id);
    adj[lines_[id].to].push_back(id);
  }
  for (NodeIndex a = 0; a < adj.size(); ++a) {
    std::sort(adj[a].begin(), adj[a].end(), [&](std::size_t i, std::size_t j) {
      const auto other = [&](std::size_t id) {
        return lines_[id].from == a ? lines_[id].to : lines_[id].from;
      };
      return other(i) < other(j);
    });
  }
  return adj;
}

ObservedSet::ObservedSet(std::vector<NodeIndex> nodes, std::size_t node_count)
    : nodes_(std::move(nodes)), node_count_(node_count) {
  if (nodes_.empty()) throw ValidationError("obs: observed set must not be empty");
  std::sort(nodes_.begin(), nodes_.end());
  if (std::adjacent_find(nodes_.begin(), nodes_.end()) != nodes_.end())
    throw ValidationError("obs: duplicate observed node");
  if (nodes_.back() >= node_count)
    throw ValidationError("obs: node index " + std::to_string(nodes_.back()) +
                          " out of range for n=" + std::to_string(node_count));
}

ObservedSet ObservedSet::all(std::size_t node_count) {
  std::vector<NodeIndex> v(node_count);
  std::iota(v.begin(), v.end(), NodeIndex{0});
  return ObservedSet(std::move(v), node_count);
}

ObservedSet ObservedSet::random(std::size_t node_count, std::size_t count, std::uint64_t seed) {
  if (count < 1 || count > node_count)
    throw ValidationError("obs: observed count " + std::to_string(count) + " not in [1, n]");
  std::vector<NodeIndex> perm(node_count);
  std::iota(perm.begin(), perm.end(), NodeIndex{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + rng.below(node_count - i);
    std::swap(perm[i], perm[j]);
  }
  perm.resize(count);
  return ObservedSet(std::move(perm), node_count);
}

std::vector<int> ObservedSet::indicator() const {
  std::vector<int> ind(node_count_, 0);
  for (auto a : nodes_) ind[a] = 1;
  return ind;
}

std::size_t observed_count_for_percent(double percent, std::size_t node_count) {
  if (!(percent > 0.0 && percent <= 100.0))
    throw ConfigError("obs-pct must be in (0, 100]");
  const auto c = static_cast<std::size_t>(std::llround(percent * static_cast<double>(node_count) / 100.0));
  return std::clamp<std::size_t>(c, 1, node_count);
}

GridNetwork load_network(const std::filesystem::path& path) {
  return grid_from_json(read_json_file(path));
}

void save_network(const GridNetwork& net, const std::filesystem::path& path) {
  write_text_atomic(path, grid_to_json(net).dump(2) + "\n");
}

GridNetwork synthesize_grid(std::size_t n, double avg_degree, std::uint64_t seed) {
  if (n < 2) throw ValidationError("n: synthesize_grid needs n >= 2");
  if (!(avg_degree >= 1.0 && avg_degree <= 4.0))
    throw ValidationError("avg_degree: must lie in [1, 4]");
  const auto m = static_cast<std::size_t>(std::llround(static_cast<double>(n) * avg_degree / 2.0));
  const std::size_t max_lines = n * (n - 1) / 2;
  if (m < n - 1 || m > max_lines)
    throw ValidationError("avg_degree: " + std::to_string(m) + " lines cannot form a connected simple graph on " +
                          std::to_string(n) + " nodes");

  Rng rng(seed);
  std::vector<NodeIndex> order(n);
  std::iota(order.begin(), order.end(), NodeIndex{0});
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

  std::set<std::pair<NodeIndex, NodeIndex>> edges;
  auto add = [&](NodeIndex a, NodeIndex b) {
    if (a > b) std::swap(a, b);
    return edges.emplace(a, b).second;
  };
  for (std::size_t i = 0; i + 1 < n; ++i) add(order[i], order[i + 1]);
  if (m >= n && n >= 3) add(order[n - 1], order[0]);
  while (edges.size() < m) {
    const NodeIndex a = rng.below(n);
    const NodeIndex b = rng.below(n);
    if (a != b) add(a, b);
  }

  std::vector<NodeParams> nodes(n);
  std::vector<double> theta(n);
  for (std::size_t a = 0; a < n; ++a) {
    nodes[a].inertia = rng.uniform(0.08, 0.15);
    nodes[a].damping = rng.uniform(0.8, 1.2);
    nodes[a].voltage = rng.uniform(0.95, 1.05);
    theta[a] = rng.uniform(-0.1, 0.1);
  }
  std::vector<Line> lines;
  lines.reserve(edges.size());
  for (const auto& [a, b] : edges) lines.push_back(Line{a, b, 0.0, rng.uniform(5.0, 15.0)});
  for (const auto& l : lines) {
    const double c = l.susceptance * (nodes[l.from].voltage * nodes[l.to].voltage);
    const double f = c * std::sin(theta[l.from] - theta[l.to]);
    nodes[l.from].injection += f;
    nodes[l.to].injection -= f;
  }
  return GridNetwork(std::move(nodes), std::move(lines));
}

Eigen::MatrixXd normalized_adjacency(const GridNetwork& net) {
  const auto n = static_cast<Eigen::Index>(net.node_count());
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  for (const auto& l : net.lines()) {
    const double w = std::abs(std::complex<double>(l.conductance, l.susceptance));
    a(static_cast<Eigen::Index>(l.from), static_cast<Eigen::Index>(l.to)) = w;
    a(static_cast<Eigen::Index>(l.to), static_cast<Eigen::Index>(l.from)) = w;
  }
  const Eigen::VectorXd inv_sqrt = a.rowwise().sum().array().rsqrt();
  return inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
}

GridNetwork remove_line(const GridNetwork& net, NodeIndex a, NodeIndex b) {
  const auto id = net.find_line(a, b);
  if (id == net.line_count())
    throw ValidationError("edge: line {" + std::to_string(a) + "," + std::to_string(b) + "} not in grid");
  auto lines = net.lines();
  lines.erase(lines.begin() + static_cast<std::ptrdiff_t>(id));
  return GridNetwork(net.nodes(), std::move(lines));
}

GridNetwork add_line(const GridNetwork& net, const Line& line) {
  auto lines = net.lines();
  lines.push_back(line);
  return GridNetwork(net.nodes(), std::move(lines));
}

Eigen::MatrixXcd observed_submatrix(const Eigen::MatrixXcd& y, const ObservedSet& obs) {
  if (obs.node_count() != static_cast<std::size_t>(y.cols()))
    throw ValidationError("obs: observed set built for n=" + std::to_string(obs.node_count()) +
                          " but Y has " + std::to_string(y.cols()) + " columns");
  Eigen::MatrixXcd sub(y.rows(), static_cast<Eigen::Index>(obs.size()));
  for (std::size_t j = 0; j < obs.size(); ++j)
    sub.col(static_cast<Eigen::Index>(j)) = y.col(static_cast<Eigen::Index>(obs[j]));
  return sub;
}

}  // namespace gridlearn
