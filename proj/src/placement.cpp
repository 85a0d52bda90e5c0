#include "gridlearn/placement.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gridlearn/error.hpp"
#include "gridlearn/parallel.hpp"
#include "gridlearn/rng.hpp"

namespace gridlearn::placement {

using train::TrainConfig;
using train::TrainReport;

std::size_t PlacementSample::observed() const {
  return static_cast<std::size_t>(std::count(placement.begin(), placement.end(), 1));
}

void PlacementSample::validate(std::size_t node_count) const {
  if (placement.size() != node_count)
    throw ValidationError("placement: expected " + std::to_string(node_count) + " entries, got " +
                          std::to_string(placement.size()));
  for (int v : placement)
    if (v != 0 && v != 1) throw ValidationError("placement: entries must be 0 or 1");
  bool any = false;
  for (const auto& a : accuracy)
    if (a) {
      any = true;
      if (!(*a >= 0.0 && *a <= 1.0)) throw ValidationError("accuracy: entries must lie in [0, 1]");
    }
  if (!any) throw ValidationError("accuracy: no level measured");
}

Json PlacementSample::to_json() const {
  Json acc = Json::array();
  for (const auto& a : accuracy) acc.push_back(a ? Json(*a) : Json(nullptr));
  return {{"placement", placement}, {"accuracy", acc}, {"model", model}};
}

PlacementSample PlacementSample::from_json(const Json& j) {
  try {
    PlacementSample s;
    s.placement = require(j, "placement", "sample").get<std::vector<int>>();
    const auto& acc = require(j, "accuracy", "sample");
    if (!acc.is_array() || acc.size() != kLevels)
      throw ParseError("sample.accuracy: expected " + std::to_string(kLevels) + " entries");
    for (std::size_t i = 0; i < kLevels; ++i)
      if (!acc[i].is_null()) s.accuracy[i] = acc[i].get<double>();
    s.model = require(j, "model", "sample").get<std::string>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("sample: " + std::string(e.what()));
  }
}

std::vector<PlacementSample> load_samples(const std::filesystem::path& path) {
  std::vector<PlacementSample> out;
  for (const auto& row : read_json_lines(path)) out.push_back(PlacementSample::from_json(row));
  return out;
}

void save_samples(const std::filesystem::path& path, const std::vector<PlacementSample>& samples) {
  std::vector<Json> rows;
  for (const auto& s : samples) rows.push_back(s.to_json());
  write_json_lines(path, rows);
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> top_s(const std::vector<double>& alpha, std::size_t s) {
  if (s < 1 || s > alpha.size())
    throw ValidationError("s: must lie in [1, " + std::to_string(alpha.size()) + "], got " + std::to_string(s));
  std::vector<std::size_t> idx(alpha.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return alpha[a] > alpha[b]; });
  idx.resize(s);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<double> soft_top_s_gate(const std::vector<double>& alpha, std::size_t s) {
  const auto keep = top_s(alpha, s);
  const double mx = *std::max_element(alpha.begin(), alpha.end());
  double z = 0.0;
  for (double a : alpha) z += std::exp(a - mx);
  std::vector<double> g(alpha.size(), 0.0);
  for (auto i : keep) g[i] = std::exp(alpha[i] - mx) / z;
  return g;
}

Tensor placement_input(const Tensor& alpha, std::size_t s) {
  const auto n = alpha.size();
  std::vector<double> hard(n, 0.0);
  for (auto i : top_s(alpha.values(), s)) hard[i] = 1.0;
  return ad::straight_through(Tensor::constant({1, n}, std::move(hard)), ad::softmax(ad::reshape(alpha, {1, n})));
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kWidth = 16;

const char* const kLayers[] = {"graph", "ff1", "ff2", "head"};

}  // namespace

OpNet::OpNet(Eigen::MatrixXd adjacency, std::uint64_t seed) : adjacency_(std::move(adjacency)), seed_(seed) {
  const auto n = node_count();
  if (n == 0 || adjacency_.cols() != adjacency_.rows()) throw ConfigError("OpNet: adjacency must be square and non-empty");
  std::vector<double> at(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      at[i * n + j] = adjacency_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
  adjacency_t_ = Tensor::constant({n, n}, std::move(at));
  const std::size_t dims[][2] = {{n, kWidth}, {kWidth, kWidth}, {kWidth, kWidth}, {kWidth, kLevels}};
  for (std::size_t l = 0; l < 4; ++l) {
    const auto in = dims[l][0], out = dims[l][1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (const char* part : {".W", ".b"}) {
      Rng rng = Rng::stream(seed, params_.size());
      const ad::Shape shape = part[1] == 'W' ? ad::Shape{in, out} : ad::Shape{out};
      std::vector<double> v(ad::shape_size(shape));
      for (auto& x : v) x = rng.uniform(-bound, bound);
      params_.push_back({std::string(kLayers[l]) + part, Tensor::parameter(shape, std::move(v))});
    }
  }
}

std::vector<Tensor> OpNet::tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

void OpNet::center_head(const std::vector<PlacementSample>& samples) {
  auto& b = param("head.b").node()->value;
  for (std::size_t l = 0; l < kLevels; ++l) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& s : samples)
      if (s.accuracy[l]) {
        sum += *s.accuracy[l];
        ++count;
      }
    if (count == 0) continue;
    const double m = std::clamp(sum / static_cast<double>(count), 1e-3, 1.0 - 1e-3);
    b[l] = std::log(m / (1.0 - m));
  }
}

std::vector<Tensor> OpNet::head() const { return {param("head.W"), param("head.b")}; }

std::size_t OpNet::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

std::vector<double> OpNet::flat() const {
  std::vector<double> out;
  for (const auto& p : params_) out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void OpNet::set_flat(const std::vector<double>& values) {
  if (values.size() != param_count()) throw ShapeError("OpNet: wrong number of parameter values");
  std::size_t off = 0;
  for (auto& p : params_) {
    auto& v = p.tensor.mutable_values();
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(off),
              values.begin() + static_cast<std::ptrdiff_t>(off + v.size()), v.begin());
    off += v.size();
  }
}

OpNet OpNet::clone() const {
  OpNet copy(*this);
  for (auto& p : copy.params_) p.tensor = Tensor::parameter(p.tensor.shape(), p.tensor.values());
  return copy;
}

const Tensor& OpNet::param(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw ConfigError("OpNet: no parameter named '" + name + "'");
}

Tensor OpNet::forward(const Tensor& placements) const {
  if (placements.shape().size() != 2 || placements.dim(1) != node_count())
    throw ShapeError("OpNet: placements " + ad::shape_string(placements.shape()) + " for " +
                     std::to_string(node_count()) + " nodes");
  auto layer = [&](const std::string& name, const Tensor& x) {
    return ad::add_row(ad::matmul(x, param(name + ".W")), param(name + ".b"));
  };
  Tensor h = ad::relu(layer("graph", ad::matmul(placements, adjacency_t_)));
  h = ad::relu(layer("ff1", h));
  h = ad::relu(layer("ff2", h));
  return ad::sigmoid(layer("head", h));
}

std::array<double, kLevels> OpNet::predict(const std::vector<int>& placement) const {
  std::vector<double> u(placement.begin(), placement.end());
  Tensor y = forward(Tensor::constant({1, u.size()}, u));
  std::array<double, kLevels> out{};
  std::copy(y.values().begin(), y.values().end(), out.begin());
  return out;
}

Json OpNet::to_json() const {
  Json adj = Json::array();
  for (Eigen::Index i = 0; i < adjacency_.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < adjacency_.cols(); ++j) row.push_back(adjacency_(i, j));
    adj.push_back(row);
  }
  Json params = Json::array();
  for (const auto& p : params_) params.push_back(p.tensor.values());
  return {{"adjacency", adj}, {"params", params}, {"seed", seed_}};
}

OpNet OpNet::from_json(const Json& j) {
  try {
    const auto& adj = require(j, "adjacency", "opnet");
    const auto n = static_cast<Eigen::Index>(adj.size());
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& row = adj[static_cast<std::size_t>(r)];
      if (row.size() != adj.size()) throw ParseError("opnet.adjacency: not square");
      for (Eigen::Index c = 0; c < n; ++c) a(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    OpNet net(std::move(a), require(j, "seed", "opnet").get<std::uint64_t>());
    std::vector<double> flat;
    for (const auto& p : require(j, "params", "opnet")) {
      const auto v = p.get<std::vector<double>>();
      flat.insert(flat.end(), v.begin(), v.end());
    }
    net.set_flat(flat);
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("opnet: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------

TrainConfig stage1_defaults(std::uint64_t seed) {
  TrainConfig c;
  c.epochs = 1200;
  c.lr = 0.08;
  c.decay = {300, 10.0};
  c.seed = seed;
  return c;
}

TrainConfig transfer_defaults(std::uint64_t seed) {
  TrainConfig c;
  c.epochs = 300;
  c.lr = 0.01;
  c.decay = {100, 10.0};
  c.seed = seed;
  return c;
}

Tensor predictor_loss(const OpNet& net, const std::vector<PlacementSample>& samples) {
  if (samples.empty()) throw ValidationError("placement samples: empty set");
  const auto n = net.node_count(), b = samples.size();
  std::vector<double> u(b * n), target(b * kLevels, 0.0), mask(b * kLevels, 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < b; ++i) {
    samples[i].validate(n);
    std::copy(samples[i].placement.begin(), samples[i].placement.end(), u.begin() + static_cast<std::ptrdiff_t>(i * n));
    for (std::size_t l = 0; l < kLevels; ++l)
      if (samples[i].accuracy[l]) {
        target[i * kLevels + l] = *samples[i].accuracy[l];
        mask[i * kLevels + l] = 1.0;
        ++count;
      }
  }
  Tensor pred = net.forward(Tensor::constant({b, n}, std::move(u)));
  Tensor diff = ad::mul(ad::sub(pred, Tensor::constant({b, kLevels}, std::move(target))),
                        Tensor::constant({b, kLevels}, std::move(mask)));
  return ad::scale(ad::sum(ad::square(diff)), 1.0 / static_cast<double>(count));
}

namespace {

// Adam over `trainable`; keeps the parameters with the lowest loss when
// `keep_best` is set.
TrainReport fit(OpNet& net, const std::vector<Tensor>& trainable, const std::vector<PlacementSample>& samples,
                const TrainConfig& config, const std::string& task, bool keep_best) {
  config.validate();
  TrainReport report{task, "OpNet", "mse", config.seed, config, {}, {}, 0.0, 0.0};
  train::Adam adam(trainable, config);
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_params;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Tensor loss = predictor_loss(net, samples);
    const double value = loss.item();
    report.loss.push_back(value);
    report.metric.push_back(value);
    if (keep_best && value < best) {
      best = value;
      best_params = net.flat();
    }
    adam.zero_grad();
    ad::backward(loss);
    adam.step(config.lr_at(epoch));
  }
  double final = predictor_loss(net, samples).item();
  if (keep_best && !(final < best) && !best_params.empty()) {
    net.set_flat(best_params);
    final = best;
  }
  report.final_loss = report.final_metric = final;
  return report;
}

}  // namespace

PredictorFit train_predictor(const std::vector<PlacementSample>& samples, const Eigen::MatrixXd& adjacency,
                             const TrainConfig& config) {
  if (samples.empty()) throw ValidationError("placement samples: empty set");
  OpNet net(adjacency, config.seed);
  net.center_head(samples);
  auto report = fit(net, net.tensors(), samples, config, "place-stage1", false);
  return {std::move(net), std::move(report)};
}

PredictorFit transfer_retrain(const OpNet& pretrained, const std::vector<PlacementSample>& samples,
                              const TrainConfig& config) {
  if (samples.empty()) throw ValidationError("placement samples: empty set");
  OpNet net = pretrained.clone();
  auto report = fit(net, net.head(), samples, config, "place-transfer", true);
  return {std::move(net), std::move(report)};
}

// ---------------------------------------------------------------------------

Json PlacementCandidate::to_json() const {
  return {{"alpha", alpha}, {"gate", gate}, {"selected", selected}, {"predicted", predicted}};
}

PlacementCandidate optimize_alpha(const Predictor& predictor, std::size_t n, std::size_t s, const SearchConfig& config) {
  if (s < 1 || s > n) throw ValidationError("s: must lie in [1, " + std::to_string(n) + "]");
  if (config.restarts == 0) throw ConfigError("optimize_alpha: restarts must be >= 1");
  TrainConfig adam_config;
  adam_config.lr = config.lr;

  PlacementCandidate best;
  best.predicted = -std::numeric_limits<double>::infinity();
  auto consider = [&](const Tensor& alpha, double score) {
    if (score > best.predicted) {
      best.alpha = alpha.values();
      best.predicted = score;
    }
  };
  for (std::size_t r = 0; r < config.restarts; ++r) {
    Rng rng = Rng::stream(config.seed, r);
    std::vector<double> init(n);
    for (auto& a : init) a = rng.uniform(-config.init_scale, config.init_scale);
    Tensor alpha = Tensor::parameter({1, n}, std::move(init));
    train::Adam adam({alpha}, adam_config);
    for (std::size_t step = 0; step <= config.steps; ++step) {
      Tensor score = predictor(placement_input(alpha, s));
      if (score.size() != 1) throw ShapeError("optimize_alpha: predictor must return a scalar");
      consider(alpha, score.item());
      if (step == config.steps) break;
      adam.zero_grad();
      ad::backward(ad::scale(score, -1.0));
      adam.step(config.lr);
    }
  }
  best.selected = top_s(best.alpha, s);
  best.gate = soft_top_s_gate(best.alpha, s);
  return best;
}

PlacementCandidate optimize_alpha(const OpNet& net, std::size_t s, std::size_t level, const SearchConfig& config) {
  if (level >= kLevels) throw ValidationError("level: must be < " + std::to_string(kLevels));
  const Predictor predictor = [&](const Tensor& u) { return ad::slice(net.forward(u), 1, level, level + 1); };
  return optimize_alpha(predictor, net.node_count(), s, config);
}

std::uint64_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  long double r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<long double>(n - k + i) / static_cast<long double>(i);
  return static_cast<std::uint64_t>(std::llround(r));
}

std::size_t Ranking::rank_of(const std::vector<std::size_t>& set) const {
  auto sorted = set;
  std::sort(sorted.begin(), sorted.end());
  const auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.first == sorted; });
  if (it == entries.end()) throw ValidationError("rank_of: placement not in ranking");
  std::size_t better = 0;
  for (const auto& e : entries)
    if (e.second > it->second) ++better;
  return better + 1;
}

Ranking brute_force_placement(const Evaluator& evaluator, std::size_t n, std::size_t s) {
  if (s < 1 || s > n) throw ValidationError("s: must lie in [1, " + std::to_string(n) + "]");
  if (binomial(n, s) > 1000000)
    throw ConfigError("brute force: C(" + std::to_string(n) + "," + std::to_string(s) + ") exceeds 1e6 placements");
  Ranking r;
  std::vector<std::size_t> set(s);
  std::iota(set.begin(), set.end(), std::size_t{0});
  while (true) {
    r.entries.emplace_back(set, evaluator(set));
    ++r.evaluations;
    // Next combination in lexicographic order.
    std::size_t i = s;
    while (i > 0 && set[i - 1] == n - s + i - 1) --i;
    if (i == 0) break;
    ++set[i - 1];
    for (std::size_t j = i; j < s; ++j) set[j] = set[j - 1] + 1;
  }
  std::stable_sort(r.entries.begin(), r.entries.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return r;
}

// ---------------------------------------------------------------------------

double measure_accuracy(const GridNetwork& net, const std::vector<FaultOutcome>& outcomes, const ObservedSet& obs,
                        const MeasureConfig& config) {
  if (outcomes.empty()) throw ValidationError("measure_accuracy: no fault outcomes");
  const auto y = net.admittance();
  std::vector<FaultSample> samples;
  for (const auto& o : outcomes) samples.push_back(assemble_fault_sample(y, o, obs, net.line_count()));
  auto model = models::build(models::localization_spec(config.kind, net), config.train.seed);
  return train::train_localizer(model, samples, config.train).final_metric;
}

std::vector<PlacementSample> generate_samples(const GridNetwork& net, const std::vector<FaultOutcome>& outcomes,
                                              std::size_t count, double percent, const MeasureConfig& config,
                                              std::uint64_t seed) {
  const auto n = net.node_count();
  const auto s = observed_count_for_percent(percent, n);
  const auto level = train::level_index(percent);
  std::vector<PlacementSample> out(count);
  parallel_for(count, [&](std::size_t i) {
    Rng rng = Rng::stream(seed, i);
    const auto obs = ObservedSet::random(n, s, rng.next());
    MeasureConfig local = config;
    local.train.seed = rng.next();
    PlacementSample sample;
    sample.placement = obs.indicator();
    sample.accuracy[level] = measure_accuracy(net, outcomes, obs, local);
    sample.model = models::to_string(config.kind);
    out[i] = std::move(sample);
  });
  return out;
}

}  // namespace gridlearn::placement
