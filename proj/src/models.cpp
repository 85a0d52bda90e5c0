#include "gridlearn/models.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "gridlearn/error.hpp"
#include "gridlearn/rng.hpp"

namespace gridlearn::models {

namespace {

struct KindName {
  Kind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {Kind::lr, "LR"},           {Kind::ffnn, "FFNN"},         {Kind::gcnn, "GCNN"},
    {Kind::alexnet1d, "AlexNet1D"}, {Kind::linode, "LinODE"}, {Kind::graphode, "GraphODE"},
    {Kind::pinn, "PINN"},       {Kind::hnn, "HNN"},           {Kind::dirodenn, "DIRODENN"},
};

std::size_t lin(std::size_t in, std::size_t out) { return in * out + out; }

bool is_dense(Kind k) { return k == Kind::lr || k == Kind::ffnn || k == Kind::gcnn; }

// AlexNet1D stages: (kernel, out channels) for each conv, each followed by
// ReLU and a 2/2 max-pool.
constexpr std::size_t kConvKernel[] = {5, 5, 3, 3};
constexpr std::size_t kConvChannels[] = {4, 8, 8, 8};

// Final pooled length, or 0 if the input is too short.
std::size_t alexnet_tail_length(std::size_t len) {
  for (auto k : kConvKernel) {
    if (len < k) return 0;
    len = len - k + 1;
    if (len < 2) return 0;
    len = (len - 2) / 2 + 1;
  }
  return len;
}

std::size_t alexnet_conv_params() {
  std::size_t total = 0, in = 1;
  for (std::size_t i = 0; i < 4; ++i) {
    total += kConvChannels[i] * in * kConvKernel[i] + kConvChannels[i];
    in = kConvChannels[i];
  }
  return total;
}

std::size_t pair_count(std::size_t s) { return s * (s - 1) / 2; }

}  // namespace

std::string to_string(Kind k) {
  for (const auto& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "?";
}

std::string to_string(Task t) {
  switch (t) {
    case Task::localize: return "localize";
    case Task::dse_step: return "dse-step";
    case Task::dse_path: return "dse-path";
  }
  return "?";
}

std::string to_string(ChannelMode c) { return c == ChannelMode::shared ? "shared" : "magnitude"; }

Kind parse_kind(const std::string& name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& kn : kKindNames) {
    std::string cand(kn.name);
    std::transform(cand.begin(), cand.end(), cand.begin(), [](unsigned char c) { return std::tolower(c); });
    if (cand == lower) return kn.kind;
  }
  if (lower == "alexnet") return Kind::alexnet1d;
  throw ConfigError("unknown model kind '" + name + "'");
}

Task parse_task(const std::string& name) {
  if (name == "localize") return Task::localize;
  if (name == "dse-step") return Task::dse_step;
  if (name == "dse-path") return Task::dse_path;
  throw ConfigError("unknown task '" + name + "'");
}

ChannelMode parse_channel_mode(const std::string& name) {
  if (name == "shared") return ChannelMode::shared;
  if (name == "magnitude") return ChannelMode::magnitude;
  throw ConfigError("unknown channel mode '" + name + "'");
}

const std::vector<Kind>& all_kinds() {
  static const std::vector<Kind> kinds = [] {
    std::vector<Kind> v;
    for (const auto& kn : kKindNames) v.push_back(kn.kind);
    return v;
  }();
  return kinds;
}

Task dse_task(Kind k) {
  if (k == Kind::alexnet1d) throw ConfigError("AlexNet1D is not defined for state estimation");
  return is_dense(k) ? Task::dse_step : Task::dse_path;
}

// ---------------------------------------------------------------------------

void ModelSpec::validate(bool complete) const {
  const auto name = to_string(kind);
  if (node_count == 0 || input_dim == 0 || output_dim == 0) throw ConfigError(name + ": dimensions must be positive");
  if (hidden == 0) throw ConfigError(name + ": hidden width must be positive");
  if (task == Task::localize) {
    if (kind == Kind::pinn || kind == Kind::hnn || kind == Kind::dirodenn)
      throw ConfigError(name + " is a state-estimation model and cannot localize faults");
    if (input_dim != node_count) throw ConfigError(name + ": localization input must have one entry per node");
    if (kind == Kind::linode || kind == Kind::graphode) {
      if (ode_steps == 0) throw ConfigError(name + ": ode_steps must be >= 1");
      if (!(ode_dt > 0.0)) throw ConfigError(name + ": ode_dt must be positive");
    }
    if (kind == Kind::alexnet1d) {
      if (channels != ChannelMode::magnitude) throw ConfigError("AlexNet1D takes the magnitude channel only");
      if (alexnet_tail_length(input_dim) == 0)
        throw ConfigError("AlexNet1D: input length " + std::to_string(input_dim) + " is too short");
    }
  } else {
    if (task != dse_task(kind)) throw ConfigError(name + " trains on task " + to_string(dse_task(kind)));
    if (channels != ChannelMode::shared) throw ConfigError(name + ": state estimation uses both channels");
    if (output_dim != node_count) throw ConfigError(name + ": state estimation predicts every node");
    if (input_dim > node_count) throw ConfigError(name + ": more observed nodes than nodes");
    if (!observed.empty()) {
      if (observed.size() != input_dim) throw ConfigError(name + ": observed list does not match input_dim");
      for (std::size_t i = 0; i < observed.size(); ++i)
        if (observed[i] >= node_count || (i > 0 && observed[i] <= observed[i - 1]))
          throw ConfigError(name + ": observed nodes must be sorted, distinct and in range");
    } else if (complete) {
      throw ConfigError(name + ": observed node list missing");
    }
  }
  const bool graph = kind == Kind::gcnn || kind == Kind::graphode;
  if (graph && complete) {
    if (adjacency.rows() == 0) throw ConfigError(name + " requires an adjacency matrix");
    if (static_cast<std::size_t>(adjacency.rows()) != node_count ||
        static_cast<std::size_t>(adjacency.cols()) != node_count)
      throw ConfigError(name + ": adjacency must be " + std::to_string(node_count) + "x" + std::to_string(node_count));
  }
}

bool ModelSpec::operator==(const ModelSpec& o) const {
  return kind == o.kind && task == o.task && node_count == o.node_count && input_dim == o.input_dim &&
         output_dim == o.output_dim && hidden == o.hidden && ode_steps == o.ode_steps && ode_dt == o.ode_dt &&
         observed == o.observed && channels == o.channels && adjacency.rows() == o.adjacency.rows() &&
         adjacency.cols() == o.adjacency.cols() && adjacency == o.adjacency;
}

ModelSpec localization_spec(Kind kind, const GridNetwork& net) {
  ModelSpec s;
  s.kind = kind;
  s.task = Task::localize;
  s.node_count = s.input_dim = net.node_count();
  s.output_dim = net.line_count();
  if (kind == Kind::alexnet1d) s.channels = ChannelMode::magnitude;
  if (kind == Kind::gcnn || kind == Kind::graphode) s.adjacency = normalized_adjacency(net);
  s.validate();
  return s;
}

ModelSpec dse_spec(Kind kind, const GridNetwork& net, const ObservedSet& obs) {
  if (obs.node_count() != net.node_count()) throw ValidationError("observed set belongs to a different grid");
  ModelSpec s;
  s.kind = kind;
  s.task = dse_task(kind);
  s.node_count = s.output_dim = net.node_count();
  s.input_dim = obs.size();
  s.observed = obs.nodes();
  if (kind == Kind::gcnn || kind == Kind::graphode) s.adjacency = normalized_adjacency(net);
  s.validate();
  return s;
}

ModelSpec count_spec(Kind kind, Task task, std::size_t n, std::size_t lines_or_n, std::size_t observed) {
  ModelSpec s;
  s.kind = kind;
  s.task = task;
  s.node_count = n;
  if (task == Task::localize) {
    s.input_dim = n;
    s.output_dim = lines_or_n;
    if (kind == Kind::alexnet1d) s.channels = ChannelMode::magnitude;
  } else {
    s.input_dim = observed;
    s.output_dim = n;
  }
  s.validate(false);
  return s;
}

std::size_t param_count(const ModelSpec& spec) {
  spec.validate(false);
  const auto n = spec.node_count, in = spec.input_dim, out = spec.output_dim, h = spec.hidden;
  const std::size_t proj = spec.projects() ? lin(in, out) : 0;
  switch (spec.kind) {
    case Kind::lr: return lin(in, out);
    case Kind::ffnn: return lin(in, h) + lin(h, out);
    case Kind::gcnn: return lin(n, h) + lin(h, out);
    case Kind::alexnet1d: return alexnet_conv_params() + lin(kConvChannels[3] * alexnet_tail_length(in), out);
    case Kind::linode:
      return spec.task == Task::localize ? lin(n, n) + lin(n, out) : lin(in, in) + proj;
    case Kind::graphode:
      return spec.task == Task::localize ? lin(n, n) + lin(n, out) : n * in + in + proj;
    case Kind::pinn: return lin(1, h) + lin(h, 2 * n) + lin(n, n);
    case Kind::hnn: return 2 * in + h * 2 * in + h + h + (2 * in) * (2 * in + 1) / 2 + in + proj;
    case Kind::dirodenn: return 3 * in + pair_count(in) + proj;
  }
  return 0;
}

// ---------------------------------------------------------------------------

std::pair<Tensor, Tensor> pair_incidence(std::size_t s) {
  const auto pairs = pair_count(s);
  std::vector<double> e(s * pairs, 0.0), et(pairs * s, 0.0);
  std::size_t p = 0;
  for (std::size_t a = 0; a < s; ++a)
    for (std::size_t b = a + 1; b < s; ++b, ++p) {
      e[a * pairs + p] = 1.0;
      e[b * pairs + p] = -1.0;
      et[p * s + a] = 1.0;
      et[p * s + b] = -1.0;
    }
  return {Tensor::constant({s, pairs}, std::move(e)), Tensor::constant({pairs, s}, std::move(et))};
}

Model::Model(ModelSpec spec, std::vector<Parameter> params, std::uint64_t seed)
    : spec_(std::move(spec)), params_(std::move(params)), seed_(seed) {
  spec_.validate();
  if (param_count() != models::param_count(spec_))
    throw ShapeError(to_string(spec_.kind) + ": parameter count " + std::to_string(param_count()) +
                     " differs from the closed form " + std::to_string(models::param_count(spec_)));
  cache_constants();
}

void Model::cache_constants() {
  const auto n = spec_.node_count;
  if (spec_.adjacency.rows() > 0) {
    std::vector<double> v(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        v[i * n + j] = spec_.adjacency(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
    adjacency_t_ = Tensor::constant({n, n}, std::move(v));
  }
  if (spec_.task != Task::localize) {
    const auto s = spec_.input_dim;
    std::vector<double> v(s * n, 0.0);
    for (std::size_t i = 0; i < s; ++i) v[i * n + spec_.observed[i]] = 1.0;
    embed_ = Tensor::constant({s, n}, std::move(v));
  }
  if (spec_.kind == Kind::dirodenn) std::tie(incidence_, incidence_t_) = pair_incidence(spec_.input_dim);
}

std::vector<Tensor> Model::tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

const Tensor& Model::param(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw ConfigError(to_string(spec_.kind) + ": no parameter named '" + name + "'");
}

bool Model::has(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

std::vector<double> Model::flat() const {
  std::vector<double> out;
  for (const auto& p : params_) out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void Model::set_flat(const std::vector<double>& values) {
  if (values.size() != param_count())
    throw ShapeError("set_flat: " + std::to_string(values.size()) + " values for " + std::to_string(param_count()) +
                     " parameters");
  std::size_t off = 0;
  for (auto& p : params_) {
    auto& v = p.tensor.mutable_values();
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(off),
              values.begin() + static_cast<std::ptrdiff_t>(off + v.size()), v.begin());
    off += v.size();
  }
}

Model Model::clone() const {
  std::vector<Parameter> copy;
  for (const auto& p : params_) copy.push_back({p.name, Tensor::parameter(p.tensor.shape(), p.tensor.values())});
  return Model(spec_, std::move(copy), seed_);
}

void Model::project_constraints() {
  if (spec_.kind != Kind::dirodenn) return;
  for (auto& p : params_)
    if (p.name == "inertia")
      for (auto& m : p.tensor.mutable_values()) m = std::max(m, 1e-3);
}

// ---------------------------------------------------------------------------

namespace {

class Builder {
 public:
  explicit Builder(std::uint64_t seed) : seed_(seed) {}

  void uniform(const std::string& name, ad::Shape shape, double bound) {
    Rng rng = Rng::stream(seed_, params_.size());
    std::vector<double> v(ad::shape_size(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    params_.push_back({name, Tensor::parameter(std::move(shape), std::move(v))});
  }
  void fill(const std::string& name, ad::Shape shape, double value) {
    const auto size = ad::shape_size(shape);
    params_.push_back({name, Tensor::parameter(std::move(shape), std::vector<double>(size, value))});
  }
  void linear(const std::string& name, std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    uniform(name + ".W", {in, out}, bound);
    uniform(name + ".b", {out}, bound);
  }
  void conv(const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * k));
    uniform(name + ".W", {out, in, k}, bound);
    uniform(name + ".b", {out}, bound);
  }
  std::vector<Parameter> take() { return std::move(params_); }

 private:
  std::uint64_t seed_;
  std::vector<Parameter> params_;
};

}  // namespace

Model build(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto n = spec.node_count, in = spec.input_dim, out = spec.output_dim, h = spec.hidden;
  Builder b(seed);
  const bool loc = spec.task == Task::localize;
  switch (spec.kind) {
    case Kind::lr: b.linear("out", in, out); break;
    case Kind::ffnn:
      b.linear("hidden", in, h);
      b.linear("out", h, out);
      break;
    case Kind::gcnn:
      b.linear("graph", n, h);
      b.linear("out", h, out);
      break;
    case Kind::alexnet1d: {
      std::size_t c = 1;
      for (std::size_t i = 0; i < 4; ++i) {
        b.conv("conv" + std::to_string(i + 1), kConvChannels[i], c, kConvKernel[i]);
        c = kConvChannels[i];
      }
      b.linear("out", c * alexnet_tail_length(in), out);
      break;
    }
    case Kind::linode:
      if (loc) {
        b.linear("ode", n, n);
        b.linear("out", n, out);
      } else {
        b.linear("ode", in, in);
      }
      break;
    case Kind::graphode:
      if (loc) {
        b.linear("ode", n, n);
        b.linear("out", n, out);
      } else {
        b.linear("ode", n, in);
      }
      break;
    case Kind::pinn:
      b.linear("time", 1, h);
      b.linear("state", h, 2 * n);
      b.linear("physics", n, n);
      break;
    case Kind::hnn: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(2 * in));
      b.fill("quad", {2 * in}, 1.0);
      b.uniform("w1", {h, 2 * in}, bound);
      b.uniform("b1", {h}, bound);
      b.uniform("w2", {h}, 1.0 / std::sqrt(static_cast<double>(h)));
      b.uniform("dissipation", {2 * in * (2 * in + 1) / 2}, 0.1 * bound);
      b.fill("source", {in}, 0.0);
      break;
    }
    case Kind::dirodenn:
      b.fill("inertia", {in}, 1.0);
      b.fill("damping", {in}, 0.1);
      b.fill("injection", {in}, 0.0);
      b.fill("coupling", {pair_count(in)}, 0.1);
      break;
  }
  if (spec.projects() && spec.kind != Kind::lr && spec.kind != Kind::ffnn && spec.kind != Kind::gcnn &&
      spec.kind != Kind::pinn)
    b.linear("proj", in, out);
  return Model(spec, b.take(), seed);
}

// ---------------------------------------------------------------------------

namespace {

Tensor linear(const Model& m, const std::string& name, const Tensor& x) {
  return ad::add_row(ad::matmul(x, m.param(name + ".W")), m.param(name + ".b"));
}

Tensor rows(const Tensor& x, std::size_t begin, std::size_t end) { return ad::slice(x, 0, begin, end); }

void require_finite(const Tensor& x, std::size_t step, const std::string& what) {
  for (double v : x.values())
    if (!std::isfinite(v)) throw IntegrationError(what + ": state not finite at step " + std::to_string(step), step);
}

// Right-hand side of the ODE block for [rows, s] states.
Tensor ode_rhs(const Model& m, const Tensor& z) {
  if (m.spec().kind == Kind::linode) return linear(m, "ode", z);
  Tensor full = m.spec().task == Task::localize ? z : ad::matmul(z, m.embed());
  return linear(m, "ode", ad::matmul(full, m.adjacency_t()));
}

Tensor alexnet_body(const Model& m, const Tensor& x) {
  const auto batch = x.dim(0);
  Tensor h = ad::reshape(x, {batch, 1, x.dim(1)});
  for (std::size_t i = 1; i <= 4; ++i) {
    const auto name = "conv" + std::to_string(i);
    h = ad::maxpool1d(ad::relu(ad::conv1d(h, m.param(name + ".W"), m.param(name + ".b"))), 2, 2);
  }
  return linear(m, "out", ad::reshape(h, {batch, h.dim(1) * h.dim(2)}));
}

// Per-row network shared by the real channels ([rows, in] -> [rows, out]).
Tensor dense_body(const Model& m, const Tensor& x) {
  const auto& spec = m.spec();
  switch (spec.kind) {
    case Kind::lr: return linear(m, "out", x);
    case Kind::ffnn: return linear(m, "out", ad::relu(linear(m, "hidden", x)));
    case Kind::gcnn: {
      Tensor full = spec.task == Task::localize ? x : ad::matmul(x, m.embed());
      return linear(m, "out", ad::relu(linear(m, "graph", ad::matmul(full, m.adjacency_t()))));
    }
    case Kind::alexnet1d: return alexnet_body(m, x);
    case Kind::linode:
    case Kind::graphode: {
      auto z = neural_ode_integrate(m, x, spec.ode_steps, spec.ode_dt).back();
      return linear(m, "out", ad::relu(z));
    }
    default: break;
  }
  throw ConfigError(to_string(spec.kind) + " has no dense forward");
}

// [2B, n] channel-stacked rows -> [B, 2n].
Tensor unstack(const Tensor& x, std::size_t batch) {
  return ad::concat({rows(x, 0, batch), rows(x, batch, 2 * batch)}, 1);
}

Tensor project(const Model& m, const Tensor& x) { return m.spec().projects() ? linear(m, "proj", x) : x; }

void check_batch(const Model& m, const DseBatch& batch) {
  if (batch.input.empty() || batch.steps == 0) throw ShapeError("state estimation batch has no steps");
  if (batch.input[0].dim(1) != m.spec().input_dim)
    throw ShapeError(to_string(m.spec().kind) + ": batch observes " + std::to_string(batch.input[0].dim(1)) +
                     " nodes, model expects " + std::to_string(m.spec().input_dim));
}

}  // namespace

std::vector<Tensor> neural_ode_integrate(const Model& model, const Tensor& x0, std::size_t steps, double dt,
                                         bool path) {
  const auto kind = model.spec().kind;
  if (kind != Kind::linode && kind != Kind::graphode)
    throw ConfigError(to_string(kind) + " has no neural ODE block");
  if (steps == 0) throw ConfigError("neural_ode_integrate: steps must be >= 1");
  std::vector<Tensor> states{x0};
  Tensor z = x0;
  for (std::size_t k = 1; k <= steps; ++k) {
    z = ad::add(z, ad::scale(ode_rhs(model, z), dt));
    require_finite(z, k, "neural ODE");
    if (path) states.push_back(z);
  }
  if (!path) states = {z};
  return states;
}

LocalizationBatch localization_batch(const std::vector<FaultSample>& samples) {
  if (samples.empty()) throw ValidationError("localization batch: no samples");
  const auto n = static_cast<std::size_t>(samples[0].x.size());
  std::vector<double> re, im;
  for (const auto& s : samples) {
    if (static_cast<std::size_t>(s.x.size()) != n) throw ShapeError("localization batch: samples differ in length");
    for (Eigen::Index i = 0; i < s.x.size(); ++i) {
      re.push_back(s.x(i).real());
      im.push_back(s.x(i).imag());
    }
  }
  return {Tensor::constant({samples.size(), n}, std::move(re)), Tensor::constant({samples.size(), n}, std::move(im))};
}

Tensor localize(const Model& model, const LocalizationBatch& batch) {
  const auto& spec = model.spec();
  if (spec.task != Task::localize) throw ConfigError(to_string(spec.kind) + " was built for state estimation");
  if (batch.re.dim(1) != spec.input_dim)
    throw ShapeError("localize: input length " + std::to_string(batch.re.dim(1)) + ", expected " +
                     std::to_string(spec.input_dim));
  if (spec.channels == ChannelMode::magnitude) {
    std::vector<double> mag(batch.re.size());
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::hypot(batch.re.values()[i], batch.im.values()[i]);
    return dense_body(model, Tensor::constant(batch.re.shape(), std::move(mag)));
  }
  const auto b = batch.size();
  Tensor y = dense_body(model, ad::concat({batch.re, batch.im}, 0));
  return ad::add(rows(y, 0, b), rows(y, b, 2 * b));
}

DseBatch dse_batch(const std::vector<PathSample>& samples) {
  if (samples.empty()) throw ValidationError("state estimation batch: no samples");
  const auto& first = samples[0];
  const auto n = first.node_count(), s = first.obs.size(), steps = first.steps, b = samples.size();
  for (const auto& p : samples)
    if (p.obs != first.obs || p.steps != steps || p.dt != first.dt)
      throw ValidationError("state estimation batch: samples differ in observation, step count or dt");
  DseBatch out{b, steps, first.dt, {}, {}};
  for (std::size_t k = 0; k <= steps; ++k) {
    std::vector<double> in(2 * b * s), tg(b * 2 * n);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t j = 0; j < s; ++j) in[(c * b + i) * s + j] = samples[i].input_at(c, j, k);
        for (std::size_t a = 0; a < n; ++a) tg[i * 2 * n + c * n + a] = samples[i].target_at(c, a, k);
      }
    out.input.push_back(Tensor::constant({2 * b, s}, std::move(in)));
    out.target.push_back(Tensor::constant({b, 2 * n}, std::move(tg)));
  }
  return out;
}

Tensor pinn_state(const Model& model, const std::vector<double>& normalized_times) {
  if (model.spec().kind != Kind::pinn) throw ConfigError(to_string(model.spec().kind) + " is not a PINN");
  Tensor t = Tensor::constant({normalized_times.size(), 1}, normalized_times);
  return linear(model, "state", ad::tanh(linear(model, "time", t)));
}

Tensor pinn_physics(const Model& model, const Tensor& states) {
  const auto n = model.spec().node_count, r = states.dim(0);
  Tensor stacked = ad::concat({ad::slice(states, 1, 0, n), ad::slice(states, 1, n, 2 * n)}, 0);
  return unstack(linear(model, "physics", stacked), r);
}

std::vector<Tensor> predict_path(const Model& model, const DseBatch& batch) {
  const auto& spec = model.spec();
  if (spec.task == Task::localize) throw ConfigError(to_string(spec.kind) + " was built for localization");
  check_batch(model, batch);
  const auto b = batch.batch, K = batch.steps;
  std::vector<Tensor> out;

  if (spec.task == Task::dse_step) {
    std::vector<Tensor> inputs(batch.input.begin(), batch.input.begin() + static_cast<std::ptrdiff_t>(K));
    Tensor y = dense_body(model, ad::concat(inputs, 0));
    for (std::size_t k = 0; k < K; ++k) out.push_back(unstack(rows(y, 2 * b * k, 2 * b * (k + 1)), b));
    return out;
  }

  switch (spec.kind) {
    case Kind::linode:
    case Kind::graphode: {
      Tensor z = batch.input[0];
      for (std::size_t k = 1; k <= K; ++k) {
        z = ad::add(z, ad::scale(ode_rhs(model, z), batch.dt));
        require_finite(z, k, to_string(spec.kind));
        out.push_back(unstack(project(model, z), b));
      }
      return out;
    }
    case Kind::pinn: {
      std::vector<double> times;
      for (std::size_t k = 1; k <= K; ++k) times.push_back(static_cast<double>(k) / static_cast<double>(K));
      Tensor states = pinn_state(model, times);
      for (std::size_t k = 0; k < K; ++k) out.push_back(ad::broadcast_rows(rows(states, k, k + 1), b));
      return out;
    }
    case Kind::hnn:
    case Kind::dirodenn: {
      Tensor mag = project(model, rows(batch.input[0], 0, b));
      Tensor theta = rows(batch.input[0], b, 2 * b);
      Tensor omega = ad::scale(ad::sub(rows(batch.input[1], b, 2 * b), theta), 1.0 / batch.dt);
      const bool hnn = spec.kind == Kind::hnn;
      HnnParams hp;
      SwingParams sp;
      if (hnn) hp = hnn_params(model);
      else sp = dirodenn_params(model);
      for (std::size_t k = 1; k <= K; ++k) {
        auto [dth, dom] = hnn ? hnn_rhs(hp, theta, omega) : dirodenn_rhs(sp, theta, omega);
        theta = ad::add(theta, ad::scale(dth, batch.dt));
        omega = ad::add(omega, ad::scale(dom, batch.dt));
        require_finite(theta, k, to_string(spec.kind));
        out.push_back(ad::concat({mag, project(model, theta)}, 1));
      }
      return out;
    }
    default: break;
  }
  throw ConfigError(to_string(spec.kind) + " cannot predict paths");
}

// ---------------------------------------------------------------------------

HnnParams hnn_params(const Model& model) {
  if (model.spec().kind != Kind::hnn) throw ConfigError(to_string(model.spec().kind) + " is not an HNN");
  return {model.param("quad"), model.param("w1"),          model.param("b1"),
          model.param("w2"),   model.param("dissipation"), model.param("source")};
}

namespace {

// Hidden pre-activation tanh(z W1^T + b1) for z = [q, p].
Tensor hnn_hidden(const HnnParams& p, const Tensor& z) {
  return ad::tanh(ad::add_row(ad::matmul(z, ad::transpose(p.w1)), p.b1));
}

void check_hnn(const HnnParams& p, const Tensor& q, const Tensor& mom) {
  if (q.shape() != mom.shape()) throw ShapeError("hnn: q " + ad::shape_string(q.shape()) + " and p " +
                                                 ad::shape_string(mom.shape()) + " differ");
  if (p.quad.size() != 2 * q.dim(1)) throw ShapeError("hnn: parameters sized for a different state");
}

}  // namespace

Tensor hnn_hamiltonian(const HnnParams& p, const Tensor& q, const Tensor& mom) {
  check_hnn(p, q, mom);
  Tensor z = ad::concat({q, mom}, 1);
  Tensor quad = ad::scale(ad::mul_row(ad::square(z), p.quad), 0.5);
  Tensor net = ad::mul_row(hnn_hidden(p, z), p.w2);
  Tensor ones_z = Tensor::constant({z.dim(1), 1}, std::vector<double>(z.dim(1), 1.0));
  Tensor ones_h = Tensor::constant({net.dim(1), 1}, std::vector<double>(net.dim(1), 1.0));
  return ad::add(ad::matmul(quad, ones_z), ad::matmul(net, ones_h));
}

std::pair<Tensor, Tensor> hnn_rhs(const HnnParams& p, const Tensor& q, const Tensor& mom) {
  check_hnn(p, q, mom);
  const auto m = q.dim(1);
  Tensor z = ad::concat({q, mom}, 1);
  Tensor t = hnn_hidden(p, z);
  Tensor g = ad::mul_row(ad::shift(ad::scale(ad::square(t), -1.0), 1.0), p.w2);
  Tensor grad = ad::add(ad::mul_row(z, p.quad), ad::matmul(g, p.w1));

  // Row form: z' = grad (J - D)^T = grad (J^T - L L^T).
  std::vector<double> jt(4 * m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    jt[i * 2 * m + m + i] = -1.0;
    jt[(m + i) * 2 * m + i] = 1.0;
  }
  Tensor l = ad::lower_triangular(p.l, 2 * m);
  Tensor mat = ad::sub(Tensor::constant({2 * m, 2 * m}, std::move(jt)), ad::matmul(l, ad::transpose(l)));
  Tensor dz = ad::matmul(grad, mat);
  return {ad::slice(dz, 1, 0, m), ad::add_row(ad::slice(dz, 1, m, 2 * m), p.source)};
}

SwingParams dirodenn_params(const Model& model) {
  if (model.spec().kind != Kind::dirodenn) throw ConfigError(to_string(model.spec().kind) + " is not DIRODENN");
  return {model.param("inertia"), model.param("damping"), model.param("injection"),
          model.param("coupling"), model.incidence(),     model.incidence_t()};
}

SwingParams swing_params_from_network(const GridNetwork& net) {
  const auto n = net.node_count();
  std::vector<double> m(n), d(n), pw(n), c(pair_count(n), 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    m[a] = net.node(a).inertia;
    d[a] = net.node(a).damping;
    pw[a] = net.node(a).injection;
  }
  // Pair (a, b), a < b, sits at a * n - a (a + 1) / 2 + (b - a - 1).
  for (const auto& l : net.lines()) {
    const auto idx = l.from * n - l.from * (l.from + 1) / 2 + (l.to - l.from - 1);
    c[idx] = l.susceptance * (net.node(l.from).voltage * net.node(l.to).voltage);
  }
  auto [e, et] = pair_incidence(n);
  return {Tensor::parameter({n}, m), Tensor::parameter({n}, d), Tensor::parameter({n}, pw),
          Tensor::parameter({c.size()}, c), e, et};
}

std::pair<Tensor, Tensor> dirodenn_rhs(const SwingParams& p, const Tensor& theta, const Tensor& omega) {
  if (theta.shape() != omega.shape() || theta.dim(1) != p.inertia.size())
    throw ShapeError("dirodenn: state " + ad::shape_string(theta.shape()) + " does not match " +
                     std::to_string(p.inertia.size()) + " nodes");
  const auto b = theta.dim(0);
  Tensor flow = theta.dim(1) > 1
                    ? ad::matmul(ad::mul_row(ad::sin(ad::matmul(theta, p.incidence)), p.coupling), p.incidence_t)
                    : Tensor::zeros(theta.shape());
  Tensor net = ad::sub(ad::sub(ad::broadcast_rows(p.injection, b), ad::mul_row(omega, p.damping)), flow);
  return {omega, ad::div_row(net, p.inertia)};
}

// ---------------------------------------------------------------------------

Json spec_to_json(const ModelSpec& spec) {
  Json adj = nullptr;
  if (spec.adjacency.rows() > 0) {
    adj = Json::array();
    for (Eigen::Index i = 0; i < spec.adjacency.rows(); ++i) {
      Json row = Json::array();
      for (Eigen::Index j = 0; j < spec.adjacency.cols(); ++j) row.push_back(spec.adjacency(i, j));
      adj.push_back(row);
    }
  }
  return {{"kind", to_string(spec.kind)},
          {"task", to_string(spec.task)},
          {"node_count", spec.node_count},
          {"input_dim", spec.input_dim},
          {"output_dim", spec.output_dim},
          {"hidden", spec.hidden},
          {"ode_steps", spec.ode_steps},
          {"ode_dt", spec.ode_dt},
          {"observed", spec.observed},
          {"channels", to_string(spec.channels)},
          {"adjacency", adj}};
}

ModelSpec spec_from_json(const Json& j) {
  const std::string ctx = "spec";
  try {
    ModelSpec s;
    s.kind = parse_kind(require(j, "kind", ctx).get<std::string>());
    s.task = parse_task(require(j, "task", ctx).get<std::string>());
    s.node_count = require(j, "node_count", ctx).get<std::size_t>();
    s.input_dim = require(j, "input_dim", ctx).get<std::size_t>();
    s.output_dim = require(j, "output_dim", ctx).get<std::size_t>();
    s.hidden = require(j, "hidden", ctx).get<std::size_t>();
    s.ode_steps = require(j, "ode_steps", ctx).get<std::size_t>();
    s.ode_dt = require(j, "ode_dt", ctx).get<double>();
    s.observed = require(j, "observed", ctx).get<std::vector<std::size_t>>();
    s.channels = parse_channel_mode(require(j, "channels", ctx).get<std::string>());
    const auto& adj = require(j, "adjacency", ctx);
    if (!adj.is_null()) {
      const auto r = static_cast<Eigen::Index>(adj.size());
      s.adjacency.resize(r, r);
      for (Eigen::Index i = 0; i < r; ++i) {
        if (adj[static_cast<std::size_t>(i)].size() != adj.size()) throw ParseError("spec.adjacency: not square");
        for (Eigen::Index k = 0; k < r; ++k)
          s.adjacency(i, k) = adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
      }
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("spec: " + std::string(e.what()));
  }
}

Json checkpoint_to_json(const Model& model) {
  Json params = Json::array();
  for (const auto& p : model.parameters()) params.push_back(p.tensor.values());
  return {{"spec", spec_to_json(model.spec())}, {"params", params}, {"seed", model.seed()}};
}

Model checkpoint_from_json(const Json& j) {
  const auto spec = spec_from_json(require(j, "spec", "checkpoint"));
  std::uint64_t seed = 0;
  try {
    seed = require(j, "seed", "checkpoint").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint.seed: " + std::string(e.what()));
  }
  Model model = build(spec, seed);
  const auto& params = require(j, "params", "checkpoint");
  if (!params.is_array() || params.size() != model.parameters().size())
    throw ParseError("checkpoint.params: expected " + std::to_string(model.parameters().size()) + " tensors");
  std::vector<double> flat;
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double> v;
    try {
      v = params[i].get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("checkpoint.params[" + std::to_string(i) + "]: " + e.what());
    }
    if (v.size() != model.parameters()[i].tensor.size())
      throw ParseError("checkpoint.params[" + std::to_string(i) + "]: wrong length for " +
                       model.parameters()[i].name);
    flat.insert(flat.end(), v.begin(), v.end());
  }
  model.set_flat(flat);
  return model;
}

}  // namespace gridlearn::models
