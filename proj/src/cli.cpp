#include "gridlearn/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>

#include "gridlearn/error.hpp"
#include "gridlearn/grid.hpp"
#include "gridlearn/models.hpp"
#include "gridlearn/placement.hpp"
#include "gridlearn/rng.hpp"
#include "gridlearn/serialize.hpp"
#include "gridlearn/swingsim.hpp"
#include "gridlearn/train.hpp"

namespace gridlearn::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string grid;
  std::string task;
  std::string model = "LR";
  std::string channels;
  double obs_pct = 100.0;
  std::size_t observed_count = 0;
  std::string obs_list;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double lr = 0.0;
  double l2 = -1.0;
  double lambda = -1.0;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string opnet;
  std::string manifest;
  std::size_t per_line = 1;
  std::size_t samples = 16;
  std::size_t steps = 50;
  double dt = 0.01;
  double perturbation = 0.01;
  double noise = 0.0;
  std::size_t n = 68;
  std::size_t lines = 87;
  std::size_t search_steps = 500;
  std::size_t restarts = 8;
};

// Artifacts of one run: files relative to the output directory plus the
// semantically meaningful configuration that produced them.
class Run {
 public:
  Run(std::string command, std::vector<std::string> args, fs::path out)
      : command_(std::move(command)), args_(std::move(args)), out_(std::move(out)) {}

  void config(const std::string& key, Json value) { config_[key] = std::move(value); }
  void seed(const std::string& key, std::uint64_t value) { seeds_[key] = value; }
  void input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path.string() + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    inputs_[path.string()] = fnv1a_hex(ss.str());
  }
  void write(const std::string& name, const std::string& text) {
    if (out_.empty()) return;
    write_text_atomic(out_ / name, text);
    artifacts_.push_back(name);
  }
  void write_json(const std::string& name, const Json& j) { write(name, j.dump(2) + "\n"); }

  void finish() {
    if (out_.empty()) return;
    Json semantic = {{"command", command_}, {"config", config_}, {"inputs", inputs_}, {"seeds", seeds_}};
    Json m = {{"command", command_},
              {"args", args_},
              {"config", config_},
              {"inputs", inputs_},
              {"seeds", seeds_},
              {"config_hash", fnv1a_hex(semantic.dump())},
              {"artifacts", artifacts_}};
    write_text_atomic(out_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::vector<std::string> args_;
  fs::path out_;
  Json config_ = Json::object();
  Json seeds_ = Json::object();
  Json inputs_ = Json::object();
  std::vector<std::string> artifacts_;
};

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("--obs-list: '" + item + "' is not a node index");
    }
  }
  if (out.empty()) throw ConfigError("--obs-list: no nodes given");
  return out;
}

ObservedSet resolve_observed(const Options& o, std::size_t n, Run& run) {
  ObservedSet obs;
  if (!o.obs_list.empty()) {
    obs = ObservedSet(parse_list(o.obs_list), n);
  } else {
    const auto count = o.observed_count > 0 ? o.observed_count : observed_count_for_percent(o.obs_pct, n);
    if (count > n) throw ConfigError("--observed-count: exceeds node count " + std::to_string(n));
    obs = count == n ? ObservedSet::all(n) : ObservedSet::random(n, count, Rng::stream(o.seed, 0xB5).next());
  }
  run.config("observed", obs.nodes());
  return obs;
}

models::Kind model_kind(const Options& o) { return models::parse_kind(o.model); }

void apply_overrides(const Options& o, train::TrainConfig& c) {
  if (o.epochs > 0) c.epochs = o.epochs;
  if (o.lr > 0.0) c.lr = o.lr;
  if (o.l2 >= 0.0) c.l2 = o.l2;
  if (o.lambda >= 0.0) c.lambda = o.lambda;
  c.seed = o.seed;
  c.validate();
}

GridNetwork load_grid(const Options& o, Run& run) {
  if (o.grid.empty()) throw ConfigError("--grid is required");
  run.input(o.grid);
  return load_network(o.grid);
}

const std::string& require_path(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ConfigError(flag + " is required");
  return value;
}

void emit(std::ostream& out, const Json& j) { out << j.dump() << "\n"; }

// ---------------------------------------------------------------------------

void cmd_synth_grid(const Options& o, Run& run, std::ostream& out) {
  if (o.n < 2) throw ConfigError("--n must be >= 2");
  const double degree = 2.0 * static_cast<double>(o.lines) / static_cast<double>(o.n);
  run.config("n", o.n);
  run.config("lines", o.lines);
  run.seed("seed", o.seed);
  const auto net = synthesize_grid(o.n, degree, o.seed);
  run.write_json("grid.json", grid_to_json(net));
  emit(out, {{"nodes", net.node_count()}, {"lines", net.line_count()}});
}

void cmd_generate_data(const Options& o, Run& run, std::ostream& out) {
  const auto net = load_grid(o, run);
  const auto n = net.node_count();
  run.config("task", o.task);
  run.seed("seed", o.seed);
  if (o.task == "localize") {
    const auto obs = resolve_observed(o, n, run);
    FaultConfig fc;
    fc.noise_std = o.noise;
    fc.noise_seed = o.seed;
    run.config("per_line", o.per_line);
    run.config("noise", o.noise);
    const auto ds = make_fault_dataset(net, obs, fc, o.per_line);
    std::vector<Json> rows;
    for (const auto& s : ds.samples) rows.push_back(fault_sample_to_json(s));
    Json rejected = Json::array();
    for (const auto& [line, reason] : ds.rejected) rejected.push_back({{"line", line}, {"reason", reason}});
    run.write("faults.jsonl", [&] {
      std::string text;
      for (const auto& r : rows) text += r.dump() + "\n";
      return text;
    }());
    run.write_json("rejected.json", {{"samples", ds.samples.size()}, {"rejected", rejected}});
    emit(out, {{"samples", ds.samples.size()}, {"rejected", ds.rejected.size()}});
  } else if (o.task == "dse") {
    const auto obs = resolve_observed(o, n, run);
    run.config("samples", o.samples);
    run.config("steps", o.steps);
    run.config("dt", o.dt);
    run.config("perturbation", o.perturbation);
    run.config("noise", o.noise);
    Perturbation pert;
    pert.theta = o.perturbation;
    const auto paths = make_path_dataset(net, pert, obs, o.dt, o.steps, o.samples, o.seed, o.noise);
    std::string text;
    for (const auto& p : paths) text += path_sample_to_json(p).dump() + "\n";
    run.write("paths.jsonl", text);
    emit(out, {{"samples", paths.size()}});
  } else if (o.task == "place") {
    placement::MeasureConfig mc;
    mc.kind = model_kind(o);
    mc.train = train::localize_defaults(o.seed);
    apply_overrides(o, mc.train);
    run.config("model", models::to_string(mc.kind));
    run.config("obs_pct", o.obs_pct);
    run.config("samples", o.samples);
    run.config("train", mc.train.to_json());
    std::vector<std::pair<std::size_t, std::string>> rejected;
    const auto outcomes = simulate_all_faults(net, FaultConfig{}, &rejected);
    const auto samples = placement::generate_samples(net, outcomes, o.samples, o.obs_pct, mc, o.seed);
    std::string text;
    for (const auto& s : samples) text += s.to_json().dump() + "\n";
    run.write("placements.jsonl", text);
    emit(out, {{"samples", samples.size()}, {"faults", outcomes.size()}, {"rejected", rejected.size()}});
  } else {
    throw ConfigError("--task must be localize, dse or place for generate-data");
  }
}

void write_training(Run& run, const models::Model& model, const train::TrainReport& report) {
  run.write_json("checkpoint.json", models::checkpoint_to_json(model));
  run.write_json("report.json", report.to_json());
  run.write("curve.csv", report.to_csv());
}

void cmd_train(const Options& o, Run& run, std::ostream& out) {
  const auto net = load_grid(o, run);
  const auto& data = require_path(o.data, "--data");
  run.input(data);
  const auto kind = model_kind(o);
  run.config("task", o.task);
  run.config("model", models::to_string(kind));
  run.seed("seed", o.seed);
  if (o.task == "localize") {
    std::vector<FaultSample> samples;
    for (const auto& row : read_json_lines(data))
      samples.push_back(fault_sample_from_json(row, net.node_count(), net.line_count()));
    auto spec = models::localization_spec(kind, net);
    if (!o.channels.empty()) spec.channels = models::parse_channel_mode(o.channels);
    auto config = train::localize_defaults(o.seed);
    apply_overrides(o, config);
    run.config("channels", models::to_string(spec.channels));
    run.config("train", config.to_json());
    auto model = models::build(spec, o.seed);
    const auto report = train::train_localizer(model, samples, config);
    write_training(run, model, report);
    emit(out, {{"top1", report.final_metric}, {"loss", report.final_loss}});
  } else if (o.task == "dse") {
    std::vector<PathSample> samples;
    for (const auto& row : read_json_lines(data)) samples.push_back(path_sample_from_json(row, net.node_count()));
    if (samples.empty()) throw ValidationError("--data: no paths");
    const auto& obs = samples[0].obs;
    const double pct = 100.0 * static_cast<double>(obs.size()) / static_cast<double>(net.node_count());
    auto config = train::dse_defaults(kind, pct, o.seed);
    apply_overrides(o, config);
    run.config("train", config.to_json());
    auto model = models::build(models::dse_spec(kind, net, obs), o.seed);
    const auto report = train::train_dse(model, samples, config);
    write_training(run, model, report);
    emit(out, {{"db", report.final_metric}, {"loss", report.final_loss}});
  } else {
    throw ConfigError("--task must be localize or dse for train");
  }
}

void cmd_eval(const Options& o, Run& run, std::ostream& out) {
  const auto net = load_grid(o, run);
  const auto& ck = require_path(o.checkpoint, "--checkpoint");
  const auto& data = require_path(o.data, "--data");
  run.input(ck);
  run.input(data);
  const auto model = models::checkpoint_from_json(read_json_file(ck));
  Json result;
  if (model.spec().task == models::Task::localize) {
    std::vector<FaultSample> samples;
    for (const auto& row : read_json_lines(data))
      samples.push_back(fault_sample_from_json(row, net.node_count(), net.line_count()));
    result = {{"metric", "top1"}, {"value", train::evaluate_localizer(model, samples)}, {"samples", samples.size()}};
  } else {
    std::vector<PathSample> samples;
    for (const auto& row : read_json_lines(data)) samples.push_back(path_sample_from_json(row, net.node_count()));
    result = {{"metric", "db"}, {"value", train::evaluate_dse(model, samples)}, {"samples", samples.size()}};
  }
  result["model"] = models::to_string(model.spec().kind);
  run.write_json("metrics.json", result);
  emit(out, result);
}

void cmd_place_stage1(const Options& o, Run& run, std::ostream& out) {
  const auto net = load_grid(o, run);
  const auto& data = require_path(o.data, "--data");
  run.input(data);
  auto config = placement::stage1_defaults(o.seed);
  apply_overrides(o, config);
  run.config("train", config.to_json());
  run.seed("seed", o.seed);
  const auto samples = placement::load_samples(data);
  const auto fit = placement::train_predictor(samples, normalized_adjacency(net), config);
  run.write_json("opnet.json", fit.net.to_json());
  run.write_json("report.json", fit.report.to_json());
  run.write("curve.csv", fit.report.to_csv());
  emit(out, {{"mse", fit.report.final_loss}, {"samples", samples.size()}});
}

void cmd_place_transfer(const Options& o, Run& run, std::ostream& out) {
  const auto& net_path = require_path(o.opnet, "--opnet");
  const auto& data = require_path(o.data, "--data");
  run.input(net_path);
  run.input(data);
  auto config = placement::transfer_defaults(o.seed);
  apply_overrides(o, config);
  run.config("train", config.to_json());
  run.seed("seed", o.seed);
  const auto pretrained = placement::OpNet::from_json(read_json_file(net_path));
  const auto samples = placement::load_samples(data);
  const auto fit = placement::transfer_retrain(pretrained, samples, config);
  run.write_json("opnet.json", fit.net.to_json());
  run.write_json("report.json", fit.report.to_json());
  run.write("curve.csv", fit.report.to_csv());
  emit(out, {{"mse", fit.report.final_loss}, {"samples", samples.size()}});
}

void cmd_place_stage2(const Options& o, Run& run, std::ostream& out) {
  const auto& net_path = require_path(o.opnet, "--opnet");
  run.input(net_path);
  const auto opnet = placement::OpNet::from_json(read_json_file(net_path));
  const auto n = opnet.node_count();
  const auto s = o.observed_count > 0 ? o.observed_count : observed_count_for_percent(o.obs_pct, n);
  const double pct = 100.0 * static_cast<double>(s) / static_cast<double>(n);
  const auto level = train::level_index(o.observed_count > 0 ? pct : o.obs_pct);
  placement::SearchConfig sc;
  sc.steps = o.search_steps;
  sc.restarts = o.restarts;
  sc.seed = o.seed;
  if (o.lr > 0.0) sc.lr = o.lr;
  run.config("s", s);
  run.config("level", level);
  run.config("search", {{"steps", sc.steps}, {"lr", sc.lr}, {"restarts", sc.restarts}, {"init_scale", sc.init_scale}});
  run.seed("seed", o.seed);
  const auto cand = placement::optimize_alpha(opnet, s, level, sc);
  Json j = cand.to_json();
  j["s"] = s;
  j["level"] = level;
  j["level_percent"] = train::observability_levels()[level];
  run.write_json("candidate.json", j);
  emit(out, {{"selected", cand.selected}, {"predicted", cand.predicted}});
}

void cmd_param_count(const Options& o, Run& run, std::ostream& out) {
  const auto kind = model_kind(o);
  const auto task = o.task.empty() ? std::string("localize") : o.task;
  std::size_t count = 0;
  if (task == "localize") {
    count = models::param_count(models::count_spec(kind, models::Task::localize, o.n, o.lines, o.n));
  } else if (task == "dse") {
    const auto s = !o.obs_list.empty() ? parse_list(o.obs_list).size()
                   : o.observed_count > 0 ? o.observed_count
                                          : observed_count_for_percent(o.obs_pct, o.n);
    count = models::param_count(models::count_spec(kind, models::dse_task(kind), o.n, o.n, s));
    run.config("observed_count", s);
  } else {
    throw ConfigError("--task must be localize or dse for param-count");
  }
  run.config("model", models::to_string(kind));
  run.config("task", task);
  run.config("n", o.n);
  run.config("lines", o.lines);
  run.write_json("count.json", {{"model", models::to_string(kind)}, {"task", task}, {"params", count}});
  out << count << "\n";
}

// ---------------------------------------------------------------------------

void add_common(CLI::App* app, Options& o) {
  app->add_option("--seed", o.seed, "Master seed");
  app->add_option("--out", o.out, "Output directory");
}

void add_grid(CLI::App* app, Options& o) { app->add_option("--grid", o.grid, "Grid JSON file"); }

void add_observed(CLI::App* app, Options& o) {
  app->add_option("--obs-pct", o.obs_pct, "Observed percentage of nodes");
  app->add_option("--observed-count", o.observed_count, "Number of observed nodes");
  app->add_option("--obs-list", o.obs_list, "Comma-separated observed node indices");
}

void add_training(CLI::App* app, Options& o) {
  app->add_option("--epochs", o.epochs, "Training epochs");
  app->add_option("--lr", o.lr, "Learning rate");
  app->add_option("--l2", o.l2, "l2 regularization coefficient");
  app->add_option("--lambda", o.lambda, "PINN data weight");
}

std::vector<std::string> strip_out(const std::vector<std::string>& args) {
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out") {
      ++i;
      continue;
    }
    if (args[i].rfind("--out=", 0) == 0) continue;
    kept.push_back(args[i]);
  }
  return kept;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, int depth);

int run_parsed(const std::vector<std::string>& args, std::ostream& out, int depth) {
  CLI::App app{"Learning toolkit for power-grid fault localization, state estimation and sensor placement", "gridlearn"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth-grid", "Generate a random connected lossless grid");
  synth->add_option("--n", o.n, "Node count");
  synth->add_option("--lines", o.lines, "Line count");
  add_common(synth, o);

  auto* gen = app.add_subcommand("generate-data", "Simulate fault, path or placement datasets");
  add_grid(gen, o);
  gen->add_option("--task", o.task, "localize, dse or place")->required();
  gen->add_option("--model", o.model, "Localizer used to measure placements");
  add_observed(gen, o);
  add_training(gen, o);
  gen->add_option("--per-line", o.per_line, "Fault samples per line");
  gen->add_option("--samples", o.samples, "Number of paths or placements");
  gen->add_option("--steps", o.steps, "Time steps per path");
  gen->add_option("--dt", o.dt, "Sampling interval of paths");
  gen->add_option("--perturbation", o.perturbation, "Half-width of initial phase offsets");
  gen->add_option("--noise", o.noise, "Measurement noise standard deviation");
  add_common(gen, o);

  auto* tr = app.add_subcommand("train", "Train a model");
  add_grid(tr, o);
  tr->add_option("--task", o.task, "localize or dse")->required();
  tr->add_option("--model", o.model, "Model kind");
  tr->add_option("--data", o.data, "Dataset (JSON lines)");
  tr->add_option("--channels", o.channels, "Localization channel mode: shared or magnitude");
  add_observed(tr, o);
  add_training(tr, o);
  add_common(tr, o);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  add_grid(ev, o);
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON");
  ev->add_option("--data", o.data, "Dataset (JSON lines)");
  add_common(ev, o);

  auto* s1 = app.add_subcommand("place-stage1", "Train the placement-accuracy predictor");
  add_grid(s1, o);
  s1->add_option("--data", o.data, "Placement samples (JSON lines)");
  add_training(s1, o);
  add_common(s1, o);

  auto* s2 = app.add_subcommand("place-stage2", "Search a placement through the trained predictor");
  s2->add_option("--opnet", o.opnet, "Predictor JSON");
  add_observed(s2, o);
  s2->add_option("--search-steps", o.search_steps, "Gradient steps per restart");
  s2->add_option("--restarts", o.restarts, "Random restarts");
  s2->add_option("--lr", o.lr, "Step size");
  add_common(s2, o);

  auto* tf = app.add_subcommand("place-transfer", "Retrain the predictor head on new samples");
  tf->add_option("--opnet", o.opnet, "Pretrained predictor JSON");
  tf->add_option("--data", o.data, "Placement samples (JSON lines)");
  add_training(tf, o);
  add_common(tf, o);

  auto* pc = app.add_subcommand("param-count", "Print the parameter count of a model");
  pc->add_option("--model", o.model, "Model kind");
  pc->add_option("--task", o.task, "localize or dse");
  pc->add_option("--n", o.n, "Node count");
  pc->add_option("--lines", o.lines, "Line count");
  add_observed(pc, o);
  add_common(pc, o);

  auto* rr = app.add_subcommand("rerun", "Repeat the run recorded in a manifest");
  rr->add_option("--manifest", o.manifest, "manifest.json of an earlier run")->required();
  rr->add_option("--out", o.out, "Output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  }

  auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  if (name == "rerun") {
    if (depth > 0) throw ConfigError("rerun: a manifest cannot point at another rerun");
    const auto m = read_json_file(o.manifest);
    auto replay = require(m, "args", "manifest").get<std::vector<std::string>>();
    if (!o.out.empty()) {
      replay.push_back("--out");
      replay.push_back(o.out);
    }
    return dispatch(replay, out, depth + 1);
  }

  Run run(name, strip_out(args), o.out);
  if (name == "synth-grid") cmd_synth_grid(o, run, out);
  else if (name == "generate-data") cmd_generate_data(o, run, out);
  else if (name == "train") cmd_train(o, run, out);
  else if (name == "eval") cmd_eval(o, run, out);
  else if (name == "place-stage1") cmd_place_stage1(o, run, out);
  else if (name == "place-stage2") cmd_place_stage2(o, run, out);
  else if (name == "place-transfer") cmd_place_transfer(o, run, out);
  else if (name == "param-count") cmd_param_count(o, run, out);
  run.finish();
  return 0;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, int depth) {
  return run_parsed(args, out, depth);
}

void error_json(std::ostream& err, const std::string& kind, const std::string& message) {
  err << Json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, 0);
  } catch (const CLI::ParseError& e) {
    error_json(err, "usage_error", e.what());
    return 2;
  } catch (const Error& e) {
    error_json(err, e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    error_json(err, "internal_error", e.what());
    return 1;
  }
}

}  // namespace gridlearn::cli
