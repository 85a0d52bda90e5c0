#include "gridlearn/serialize.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "gridlearn/error.hpp"

namespace gridlearn {

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<Json> read_json_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::vector<Json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(Json::parse(line));
    } catch (const Json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io_error", tmp.string() + ": cannot open for writing");
    out << text;
    if (!out) throw Error("io_error", tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

void write_json_lines(const std::filesystem::path& path, const std::vector<Json>& rows) {
  std::string text;
  for (const auto& r : rows) {
    text += r.dump();
    text += '\n';
  }
  write_text_atomic(path, text);
}

const Json& require(const Json& obj, const std::string& key, const std::string& context) {
  if (!obj.is_object()) throw ParseError(context + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(context + "." + key + ": missing field");
  return *it;
}

namespace {

template <typename T>
T get_as(const Json& obj, const std::string& key, const std::string& context) {
  const auto& v = require(obj, key, context);
  try {
    return v.get<T>();
  } catch (const Json::exception&) {
    throw ParseError(context + "." + key + ": wrong type");
  }
}

}  // namespace

Json grid_to_json(const GridNetwork& net) {
  Json nodes = Json::array();
  for (const auto& p : net.nodes())
    nodes.push_back({{"m", p.inertia}, {"d", p.damping}, {"P", p.injection}, {"v", p.voltage}});
  Json lines = Json::array();
  for (const auto& l : net.lines())
    lines.push_back({{"from", l.from}, {"to", l.to}, {"g", l.conductance}, {"b", l.susceptance}});
  return {{"n", net.node_count()}, {"nodes", nodes}, {"lines", lines}};
}

GridNetwork grid_from_json(const Json& j) {
  const auto n = get_as<long long>(j, "n", "grid");
  if (n < 1) throw ValidationError("grid.n: must be positive");
  const auto& nodes_j = require(j, "nodes", "grid");
  if (!nodes_j.is_array()) throw ParseError("grid.nodes: expected an array");
  if (static_cast<long long>(nodes_j.size()) != n)
    throw ValidationError("grid.nodes: length " + std::to_string(nodes_j.size()) + " differs from n=" + std::to_string(n));
  std::vector<NodeParams> nodes;
  for (std::size_t a = 0; a < nodes_j.size(); ++a) {
    const std::string ctx = "grid.nodes[" + std::to_string(a) + "]";
    nodes.push_back({get_as<double>(nodes_j[a], "m", ctx), get_as<double>(nodes_j[a], "d", ctx),
                     get_as<double>(nodes_j[a], "P", ctx), get_as<double>(nodes_j[a], "v", ctx)});
  }
  const auto& lines_j = require(j, "lines", "grid");
  if (!lines_j.is_array()) throw ParseError("grid.lines: expected an array");
  std::vector<Line> lines;
  for (std::size_t i = 0; i < lines_j.size(); ++i) {
    const std::string ctx = "grid.lines[" + std::to_string(i) + "]";
    const auto from = get_as<long long>(lines_j[i], "from", ctx);
    const auto to = get_as<long long>(lines_j[i], "to", ctx);
    if (from < 0 || to < 0) throw ValidationError(ctx + ": negative node index");
    lines.push_back({static_cast<NodeIndex>(from), static_cast<NodeIndex>(to), get_as<double>(lines_j[i], "g", ctx),
                     get_as<double>(lines_j[i], "b", ctx)});
  }
  return GridNetwork(std::move(nodes), std::move(lines));
}

Json fault_sample_to_json(const FaultSample& s) {
  std::vector<double> re(static_cast<std::size_t>(s.x.size())), im(re.size());
  for (Eigen::Index i = 0; i < s.x.size(); ++i) {
    re[static_cast<std::size_t>(i)] = s.x(i).real();
    im[static_cast<std::size_t>(i)] = s.x(i).imag();
  }
  return {{"x_re", re}, {"x_im", im}, {"y", s.line}, {"obs", s.obs.nodes()}};
}

FaultSample fault_sample_from_json(const Json& j, std::size_t node_count, std::size_t line_count) {
  const auto re = get_as<std::vector<double>>(j, "x_re", "sample");
  const auto im = get_as<std::vector<double>>(j, "x_im", "sample");
  if (re.size() != node_count || im.size() != node_count)
    throw ValidationError("sample.x: expected length " + std::to_string(node_count));
  const auto y = get_as<long long>(j, "y", "sample");
  if (y < 0 || static_cast<std::size_t>(y) >= line_count)
    throw ValidationError("sample.y: line index out of range");
  FaultSample s;
  s.x.resize(static_cast<Eigen::Index>(node_count));
  for (std::size_t i = 0; i < node_count; ++i) s.x(static_cast<Eigen::Index>(i)) = {re[i], im[i]};
  s.line = static_cast<std::size_t>(y);
  s.line_count = line_count;
  s.obs = ObservedSet(get_as<std::vector<NodeIndex>>(j, "obs", "sample"), node_count);
  return s;
}

Json path_sample_to_json(const PathSample& s) {
  const auto k1 = s.steps + 1;
  auto nest = [k1](const std::vector<double>& flat, std::size_t rows) {
    Json out = Json::array();
    for (std::size_t c = 0; c < 2; ++c) {
      Json ch = Json::array();
      for (std::size_t r = 0; r < rows; ++r) {
        const auto begin = flat.begin() + static_cast<std::ptrdiff_t>((c * rows + r) * k1);
        ch.push_back(std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(k1)));
      }
      out.push_back(std::move(ch));
    }
    return out;
  };
  return {{"obs", s.obs.nodes()},
          {"dt", s.dt},
          {"input", nest(s.input, s.obs.size())},
          {"target", nest(s.target, s.node_count())}};
}

PathSample path_sample_from_json(const Json& j, std::size_t node_count) {
  PathSample s;
  s.obs = ObservedSet(get_as<std::vector<NodeIndex>>(j, "obs", "path"), node_count);
  s.dt = get_as<double>(j, "dt", "path");
  if (!(s.dt > 0.0)) throw ValidationError("path.dt: must be positive");
  auto flatten = [&](const std::string& key, std::size_t rows) {
    const auto nested = get_as<std::vector<std::vector<std::vector<double>>>>(j, key, "path");
    if (nested.size() != 2) throw ValidationError("path." + key + ": expected 2 channels");
    std::vector<double> flat;
    for (const auto& ch : nested) {
      if (ch.size() != rows) throw ValidationError("path." + key + ": expected " + std::to_string(rows) + " rows");
      for (const auto& row : ch) {
        if (row.size() < 2) throw ValidationError("path." + key + ": need at least 2 time points");
        if (s.steps == 0) s.steps = row.size() - 1;
        if (row.size() != s.steps + 1) throw ValidationError("path." + key + ": ragged time axis");
        flat.insert(flat.end(), row.begin(), row.end());
      }
    }
    return flat;
  };
  s.input = flatten("input", s.obs.size());
  s.target = flatten("target", node_count);
  return s;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace gridlearn
