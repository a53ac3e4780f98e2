#include "enap/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace enap {

Json vec_to_json(const Vec& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vec vec_from_json(const Json& j) {
  if (!j.is_array()) throw Error(ErrorKind::Parse, "expected a numeric array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorKind::Parse, "expected a number");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

std::string dataset_to_jsonl(const Dataset& ds) {
  std::string out;
  for (const auto& t : ds.trajectories) {
    Json line;
    line["traj_id"] = t.traj_id;
    Json steps = Json::array();
    for (const auto& s : t.steps) {
      Json js;
      js["obs"] = vec_to_json(s.obs);
      js["action"] = vec_to_json(s.action);
      js["symbol"] = s.symbol ? Json(*s.symbol) : Json(nullptr);
      steps.push_back(std::move(js));
    }
    line["steps"] = std::move(steps);
    out += line.dump();
    out += '\n';
  }
  return out;
}

Dataset dataset_from_jsonl(const std::string& text) {
  Dataset ds;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const std::exception& e) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.contains("traj_id") || !j.contains("steps"))
      throw Error(ErrorKind::Parse, "line " + std::to_string(lineno) + ": missing traj_id/steps");
    Trajectory t;
    t.traj_id = j["traj_id"].get<std::string>();
    for (const auto& js : j["steps"]) {
      Step s;
      s.obs = vec_from_json(js.at("obs"));
      s.action = vec_from_json(js.at("action"));
      if (js.contains("symbol") && !js["symbol"].is_null()) {
        const auto v = js["symbol"].get<long long>();
        if (v < 0) throw Error(ErrorKind::Parse, "negative symbol id");
        s.symbol = static_cast<SymbolId>(v);
      }
      t.steps.push_back(std::move(s));
    }
    ds.trajectories.push_back(std::move(t));
  }
  if (!ds.trajectories.empty() && !ds.trajectories.front().steps.empty()) {
    ds.obs_dim = static_cast<int>(ds.trajectories.front().steps.front().obs.size());
    ds.action_dim = static_cast<int>(ds.trajectories.front().steps.front().action.size());
  }
  check_dataset(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_text(path, dataset_to_jsonl(ds));
}

Dataset load_dataset(const std::filesystem::path& path) { return dataset_from_jsonl(read_text(path)); }

Json pmm_to_json(const Pmm& input) {
  Pmm pmm = input;
  pmm.canonicalize();
  Json j;
  j["alphabet_size"] = pmm.alphabet_size;
  j["action_dim"] = pmm.action_dim;
  j["initial"] = pmm.initial();
  Json states = Json::array();
  for (const auto& s : pmm.states) {
    Json js;
    js["id"] = s.id;
    js["nis"] = Json(std::vector<SymbolId>(s.nis.begin(), s.nis.end()));
    js["centroid"] = vec_to_json(s.centroid);
    states.push_back(std::move(js));
  }
  j["states"] = std::move(states);
  Json edges = Json::array();
  for (const auto& e : pmm.edges) {
    Json je;
    je["src"] = e.src;
    je["input"] = e.input;
    je["dst"] = e.dst;
    je["prob"] = e.prob;
    je["action_mean"] = vec_to_json(e.action_mean);
    je["action_samples"] = e.action_samples;
    edges.push_back(std::move(je));
  }
  j["edges"] = std::move(edges);
  return j;
}

Pmm pmm_from_json(const Json& j) {
  try {
    Pmm pmm;
    pmm.alphabet_size = j.at("alphabet_size").get<int>();
    pmm.action_dim = j.at("action_dim").get<int>();
    const auto initial = j.at("initial").get<StateId>();
    for (const auto& js : j.at("states")) {
      PmmState s;
      s.id = js.at("id").get<StateId>();
      for (const auto& c : js.at("nis")) s.nis.insert(c.get<SymbolId>());
      s.centroid = vec_from_json(js.at("centroid"));
      s.is_initial = s.id == initial;
      pmm.states.push_back(std::move(s));
    }
    for (const auto& je : j.at("edges")) {
      PmmEdge e;
      e.src = je.at("src").get<StateId>();
      e.input = je.at("input").get<SymbolId>();
      e.dst = je.at("dst").get<StateId>();
      e.prob = je.at("prob").get<double>();
      e.action_mean = vec_from_json(je.at("action_mean"));
      e.action_samples = je.at("action_samples").get<int>();
      pmm.edges.push_back(std::move(e));
    }
    pmm.canonicalize();
    return pmm;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed machine document: ") + e.what());
  }
}

void save_pmm(const Pmm& pmm, const std::filesystem::path& path) { write_json(path, pmm_to_json(pmm)); }

Pmm load_pmm(const std::filesystem::path& path) { return pmm_from_json(read_json(path)); }

namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string pmm_to_dot(const Pmm& input) {
  Pmm pmm = input;
  pmm.canonicalize();
  std::string out = "digraph pmm {\n";
  for (const auto& s : pmm.states) {
    out += "  q" + std::to_string(s.id) + " [label=\"q" + std::to_string(s.id) + "\"";
    if (s.is_initial) out += ", shape=doublecircle";
    out += "];\n";
  }
  for (const auto& e : pmm.edges) {
    std::string mean;
    for (Eigen::Index i = 0; i < e.action_mean.size(); ++i) {
      if (i) mean += ", ";
      mean += fixed2(e.action_mean[i]);
    }
    out += "  q" + std::to_string(e.src) + " -> q" + std::to_string(e.dst) + " [label=\"c" +
           std::to_string(e.input) + " | p=" + fixed2(e.prob) + " | a=[" + mean + "]\"];\n";
  }
  out += "}\n";
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

Json read_json(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace enap
