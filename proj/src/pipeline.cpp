#include "enap/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

namespace enap {

const char* to_string(ClusterSelection s) { return s == ClusterSelection::Leaf ? "leaf" : "eom"; }

ClusterSelection cluster_selection_from_string(const std::string& s) {
  if (s == "leaf") return ClusterSelection::Leaf;
  if (s == "eom" || s == "excess-of-mass") return ClusterSelection::ExcessOfMass;
  throw Error(ErrorKind::InvalidArgument, "unknown cluster selection '" + s + "'");
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value) {
  throw Error(ErrorKind::InvalidArgument, "bad value '" + value + "' for " + key);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) bad(key, v);
  return out;
}

template <typename T>
T to_integer(const std::string& key, const std::string& v) {
  T out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad(key, v);
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, v);
}

struct Field {
  const char* key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

#define ENAP_DOUBLE(name)                                                        \
  Field {                                                                        \
    #name, [](const PipelineConfig& c) { return fmt(c.name); },                  \
        [](PipelineConfig& c, const std::string& v) { c.name = to_double(#name, v); } \
  }
#define ENAP_INT(name)                                                                  \
  Field {                                                                               \
    #name, [](const PipelineConfig& c) { return std::to_string(c.name); },              \
        [](PipelineConfig& c, const std::string& v) { c.name = to_integer<int>(#name, v); } \
  }
#define ENAP_BOOL(name)                                                          \
  Field {                                                                        \
    #name, [](const PipelineConfig& c) { return std::string(c.name ? "true" : "false"); }, \
        [](PipelineConfig& c, const std::string& v) { c.name = to_bool(#name, v); }        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f{
      ENAP_DOUBLE(tau_sim),
      ENAP_DOUBLE(eps_err),
      ENAP_DOUBLE(eps_tiebreak),
      ENAP_DOUBLE(lambda_contrast),
      ENAP_DOUBLE(lambda_reg),
      ENAP_INT(rnn_hidden),
      ENAP_INT(symbol_embed),
      ENAP_INT(em_iters),
      Field{"seed", [](const PipelineConfig& c) { return std::to_string(c.seed); },
            [](PipelineConfig& c, const std::string& v) { c.seed = to_integer<std::uint64_t>("seed", v); }},
      ENAP_INT(min_cluster_size),
      ENAP_INT(min_samples),
      Field{"selection", [](const PipelineConfig& c) { return std::string(to_string(c.selection)); },
            [](PipelineConfig& c, const std::string& v) { c.selection = cluster_selection_from_string(v); }},
      ENAP_BOOL(refine),
      Field{"encoder", [](const PipelineConfig& c) { return std::string(to_string(c.encoder)); },
            [](PipelineConfig& c, const std::string& v) { c.encoder = encoder_mode_from_string(v); }},
      ENAP_INT(history_epochs),
      ENAP_DOUBLE(history_lr),
      ENAP_BOOL(eq_on_holdout),
      ENAP_BOOL(prune),
      ENAP_INT(max_eq_rounds),
      ENAP_INT(closure_limit),
      ENAP_BOOL(allow_unresolved),
      ENAP_INT(mstep_epochs),
      ENAP_INT(batch),
      ENAP_DOUBLE(lr),
      ENAP_DOUBLE(tol),
      Field{"fallback", [](const PipelineConfig& c) { return std::string(to_string(c.fallback)); },
            [](PipelineConfig& c, const std::string& v) { c.fallback = fallback_from_string(v); }},
      Field{"residual_hidden",
            [](const PipelineConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.residual_hidden.size(); ++i) s += (i ? "," : "") + std::to_string(c.residual_hidden[i]);
              return s;
            },
            [](PipelineConfig& c, const std::string& v) {
              std::vector<int> sizes;
              std::stringstream ss(v);
              std::string part;
              while (std::getline(ss, part, ',')) sizes.push_back(to_integer<int>("residual_hidden", trim(part)));
              if (sizes.empty()) bad("residual_hidden", v);
              c.residual_hidden = sizes;
            }},
  };
  return f;
}

#undef ENAP_DOUBLE
#undef ENAP_INT
#undef ENAP_BOOL

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::InvalidArgument, what);
}

}  // namespace

void PipelineConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (key == f.key) {
      f.set(*this, trim(value));
      return;
    }
  throw Error(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
}

void PipelineConfig::check() const {
  require(tau_sim > 0 && tau_sim <= 1, "tau_sim must lie in (0, 1]");
  require(eps_err > 0, "eps_err must be positive");
  require(eps_tiebreak > 0 && eps_tiebreak < 1, "eps_tiebreak must lie in (0, 1)");
  require(lambda_contrast >= 0, "lambda_contrast must be non-negative");
  require(lambda_reg >= 0, "lambda_reg must be non-negative");
  require(rnn_hidden >= 1 && symbol_embed >= 1, "rnn_hidden and symbol_embed must be positive");
  require(em_iters >= 1, "em_iters must be at least 1");
  require(min_cluster_size >= 0 && min_samples >= 0, "cluster sizes must be non-negative");
  require(history_epochs >= 0 && mstep_epochs >= 0, "epoch counts must be non-negative");
  require(history_lr > 0 && lr > 0, "learning rates must be positive");
  require(max_eq_rounds >= 1, "max_eq_rounds must be at least 1");
  require(closure_limit >= 0, "closure_limit must be non-negative");
  require(batch >= 1, "batch must be at least 1");
  require(tol >= 0, "tol must be non-negative");
  for (int h : residual_hidden) require(h >= 1, "residual_hidden sizes must be positive");
}

std::string PipelineConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

PipelineConfig PipelineConfig::from_text(const std::string& text) {
  PipelineConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::Parse, "config line " + std::to_string(lineno) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

std::uint64_t PipelineConfig::hash() const {
  std::uint64_t h = kFnvOffset;
  for (unsigned char ch : to_text()) h = fnv1a(h, ch);
  return h;
}

std::string PipelineConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

AbstractionConfig PipelineConfig::abstraction() const {
  AbstractionConfig a;
  a.min_cluster_size = min_cluster_size;
  a.min_samples = min_samples;
  a.refine = refine;
  a.selection = selection;
  a.seed = stage_seed(seed, 1);
  return a;
}

HistoryTrainConfig PipelineConfig::history(int n_symbols) const {
  HistoryTrainConfig h;
  h.hidden = rnn_hidden;
  h.symbol_embed = symbol_embed;
  h.epochs = history_epochs;
  h.lr = history_lr;
  h.lambda_contrast = lambda_contrast;
  h.seed = stage_seed(seed, 2);
  h.n_symbols = n_symbols;
  return h;
}

MineConfig PipelineConfig::mine() const {
  MineConfig m;
  m.tau_sim = tau_sim;
  m.eps_err = eps_err;
  m.max_eq_rounds = max_eq_rounds;
  m.closure_limit = closure_limit;
  m.prune = prune;
  m.eq_on_holdout = eq_on_holdout;
  m.allow_unresolved = allow_unresolved;
  return m;
}

MStepConfig PipelineConfig::mstep() const {
  MStepConfig m;
  m.max_epochs = mstep_epochs;
  m.batch = batch;
  m.lr = lr;
  m.lambda_reg = lambda_reg;
  m.tol = tol;
  m.seed = seed;
  return m;
}

EmConfig PipelineConfig::em() const {
  EmConfig e;
  e.K = em_iters;
  e.seed = seed;
  e.abstraction = abstraction();
  e.encoder_mode = encoder;
  e.history = history(0);
  e.mine = mine();
  e.mstep = mstep();
  e.eps_tiebreak = eps_tiebreak;
  e.fallback = fallback;
  e.residual_hidden = residual_hidden;
  return e;
}

}  // namespace enap
