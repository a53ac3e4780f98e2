#include "enap/history_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace enap {

bool Embedding::operator==(const Embedding& o) const {
  if (symbolic != o.symbolic) return false;
  return symbolic ? token == o.token : dense == o.dense;
}

double similarity(const Embedding& x, const Embedding& y) {
  if (x.symbolic || y.symbolic) return x.symbolic && y.symbolic && x.token == y.token ? 1.0 : 0.0;
  return cosine_sim(x.dense, y.dense);
}

const char* to_string(EncoderMode m) {
  switch (m) {
    case EncoderMode::TrainedRnn: return "trained-rnn";
    case EncoderMode::RandomRnn: return "random-rnn";
    case EncoderMode::Exact: return "exact";
  }
  return "exact";
}

EncoderMode encoder_mode_from_string(const std::string& s) {
  if (s == "trained-rnn") return EncoderMode::TrainedRnn;
  if (s == "random-rnn") return EncoderMode::RandomRnn;
  if (s == "exact" || s == "exact-history") return EncoderMode::Exact;
  throw Error(ErrorKind::InvalidArgument, "unknown encoder mode '" + s + "'");
}

namespace {

std::uint64_t quantize(double v) {
  const double q = std::round(v * 1e6);
  return static_cast<std::uint64_t>(static_cast<std::int64_t>(q));
}

}  // namespace

std::vector<Embedding> HistoryEncoder::embed_trajectory(const std::vector<Vec>& actions,
                                                        const std::vector<SymbolId>& symbols) const {
  if (symbols.empty()) throw Error(ErrorKind::EmptyPrefix, "empty history");
  if (actions.size() != symbols.size())
    throw Error(ErrorKind::ShapeMismatch, "actions and symbols differ in length");
  std::vector<Embedding> out;
  out.reserve(symbols.size());
  if (mode == EncoderMode::Exact) {
    std::uint64_t h = kFnvOffset;
    for (std::size_t t = 0; t < symbols.size(); ++t) {
      if (t > 0) {
        h = fnv1a(h, actions[t - 1].size());
        for (Eigen::Index i = 0; i < actions[t - 1].size(); ++i) h = fnv1a(h, quantize(actions[t - 1][i]));
      }
      h = fnv1a(h, 0x5359000000000000ULL | symbols[t]);
      out.push_back(Embedding::of_token(h == kEndToken ? h + 1 : h));
    }
    return out;
  }
  std::vector<Vec> prev(symbols.size());
  for (std::size_t t = 0; t < symbols.size(); ++t)
    prev[t] = t ? actions[t - 1] : Vec::Zero(actions[0].size());
  auto res = nn::rnn_forward(rnn, nn::rnn_inputs(rnn, prev, symbols));
  for (auto& h : res.hiddens) {
    Embedding e;
    e.dense = h;
    if (normalize_output) {
      const double n = h.norm();
      if (n > 0) e.dense /= n;
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Embedding> HistoryEncoder::embed_trajectory(const Trajectory& t) const {
  std::vector<Vec> actions;
  std::vector<SymbolId> symbols;
  for (const auto& s : t.steps) {
    if (!s.symbol) throw Error(ErrorKind::InvalidArgument, "trajectory '" + t.traj_id + "' is not annotated");
    actions.push_back(s.action);
    symbols.push_back(*s.symbol);
  }
  return embed_trajectory(actions, symbols);
}

Embedding HistoryEncoder::embed_history(const std::vector<std::pair<Vec, SymbolId>>& prefix) const {
  if (prefix.empty()) throw Error(ErrorKind::EmptyPrefix, "empty history");
  std::vector<Vec> actions;
  std::vector<SymbolId> symbols;
  for (const auto& [a, c] : prefix) {
    actions.push_back(a);
    symbols.push_back(c);
  }
  return embed_trajectory(actions, symbols).back();
}

std::vector<Vec> HistoryEncoder::raw_hiddens(const Trajectory& t) const {
  if (mode == EncoderMode::Exact) throw Error(ErrorKind::InvalidArgument, "exact encoder has no hidden state");
  std::vector<Vec> prev;
  std::vector<SymbolId> symbols;
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    prev.push_back(i ? t.steps[i - 1].action : Vec::Zero(t.steps[0].action.size()));
    symbols.push_back(t.steps[i].symbol.value());
  }
  return nn::rnn_forward(rnn, nn::rnn_inputs(rnn, prev, symbols)).hiddens;
}

Json HistoryEncoder::to_json() {
  Json j;
  j["mode"] = to_string(mode);
  j["normalize_output"] = normalize_output;
  j["embed_dim"] = embed_dim();
  j["rnn"] = mode == EncoderMode::Exact ? Json(nullptr) : rnn.to_json();
  return j;
}

HistoryEncoder HistoryEncoder::from_json(const Json& j) {
  HistoryEncoder e;
  e.mode = encoder_mode_from_string(j.at("mode").get<std::string>());
  e.normalize_output = j.at("normalize_output").get<bool>();
  if (e.mode != EncoderMode::Exact) e.rnn = nn::RnnParams::from_json(j.at("rnn"));
  return e;
}

HistoryEncoder make_exact_encoder() { return HistoryEncoder{}; }

HistoryEncoder make_random_encoder(int hidden, int action_dim, int n_symbols, int symbol_embed,
                                   std::uint64_t seed) {
  HistoryEncoder e;
  e.mode = EncoderMode::RandomRnn;
  e.rnn = nn::RnnParams::create(hidden, action_dim, n_symbols, symbol_embed, seed);
  e.rnn.discard_heads();
  return e;
}

std::vector<nn::RnnSequence> rnn_sequences(const Dataset& ds) {
  std::vector<nn::RnnSequence> out;
  for (const auto& t : ds.trajectories) {
    nn::RnnSequence s;
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      const auto& st = t.steps[i];
      if (!st.symbol) throw Error(ErrorKind::InvalidArgument, "dataset is not annotated");
      s.prev_actions.push_back(i ? t.steps[i - 1].action : Vec::Zero(ds.action_dim));
      s.symbols.push_back(*st.symbol);
      s.target_actions.push_back(st.action);
      s.next_symbols.push_back(i + 1 < t.steps.size() ? static_cast<int>(t.steps[i + 1].symbol.value()) : -1);
    }
    out.push_back(std::move(s));
  }
  return out;
}

HistoryTraining train_history_encoder(const Dataset& ds, const HistoryTrainConfig& cfg) {
  check_dataset(ds);
  int n_sym = cfg.n_symbols;
  if (n_sym <= 0)
    for (const auto& t : ds.trajectories)
      for (const auto& s : t.steps) n_sym = std::max(n_sym, static_cast<int>(s.symbol.value()) + 1);
  return train_history_encoder(
      ds, cfg, nn::RnnParams::create(cfg.hidden, ds.action_dim, n_sym, cfg.symbol_embed, cfg.seed));
}

HistoryTraining train_history_encoder(const Dataset& ds, const HistoryTrainConfig& cfg, nn::RnnParams p) {
  check_dataset(ds);
  if (!ds.fully_annotated()) throw Error(ErrorKind::InvalidArgument, "dataset is not annotated");
  auto seqs = rnn_sequences(ds);
  auto full_loss = [&] {
    auto g = nn::RnnParams::zeros_like(p);
    return nn::rnn_loss_and_grads(p, seqs, cfg.lambda_contrast, g).total;
  };
  HistoryTraining out;
  out.losses.push_back(full_loss());
  nn::Optimizer opt;
  opt.lr = cfg.lr;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(seqs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t B = static_cast<std::size_t>(std::max(1, cfg.batch_trajectories));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += B) {
      std::vector<nn::RnnSequence> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + B); ++k) batch.push_back(seqs[order[k]]);
      auto g = nn::RnnParams::zeros_like(p);
      nn::rnn_loss_and_grads(p, batch, cfg.lambda_contrast, g);
      opt.step(p.tensors(), g.tensors());
    }
    out.losses.push_back(full_loss());
  }
  out.with_heads = p;
  out.encoder.mode = EncoderMode::TrainedRnn;
  out.encoder.rnn = p;
  out.encoder.rnn.discard_heads();
  return out;
}

std::optional<double> saturation_bound(int d, double epsilon) {
  if (d < 1 || epsilon < 0) throw Error(ErrorKind::InvalidArgument, "bad saturation arguments");
  const double r = 1.0 / std::sqrt(static_cast<double>(d));
  if (r <= epsilon) return std::nullopt;
  return 2.0 * (r - epsilon) * (r - epsilon);
}

double saturation_error(const Vec& h) {
  const double d = static_cast<double>(h.size());
  const double n = h.norm();
  Vec s = h.unaryExpr([](double x) { return x < 0 ? -1.0 : 1.0; }) / std::sqrt(d);
  if (n == 0) return s.norm();
  return (h / n - s).norm();
}

bool certified_same_vertex(const Vec& h1, const Vec& h2, double eps) {
  auto bound = saturation_bound(static_cast<int>(h1.size()), eps);
  if (!bound) return false;
  const double kappa = 1.0 - cosine_sim(h1, h2);
  return kappa < *bound;
}

Json SaturationReport::to_json() const {
  Json j;
  j["mean_abs_component"] = mean_abs_component;
  j["epsilon_hat"] = epsilon_hat;
  j["d"] = d;
  j["kappa_max"] = kappa_max ? Json(*kappa_max) : Json(nullptr);
  j["vacuous"] = !kappa_max.has_value();
  return j;
}

SaturationReport saturation_report(const HistoryEncoder& enc, const Dataset& ds) {
  if (ds.trajectories.empty() || ds.total_steps() == 0)
    throw Error(ErrorKind::EmptyDataset, "no steps to measure");
  SaturationReport r;
  r.d = enc.embed_dim();
  if (enc.mode == EncoderMode::Exact) {
    // token embeddings sit exactly on orthogonal unit vertices
    r.mean_abs_component = 1.0;
    r.d = 1;
    r.epsilon_hat = 0.0;
    r.kappa_max = saturation_bound(1, 0.0);
    return r;
  }
  double sum = 0;
  std::size_t count = 0;
  for (const auto& t : ds.trajectories)
    for (const auto& h : enc.raw_hiddens(t)) {
      sum += h.cwiseAbs().sum();
      count += static_cast<std::size_t>(h.size());
      r.epsilon_hat = std::max(r.epsilon_hat, saturation_error(h));
    }
  r.mean_abs_component = sum / static_cast<double>(count);
  r.kappa_max = saturation_bound(r.d, r.epsilon_hat);
  return r;
}

}  // namespace enap
