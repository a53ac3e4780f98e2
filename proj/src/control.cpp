#include "enap/control.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "enap/log.hpp"

namespace enap {

const char* to_string(Fallback f) { return f == Fallback::NearestState ? "nearest-state" : "hold-last"; }

Fallback fallback_from_string(const std::string& s) {
  if (s == "nearest-state") return Fallback::NearestState;
  if (s == "hold-last") return Fallback::HoldLast;
  throw Error(ErrorKind::InvalidArgument, "unknown fallback '" + s + "'");
}

void PolicyBundle::check() const {
  if (!(eps_tiebreak > 0 && eps_tiebreak < 1))
    throw Error(ErrorKind::InvalidArgument, "eps_tiebreak must lie in (0, 1)");
  if (codebook.centroids.empty()) throw Error(ErrorKind::EmptyCodebook, "bundle has no codebook");
  if (codebook.centroids.front().size() != encoder.out_dim())
    throw Error(ErrorKind::DimensionMismatch, "codebook and encoder disagree on feature size");
  if (state_embed.rows() != kStateEmbedDim || state_embed.cols() != static_cast<Eigen::Index>(pmm.states.size()))
    throw Error(ErrorKind::ShapeMismatch, "state embedding table does not match the machine");
  if (residual.in_dim() != kStateEmbedDim + encoder.out_dim() + pmm.action_dim ||
      residual.out_dim() != pmm.action_dim)
    throw Error(ErrorKind::ShapeMismatch, "residual network does not match feature/action sizes");
}

nn::Mlp make_residual(int feature_dim, int action_dim, std::uint64_t seed, const std::vector<int>& hidden) {
  std::vector<int> sizes{kStateEmbedDim + feature_dim + action_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(action_dim);
  auto net = nn::Mlp::create(sizes, seed);
  // start from the coarse policy alone
  net.W.back().setZero();
  net.b.back().setZero();
  return net;
}

ControllerState initial_controller(const PolicyBundle& b) {
  ControllerState st;
  st.q = b.pmm.initial();
  st.last_action = Vec::Zero(b.pmm.action_dim);
  return st;
}

Action coarse_action(const Pmm& pmm, StateId q, SymbolId c) {
  const auto edges = pmm.out_edges(q, c);
  if (edges.empty())
    throw Error(ErrorKind::NoTransition, "no edge from q" + std::to_string(q) + " on c" + std::to_string(c));
  Vec sum = Vec::Zero(edges.front()->action_mean.size());
  double n = 0;
  for (const PmmEdge* e : edges) {
    sum += e->action_samples * e->action_mean;
    n += e->action_samples;
  }
  return sum / n;
}

StateId next_state(const Pmm& pmm, StateId q, SymbolId c, SymbolId c_next, double eps) {
  const auto edges = pmm.out_edges(q, c);
  if (edges.empty())
    throw Error(ErrorKind::DeadEnd, "no successor of q" + std::to_string(q) + " on c" + std::to_string(c));
  StateId best = edges.front()->dst;
  double best_score = -1;
  for (const PmmEdge* e : edges) {
    const double score = (pmm.state(e->dst).nis.count(c_next) ? 1.0 : 0.0) + eps * e->prob;
    if (score > best_score) {
      best_score = score;
      best = e->dst;
    }
  }
  return best;
}

namespace {

Vec residual_input(const PolicyBundle& b, StateId q, const Feature& f, const Action& a_base) {
  Vec x(kStateEmbedDim + f.size() + a_base.size());
  x << b.state_embed.col(q), f, a_base;
  return x;
}

std::optional<StateId> nearest_state_with(const Pmm& pmm, StateId q, SymbolId c) {
  std::optional<StateId> best;
  double best_s = -2;
  const Vec& from = pmm.state(q).centroid;
  for (const auto& s : pmm.states) {
    if (!s.nis.count(c)) continue;
    const double sim = from.size() == s.centroid.size() ? from.dot(s.centroid) : 0.0;
    if (sim > best_s) {
      best_s = sim;
      best = s.id;
    }
  }
  return best;
}

}  // namespace

ActResult act(const PolicyBundle& b, ControllerState& st, const Observation& obs) {
  const Feature f = b.encoder.encode(obs);
  ActResult r;
  r.symbol = assign_symbol(b.codebook, f);
  if (b.pmm.out_edges(st.q, r.symbol).empty()) {
    r.fallback = true;
    std::optional<StateId> jump;
    if (b.fallback == Fallback::NearestState) jump = nearest_state_with(b.pmm, st.q, r.symbol);
    if (!jump) {
      r.a_base = st.last_action;
      r.action = st.last_action;
      st.last_symbol = r.symbol;
      ++st.step;
      return r;
    }
    st.q = *jump;
  }
  r.a_base = coarse_action(b.pmm, st.q, r.symbol);
  r.action = r.a_base + b.residual.forward(residual_input(b, st.q, f, r.a_base));
  st.last_symbol = r.symbol;
  st.last_action = r.action;
  ++st.step;
  return r;
}

EpisodeTrace run_episode(EpisodeEnv& env, const PolicyBundle& b, int max_steps) {
  EpisodeTrace tr;
  ControllerState st = initial_controller(b);
  tr.states.push_back(st.q);
  for (int t = 0; t < max_steps && !env.done(); ++t) {
    const Observation obs = env.observe();
    const ActResult r = act(b, st, obs);
    tr.steps.push_back({obs, r.action, r.symbol, st.q, r.fallback});
    tr.fallbacks += r.fallback;
    env.step(r.action);
    if (!env.done() && !b.pmm.out_edges(st.q, r.symbol).empty()) {
      const SymbolId c_next = assign_symbol(b.codebook, b.encoder.encode(env.observe()));
      st.q = next_state(b.pmm, st.q, r.symbol, c_next, b.eps_tiebreak);
    }
    tr.states.push_back(st.q);
  }
  tr.success = env.success();
  return tr;
}

std::optional<StatePath> least_path(const Pmm& pmm, const std::vector<SymbolId>& symbols,
                                    const std::vector<Vec>* actions, double eps_err) {
  const std::size_t T = symbols.size();
  if (actions && actions->size() != T) throw Error(ErrorKind::DimensionMismatch, "symbols/actions length");
  auto ok = [&](const PmmEdge* e, std::size_t t) {
    if (!actions) return true;
    return ((*actions)[t] - e->action_mean).cwiseAbs().maxCoeff() <= eps_err;
  };
  // live[t] = states from which symbols[t..] can still be consumed
  std::vector<std::vector<bool>> live(T + 1, std::vector<bool>(pmm.states.size(), false));
  std::fill(live[T].begin(), live[T].end(), true);
  for (std::size_t t = T; t-- > 0;)
    for (const auto& e : pmm.edges)
      if (e.input == symbols[t] && live[t + 1][e.dst] && ok(&e, t)) live[t][e.src] = true;
  StateId q = pmm.initial();
  if (!live[0][q]) return std::nullopt;
  StatePath path{q};
  for (std::size_t t = 0; t < T; ++t) {
    for (const PmmEdge* e : pmm.out_edges(q, symbols[t]))
      if (live[t + 1][e->dst] && ok(e, t)) {
        q = e->dst;
        break;
      }
    path.push_back(q);
  }
  return path;
}

JointGrads zero_grads(const PolicyBundle& b) {
  JointGrads g;
  g.residual = nn::Mlp::zeros_like(b.residual);
  g.state_embed = Mat::Zero(b.state_embed.rows(), b.state_embed.cols());
  if (!b.encoder.identity) g.encoder = nn::Mlp::zeros_like(b.encoder.net);
  return g;
}

double joint_loss(const PolicyBundle& b, const std::vector<JointSample>& batch, double lambda_reg,
                  JointGrads* grads) {
  if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "empty batch");
  const double n = static_cast<double>(batch.size());
  const int F = b.encoder.out_dim();
  double loss = 0;
  for (const auto& s : batch) {
    Feature f;
    Vec raw;
    nn::Mlp::Cache enc_cache;
    if (b.encoder.identity) {
      f = b.encoder.encode(s.obs);
    } else {
      raw = b.encoder.net.forward(s.obs, enc_cache);
      f = raw;
      if (b.encoder.l2_normalize) {
        const double norm = raw.norm();
        if (norm > 0) f = raw / norm;
      }
    }
    if (s.c >= static_cast<SymbolId>(b.codebook.size())) throw Error(ErrorKind::SymbolOutOfRange, "label symbol");
    const Vec& mu = b.codebook.centroids[s.c];
    const Action a_base = coarse_action(b.pmm, s.q, s.c);
    nn::Mlp::Cache cache;
    const Vec y = b.residual.forward(residual_input(b, s.q, f, a_base), cache);
    const Vec r = a_base + y - s.action;
    loss += r.squaredNorm() / n + lambda_reg * 0.5 * (f - mu).squaredNorm() / n;
    if (!grads) continue;
    const Vec dx = b.residual.backward(cache, 2.0 * r / n, grads->residual);
    grads->state_embed.col(s.q) += dx.head(kStateEmbedDim);
    if (b.encoder.identity) continue;
    Vec df = dx.segment(kStateEmbedDim, F) + lambda_reg * (f - mu) / n;
    if (b.encoder.l2_normalize) {
      const double norm = raw.norm();
      if (norm > 0) df = (df - f * f.dot(df)) / norm;
    }
    b.encoder.net.backward(enc_cache, df, grads->encoder);
  }
  if (!std::isfinite(loss)) throw Error(ErrorKind::NonFiniteLoss, "joint loss is not finite");
  return loss;
}

std::vector<JointSample> joint_samples(const Pmm& pmm, const Dataset& annotated, double eps_err) {
  std::vector<JointSample> out;
  for (const auto& tr : annotated.trajectories) {
    std::vector<SymbolId> syms;
    std::vector<Vec> acts;
    for (const auto& s : tr.steps) {
      if (!s.symbol) throw Error(ErrorKind::UntracedDataset, "step without symbol");
      syms.push_back(*s.symbol);
      acts.push_back(s.action);
    }
    auto path = least_path(pmm, syms, &acts, eps_err);
    if (!path) path = least_path(pmm, syms);
    if (!path) throw Error(ErrorKind::NoValidPath, "trajectory " + tr.traj_id + " does not trace through the machine");
    for (std::size_t t = 0; t < tr.steps.size(); ++t)
      out.push_back({tr.steps[t].obs, tr.steps[t].action, (*path)[t], syms[t]});
  }
  return out;
}

namespace {

std::vector<nn::Tensor> trainable(PolicyBundle& b) {
  auto ts = b.residual.tensors("residual");
  ts.push_back(nn::view("state_embed", b.state_embed));
  if (!b.encoder.identity) {
    auto e = b.encoder.net.tensors("encoder");
    ts.insert(ts.end(), e.begin(), e.end());
  }
  return ts;
}

std::vector<nn::Tensor> trainable(JointGrads& g, bool with_encoder) {
  auto ts = g.residual.tensors("residual");
  ts.push_back(nn::view("state_embed", g.state_embed));
  if (with_encoder) {
    auto e = g.encoder.tensors("encoder");
    ts.insert(ts.end(), e.begin(), e.end());
  }
  return ts;
}

template <class Fn>
void for_minibatches(std::size_t n, int batch, std::mt19937_64& rng, Fn fn) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t s = 0; s < n; s += batch) {
    const std::size_t e = std::min(n, s + static_cast<std::size_t>(batch));
    fn(std::vector<std::size_t>(idx.begin() + s, idx.begin() + e));
  }
}

}  // namespace

std::vector<double> m_step(PolicyBundle& b, const std::vector<JointSample>& samples, const MStepConfig& cfg) {
  if (samples.empty()) throw Error(ErrorKind::EmptyDataset, "no training samples");
  std::mt19937_64 rng(cfg.seed);
  nn::Optimizer opt;
  opt.lr = cfg.lr;
  std::vector<double> losses{joint_loss(b, samples, cfg.lambda_reg)};
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for_minibatches(samples.size(), cfg.batch, rng, [&](const std::vector<std::size_t>& ids) {
      std::vector<JointSample> mb;
      mb.reserve(ids.size());
      for (auto i : ids) mb.push_back(samples[i]);
      JointGrads g = zero_grads(b);
      joint_loss(b, mb, cfg.lambda_reg, &g);
      opt.step(trainable(b), trainable(g, !b.encoder.identity));
    });
    losses.push_back(joint_loss(b, samples, cfg.lambda_reg));
    if (std::abs(losses[losses.size() - 2] - losses.back()) < cfg.tol) break;
  }
  return losses;
}

double bundle_train_mse(const PolicyBundle& b, const std::vector<JointSample>& samples) {
  return joint_loss(b, samples, 0.0);
}

EmResult em_train(const Dataset& ds, const FeatureEncoder& init_enc, const EmConfig& cfg) {
  if (cfg.K < 1) throw Error(ErrorKind::InvalidArgument, "K must be at least 1");
  check_dataset(ds);
  EmResult res;
  FeatureEncoder enc = init_enc;
  std::optional<nn::Mlp> residual;
  std::optional<std::string> last_pmm;
  Mat last_embed;
  for (int k = 0; k < cfg.K; ++k) {
    EmIteration it;
    it.k = k;
    // E-step
    AbstractionConfig acfg = cfg.abstraction;
    acfg.seed = stage_seed(cfg.seed, 1);
    auto abs = abstract_dataset(ds, enc, acfg);
    it.n_symbols = abs.codebook.centroids.size();

    HistoryEncoder henc;
    switch (cfg.encoder_mode) {
      case EncoderMode::Exact: henc = make_exact_encoder(); break;
      case EncoderMode::RandomRnn:
        henc = make_random_encoder(cfg.history.hidden, ds.action_dim, static_cast<int>(it.n_symbols),
                                   cfg.history.symbol_embed, stage_seed(cfg.seed, 2));
        break;
      case EncoderMode::TrainedRnn: {
        HistoryTrainConfig hc = cfg.history;
        hc.seed = stage_seed(cfg.seed, 2);
        hc.n_symbols = static_cast<int>(it.n_symbols);
        auto trained = train_history_encoder(abs.annotated, hc);
        henc = trained.encoder;
        it.history_losses = trained.losses;
        break;
      }
    }
    auto mined = mine(abs.annotated, henc, cfg.mine, static_cast<int>(it.n_symbols));
    it.n_states = mined.pmm.states.size();
    it.n_states_unpruned = mined.unpruned.states.size();
    it.mine_rounds = mined.rounds.size();
    it.eq_passed = mined.eq_passed;

    // M-step
    PolicyBundle b;
    b.pmm = mined.pmm;
    b.codebook = abs.codebook;
    b.encoder = enc;
    b.eps_tiebreak = cfg.eps_tiebreak;
    b.fallback = cfg.fallback;
    if (!residual) residual = make_residual(enc.out_dim(), ds.action_dim, stage_seed(cfg.seed, 3), cfg.residual_hidden);
    b.residual = *residual;
    const std::string pmm_bytes = pmm_to_json(b.pmm).dump();
    if (last_pmm && *last_pmm == pmm_bytes) {
      b.state_embed = last_embed;
    } else {
      std::mt19937_64 rng(stage_seed(cfg.seed, 4));
      b.state_embed = nn::randn(kStateEmbedDim, static_cast<int>(b.pmm.states.size()), 0.1, rng);
    }
    b.check();
    const auto samples = joint_samples(b.pmm, abs.annotated, cfg.mine.eps_err);
    MStepConfig mc = cfg.mstep;
    mc.seed = stage_seed(cfg.seed, 5 + k);
    it.mstep_losses = m_step(b, samples, mc);
    it.train_mse = bundle_train_mse(b, samples);
    log_info("em iteration " + std::to_string(k) + ": " + std::to_string(it.n_symbols) + " symbols, " +
             std::to_string(it.n_states) + " states, mse " + std::to_string(it.train_mse));

    enc = b.encoder;
    residual = b.residual;
    last_pmm = pmm_bytes;
    last_embed = b.state_embed;
    res.iterations.push_back(std::move(it));
    res.bundle = std::move(b);
    res.history = std::move(henc);
    res.annotated = std::move(abs.annotated);
    res.last_rounds = std::move(mined.rounds);
  }
  return res;
}

Action BcPolicy::operator()(const Observation& obs) const { return net.forward(encoder.encode(obs)); }

BcPolicy train_bc(const Dataset& ds, const FeatureEncoder& enc, const MStepConfig& cfg, const std::vector<int>& hidden) {
  check_dataset(ds);
  BcPolicy p;
  p.encoder = enc;
  std::vector<int> sizes{enc.out_dim()};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(ds.action_dim);
  p.net = nn::Mlp::create(sizes, stage_seed(cfg.seed, 6));
  std::vector<Vec> xs, ys;
  for (const auto& tr : ds.trajectories)
    for (const auto& s : tr.steps) {
      xs.push_back(enc.encode(s.obs));
      ys.push_back(s.action);
    }
  std::mt19937_64 rng(cfg.seed);
  nn::Optimizer opt;
  opt.lr = cfg.lr;
  auto full = [&] {
    auto g = nn::Mlp::zeros_like(p.net);
    return nn::mlp_mse_loss_and_grads(p.net, xs, ys, g);
  };
  double prev = full();
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for_minibatches(xs.size(), cfg.batch, rng, [&](const std::vector<std::size_t>& ids) {
      std::vector<Vec> bx, by;
      for (auto i : ids) {
        bx.push_back(xs[i]);
        by.push_back(ys[i]);
      }
      auto g = nn::Mlp::zeros_like(p.net);
      nn::mlp_mse_loss_and_grads(p.net, bx, by, g);
      opt.step(p.net.tensors(), g.tensors());
    });
    const double now = full();
    if (std::abs(prev - now) < cfg.tol) break;
    prev = now;
  }
  return p;
}

EpisodeTrace run_bc_episode(EpisodeEnv& env, const BcPolicy& p, int max_steps) {
  EpisodeTrace tr;
  for (int t = 0; t < max_steps && !env.done(); ++t) {
    const Observation obs = env.observe();
    const Action a = p(obs);
    tr.steps.push_back({obs, a, 0, 0, false});
    env.step(a);
  }
  tr.success = env.success();
  return tr;
}

void save_bundle(const PolicyBundle& input, const std::filesystem::path& dir) {
  PolicyBundle b = input;
  b.check();
  std::filesystem::create_directories(dir);
  Json manifest;
  manifest["eps_tiebreak"] = b.eps_tiebreak;
  manifest["fallback"] = to_string(b.fallback);
  manifest["versions"] = {{"bundle", 1}, {"pmm", 1}, {"nnkit", "nnkit_v1"}};
  manifest["files"] = {"pmm.json", "codebook.json", "encoder.json", "residual.json"};
  write_json(dir / "bundle.json", manifest);
  save_pmm(b.pmm, dir / "pmm.json");
  write_json(dir / "codebook.json", codebook_to_json(b.codebook));
  write_json(dir / "encoder.json", b.encoder.to_json());
  auto ts = b.residual.tensors("residual");
  ts.push_back(nn::view("state_embed", b.state_embed));
  write_json(dir / "residual.json", nn::tensors_to_json(ts));
}

PolicyBundle load_bundle(const std::filesystem::path& dir) {
  const Json manifest = read_json(dir / "bundle.json");
  PolicyBundle b;
  try {
    b.eps_tiebreak = manifest.at("eps_tiebreak").get<double>();
    b.fallback = fallback_from_string(manifest.at("fallback").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("bundle manifest: ") + e.what());
  }
  b.pmm = load_pmm(dir / "pmm.json");
  b.codebook = codebook_from_json(read_json(dir / "codebook.json"));
  b.encoder = FeatureEncoder::from_json(read_json(dir / "encoder.json"));
  const Json rj = read_json(dir / "residual.json");
  b.residual = nn::Mlp::from_json(rj, "residual");
  const auto [r, c] = nn::tensor_shape(rj, "state_embed");
  b.state_embed = Mat::Zero(r, c);
  nn::tensors_from_json(rj, {nn::view("state_embed", b.state_embed)});
  b.check();
  return b;
}

}  // namespace enap
