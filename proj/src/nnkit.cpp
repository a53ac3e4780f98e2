#include "enap/nnkit.hpp"

#include <cmath>

namespace enap::nn {

Tensor view(const std::string& name, Mat& m) {
  return Tensor{name, static_cast<int>(m.rows()), static_cast<int>(m.cols()), m.data()};
}

Tensor view(const std::string& name, Vec& v) {
  return Tensor{name, static_cast<int>(v.size()), 1, v.data()};
}

Json tensors_to_json(const std::vector<Tensor>& ts) {
  Json j;
  j["format"] = "nnkit_v1";
  Json arr = Json::array();
  for (const auto& t : ts) {
    Json jt;
    jt["name"] = t.name;
    jt["shape"] = {t.rows, t.cols};
    Json data = Json::array();
    // row-major on disk
    for (int r = 0; r < t.rows; ++r)
      for (int c = 0; c < t.cols; ++c) data.push_back(t.data[static_cast<std::size_t>(c) * t.rows + r]);
    jt["data"] = std::move(data);
    arr.push_back(std::move(jt));
  }
  j["tensors"] = std::move(arr);
  return j;
}

namespace {

const Json& find_tensor(const Json& j, const std::string& name) {
  if (!j.contains("format") || j["format"] != "nnkit_v1")
    throw Error(ErrorKind::Parse, "not an nnkit_v1 checkpoint");
  for (const auto& jt : j.at("tensors"))
    if (jt.at("name") == name) return jt;
  throw Error(ErrorKind::Parse, "checkpoint lacks tensor '" + name + "'");
}

}  // namespace

std::pair<int, int> tensor_shape(const Json& j, const std::string& name) {
  const auto& jt = find_tensor(j, name);
  return {jt.at("shape")[0].get<int>(), jt.at("shape")[1].get<int>()};
}

void tensors_from_json(const Json& j, const std::vector<Tensor>& ts) {
  for (const auto& t : ts) {
    const auto& jt = find_tensor(j, t.name);
    auto [r, c] = tensor_shape(j, t.name);
    if (r != t.rows || c != t.cols || jt.at("data").size() != t.size())
      throw Error(ErrorKind::ShapeMismatch, "tensor '" + t.name + "' has the wrong shape");
    std::size_t k = 0;
    for (int rr = 0; rr < t.rows; ++rr)
      for (int cc = 0; cc < t.cols; ++cc)
        t.data[static_cast<std::size_t>(cc) * t.rows + rr] = jt["data"][k++].get<double>();
  }
}

Mat randn(int rows, int cols, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = scale * n(rng);
  return m;
}

Mlp Mlp::create(const std::vector<int>& sizes, std::uint64_t seed) {
  if (sizes.size() < 2) throw Error(ErrorKind::InvalidArgument, "an MLP needs at least two sizes");
  std::mt19937_64 rng(seed);
  Mlp p;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    // He init on hidden layers, smaller on the output
    double scale = std::sqrt((i + 2 == sizes.size() ? 1.0 : 2.0) / sizes[i]);
    p.W.push_back(randn(sizes[i + 1], sizes[i], scale, rng));
    p.b.push_back(Vec::Zero(sizes[i + 1]));
  }
  return p;
}

Mlp Mlp::zeros_like(const Mlp& other) {
  Mlp p;
  for (const auto& w : other.W) p.W.push_back(Mat::Zero(w.rows(), w.cols()));
  for (const auto& b : other.b) p.b.push_back(Vec::Zero(b.size()));
  return p;
}

std::vector<int> Mlp::sizes() const {
  std::vector<int> s{in_dim()};
  for (const auto& w : W) s.push_back(static_cast<int>(w.rows()));
  return s;
}

Vec Mlp::forward(const Vec& x) const {
  Cache c;
  return forward(x, c);
}

Vec Mlp::forward(const Vec& x, Cache& cache) const {
  if (x.size() != in_dim())
    throw Error(ErrorKind::ShapeMismatch, "MLP input has size " + std::to_string(x.size()) +
                                              ", expected " + std::to_string(in_dim()));
  cache.acts.assign(1, x);
  Vec h = x;
  for (std::size_t i = 0; i < W.size(); ++i) {
    h = W[i] * h + b[i];
    if (i + 1 < W.size()) h = h.cwiseMax(0.0);
    cache.acts.push_back(h);
  }
  return h;
}

Vec Mlp::backward(const Cache& cache, const Vec& dy, Mlp& grad) const {
  Vec d = dy;
  for (std::size_t k = W.size(); k-- > 0;) {
    if (k + 1 < W.size())
      for (Eigen::Index r = 0; r < d.size(); ++r)
        if (cache.acts[k + 1][r] <= 0.0) d[r] = 0.0;
    grad.W[k] += d * cache.acts[k].transpose();
    grad.b[k] += d;
    d = W[k].transpose() * d;
  }
  return d;
}

std::vector<Tensor> Mlp::tensors(const std::string& prefix) {
  std::vector<Tensor> ts;
  for (std::size_t i = 0; i < W.size(); ++i) {
    ts.push_back(view(prefix + ".W" + std::to_string(i), W[i]));
    ts.push_back(view(prefix + ".b" + std::to_string(i), b[i]));
  }
  return ts;
}

Json Mlp::to_json() { return tensors_to_json(tensors()); }

Mlp Mlp::from_json(const Json& j, const std::string& prefix) {
  Mlp p;
  for (int i = 0;; ++i) {
    const std::string wn = prefix + ".W" + std::to_string(i);
    bool present = false;
    for (const auto& jt : j.at("tensors"))
      if (jt.at("name") == wn) present = true;
    if (!present) break;
    auto [r, c] = tensor_shape(j, wn);
    p.W.push_back(Mat::Zero(r, c));
    p.b.push_back(Vec::Zero(r));
  }
  if (p.W.empty()) throw Error(ErrorKind::Parse, "checkpoint holds no MLP layers");
  tensors_from_json(j, p.tensors(prefix));
  return p;
}

double mlp_mse_loss_and_grads(const Mlp& p, const std::vector<Vec>& xs, const std::vector<Vec>& ys,
                              Mlp& grad) {
  if (xs.size() != ys.size() || xs.empty())
    throw Error(ErrorKind::ShapeMismatch, "inputs and targets differ in count");
  const double inv = 1.0 / static_cast<double>(xs.size());
  double loss = 0.0;
  Mlp::Cache cache;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    Vec r = p.forward(xs[i], cache) - ys[i];
    loss += r.squaredNorm() * inv;
    p.backward(cache, 2.0 * inv * r, grad);
  }
  if (!std::isfinite(loss)) throw Error(ErrorKind::NonFiniteLoss, "MLP loss is not finite");
  return loss;
}

RnnParams RnnParams::create(int hidden, int action_dim, int n_symbols, int symbol_embed,
                            std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  const int d_in = action_dim + symbol_embed;
  auto s = [&](int fan_in) { return scale > 0 ? scale : 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  RnnParams p;
  p.Wh = randn(hidden, hidden, s(hidden), rng);
  p.Wx = randn(hidden, d_in, s(d_in), rng);
  p.b = Vec::Zero(hidden);
  p.Wa = randn(action_dim, hidden, s(hidden), rng);
  p.ba = Vec::Zero(action_dim);
  p.Ws = randn(n_symbols, hidden, s(hidden), rng);
  p.bs = Vec::Zero(n_symbols);
  p.E = randn(symbol_embed, n_symbols, scale > 0 ? scale : 1.0, rng);
  return p;
}

RnnParams RnnParams::zeros_like(const RnnParams& o) {
  RnnParams p;
  p.Wh = Mat::Zero(o.Wh.rows(), o.Wh.cols());
  p.Wx = Mat::Zero(o.Wx.rows(), o.Wx.cols());
  p.b = Vec::Zero(o.b.size());
  p.Wa = Mat::Zero(o.Wa.rows(), o.Wa.cols());
  p.ba = Vec::Zero(o.ba.size());
  p.Ws = Mat::Zero(o.Ws.rows(), o.Ws.cols());
  p.bs = Vec::Zero(o.bs.size());
  p.E = Mat::Zero(o.E.rows(), o.E.cols());
  return p;
}

void RnnParams::discard_heads() {
  Wa.resize(0, hidden());
  ba.resize(0);
  Ws.resize(0, hidden());
  bs.resize(0);
}

std::vector<Tensor> RnnParams::tensors() {
  return {view("rnn.Wh", Wh), view("rnn.Wx", Wx), view("rnn.b", b),   view("rnn.Wa", Wa),
          view("rnn.ba", ba), view("rnn.Ws", Ws), view("rnn.bs", bs), view("rnn.E", E)};
}

Json RnnParams::to_json() { return tensors_to_json(tensors()); }

RnnParams RnnParams::from_json(const Json& j) {
  auto [h, din] = tensor_shape(j, "rnn.Wx");
  auto [ha, unused_a] = tensor_shape(j, "rnn.Wa");
  auto [hs, unused_s] = tensor_shape(j, "rnn.Ws");
  auto [k, e] = tensor_shape(j, "rnn.E");
  (void)unused_a;
  (void)unused_s;
  RnnParams p;
  p.Wh = Mat::Zero(h, h);
  p.Wx = Mat::Zero(h, din);
  p.b = Vec::Zero(h);
  p.Wa = Mat::Zero(ha, h);
  p.ba = Vec::Zero(ha);
  p.E = Mat::Zero(k, e);
  p.Ws = Mat::Zero(hs, h);
  p.bs = Vec::Zero(hs);
  tensors_from_json(j, p.tensors());
  return p;
}

std::vector<Vec> rnn_inputs(const RnnParams& p, const std::vector<Vec>& prev_actions,
                            const std::vector<SymbolId>& symbols) {
  if (prev_actions.size() != symbols.size())
    throw Error(ErrorKind::ShapeMismatch, "actions and symbols differ in length");
  std::vector<Vec> xs;
  xs.reserve(symbols.size());
  for (std::size_t t = 0; t < symbols.size(); ++t) {
    if (static_cast<int>(symbols[t]) >= p.n_symbols())
      throw Error(ErrorKind::SymbolOutOfRange, "symbol c" + std::to_string(symbols[t]) + " outside embedding");
    if (prev_actions[t].size() != p.action_dim())
      throw Error(ErrorKind::ShapeMismatch, "action has the wrong dimension");
    Vec x(p.action_dim() + p.symbol_embed());
    x << prev_actions[t], p.E.col(symbols[t]);
    xs.push_back(std::move(x));
  }
  return xs;
}

RnnOutput rnn_forward(const RnnParams& p, const std::vector<Vec>& xs) {
  if (xs.empty()) throw Error(ErrorKind::ShapeMismatch, "empty input sequence");
  RnnOutput out;
  Vec h = Vec::Zero(p.hidden());
  for (const auto& x : xs) {
    if (x.size() != p.Wx.cols()) throw Error(ErrorKind::ShapeMismatch, "RNN input has the wrong size");
    h = (p.Wh * h + p.Wx * x + p.b).array().tanh().matrix();
    out.hiddens.push_back(h);
    if (p.has_heads()) {
      out.act_preds.push_back(p.Wa * h + p.ba);
      out.state_logits.push_back(p.Ws * h + p.bs);
    }
  }
  return out;
}

double cosine_with_grad(const Vec& x, const Vec& y, Vec* dx, Vec* dy) {
  const double nx = x.norm(), ny = y.norm();
  if (nx < 1e-12 || ny < 1e-12) {
    if (dx) *dx = Vec::Zero(x.size());
    if (dy) *dy = Vec::Zero(y.size());
    return 0.0;
  }
  const double c = x.dot(y) / (nx * ny);
  if (dx) *dx = y / (nx * ny) - c * x / (nx * nx);
  if (dy) *dy = x / (nx * ny) - c * y / (ny * ny);
  return c;
}

RnnLoss rnn_loss_and_grads(const RnnParams& p, const std::vector<RnnSequence>& batch,
                           double lambda_contrast, RnnParams& g) {
  if (!p.has_heads()) throw Error(ErrorKind::ShapeMismatch, "training needs the prediction heads");
  std::size_t n_act = 0, n_state = 0, n_pair = 0;
  for (const auto& s : batch) {
    n_act += s.symbols.size();
    for (int c : s.next_symbols) n_state += c >= 0;
    if (!s.symbols.empty()) n_pair += s.symbols.size() - 1;
  }
  if (n_act == 0) throw Error(ErrorKind::EmptyDataset, "empty training batch");
  const double da = static_cast<double>(p.action_dim());
  const double w_act = 1.0 / (static_cast<double>(n_act) * da);
  const double w_state = n_state ? 1.0 / static_cast<double>(n_state) : 0.0;
  const double w_pair = n_pair ? 1.0 / static_cast<double>(n_pair) : 0.0;

  RnnLoss L;
  for (const auto& s : batch) {
    const std::size_t T = s.symbols.size();
    if (s.target_actions.size() != T || s.next_symbols.size() != T)
      throw Error(ErrorKind::ShapeMismatch, "sequence fields differ in length");
    auto xs = rnn_inputs(p, s.prev_actions, s.symbols);
    auto out = rnn_forward(p, xs);
    std::vector<Vec> dh(T, Vec::Zero(p.hidden()));

    for (std::size_t t = 0; t < T; ++t) {
      Vec r = out.act_preds[t] - s.target_actions[t];
      L.act += w_act * r.squaredNorm();
      Vec dact = 2.0 * w_act * r;
      g.Wa += dact * out.hiddens[t].transpose();
      g.ba += dact;
      dh[t] += p.Wa.transpose() * dact;

      if (s.next_symbols[t] >= 0) {
        const Vec& z = out.state_logits[t];
        const double mx = z.maxCoeff();
        Vec e = (z.array() - mx).exp().matrix();
        const double sum = e.sum();
        Vec prob = e / sum;
        const int y = s.next_symbols[t];
        L.state += w_state * (std::log(sum) + mx - z[y]);
        Vec dz = prob;
        dz[y] -= 1.0;
        dz *= w_state;
        g.Ws += dz * out.hiddens[t].transpose();
        g.bs += dz;
        dh[t] += p.Ws.transpose() * dz;
      }

      if (t + 1 < T && lambda_contrast != 0.0) {
        Vec d1, d2;
        const double c = cosine_with_grad(out.hiddens[t], out.hiddens[t + 1], &d1, &d2);
        const bool same = s.symbols[t] == s.symbols[t + 1];
        const double sign = same ? -1.0 : 1.0;
        L.contrast += w_pair * (same ? 1.0 - c : c);
        dh[t] += lambda_contrast * w_pair * sign * d1;
        dh[t + 1] += lambda_contrast * w_pair * sign * d2;
      }
    }

    Vec carry = Vec::Zero(p.hidden());
    for (std::size_t t = T; t-- > 0;) {
      Vec dz = ((dh[t] + carry).array() * (1.0 - out.hiddens[t].array().square())).matrix();
      const Vec hprev = t ? out.hiddens[t - 1] : Vec::Zero(p.hidden());
      g.Wh += dz * hprev.transpose();
      g.Wx += dz * xs[t].transpose();
      g.b += dz;
      carry = p.Wh.transpose() * dz;
      Vec dx = p.Wx.transpose() * dz;
      g.E.col(s.symbols[t]) += dx.tail(p.symbol_embed());
    }
  }
  L.total = L.act + L.state + lambda_contrast * L.contrast;
  if (!std::isfinite(L.total)) throw Error(ErrorKind::NonFiniteLoss, "RNN loss is not finite");
  return L;
}

void Optimizer::step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw Error(ErrorKind::ShapeMismatch, "parameter/gradient count");
  if (m.empty()) {
    for (const auto& t : params) {
      m.push_back(Vec::Zero(static_cast<Eigen::Index>(t.size())));
      v.push_back(Vec::Zero(static_cast<Eigen::Index>(t.size())));
    }
  }
  if (m.size() != params.size()) throw Error(ErrorKind::ShapeMismatch, "optimizer state mismatch");
  ++step_count;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& P = params[i];
    const auto& G = grads[i];
    if (P.size() != G.size() || static_cast<Eigen::Index>(P.size()) != m[i].size())
      throw Error(ErrorKind::ShapeMismatch, "shape mismatch on '" + P.name + "'");
    for (std::size_t k = 0; k < P.size(); ++k) {
      const double gk = G.data[k];
      if (!adaptive) {
        P.data[k] -= lr * gk;
        continue;
      }
      m[i][k] = beta1 * m[i][k] + (1 - beta1) * gk;
      v[i][k] = beta2 * v[i][k] + (1 - beta2) * gk * gk;
      P.data[k] -= lr * (m[i][k] / c1) / (std::sqrt(v[i][k] / c2) + eps);
    }
  }
}

}  // namespace enap::nn
