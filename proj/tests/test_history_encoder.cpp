#include <gtest/gtest.h>

#include <random>

#include "enap/history_encoder.hpp"

using namespace enap;

namespace {

Vec act(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

// symbol 0 for t < 10, symbol 1 afterwards; actions differ by phase
Dataset two_phase(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  Dataset ds;
  ds.obs_dim = 1;
  ds.action_dim = 2;
  for (int k = 0; k < n; ++k) {
    Trajectory t{"p" + std::to_string(k), {}};
    for (int i = 0; i < 20; ++i) {
      const bool first = i < 10;
      t.steps.push_back({Vec::Zero(1), act((first ? 1.0 : -0.5) + noise(rng), (first ? 0.0 : 1.0) + noise(rng)),
                         SymbolId(first ? 0 : 1)});
    }
    ds.trajectories.push_back(t);
  }
  return ds;
}

}  // namespace

TEST(History, ExactModeDistinguishesPrefixes) {
  auto enc = make_exact_encoder();
  std::vector<std::pair<Vec, SymbolId>> p1{{act(0, 1), 0}};
  std::vector<std::pair<Vec, SymbolId>> p2{{act(0, 1), 0}, {act(0, 1), 4}};
  const auto h1 = enc.embed_history(p1), h2 = enc.embed_history(p2);
  EXPECT_LT(similarity(h1, h2), 0.9);
  EXPECT_EQ(similarity(h1, enc.embed_history(p1)), 1.0);
  // quantised to 6 decimals
  std::vector<std::pair<Vec, SymbolId>> p3{{act(0, 1), 0}, {act(0, 1), 4}};
  p3[0].first[0] = 4e-8;
  EXPECT_EQ(enc.embed_history(p3), h2);
  p3[0].first[0] = 4e-6;
  EXPECT_NE(enc.embed_history(p3), h2);
  EXPECT_THROW(enc.embed_history({}), Error);
}

TEST(History, DeterministicNormalizedAndCausal) {
  auto enc = make_random_encoder(16, 2, 3, 4, 5);
  std::vector<Vec> acts{act(1, 0), act(0, 1), act(1, 1), act(-1, 0)};
  std::vector<SymbolId> syms{0, 1, 2, 1};
  auto a = enc.embed_trajectory(acts, syms);
  auto b = enc.embed_trajectory(acts, syms);
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a[t], b[t]);
    EXPECT_NEAR(a[t].dense.norm(), 1.0, 1e-6);
  }
  // perturbing later steps, including the action at t itself, leaves h_t alone
  acts[2] = act(5, 5);
  acts[3] = act(-3, 2);
  syms[3] = 0;
  auto c = enc.embed_trajectory(acts, syms);
  EXPECT_EQ(c[0], a[0]);
  EXPECT_EQ(c[1], a[1]);
  EXPECT_EQ(c[2], a[2]);
  EXPECT_NE(c[3], a[3]);
}

TEST(History, ZeroEpochsKeepsInit) {
  auto ds = two_phase(2, 0);
  HistoryTrainConfig cfg;
  cfg.hidden = 8;
  cfg.symbol_embed = 4;
  cfg.epochs = 0;
  auto tr = train_history_encoder(ds, cfg);
  auto init = nn::RnnParams::create(8, 2, 2, 4, 0);
  EXPECT_EQ(tr.encoder.rnn.Wh, init.Wh);
  EXPECT_EQ(tr.encoder.rnn.E, init.E);
  EXPECT_FALSE(tr.encoder.rnn.has_heads());
}

TEST(History, TrainingSeparatesPhases) {
  auto ds = two_phase(6, 0);
  HistoryTrainConfig cfg;
  cfg.hidden = 16;
  cfg.symbol_embed = 8;
  cfg.epochs = 60;
  cfg.lr = 1e-2;
  cfg.seed = 0;
  auto tr = train_history_encoder(ds, cfg);
  EXPECT_LT(tr.losses.back(), tr.losses.front());
  double within = 0, across = 0;
  int nw = 0, na = 0;
  for (const auto& t : ds.trajectories) {
    auto h = tr.encoder.embed_trajectory(t);
    for (std::size_t i = 0; i + 1 < h.size(); ++i) {
      double c = similarity(h[i], h[i + 1]);
      if (i == 9) {
        across += c;
        ++na;
      } else {
        within += c;
        ++nw;
      }
    }
  }
  EXPECT_GT(within / nw, across / na);
}

TEST(Saturation, Bound) {
  EXPECT_EQ(*saturation_bound(1, 0.0), 2.0);
  // 2 * (0.5 - 0.1)^2
  EXPECT_NEAR(*saturation_bound(4, 0.1), 0.32, 1e-12);
  EXPECT_FALSE(saturation_bound(100, 0.2).has_value());
}

TEST(Saturation, ReportEdges) {
  auto ds = two_phase(2, 1);
  auto enc = make_random_encoder(8, 2, 2, 4, 1);
  enc.rnn = nn::RnnParams::zeros_like(enc.rnn);
  auto r = saturation_report(enc, ds);
  EXPECT_EQ(r.mean_abs_component, 0.0);
  Vec vertex(4);
  vertex << 1, -1, -1, 1;
  EXPECT_NEAR(saturation_error(vertex), 0.0, 1e-15);
  EXPECT_NEAR(saturation_error(0.3 * vertex), 0.0, 1e-15);
  EXPECT_THROW(saturation_report(enc, Dataset{}), Error);
}

TEST(Saturation, TrainingRaisesMagnitude) {
  auto ds = two_phase(6, 0);
  HistoryTrainConfig cfg;
  cfg.hidden = 16;
  cfg.symbol_embed = 8;
  cfg.epochs = 60;
  cfg.lr = 1e-2;
  auto before = train_history_encoder(ds, [&] { auto c = cfg; c.epochs = 0; return c; }());
  auto after = train_history_encoder(ds, cfg);
  EXPECT_GT(saturation_report(after.encoder, ds).mean_abs_component,
            saturation_report(before.encoder, ds).mean_abs_component);
}

TEST(Saturation, IdentifiabilityHoldsOnPerturbedVertices) {
  std::mt19937_64 rng(0);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int d = 2; d <= 4; ++d) {
    const double r = 1.0 / std::sqrt(static_cast<double>(d));
    int certified = 0, violations = 0;
    for (int trial = 0; trial < 20000; ++trial) {
      const double eps_cap = u01(rng) * r * 0.999;
      auto vertex = [&] {
        Vec s(d);
        for (int i = 0; i < d; ++i) s[i] = rng() % 2 ? 1.0 : -1.0;
        return s;
      };
      Vec s1 = vertex();
      Vec s2 = trial % 2 ? s1 : vertex();
      auto perturb = [&](const Vec& s) {
        Vec dir(d);
        for (int i = 0; i < d; ++i) dir[i] = n01(rng);
        Vec h = s * r + dir.normalized() * eps_cap * u01(rng);
        return Vec(h.normalized());
      };
      Vec h1 = perturb(s1), h2 = perturb(s2);
      const double eps = std::max(saturation_error(h1), saturation_error(h2));
      if (eps >= r) continue;
      if (certified_same_vertex(h1, h2, eps)) {
        ++certified;
        Vec v1 = h1.unaryExpr([](double x) { return x < 0 ? -1.0 : 1.0; });
        Vec v2 = h2.unaryExpr([](double x) { return x < 0 ? -1.0 : 1.0; });
        if (v1 != v2) ++violations;
      }
    }
    EXPECT_EQ(violations, 0) << "d=" << d;
    EXPECT_GT(certified, 100) << "d=" << d;
  }
}

TEST(History, JsonRoundTrip) {
  auto enc = make_random_encoder(6, 2, 3, 4, 2);
  auto back = HistoryEncoder::from_json(Json::parse(enc.to_json().dump()));
  EXPECT_EQ(back.mode, EncoderMode::RandomRnn);
  std::vector<Vec> acts{act(1, 0), act(0, 1)};
  std::vector<SymbolId> syms{0, 2};
  EXPECT_EQ(back.embed_trajectory(acts, syms)[1], enc.embed_trajectory(acts, syms)[1]);
  auto ex = make_exact_encoder();
  EXPECT_EQ(HistoryEncoder::from_json(ex.to_json()).mode, EncoderMode::Exact);
}
