#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "enap/abstraction.hpp"
#include "enap/control.hpp"
#include "enap/envs.hpp"
#include "enap/history_encoder.hpp"
#include "enap/io.hpp"
#include "enap/log.hpp"
#include "enap/lstar_extended.hpp"
#include "enap/metrics.hpp"
#include "enap/pipeline.hpp"

namespace fs = std::filesystem;
using namespace enap;

namespace {

struct Run {
  std::string command;
  PipelineConfig cfg;
  bool json = false;

  Json stamp() const { return Json{{"config_hash", cfg.hash_hex()}, {"seed", cfg.seed}}; }
};

// Raised for failures the library has no error kind for.
struct CliFailure {
  std::string kind;
  std::string message;
  Json detail;
};

void print_summary(const Run& run, Json out) {
  Json j;
  j["command"] = run.command;
  j["ok"] = true;
  j["stamp"] = run.stamp();
  for (auto& [k, v] : out.items()) j[k] = v;
  if (run.json) {
    std::cout << j.dump() << "\n";
    return;
  }
  for (auto& [k, v] : j.items()) std::cout << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
}

void print_error(bool json, const std::string& command, const std::optional<Json>& stamp, const std::string& kind,
                 const std::string& message, const Json& detail = nullptr) {
  Json j;
  j["command"] = command;
  j["ok"] = false;
  j["error"] = {{"kind", kind}, {"message", message}};
  if (!detail.is_null()) j["error"]["detail"] = detail;
  if (stamp) j["stamp"] = *stamp;
  (json ? std::cout : std::cerr) << j.dump() << "\n";
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

fs::path required(const std::string& value, const char* flag) {
  if (value.empty()) throw Error(ErrorKind::InvalidArgument, std::string("missing ") + flag);
  return value;
}

void write_stamped(const fs::path& path, Json j, const Run& run) {
  j["stamp"] = run.stamp();
  ensure_parent(path);
  write_json(path, j);
}

int alphabet_of(const Dataset& ds) {
  SymbolId m = 0;
  bool any = false;
  for (const auto& t : ds.trajectories)
    for (const auto& s : t.steps)
      if (s.symbol) {
        m = std::max(m, *s.symbol);
        any = true;
      }
  return any ? static_cast<int>(m) + 1 : 0;
}

Dataset load_annotated(const fs::path& path) {
  Dataset ds = load_dataset(path);
  check_dataset(ds);
  if (!ds.fully_annotated()) throw Error(ErrorKind::UntracedDataset, path.string() + " has steps without symbols");
  return ds;
}

HistoryEncoder build_history(const Run& run, const Dataset& ds, int alphabet, Json* report) {
  const auto& c = run.cfg;
  switch (c.encoder) {
    case EncoderMode::Exact: return make_exact_encoder();
    case EncoderMode::RandomRnn:
      return make_random_encoder(c.rnn_hidden, ds.action_dim, alphabet, c.symbol_embed, stage_seed(c.seed, 2));
    case EncoderMode::TrainedRnn: {
      auto tr = train_history_encoder(ds, c.history(alphabet));
      if (report) {
        (*report)["loss_initial"] = tr.losses.front();
        (*report)["loss_final"] = tr.losses.back();
      }
      return tr.encoder;
    }
  }
  return make_exact_encoder();
}

// ---- subcommands ---------------------------------------------------------

struct DemoArgs {
  std::string env = "frozenlake";
  int n = 0;
  std::string mode = "bimodal";
  double noise = 0.01;
};

void cmd_demo(const Run& run, const DemoArgs& a, const std::string& out) {
  const fs::path path = required(out, "--out");
  Dataset ds;
  if (a.env == "frozenlake") {
    ds = gridworld_demos();
  } else if (a.env == "gridworld") {
    ds = gridworld_demos(a.n > 0 ? a.n : 20, run.cfg.seed);
  } else if (a.env == "multiphase2d") {
    GoalMode mode;
    if (a.mode == "bimodal") mode = GoalMode::Bimodal;
    else if (a.mode == "single") mode = GoalMode::SingleGoal;
    else throw Error(ErrorKind::InvalidArgument, "unknown goal mode '" + a.mode + "'");
    ds = multiphase2d_demos(a.n > 0 ? a.n : 200, run.cfg.seed, mode, a.noise);
  } else {
    throw Error(ErrorKind::InvalidArgument, "unknown environment '" + a.env + "'");
  }
  ensure_parent(path);
  save_dataset(ds, path);
  print_summary(run, {{"env", a.env},
                      {"out", path.string()},
                      {"trajectories", ds.trajectories.size()},
                      {"steps", ds.total_steps()}});
}

void cmd_abstract(const Run& run, const std::string& data, const std::string& out, std::string codebook) {
  const fs::path in = required(data, "--data");
  const fs::path path = required(out, "--out");
  if (codebook.empty()) codebook = path.string() + ".codebook.json";
  Dataset ds = load_dataset(in);
  check_dataset(ds);
  auto abs = abstract_dataset(ds, FeatureEncoder::make_identity(ds.obs_dim), run.cfg.abstraction());
  ensure_parent(path);
  save_dataset(abs.annotated, path);
  write_stamped(codebook, codebook_to_json(abs.codebook), run);
  print_summary(run, {{"out", path.string()},
                      {"codebook", codebook},
                      {"symbols", abs.codebook.size()},
                      {"min_cluster_size", abs.codebook.min_cluster_size}});
}

void cmd_train_encoder(const Run& run, const std::string& data, const std::string& out, int alphabet) {
  const fs::path path = required(out, "--out");
  Dataset ds = load_annotated(required(data, "--data"));
  if (alphabet <= 0) alphabet = alphabet_of(ds);
  Json report = Json::object();
  HistoryEncoder enc = build_history(run, ds, alphabet, &report);
  write_stamped(path, enc.to_json(), run);
  report["out"] = path.string();
  report["mode"] = to_string(enc.mode);
  if (enc.mode != EncoderMode::Exact) {
    const auto sat = saturation_report(enc, ds);
    report["saturation"] = sat.to_json();
    if (sat.kappa_max) report["suggested_tau_sim"] = 1.0 - *sat.kappa_max;
  }
  print_summary(run, report);
}

struct MineArgs {
  std::string history;
  std::string rounds;
  std::string unpruned;
  int alphabet = 0;
};

void cmd_mine(const Run& run, const std::string& data, const std::string& out, const MineArgs& a) {
  const fs::path path = required(out, "--out");
  Dataset ds = load_annotated(required(data, "--data"));
  const int alphabet = a.alphabet > 0 ? a.alphabet : alphabet_of(ds);
  Json info = Json::object();
  HistoryEncoder enc = a.history.empty() ? build_history(run, ds, alphabet, &info)
                                         : HistoryEncoder::from_json(read_json(a.history));
  auto res = mine(ds, enc, run.cfg.mine(), alphabet);
  if (res.unresolved) log_warn("equivalence queries did not pass; writing the last hypothesis");
  write_stamped(path, pmm_to_json(res.pmm), run);
  if (!a.rounds.empty()) {
    ensure_parent(a.rounds);
    write_text(a.rounds, rounds_to_jsonl(res.rounds));
  }
  if (!a.unpruned.empty()) write_stamped(a.unpruned, pmm_to_json(res.unpruned), run);
  info["out"] = path.string();
  info["encoder"] = to_string(enc.mode);
  info["states"] = res.pmm.states.size();
  info["edges"] = res.pmm.edges.size();
  info["states_unpruned"] = res.unpruned.states.size();
  info["eq_rounds"] = res.rounds.size();
  info["eq_passed"] = res.eq_passed;
  info["unresolved"] = res.unresolved;
  print_summary(run, info);
}

void cmd_prune(const Run& run, const std::string& input, const std::string& out) {
  const fs::path path = required(out, "--out");
  const Pmm before = load_pmm(required(input, "--pmm"));
  const Pmm after = stable_phase_prune(drop_unreachable(before));
  write_stamped(path, pmm_to_json(after), run);
  print_summary(run, {{"out", path.string()},
                      {"states_before", before.states.size()},
                      {"states_after", after.states.size()},
                      {"edges_after", after.edges.size()}});
}

void cmd_train_residual(const Run& run, const std::string& data, const std::string& out, const std::string& feature) {
  const fs::path dir = required(out, "--out");
  Dataset ds = load_dataset(required(data, "--data"));
  check_dataset(ds);
  FeatureEncoder enc;
  if (feature == "identity") enc = FeatureEncoder::make_identity(ds.obs_dim);
  else if (feature == "mlp") enc = FeatureEncoder::make_mlp({ds.obs_dim, 64, 16}, stage_seed(run.cfg.seed, 0));
  else throw Error(ErrorKind::InvalidArgument, "unknown feature encoder '" + feature + "'");
  auto res = em_train(ds, enc, run.cfg.em());

  fs::create_directories(dir);
  save_bundle(res.bundle, dir);
  Json manifest = read_json(dir / "bundle.json");
  manifest["stamp"] = run.stamp();
  write_json(dir / "bundle.json", manifest);
  write_stamped(dir / "history.json", res.history.to_json(), run);
  save_dataset(res.annotated, dir / "annotated.jsonl");
  write_text(dir / "rounds.jsonl", rounds_to_jsonl(res.last_rounds));

  Json iters = Json::array();
  for (const auto& it : res.iterations)
    iters.push_back({{"k", it.k},
                     {"symbols", it.n_symbols},
                     {"states", it.n_states},
                     {"states_unpruned", it.n_states_unpruned},
                     {"eq_rounds", it.mine_rounds},
                     {"eq_passed", it.eq_passed},
                     {"train_mse", it.train_mse}});
  write_stamped(dir / "em.json", Json{{"iterations", iters}}, run);
  print_summary(run, {{"out", dir.string()},
                      {"states", res.bundle.pmm.states.size()},
                      {"symbols", res.bundle.codebook.size()},
                      {"iterations", iters}});
}

struct RolloutArgs {
  std::string bundle;
  std::string env = "multiphase2d";
  std::string mode = "bimodal";
  int episodes = 100;
  int jobs = 1;
  int max_steps = 0;
};

void cmd_rollout(const Run& run, const RolloutArgs& a, const std::string& out) {
  const PolicyBundle b = load_bundle(required(a.bundle, "--bundle"));
  if (a.episodes < 1) throw Error(ErrorKind::InvalidArgument, "--episodes must be positive");
  if (a.env != "multiphase2d" && a.env != "frozenlake" && a.env != "gridworld")
    throw Error(ErrorKind::InvalidArgument, "unknown environment '" + a.env + "'");
  if (a.mode != "bimodal" && a.mode != "single") throw Error(ErrorKind::InvalidArgument, "unknown goal mode '" + a.mode + "'");
  const bool multiphase = a.env == "multiphase2d";
  const int max_steps = a.max_steps > 0 ? a.max_steps : (multiphase ? MultiPhaseParams{}.max_steps : 32);

  std::vector<Json> rows(a.episodes);
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (int e = next++; e < a.episodes; e = next++) {
      try {
        const std::uint64_t seed = stage_seed(stage_seed(run.cfg.seed, 7), e);
        const int goal = a.mode == "bimodal" ? e % 2 : 0;
        EpisodeTrace tr;
        if (multiphase) {
          MultiPhaseEpisode env(seed, goal);
          tr = run_episode(env, b, max_steps);
        } else {
          GridEpisode env;
          tr = run_episode(env, b, max_steps);
        }
        Json states = Json::array();
        for (auto q : tr.states) states.push_back(q);
        rows[e] = {{"episode", e}, {"seed", seed}, {"goal", multiphase ? goal : 0}, {"success", tr.success},
                   {"steps", tr.steps.size()}, {"fallbacks", tr.fallbacks}, {"states", states}};
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 0; j < std::max(1, a.jobs); ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  int successes = 0;
  std::string text;
  for (const auto& r : rows) {
    successes += r["success"].get<bool>();
    text += r.dump() + "\n";
  }
  if (!out.empty()) {
    ensure_parent(out);
    write_text(out, text);
  }
  print_summary(run, {{"out", out},
                      {"episodes", a.episodes},
                      {"successes", successes},
                      {"success_rate", static_cast<double>(successes) / a.episodes}});
}

std::vector<bool> load_rollouts(const fs::path& path) {
  std::vector<bool> flags;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      flags.push_back(Json::parse(line).at("success").get<bool>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
    }
  }
  return flags;
}

struct MetricsArgs {
  std::string pmm;
  std::string bundle;
  std::string rollouts;
  std::string csv;
};

void cmd_metrics(const Run& run, const std::string& data, const std::string& out, const MetricsArgs& a) {
  Pmm pmm;
  FeatureEncoder enc;
  Dataset ds;
  if (!a.bundle.empty()) {
    const auto b = load_bundle(a.bundle);
    pmm = b.pmm;
    enc = b.encoder;
    ds = load_annotated(data.empty() ? fs::path(a.bundle) / "annotated.jsonl" : fs::path(data));
  } else {
    pmm = load_pmm(required(a.pmm, "--pmm or --bundle"));
    ds = load_annotated(required(data, "--data"));
    enc = FeatureEncoder::make_identity(ds.obs_dim);
  }
  std::optional<std::vector<bool>> flags;
  if (!a.rollouts.empty()) flags = load_rollouts(a.rollouts);
  const auto report = structural_metrics(pmm, flags, ds, enc);
  if (!out.empty()) write_stamped(out, report.to_json(), run);
  if (!a.csv.empty()) {
    ensure_parent(a.csv);
    write_text(a.csv, report.to_csv());
  }
  print_summary(run, {{"report", report.to_json()}});
}

void cmd_export_dot(const Run& run, const std::string& input, const std::string& out) {
  const Pmm pmm = load_pmm(required(input, "input machine"));
  const std::string dot = pmm_to_dot(pmm);
  if (!out.empty()) {
    ensure_parent(out);
    write_text(out, dot);
    print_summary(run, {{"out", out}, {"states", pmm.states.size()}, {"edges", pmm.edges.size()}});
  } else if (run.json) {
    print_summary(run, {{"dot", dot}});
  } else {
    std::cout << dot;
  }
}

Json violation_json(const std::string& kind, const std::string& detail) { return {{"kind", kind}, {"detail", detail}}; }

Json validate_pmm(const Pmm& pmm) {
  Json v = Json::array();
  for (const auto& x : pmm_validate(pmm)) {
    Json j = violation_json(to_string(x.kind), x.detail);
    if (x.state) j["state"] = *x.state;
    if (x.input) j["input"] = *x.input;
    v.push_back(j);
  }
  return v;
}

void cmd_validate(const Run& run, const std::string& input) {
  const fs::path path = required(input, "artifact path");
  if (!fs::exists(path)) throw Error(ErrorKind::Io, "no such artifact " + path.string());
  std::string kind;
  Json violations = Json::array();
  auto guarded = [&](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      violations.push_back(violation_json(enap::to_string(e.kind()), e.what()));
    }
  };

  if (fs::is_directory(path)) {
    kind = "bundle";
    guarded([&] {
      const auto b = load_bundle(path);
      b.check();
      for (auto& v : validate_pmm(b.pmm)) violations.push_back(v);
    });
  } else {
    const std::string text = read_text(path);
    const auto nl = text.find('\n');
    Json head;
    try {
      head = Json::parse(path.extension() == ".jsonl" ? text.substr(0, nl) : text);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
    }
    if (head.contains("traj_id")) {
      kind = "dataset";
      guarded([&] { check_dataset(dataset_from_jsonl(text)); });
    } else if (head.contains("episode")) {
      kind = "rollouts";
      guarded([&] { load_rollouts(path); });
    } else if (head.contains("round")) {
      kind = "rounds";
    } else if (head.contains("states") && head.contains("edges")) {
      kind = "pmm";
      guarded([&] { violations = validate_pmm(pmm_from_json(head)); });
    } else if (head.contains("centroids")) {
      kind = "codebook";
      guarded([&] { codebook_from_json(head); });
    } else if (head.contains("mode") && head.contains("normalize_output")) {
      kind = "history-encoder";
      guarded([&] { HistoryEncoder::from_json(head); });
    } else if (head.contains("apf") && head.contains("lvr")) {
      kind = "metrics";
    } else if (head.contains("iterations")) {
      kind = "em-summary";
    } else {
      throw Error(ErrorKind::Parse, "unrecognised artifact " + path.string());
    }
  }
  if (!violations.empty())
    throw CliFailure{"ValidationFailed", std::to_string(violations.size()) + " violation(s) in " + kind,
                     Json{{"artifact", kind}, {"violations", violations}}};
  print_summary(run, {{"artifact", kind}, {"path", path.string()}, {"violations", violations}});
}

}  // namespace

int main(int argc, char** argv) {
  bool json = false;
  for (int i = 1; i < argc; ++i)
    if (std::strcmp(argv[i], "--json") == 0) json = true;

  Run run;
  run.command = "enap";
  std::optional<Json> stamp;
  try {
    log_level();  // picks up ENAP_LOG

    CLI::App app{"Mine probabilistic Mealy machines from trajectories and control with them", "enap"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_help_all_flag("--help-all");

    std::string data, out, config_path;
    std::optional<std::string> seed, tau_sim, eps_err, k, encoder;
    std::vector<std::string> sets;
    app.add_option("--data", data, "input dataset");
    app.add_option("--out", out, "output artifact");
    app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "root seed");
    app.add_option("--tau-sim", tau_sim, "similarity threshold");
    app.add_option("--eps-err", eps_err, "action tolerance");
    app.add_option("--k", k, "EM iterations");
    app.add_option("--encoder", encoder, "history encoder")
        ->check(CLI::IsMember({"exact", "random-rnn", "trained-rnn"}));
    app.add_option("--set", sets, "override any config key (key=value)");
    app.add_flag("--json", run.json, "JSON output");

    DemoArgs demo;
    auto* s_demo = app.add_subcommand("demo", "write a scripted demonstration dataset");
    s_demo->add_option("env", demo.env, "frozenlake | gridworld | multiphase2d");
    s_demo->add_option("--n", demo.n, "number of demonstrations");
    s_demo->add_option("--mode", demo.mode, "multiphase2d goal mode: bimodal | single");
    s_demo->add_option("--noise", demo.noise, "multiphase2d action noise");

    std::string codebook;
    auto* s_abstract = app.add_subcommand("abstract", "cluster observations into symbols and annotate the dataset");
    s_abstract->add_option("--codebook", codebook, "codebook output (default <out>.codebook.json)");

    int alphabet = 0;
    auto* s_encoder = app.add_subcommand("train-encoder", "build or train the history encoder");
    s_encoder->add_option("--alphabet", alphabet, "symbol count (default: inferred)");

    MineArgs mine_args;
    auto* s_mine = app.add_subcommand("mine", "mine a machine from an annotated dataset");
    s_mine->add_option("--history", mine_args.history, "history encoder file (default: built from --encoder)");
    s_mine->add_option("--rounds", mine_args.rounds, "per-round log (JSONL)");
    s_mine->add_option("--unpruned", mine_args.unpruned, "machine before pruning");
    s_mine->add_option("--alphabet", mine_args.alphabet, "symbol count (default: inferred)");

    std::string prune_in;
    auto* s_prune = app.add_subcommand("prune", "merge stable-phase self-loop chains");
    s_prune->add_option("input", prune_in, "input machine");
    s_prune->add_option("--pmm", prune_in, "input machine");

    std::string feature = "identity";
    auto* s_train = app.add_subcommand("train-residual", "alternate abstraction, mining and residual training");
    s_train->add_option("--feature", feature, "feature encoder: identity | mlp");

    RolloutArgs roll;
    auto* s_rollout = app.add_subcommand("rollout", "run a trained bundle in an environment");
    s_rollout->add_option("--bundle", roll.bundle, "bundle directory")->required();
    s_rollout->add_option("--env", roll.env, "multiphase2d | frozenlake");
    s_rollout->add_option("--mode", roll.mode, "multiphase2d goal mode: bimodal | single");
    s_rollout->add_option("--episodes", roll.episodes, "episode count");
    s_rollout->add_option("--jobs", roll.jobs, "worker threads");
    s_rollout->add_option("--max-steps", roll.max_steps, "step limit per episode");

    MetricsArgs met;
    auto* s_metrics = app.add_subcommand("metrics", "structural metrics report");
    s_metrics->add_option("--pmm", met.pmm, "machine file");
    s_metrics->add_option("--bundle", met.bundle, "bundle directory (machine and encoder)");
    s_metrics->add_option("--rollouts", met.rollouts, "rollout log for success metrics");
    s_metrics->add_option("--csv", met.csv, "six-column CSV output");

    std::string dot_in;
    auto* s_dot = app.add_subcommand("export-dot", "render a machine as Graphviz DOT");
    s_dot->add_option("pmm", dot_in, "input machine")->required();

    std::string validate_in;
    auto* s_validate = app.add_subcommand("validate", "check an artifact's invariants");
    s_validate->add_option("artifact", validate_in, "file or bundle directory")->required();

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      print_error(json, run.command, std::nullopt, "InvalidArgument", e.what());
      return 1;
    }
    run.command = app.get_subcommands().front()->get_name();

    if (!config_path.empty()) run.cfg = PipelineConfig::from_text(read_text(config_path));
    if (seed) run.cfg.set("seed", *seed);
    if (tau_sim) run.cfg.set("tau_sim", *tau_sim);
    if (eps_err) run.cfg.set("eps_err", *eps_err);
    if (k) run.cfg.set("em_iters", *k);
    if (encoder) run.cfg.set("encoder", *encoder);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw Error(ErrorKind::InvalidArgument, "--set expects key=value, got '" + s + "'");
      run.cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    run.cfg.check();
    stamp = run.stamp();
    log_info(run.command + " config " + run.cfg.hash_hex() + " seed " + std::to_string(run.cfg.seed));

    if (s_demo->parsed()) cmd_demo(run, demo, out);
    else if (s_abstract->parsed()) cmd_abstract(run, data, out, codebook);
    else if (s_encoder->parsed()) cmd_train_encoder(run, data, out, alphabet);
    else if (s_mine->parsed()) cmd_mine(run, data, out, mine_args);
    else if (s_prune->parsed()) cmd_prune(run, prune_in, out);
    else if (s_train->parsed()) cmd_train_residual(run, data, out, feature);
    else if (s_rollout->parsed()) cmd_rollout(run, roll, out);
    else if (s_metrics->parsed()) cmd_metrics(run, data, out, met);
    else if (s_dot->parsed()) cmd_export_dot(run, dot_in, out);
    else if (s_validate->parsed()) cmd_validate(run, validate_in);
    return 0;
  } catch (const Error& e) {
    print_error(json, run.command, stamp, to_string(e.kind()), e.what());
  } catch (const CliFailure& f) {
    print_error(json, run.command, stamp, f.kind, f.message, f.detail);
  } catch (const fs::filesystem_error& e) {
    print_error(json, run.command, stamp, "Io", e.what());
  } catch (const std::exception& e) {
    print_error(json, run.command, stamp, "Internal", e.what());
  }
  return 1;
}
