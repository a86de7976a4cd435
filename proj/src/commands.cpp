#include "imgast/commands.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>

namespace imgast {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void prepare_out(const RunConfig& cfg) {
  cfg.validate_all();
  fs::create_directories(cfg.out);
  write_config(cfg, cfg.out / "config.ini");
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

/// Records the wall time of every realize call (one per episode step).
class TimedRealizer : public Realizer {
public:
  explicit TimedRealizer(Realizer& inner) : inner_(inner) {}
  AstAction realize(const SimState& s, const Image8x16& x, double delta_signed) override {
    const auto t0 = Clock::now();
    AstAction a = inner_.realize(s, x, delta_signed);
    ms_.push_back(ms_since(t0));
    return a;
  }
  std::string name() const override { return inner_.name(); }
  std::vector<double> take() { return std::exchange(ms_, {}); }

private:
  Realizer& inner_;
  std::vector<double> ms_;
};

std::unique_ptr<Realizer> make_realizer(const std::string& kind, const NetworkDefinition& net,
                                        const EpsSearchConfig& eps) {
  if (kind == "heuristic") return std::make_unique<HeuristicRealizer>(net);
  return std::make_unique<VerifierRealizer>(net, eps);
}

TraceHeader header_for(const RunConfig& cfg, int episode, const std::string& method, const std::string& realizer,
                       const SimState& s0) {
  TraceHeader h;
  h.episode = episode;
  h.method = method;
  h.realizer = realizer;
  h.ast = cfg.ast;
  h.failure_threshold = cfg.sim.failure_threshold;
  h.terminal_downtrack = cfg.sim.terminal_downtrack;
  h.initial = s0;
  return h;
}

SimState start_state(const RunConfig& cfg) {
  return {cfg.ast_run.start_d, cfg.ast_run.start_theta, cfg.ast_run.start_downtrack, 0.0};
}

std::string table_text(const std::vector<TableRow>& rows) {
  std::string out = table_header() + "\n";
  for (const auto& r : rows) out += format_row(r) + "\n";
  return out;
}

}  // namespace

NetworkDefinition load_rudder_net(const RunConfig& cfg) {
  if (!fs::exists(cfg.weights)) throw MissingArtifact("weights not found: " + cfg.weights.string());
  return compose_control_head(load_weights(cfg.weights), cfg.gains);
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

TableRow table_row(const TraceHeader& h, const EpisodeTrace& t) {
  return {h.method,
          h.episode,
          h.ast.n_actions,
          h.ast.delta_max,
          t.failed(),
          static_cast<int>(t.steps.size()),
          t.delta_mean(),
          t.log_likelihood};
}

std::string table_header() { return "method\tepisode\tn_actions\tdelta_max\tfailure\tsteps\tdelta_mean\tlog_likelihood"; }

std::string format_row(const TableRow& r) {
  return r.method + "\t" + std::to_string(r.episode) + "\t" + std::to_string(r.n_actions) + "\t" +
         format_double(r.delta_max) + "\t" + (r.failure ? "yes" : "no") + "\t" + std::to_string(r.steps) + "\t" +
         format_double(r.delta_mean) + "\t" + format_double(r.log_likelihood);
}

// ---------------------------------------------------------------- train

TrainOutput cmd_train(const RunConfig& cfg) {
  prepare_out(cfg);
  const auto data = make_dataset(cfg.scene, cfg.dataset);
  TrainResult res = train(canonical_controller(cfg.train.seed), data, cfg.train);
  TrainOutput out{std::move(res.net), std::move(res.report), cfg.out / "weights.json"};
  save_weights(out.net, out.weights);
  write_json(cfg.out / "train_metrics.json",
             {{"samples", data.size()},
              {"train_count", out.report.train_count},
              {"validation_count", out.report.validation_count},
              {"epochs", cfg.train.epochs},
              {"final_loss", out.report.epoch_loss.empty() ? 0.0 : out.report.epoch_loss.back()},
              {"train_rmse", {{"d", out.report.train_rmse.at(0)}, {"theta", out.report.train_rmse.at(1)}}},
              {"validation_rmse",
               {{"d", out.report.validation_rmse.at(0)}, {"theta", out.report.validation_rmse.at(1)}}}});
  return out;
}

// ---------------------------------------------------------------- validate

ValidationReport cmd_validate(const RunConfig& cfg) {
  cfg.validate_all();
  const NetworkDefinition net = load_rudder_net(cfg);
  prepare_out(cfg);
  Simulator sim(net, cfg.scene, cfg.sim);
  HeuristicRealizer zero(net);  // every action is 0, so nothing is realized
  AstConfig ast = cfg.ast;
  ast.horizon = std::max(1, cfg.validate.steps);
  const Policy none = [](int, const SimState&, const Image8x16&) { return 0.0; };

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> ud(cfg.validate.d_min, cfg.validate.d_max);
  std::uniform_real_distribution<double> ut(cfg.validate.theta_min, cfg.validate.theta_max);
  TraceWriter writer(cfg.out / "validation.jsonl");
  ValidationReport rep;
  std::vector<double> final_d;
  for (int e = 0; e < cfg.validate.episodes; ++e) {
    const double d0 = ud(rng);
    const double t0 = ut(rng);
    const SimState s0{d0, t0, 0.0, 0.0};
    const EpisodeTrace tr = run_episode(sim, zero, none, s0, ast);
    TraceHeader h = header_for(cfg, e, "nominal", "none", s0);
    h.ast = ast;
    writer.write(h, tr);
    const SimState& last = tr.steps.empty() ? s0 : tr.steps.back().record.post;
    ++rep.episodes;
    if (tr.failed()) ++rep.failures;
    final_d.push_back(std::abs(last.d));
    rep.max_abs_d = std::max(rep.max_abs_d, std::abs(last.d));
    rep.max_abs_theta = std::max(rep.max_abs_theta, std::abs(last.theta_deg));
  }
  if (!final_d.empty()) {
    double s = 0.0;
    for (double v : final_d) s += v;
    rep.mean_abs_d = s / static_cast<double>(final_d.size());
    double v2 = 0.0;
    for (double v : final_d) v2 += (v - rep.mean_abs_d) * (v - rep.mean_abs_d);
    rep.std_abs_d = std::sqrt(v2 / static_cast<double>(final_d.size()));
  }
  rep.passed = rep.failures == 0 && rep.mean_abs_d < 1.0 && rep.max_abs_theta < 5.0;
  write_json(cfg.out / "validation.json", {{"episodes", rep.episodes},
                                           {"steps", cfg.validate.steps},
                                           {"failures", rep.failures},
                                           {"mean_abs_d", rep.mean_abs_d},
                                           {"std_abs_d", rep.std_abs_d},
                                           {"max_abs_d", rep.max_abs_d},
                                           {"max_abs_theta", rep.max_abs_theta},
                                           {"passed", rep.passed},
                                           {"brightness_note",
                                            "no weather conditions are modeled; nominal validation uses the clean scene"}});
  return rep;
}

// ---------------------------------------------------------------- ast

std::string to_string(AstMethod m) {
  switch (m) {
    case AstMethod::Mcts: return "mcts";
    case AstMethod::Dqn: return "dqn";
    case AstMethod::Random: return "random";
  }
  return "?";
}

AstMethod parse_method(const std::string& s) {
  for (AstMethod m : {AstMethod::Mcts, AstMethod::Dqn, AstMethod::Random}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown ast method '" + s + "' (mcts, dqn, random)");
}

AstRunOutput cmd_ast(const RunConfig& cfg, AstMethod method) {
  cfg.validate_all();
  const NetworkDefinition net = load_rudder_net(cfg);
  prepare_out(cfg);
  const auto t_start = Clock::now();
  AstRunOutput out;
  const Simulator proto(net, cfg.scene, cfg.sim);
  TraceWriter writer(cfg.out / "traces.jsonl");
  json timing;

  const auto record = [&](TraceHeader h, EpisodeTrace t, const std::vector<double>& ms) {
    writer.write(h, t, ms);
    out.rows.push_back(table_row(h, t));
    out.headers.push_back(std::move(h));
    out.traces.push_back(std::move(t));
  };

  if (method == AstMethod::Random) {
    BaselineRealizer base(net, cfg.ast_run.random_samples, cfg.seed);
    TimedRealizer timed(base);
    Simulator sim = proto;
    const double delta = cfg.ast.delta_max;
    const Policy push = [delta](int, const SimState&, const Image8x16&) { return delta; };
    const SimState s0 = start_state(cfg);
    EpisodeTrace t = run_episode(sim, timed, push, s0, cfg.ast);
    record(header_for(cfg, 0, "random", base.name(), s0), std::move(t), timed.take());
  } else if (method == AstMethod::Mcts) {
    MctsConfig mc = cfg.mcts;
    mc.seed = cfg.seed;
    std::optional<RolloutCache> cache;
    if (mc.use_cache) {
      const auto t0 = Clock::now();
      cache = RolloutCache::build(net, cfg.scene, cfg.sim, cfg.ast, mc.rollout, mc.rollout_fixed_delta, cfg.cache,
                                  cfg.seed);
      timing["cache_ms"] = ms_since(t0);
    }
    auto expander = make_realizer(cfg.ast_run.realizer, net, cfg.epsearch);
    HeuristicRealizer roller(net);
    Mcts search(proto, *expander, roller, cfg.ast, mc, cache ? &*cache : nullptr);
    const auto t0 = Clock::now();
    MctsResult res = search.search(start_state(cfg));
    timing["search_ms"] = ms_since(t0);
    if (res.best) record(header_for(cfg, 0, "mcts", expander->name(), res.best->initial), *res.best, {});

    std::string edges = "parent\tchild\tparent_d\tparent_theta\tparent_downtrack\tdelta\tn\tq\treward\tchild_d\tchild_theta\tchild_downtrack\n";
    for (const auto& e : tree_edges(res.tree)) {
      edges += std::to_string(e.parent) + "\t" + std::to_string(e.child) + "\t" + format_double(e.parent_state.d) +
               "\t" + format_double(e.parent_state.theta_deg) + "\t" + format_double(e.parent_state.downtrack) +
               "\t" + format_double(e.delta) + "\t" + std::to_string(e.n) + "\t" + format_double(e.q) + "\t" +
               format_double(e.reward) + "\t" + format_double(e.child_state.d) + "\t" +
               format_double(e.child_state.theta_deg) + "\t" + format_double(e.child_state.downtrack) + "\n";
    }
    write_text(cfg.out / "tree_edges.tsv", edges);
    std::string hist = "iteration\tbest_return\n";
    for (std::size_t i = 0; i < res.best_history.size(); ++i) {
      hist += std::to_string(i + 1) + "\t" + format_double(res.best_history[i]) + "\n";
    }
    write_text(cfg.out / "best_history.tsv", hist);
    write_json(cfg.out / "mcts_stats.json", {{"iterations", res.stats.iterations},
                                             {"expansions", res.stats.expansions},
                                             {"live_rollouts", res.stats.live_rollouts},
                                             {"invariant_checks", res.stats.invariant_checks},
                                             {"verifier_nodes", res.stats.verifier_nodes},
                                             {"verifier_timeouts", res.stats.verifier_timeouts},
                                             {"tree_nodes", res.tree.size()},
                                             {"k", mc.k},
                                             {"widen_alpha", mc.widen_alpha},
                                             {"c", mc.c},
                                             {"sigma", cfg.ast.sigma},
                                             {"rollout", to_string(mc.rollout)},
                                             {"cache", mc.use_cache}});
    out.mcts = std::move(res);
  } else {
    auto inner = std::shared_ptr<Realizer>(make_realizer(cfg.dqn_run.train_realizer, net, cfg.epsearch));
    MemoGrid grid = cfg.dqn_run.memo;
    grid.dash_period = cfg.scene.dash_period();
    grid.centerline_offset = cfg.scene.centerline_offset;
    auto memo = std::make_shared<MemoRealizer>(inner, net, grid);
    AstEnvironment env(proto, memo, cfg.ast, cfg.dqn_run.reward_scale, cfg.dqn_run.starts);
    QNetConfig qc = cfg.dqn;
    qc.seed = cfg.seed;
    const auto t0 = Clock::now();
    DqnResult res = train_dqn(env, qc, cfg.dqn_run.episodes, cfg.dqn_run.max_steps);
    timing["train_ms"] = ms_since(t0);
    save_weights(res.qnet, cfg.out / "qnet.json");
    std::string ret = "episode\treturn\n";
    for (std::size_t i = 0; i < res.episode_returns.size(); ++i) {
      ret += std::to_string(i) + "\t" + format_double(res.episode_returns[i]) + "\n";
    }
    write_text(cfg.out / "dqn_returns.tsv", ret);
    write_json(cfg.out / "dqn_stats.json", {{"episodes", res.episode_returns.size()},
                                            {"train_steps", res.train_steps},
                                            {"target_syncs", res.syncs},
                                            {"memo_cells", memo->size()},
                                            {"memo_hits", memo->hits()},
                                            {"train_realizer", memo->name()},
                                            {"sigma", cfg.ast.sigma}});

    auto evaluator = make_realizer(cfg.ast_run.realizer, net, cfg.epsearch);
    TimedRealizer timed(*evaluator);
    const Policy greedy = greedy_policy(res.qnet, cfg.ast, cfg.scene, cfg.sim);
    Simulator sim = proto;
    const auto& st = cfg.dqn_run.eval_starts;
    for (std::size_t i = 0; i + 1 < st.size(); i += 2) {
      const SimState s0{st[i], st[i + 1], cfg.ast_run.start_downtrack, 0.0};
      EpisodeTrace t = run_episode(sim, timed, greedy, s0, cfg.ast);
      record(header_for(cfg, static_cast<int>(i / 2), "dqn", evaluator->name(), s0), std::move(t), timed.take());
    }
    out.dqn = std::move(res);
  }

  write_text(cfg.out / "table.tsv", table_text(out.rows));
  out.seconds = ms_since(t_start) / 1000.0;
  timing["total_ms"] = out.seconds * 1000.0;
  write_json(cfg.out / "timing.json", timing);
  return out;
}

// ---------------------------------------------------------------- verify

namespace {

std::vector<double> read_image(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("image not found: " + path.string());
  std::vector<double> v;
  if (path.extension() == ".json") {
    try {
      v = json::parse(in).get<std::vector<double>>();
    } catch (const std::exception& ex) {
      throw std::runtime_error(path.string() + ": " + ex.what());
    }
  } else {
    std::string magic;
    int cols = 0, rows = 0;
    double maxval = 0.0;
    const auto skip_comments = [&in] {
      in >> std::ws;
      while (in.peek() == '#') {
        std::string line;
        std::getline(in, line);
        in >> std::ws;
      }
    };
    in >> magic;
    skip_comments();
    in >> cols;
    skip_comments();
    in >> rows;
    skip_comments();
    in >> maxval;
    if (magic != "P2" || cols != Image8x16::kCols || rows != Image8x16::kRows || !(maxval > 0)) {
      throw std::runtime_error(path.string() + ": expected a plain P2 PGM of 16 x 8 pixels");
    }
    for (int i = 0; i < Image8x16::kSize; ++i) {
      double p = 0;
      skip_comments();
      if (!(in >> p)) throw std::runtime_error(path.string() + ": truncated pixel data");
      v.push_back(p / maxval);
    }
  }
  if (static_cast<int>(v.size()) != Image8x16::kSize) {
    throw std::runtime_error(path.string() + ": expected 128 values, got " + std::to_string(v.size()));
  }
  return v;
}

json disturbance_json(const DisturbanceResult& r) {
  int timeouts = 0;
  for (const auto& q : r.queries) timeouts += q.status == QueryStatus::Timeout;
  return {{"eps_lower", r.eps_lower}, {"eps_upper", r.eps_upper}, {"achieved", r.achieved},
          {"rounds", r.rounds.size()}, {"queries", r.queries.size()}, {"timeouts", timeouts},
          {"nodes", r.nodes},          {"had_timeout", r.had_timeout}, {"witness", r.witness}};
}

}  // namespace

VerifyOutput cmd_verify(const RunConfig& cfg, const fs::path& image, double delta) {
  cfg.validate_all();
  if (!(delta > 0.0)) throw ConfigError("--delta must be > 0");
  const NetworkDefinition net = load_rudder_net(cfg);
  const std::vector<double> x = read_image(image);
  prepare_out(cfg);
  VerifyOutput out;
  out.f0 = forward_scalar(net, x);
  out.increase = signed_disturbance(net, x, delta, cfg.epsearch);
  out.decrease = signed_disturbance(net, x, -delta, cfg.epsearch);
  write_json(cfg.out / "verify.json", {{"delta", delta},
                                       {"rudder", out.f0},
                                       {"mean_preserving", cfg.epsearch.verify.mean_preserving},
                                       {"increase", disturbance_json(out.increase)},
                                       {"decrease", disturbance_json(out.decrease)}});
  return out;
}

// ---------------------------------------------------------------- report

namespace {

/// Stacks original frame, downsampled, perturbed and reconstructed views.
void write_strip(const fs::path& path, const SimState& pre, const Image8x16& disturbance, const SceneConfig& scene) {
  const Frame128 frame = render(pre, scene);
  const Image8x16 clean = preprocess(frame);
  const Image8x16 pert = clean + disturbance;
  const Frame128 rec = reconstruct(frame, clean, pert);
  const int R = Frame128::kRows, C = Frame128::kCols;
  std::vector<double> px(static_cast<std::size_t>(4 * R * C));
  const auto put = [&](int panel, int r, int c, double v) {
    px[static_cast<std::size_t>((panel * R + r) * C + c)] = v;
  };
  const int fr = R / Image8x16::kRows, fc = C / Image8x16::kCols;
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < C; ++c) {
      put(0, r, c, frame.at(r, c));
      put(1, r, c, clean.at(r / fr, c / fc));
      put(2, r, c, pert.at(r / fr, c / fc));
      put(3, r, c, rec.at(r, c));
    }
  }
  write_pgm(path, px, 4 * R, C);
}

std::string polyline_rows(const std::string& source, const LoadedEpisode& e) {
  std::string out = source + "\t" + std::to_string(e.header.episode) + "\t0\t" +
                    format_double(e.trace.initial.downtrack) + "\t" + format_double(e.trace.initial.d) + "\n";
  for (std::size_t i = 0; i < e.trace.steps.size(); ++i) {
    const SimState& p = e.trace.steps[i].record.post;
    out += source + "\t" + std::to_string(e.header.episode) + "\t" + std::to_string(i + 1) + "\t" +
           format_double(p.downtrack) + "\t" + format_double(p.d) + "\n";
  }
  return out;
}

const LoadedEpisode* best_episode(const std::vector<LoadedEpisode>& eps) {
  const LoadedEpisode* best = nullptr;
  for (const auto& e : eps) {
    if (!best) {
      best = &e;
      continue;
    }
    const bool f = e.trace.failed(), bf = best->trace.failed();
    if ((f && !bf) || (f == bf && e.trace.total_reward > best->trace.total_reward)) best = &e;
  }
  return best;
}

}  // namespace

ReportOutput cmd_report(const RunConfig& cfg_in, const fs::path& traces) {
  cfg_in.validate_all();
  if (!fs::is_directory(traces)) throw MissingArtifact("trace directory not found: " + traces.string());
  RunConfig cfg = cfg_in;
  if (fs::exists(traces / "config.ini")) {
    cfg = load_config(traces / "config.ini");
    cfg.out = cfg_in.out;
    cfg.report = cfg_in.report;
  }
  const fs::path dir = cfg.out / "report";
  fs::create_directories(dir);
  write_config(cfg, dir / "config.ini");

  ReportOutput rep;
  std::string polylines = "source\tepisode\tstep\tdowntrack\td\n";
  std::string replay = "source\tepisode\trecomputed\treplay_max_dev\n";
  std::optional<NetworkDefinition> net;
  if (fs::exists(cfg.weights)) net = load_rudder_net(cfg);
  std::vector<std::pair<std::string, std::vector<LoadedEpisode>>> loaded;
  for (const auto& file : trace_files(traces)) {
    loaded.emplace_back(file.filename().string(), read_trace_file(file));
  }

  for (const auto& [source, eps] : loaded) {
    std::vector<TableRow> own;
    for (const auto& e : eps) {
      const TableRow r = table_row(e.header, e.trace);
      own.push_back(r);
      rep.rows.push_back(r);
      rep.row_sources.push_back(source);
      polylines += polyline_rows(source, e);
      const bool ok = recomputation_matches(e);
      rep.recomputed = rep.recomputed && ok;
      double dev = -1.0;
      if (net) {
        Simulator sim(*net, cfg.scene, cfg.sim);
        dev = replay_deviation(sim, e);
        rep.worst_replay = std::max(rep.worst_replay, dev);
      }
      replay += source + "\t" + std::to_string(e.header.episode) + "\t" + (ok ? "yes" : "no") + "\t" +
                format_double(dev) + "\n";
    }
    if (source == "traces.jsonl" && fs::exists(traces / "table.tsv")) {
      std::ifstream in(traces / "table.tsv");
      std::stringstream ss;
      ss << in.rdbuf();
      rep.matches_runtime = rep.matches_runtime && ss.str() == table_text(own);
    }
  }

  std::string table = "source\t" + table_header() + "\n";
  for (std::size_t i = 0; i < rep.rows.size(); ++i) table += rep.row_sources[i] + "\t" + format_row(rep.rows[i]) + "\n";
  write_text(dir / "table.tsv", table);
  write_text(dir / "polylines.tsv", polylines);
  write_text(dir / "replay.tsv", replay);
  if (fs::exists(traces / "tree_edges.tsv")) {
    fs::copy_file(traces / "tree_edges.tsv", dir / "tree_edges.tsv", fs::copy_options::overwrite_existing);
  }

  // image strips for the best episode of each search trace
  for (const auto& [source, eps] : loaded) {
    const LoadedEpisode* best = best_episode(eps);
    if (!best || best->header.method == "nominal") continue;
    const std::string stem = fs::path(source).stem().string();
    const int n = std::min<int>(cfg.report.strip_steps, static_cast<int>(best->trace.steps.size()));
    for (int i = 0; i < n; ++i) {
      const auto& st = best->trace.steps[static_cast<std::size_t>(i)];
      write_strip(dir / ("strip_" + stem + "_ep" + std::to_string(best->header.episode) + "_step" + std::to_string(i) +
                         ".pgm"),
                  st.record.pre, st.action.disturbance, cfg.scene);
    }
  }

  // phase sweep: the best policy replayed from shifted initial downtrack
  std::string sweep = "source\tepisode\tshift\tphase\tin_gap\tfailure\tsteps\tmax_abs_d\n";
  if (net) {
    for (const auto& [source, eps] : loaded) {
      const LoadedEpisode* best = best_episode(eps);
      if (!best || best->header.method == "nominal") continue;
      const AstConfig& ast = best->header.ast;
      Policy policy;
      std::unique_ptr<Realizer> realizer;
      if (best->header.method == "dqn" && fs::exists(traces / "qnet.json")) {
        policy = greedy_policy(load_weights(traces / "qnet.json"), ast, cfg.scene, cfg.sim);
      } else {
        std::vector<double> seq;
        for (const auto& st : best->trace.steps) seq.push_back(st.action.delta_signed);
        policy = [seq](int i, const SimState&, const Image8x16&) {
          return seq.empty() ? 0.0 : seq[std::min(static_cast<std::size_t>(i), seq.size() - 1)];
        };
      }
      if (best->header.method == "random") {
        realizer = std::make_unique<BaselineRealizer>(*net, cfg.ast_run.random_samples, cfg.seed);
      } else {
        realizer = make_realizer(cfg.report.sweep_realizer, *net, cfg.epsearch);
      }
      Simulator sim(*net, cfg.scene, cfg.sim);
      const double period = cfg.scene.dash_period();
      for (int k = 0; k < cfg.report.sweep_shifts; ++k) {
        PhaseSweepRow row;
        row.source = source;
        row.episode = best->header.episode;
        row.shift = period * k / cfg.report.sweep_shifts;
        SimState s0 = best->trace.initial;
        s0.downtrack += row.shift;
        row.phase = dash_phase(s0.downtrack, cfg.scene);
        row.in_gap = row.phase >= cfg.scene.dash_length;
        const EpisodeTrace t = run_episode(sim, *realizer, policy, s0, ast);
        row.failure = t.failed();
        row.steps = static_cast<int>(t.steps.size());
        row.max_abs_d = t.max_abs_d();
        (row.in_gap ? rep.gap_starts : rep.dash_starts) += 1;
        if (row.failure) (row.in_gap ? rep.gap_failures : rep.dash_failures) += 1;
        sweep += source + "\t" + std::to_string(row.episode) + "\t" + format_double(row.shift) + "\t" +
                 format_double(row.phase) + "\t" + (row.in_gap ? "gap" : "dash") + "\t" +
                 (row.failure ? "yes" : "no") + "\t" + std::to_string(row.steps) + "\t" +
                 format_double(row.max_abs_d) + "\n";
        rep.sweep.push_back(row);
      }
    }
  }
  write_text(dir / "phase_sweep.tsv", sweep);

  std::ostringstream f;
  if (rep.sweep.empty()) {
    f << "phase sweep: nothing to sweep";
  } else {
    const auto rate = [](int a, int b) { return b ? static_cast<double>(a) / b : 0.0; };
    const double g = rate(rep.gap_failures, rep.gap_starts), d = rate(rep.dash_failures, rep.dash_starts);
    f << "phase sweep: failures from gap phases " << rep.gap_failures << "/" << rep.gap_starts
      << ", from dash phases " << rep.dash_failures << "/" << rep.dash_starts << "; ";
    if (rep.gap_failures + rep.dash_failures == 0) {
      f << "no failures, no phase dependence observed";
    } else if (rep.gap_failures + rep.dash_failures == rep.gap_starts + rep.dash_starts) {
      f << "every phase fails, no phase dependence observed";
    } else if (g > d) {
      f << "failures concentrate at centerline-gap phases";
    } else {
      f << "failures do not concentrate at centerline-gap phases";
    }
  }
  rep.finding = f.str();
  write_text(dir / "findings.txt", rep.finding + "\nrecomputed rows match run-time tables: " +
                                       (rep.matches_runtime ? "yes" : "no") +
                                       "\nall logged rewards recomputed exactly: " + (rep.recomputed ? "yes" : "no") +
                                       "\nworst replay deviation: " + format_double(rep.worst_replay) + "\n");
  return rep;
}

}  // namespace imgast
