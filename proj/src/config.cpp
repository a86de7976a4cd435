#include "imgast/config.hpp"

#include <boost/algorithm/string/trim.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

namespace imgast {

namespace {

struct Binding {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& s) {
  T v{};
  const std::string t = boost::algorithm::trim_copy(s);
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (r.ec != std::errc{} || r.ptr != t.data() + t.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  const std::string t = boost::algorithm::trim_copy(s);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw std::invalid_argument("not a boolean: '" + s + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (boost::algorithm::trim_copy(item).empty()) continue;
    out.push_back(parse_number<T>(item));
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

class Table {
public:
  std::vector<Binding> rows;

  template <class T>
  void num(const std::string& sec, const std::string& key, T& ref) {
    rows.push_back({sec, key, [&ref](const std::string& s) { ref = parse_number<T>(s); },
                    [&ref] {
                      if constexpr (std::is_floating_point_v<T>) {
                        return fmt(ref);
                      } else {
                        return std::to_string(ref);
                      }
                    }});
  }
  void flag(const std::string& sec, const std::string& key, bool& ref) {
    rows.push_back({sec, key, [&ref](const std::string& s) { ref = parse_bool(s); },
                    [&ref] { return std::string(ref ? "true" : "false"); }});
  }
  void text(const std::string& sec, const std::string& key, std::string& ref) {
    rows.push_back({sec, key, [&ref](const std::string& s) { ref = boost::algorithm::trim_copy(s); },
                    [&ref] { return ref; }});
  }
  void path(const std::string& sec, const std::string& key, std::filesystem::path& ref) {
    rows.push_back({sec, key, [&ref](const std::string& s) { ref = boost::algorithm::trim_copy(s); },
                    [&ref] { return ref.string(); }});
  }
  template <class T>
  void list(const std::string& sec, const std::string& key, std::vector<T>& ref) {
    rows.push_back({sec, key, [&ref](const std::string& s) { ref = parse_list<T>(s); },
                    [&ref] { return join(ref); }});
  }
  void maybe(const std::string& sec, const std::string& key, std::optional<double>& ref) {
    rows.push_back({sec, key,
                    [&ref](const std::string& s) {
                      const std::string t = boost::algorithm::trim_copy(s);
                      if (t.empty() || t == "auto") {
                        ref.reset();
                      } else {
                        ref = parse_number<double>(t);
                      }
                    },
                    [&ref] { return ref ? fmt(*ref) : std::string("auto"); }});
  }
  void rollout(const std::string& sec, const std::string& key, RolloutPolicy& ref) {
    rows.push_back({sec, key,
                    [&ref](const std::string& s) {
                      const std::string t = boost::algorithm::trim_copy(s);
                      if (t == to_string(RolloutPolicy::RandomUniform)) {
                        ref = RolloutPolicy::RandomUniform;
                      } else if (t == to_string(RolloutPolicy::FixedDelta)) {
                        ref = RolloutPolicy::FixedDelta;
                      } else {
                        throw std::invalid_argument("unknown rollout policy '" + t + "'");
                      }
                    },
                    [&ref] { return to_string(ref); }});
  }

  const Binding* find(const std::string& sec, const std::string& key) const {
    for (const auto& b : rows) {
      if (b.section == sec && b.key == key) return &b;
    }
    return nullptr;
  }
};

Table bindings(RunConfig& c) {
  Table t;
  t.num("run", "seed", c.seed);
  t.path("run", "out", c.out);

  t.path("net", "weights", c.weights);
  t.num("net", "k_d", c.gains.k_d);
  t.num("net", "k_theta", c.gains.k_theta);

  auto& sc = c.scene;
  t.num("scene", "half_width", sc.half_width);
  t.num("scene", "edge_line_offset", sc.edge_line_offset);
  t.num("scene", "edge_line_width", sc.edge_line_width);
  t.num("scene", "center_line_width", sc.center_line_width);
  t.num("scene", "dash_length", sc.dash_length);
  t.num("scene", "gap_length", sc.gap_length);
  t.num("scene", "centerline_offset", sc.centerline_offset);
  t.num("scene", "line_gray", sc.line_gray);
  t.num("scene", "surface_gray", sc.surface_gray);
  t.num("scene", "off_taxiway_gray", sc.off_taxiway_gray);
  t.num("scene", "sky_gray", sc.sky_gray);
  t.flag("scene", "draw_lines", sc.draw_lines);
  t.num("scene", "supersample", sc.supersample);
  t.num("scene", "camera_lateral_offset", sc.camera.lateral_offset);
  t.num("scene", "camera_height", sc.camera.height);
  t.num("scene", "camera_pitch_deg", sc.camera.pitch_deg);
  t.num("scene", "camera_hfov_deg", sc.camera.hfov_deg);

  auto& si = c.sim;
  t.num("sim", "speed", si.speed);
  t.num("sim", "control_period", si.control_period);
  t.num("sim", "substep", si.substep);
  t.num("sim", "heading_rate_gain", si.heading_rate_gain);
  t.num("sim", "failure_threshold", si.failure_threshold);
  t.num("sim", "terminal_downtrack", si.terminal_downtrack);
  t.num("sim", "rudder_limit", si.rudder_limit);

  auto& tr = c.train;
  t.num("train", "learning_rate", tr.learning_rate);
  t.num("train", "momentum", tr.momentum);
  t.num("train", "batch_size", tr.batch_size);
  t.num("train", "epochs", tr.epochs);
  t.num("train", "seed", tr.seed);
  t.num("train", "validation_fraction", tr.validation_fraction);
  t.list("train", "target_scale", tr.target_scale);
  t.num("train", "lr_decay", tr.lr_decay);
  t.num("train", "decay_every", tr.decay_every);
  t.num("train", "d_min", c.dataset.d_min);
  t.num("train", "d_max", c.dataset.d_max);
  t.num("train", "d_steps", c.dataset.d_steps);
  t.num("train", "theta_min", c.dataset.theta_min);
  t.num("train", "theta_max", c.dataset.theta_max);
  t.num("train", "theta_steps", c.dataset.theta_steps);
  t.num("train", "phase_samples", c.dataset.phase_samples);

  t.num("validate", "episodes", c.validate.episodes);
  t.num("validate", "steps", c.validate.steps);
  t.num("validate", "d_min", c.validate.d_min);
  t.num("validate", "d_max", c.validate.d_max);
  t.num("validate", "theta_min", c.validate.theta_min);
  t.num("validate", "theta_max", c.validate.theta_max);

  t.num("ast", "n_actions", c.ast.n_actions);
  t.num("ast", "delta_max", c.ast.delta_max);
  t.num("ast", "sigma", c.ast.sigma);
  t.num("ast", "penalty_alpha", c.ast.penalty_alpha);
  t.num("ast", "penalty_beta", c.ast.penalty_beta);
  t.num("ast", "horizon", c.ast.horizon);
  t.num("ast", "start_d", c.ast_run.start_d);
  t.num("ast", "start_theta", c.ast_run.start_theta);
  t.num("ast", "start_downtrack", c.ast_run.start_downtrack);
  t.text("ast", "realizer", c.ast_run.realizer);
  t.num("ast", "random_samples", c.ast_run.random_samples);

  auto& m = c.mcts;
  t.num("mcts", "k", m.k);
  t.num("mcts", "widen_alpha", m.widen_alpha);
  t.num("mcts", "c", m.c);
  t.num("mcts", "iterations", m.iterations);
  t.rollout("mcts", "rollout", m.rollout);
  t.num("mcts", "rollout_fixed_delta", m.rollout_fixed_delta);
  t.flag("mcts", "use_cache", m.use_cache);
  t.flag("mcts", "stop_on_failure", m.stop_on_failure);
  t.flag("mcts", "check_invariants", m.check_invariants);
  t.num("mcts", "full_check_every", m.full_check_every);
  t.list("mcts", "cache_d_knots", c.cache.d_knots);
  t.list("mcts", "cache_theta_knots", c.cache.theta_knots);
  t.num("mcts", "cache_phase_knots", c.cache.phase_knots);
  t.list("mcts", "cache_remaining_knots", c.cache.remaining_knots);
  t.num("mcts", "cache_rollouts_per_knot", c.cache.rollouts_per_knot);
  t.num("mcts", "cache_threads", c.cache.threads);

  auto& q = c.dqn;
  t.list("dqn", "hidden", q.hidden);
  t.num("dqn", "learning_rate", q.learning_rate);
  t.num("dqn", "momentum", q.momentum);
  t.num("dqn", "target_sync", q.target_sync);
  t.num("dqn", "gamma", q.gamma);
  t.num("dqn", "epsilon_start", q.epsilon_start);
  t.num("dqn", "epsilon_end", q.epsilon_end);
  t.num("dqn", "epsilon_decay_steps", q.epsilon_decay_steps);
  t.num("dqn", "batch_size", q.batch_size);
  t.num("dqn", "replay_capacity", q.replay_capacity);
  t.num("dqn", "priority_exponent", q.priority_exponent);
  t.num("dqn", "importance_exponent", q.importance_exponent);
  t.num("dqn", "priority_floor", q.priority_floor);
  t.num("dqn", "warmup", q.warmup);
  auto& dr = c.dqn_run;
  t.num("dqn", "episodes", dr.episodes);
  t.num("dqn", "max_steps", dr.max_steps);
  t.num("dqn", "reward_scale", dr.reward_scale);
  t.text("dqn", "train_realizer", dr.train_realizer);
  t.num("dqn", "memo_d_step", dr.memo.d_step);
  t.num("dqn", "memo_theta_step", dr.memo.theta_step);
  t.num("dqn", "memo_phase_step", dr.memo.phase_step);
  t.num("dqn", "start_d_min", dr.starts.d_min);
  t.num("dqn", "start_d_max", dr.starts.d_max);
  t.num("dqn", "start_theta_min", dr.starts.theta_min);
  t.num("dqn", "start_theta_max", dr.starts.theta_max);
  t.list("dqn", "eval_starts", dr.eval_starts);

  auto& e = c.epsearch;
  t.num("epsearch", "parallel_queries", e.parallel_queries);
  t.num("epsearch", "tol", e.tol);
  t.maybe("epsearch", "upper_bound", e.upper_bound);
  t.num("epsearch", "threads", e.threads);

  auto& v = c.epsearch.verify;
  t.num("verify", "node_budget", v.node_budget);
  t.num("verify", "lp_tol", v.lp_tol);
  t.num("verify", "witness_tol", v.witness_tol);
  t.flag("verify", "mean_preserving", v.mean_preserving);
  t.flag("verify", "node_lp", v.node_lp);

  t.num("report", "sweep_shifts", c.report.sweep_shifts);
  t.text("report", "sweep_realizer", c.report.sweep_realizer);
  t.num("report", "strip_steps", c.report.strip_steps);
  return t;
}

void set_key(Table& t, const std::string& sec, const std::string& key, const std::string& value) {
  const Binding* b = t.find(sec, key);
  if (!b) throw ConfigError("unknown config key '" + sec + "." + key + "'");
  try {
    b->set(value);
  } catch (const std::exception& ex) {
    throw ConfigError("bad value for '" + sec + "." + key + "': " + ex.what());
  }
}

}  // namespace

RunConfig::RunConfig() {
  // d is scaled by 5 m, theta by 30 deg during controller training
  train.target_scale = {5.0, 30.0};
  // episodes are ~25 steps; decay exploration over the first ~60% of 1000 of them
  dqn.learning_rate = 3e-3;
  dqn.epsilon_decay_steps = 15000;
}

void RunConfig::validate_all() const {
  const auto wrap = [](const char* sec, const auto& fn) {
    try {
      fn();
    } catch (const std::exception& ex) {
      throw ConfigError(std::string("invalid [") + sec + "]: " + ex.what());
    }
  };
  wrap("scene", [&] { scene.validate(); });
  wrap("sim", [&] { sim.validate(); });
  wrap("ast", [&] { ast.validate(); });
  wrap("mcts", [&] {
    mcts.validate();
    cache.validate();
  });
  wrap("dqn", [&] { dqn.validate(); });
  wrap("epsearch", [&] { epsearch.validate(); });
  for (const auto& [sec, value] : {std::pair{"ast.realizer", ast_run.realizer},
                                   std::pair{"dqn.train_realizer", dqn_run.train_realizer},
                                   std::pair{"report.sweep_realizer", report.sweep_realizer}}) {
    if (value != "verifier" && value != "heuristic") {
      throw ConfigError(std::string("'") + sec + "' must be verifier or heuristic, got '" + value + "'");
    }
  }
  if (dqn_run.eval_starts.size() % 2 != 0) throw ConfigError("'dqn.eval_starts' needs (d, theta) pairs");
  if (validate.episodes < 0 || validate.steps < 0) throw ConfigError("invalid [validate]: negative count");
  if (ast_run.random_samples < 1) throw ConfigError("'ast.random_samples' must be >= 1");
  if (report.sweep_shifts < 1) throw ConfigError("'report.sweep_shifts' must be >= 1");
}

RunConfig load_config(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  if (!std::filesystem::exists(path)) throw MissingArtifact("config file not found: " + path.string());
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& ex) {
    throw ConfigError(std::string("config parse error: ") + ex.what());
  }
  RunConfig cfg;
  Table t = bindings(cfg);
  for (const auto& [sec, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config key '" + sec + "' outside a section");
    }
    for (const auto& [key, node] : body) set_key(t, sec, key, node.data());
  }
  return cfg;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override must look like section.key=value: '" + assignment + "'");
  }
  Table t = bindings(cfg);
  set_key(t, assignment.substr(0, dot), boost::algorithm::trim_copy(assignment.substr(dot + 1, eq - dot - 1)),
          assignment.substr(eq + 1));
}

std::string dump_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  const Table t = bindings(copy);
  std::string out;
  std::string section;
  for (const auto& b : t.rows) {
    if (b.section != section) {
      if (!section.empty()) out += "\n";
      section = b.section;
      out += "[" + section + "]\n";
    }
    out += b.key + " = " + b.get() + "\n";
  }
  return out;
}

void write_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << dump_config(cfg);
}

}  // namespace imgast
