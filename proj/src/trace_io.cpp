#include "imgast/trace_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace imgast {

using nlohmann::json;

namespace {

json state_json(const SimState& s) {
  return {{"d", s.d}, {"theta", s.theta_deg}, {"downtrack", s.downtrack}, {"t", s.t}};
}

SimState state_from(const json& j) {
  SimState s;
  s.d = j.at("d").get<double>();
  s.theta_deg = j.at("theta").get<double>();
  s.downtrack = j.at("downtrack").get<double>();
  s.t = j.at("t").get<double>();
  return s;
}

Outcome outcome_from(const std::string& s) {
  for (Outcome o : {Outcome::Failure, Outcome::Terminal, Outcome::Horizon}) {
    if (to_string(o) == s) return o;
  }
  throw std::invalid_argument("unknown outcome '" + s + "'");
}

json summary_json(int episode, const TraceSummary& s) {
  return {{"type", "summary"},         {"episode", episode},           {"outcome", to_string(s.outcome)},
          {"steps", s.steps},          {"total_reward", s.total_reward}, {"log_likelihood", s.log_likelihood},
          {"delta_mean", s.delta_mean}, {"max_abs_d", s.max_abs_d}};
}

}  // namespace

TraceSummary summarize(const EpisodeTrace& t) {
  return {t.outcome, static_cast<int>(t.steps.size()), t.total_reward, t.log_likelihood, t.delta_mean(),
          t.max_abs_d()};
}

std::filesystem::path timing_path(const std::filesystem::path& trace) {
  std::string s = trace.string();
  const std::string ext = ".jsonl";
  if (s.size() >= ext.size() && s.compare(s.size() - ext.size(), ext.size(), ext) == 0) s.resize(s.size() - ext.size());
  return s + ".timing.jsonl";
}

TraceWriter::TraceWriter(const std::filesystem::path& path) : out_(path), timing_(timing_path(path)) {
  if (!out_ || !timing_) throw std::runtime_error("cannot write trace " + path.string());
}

void TraceWriter::write(const TraceHeader& h, const EpisodeTrace& trace, const std::vector<double>& step_ms) {
  if (!step_ms.empty() && step_ms.size() != trace.steps.size()) {
    throw std::invalid_argument("trace writer: timing entries do not match steps");
  }
  const json head = {{"type", "episode"},
                     {"episode", h.episode},
                     {"method", h.method},
                     {"realizer", h.realizer},
                     {"n_actions", h.ast.n_actions},
                     {"delta_max", h.ast.delta_max},
                     {"sigma", h.ast.sigma},
                     {"penalty_alpha", h.ast.penalty_alpha},
                     {"penalty_beta", h.ast.penalty_beta},
                     {"horizon", h.ast.horizon},
                     {"failure_threshold", h.failure_threshold},
                     {"terminal_downtrack", h.terminal_downtrack},
                     {"initial", state_json(trace.initial)}};
  out_ << head.dump() << '\n';
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const EpisodeStep& st = trace.steps[i];
    const json rec = {{"type", "step"},
                      {"episode", h.episode},
                      {"step", i},
                      {"pre", state_json(st.record.pre)},
                      {"post", state_json(st.record.post)},
                      {"delta", st.action.delta_signed},
                      {"achieved", st.action.achieved},
                      {"eps_upper", st.action.eps_upper},
                      {"disturbance", st.action.disturbance.px},
                      {"rudder", st.record.rudder},
                      {"reward", st.reward},
                      {"log_likelihood", st.log_likelihood},
                      {"verifier", {{"nodes", st.action.nodes}, {"queries", st.action.queries}}},
                      {"timed_out", st.action.timed_out}};
    out_ << rec.dump() << '\n';
    if (!step_ms.empty()) {
      timing_ << json{{"episode", h.episode}, {"step", i}, {"wall_ms", step_ms[i]}}.dump() << '\n';
    }
  }
  out_ << summary_json(h.episode, summarize(trace)).dump() << '\n';
  out_.flush();
  timing_.flush();
}

std::vector<LoadedEpisode> read_trace_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TraceFormatError(path.string() + ": cannot open");
  std::vector<LoadedEpisode> out;
  std::string line;
  int lineno = 0;
  LoadedEpisode* cur = nullptr;
  SimConfig sim;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "episode") {
        out.emplace_back();
        cur = &out.back();
        TraceHeader& h = cur->header;
        h.episode = j.at("episode").get<int>();
        h.method = j.at("method").get<std::string>();
        h.realizer = j.at("realizer").get<std::string>();
        h.ast.n_actions = j.at("n_actions").get<int>();
        h.ast.delta_max = j.at("delta_max").get<double>();
        h.ast.sigma = j.at("sigma").get<double>();
        h.ast.penalty_alpha = j.at("penalty_alpha").get<double>();
        h.ast.penalty_beta = j.at("penalty_beta").get<double>();
        h.ast.horizon = j.at("horizon").get<int>();
        h.failure_threshold = j.at("failure_threshold").get<double>();
        h.terminal_downtrack = j.at("terminal_downtrack").get<double>();
        h.initial = state_from(j.at("initial"));
        sim = SimConfig{};
        sim.failure_threshold = h.failure_threshold;
        sim.terminal_downtrack = h.terminal_downtrack;
        cur->trace.initial = h.initial;
        cur->trace.outcome = is_failure(h.initial, sim)    ? Outcome::Failure
                             : is_terminal(h.initial, sim) ? Outcome::Terminal
                                                           : Outcome::Horizon;
      } else if (type == "step") {
        if (!cur || cur->logged_summary) throw std::invalid_argument("step record outside an episode");
        if (j.at("episode").get<int>() != cur->header.episode) throw std::invalid_argument("episode id mismatch");
        if (j.at("step").get<std::size_t>() != cur->trace.steps.size()) throw std::invalid_argument("step out of order");
        AstAction a;
        a.delta_signed = j.at("delta").get<double>();
        a.achieved = j.at("achieved").get<double>();
        a.eps_upper = j.at("eps_upper").get<double>();
        const auto px = j.at("disturbance").get<std::vector<double>>();
        if (px.size() != a.disturbance.px.size()) throw std::invalid_argument("disturbance must have 128 values");
        std::copy(px.begin(), px.end(), a.disturbance.px.begin());
        a.nodes = j.at("verifier").at("nodes").get<long long>();
        a.queries = j.at("verifier").at("queries").get<int>();
        a.timed_out = j.at("timed_out").get<bool>();
        StepRecord rec;
        rec.pre = state_from(j.at("pre"));
        rec.post = state_from(j.at("post"));
        rec.disturbance = a.disturbance;
        rec.rudder = j.at("rudder").get<double>();
        append_step(cur->trace, a, rec, cur->header.ast, sim);
        cur->logged_rewards.push_back(j.at("reward").get<double>());
        cur->logged_log_likelihood.push_back(j.at("log_likelihood").get<double>());
        cur->logged_rudder.push_back(rec.rudder);
      } else if (type == "summary") {
        if (!cur || cur->logged_summary) throw std::invalid_argument("summary outside an episode");
        TraceSummary s;
        s.outcome = outcome_from(j.at("outcome").get<std::string>());
        s.steps = j.at("steps").get<int>();
        s.total_reward = j.at("total_reward").get<double>();
        s.log_likelihood = j.at("log_likelihood").get<double>();
        s.delta_mean = j.at("delta_mean").get<double>();
        s.max_abs_d = j.at("max_abs_d").get<double>();
        cur->logged_summary = s;
      } else {
        throw std::invalid_argument("unknown record type '" + type + "'");
      }
    } catch (const std::exception& ex) {
      throw TraceFormatError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

std::vector<std::filesystem::path> trace_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    const std::string ext = ".jsonl";
    const std::string side = ".timing.jsonl";
    if (!e.is_regular_file() || name.size() < ext.size()) continue;
    if (name.compare(name.size() - ext.size(), ext.size(), ext) != 0) continue;
    if (name.size() >= side.size() && name.compare(name.size() - side.size(), side.size(), side) == 0) continue;
    out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool recomputation_matches(const LoadedEpisode& e) {
  const auto& steps = e.trace.steps;
  if (steps.size() != e.logged_rewards.size()) return false;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].reward != e.logged_rewards[i] || steps[i].log_likelihood != e.logged_log_likelihood[i]) return false;
  }
  if (!e.logged_summary) return false;
  const TraceSummary s = summarize(e.trace);
  const TraceSummary& l = *e.logged_summary;
  return s.outcome == l.outcome && s.steps == l.steps && s.total_reward == l.total_reward &&
         s.log_likelihood == l.log_likelihood && s.delta_mean == l.delta_mean && s.max_abs_d == l.max_abs_d;
}

double replay_deviation(Simulator& sim, const LoadedEpisode& e) {
  sim.initialize(e.trace.initial);
  double worst = 0.0;
  for (std::size_t i = 0; i < e.trace.steps.size(); ++i) {
    const auto& st = e.trace.steps[i];
    const StepRecord r = sim.step(st.action.disturbance);
    const SimState& p = st.record.post;
    worst = std::max({worst, std::abs(r.post.d - p.d), std::abs(r.post.theta_deg - p.theta_deg),
                      std::abs(r.post.downtrack - p.downtrack), std::abs(r.post.t - p.t),
                      std::abs(r.rudder - e.logged_rudder[i])});
  }
  return worst;
}

}  // namespace imgast
