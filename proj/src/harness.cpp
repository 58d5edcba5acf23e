#include "entlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "entlab/errors.hpp"
#include "entlab/rng.hpp"

namespace entlab {
namespace fs = std::filesystem;

namespace {

// Non-finite reals are written as the strings "nan", "inf" and "-inf".
Json num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

double get_real(const Json& j, const std::string& path) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw ValidationError(path + ": expected a number");
}

std::uint64_t get_count(const Json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer()) {
    if (j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  }
  throw ValidationError(path + ": expected a non-negative integer");
}

std::string get_string(const Json& j, const std::string& path) {
  if (!j.is_string()) throw ValidationError(path + ": expected a string");
  return j.get<std::string>();
}

const Json& require(const Json& obj, const std::string& key, const std::string& path) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(path + "." + key + ": required field missing");
  return *it;
}

void require_object(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ValidationError(path + ": expected an object");
}

void reject_unknown(const Json& obj, const std::set<std::string>& allowed, const std::string& path) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) {
      throw UnknownKeyError((path.empty() ? key : path + "." + key) + ": unknown key");
    }
  }
}

std::vector<double> get_real_array(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ValidationError(path + ": expected an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_real(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

Json real_array(const double* data, std::size_t n) {
  Json arr = Json::array();
  for (std::size_t i = 0; i < n; ++i) arr.push_back(num(data[i]));
  return arr;
}

Json pairs_to_json(const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  Json arr = Json::array();
  for (const auto& [s, a] : pairs) arr.push_back(Json::array({s, a}));
  return arr;
}

std::vector<std::pair<std::size_t, std::size_t>> pairs_from_json(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ValidationError(path + ": expected an array of [state, action] pairs");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const Json& e : j) {
    if (!e.is_array() || e.size() != 2) throw ValidationError(path + ": expected [state, action] pairs");
    out.emplace_back(get_count(e[0], path), get_count(e[1], path));
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> to_pairs(const std::vector<std::size_t>& flat, std::size_t cols) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(flat.size());
  for (std::size_t idx : flat) out.emplace_back(idx / cols, idx % cols);
  return out;
}

std::string mode_name(UpdateMode m) { return to_string(m); }

UpdateMode parse_mode(const Json& j, const std::string& path) {
  const std::string s = get_string(j, path);
  if (s == "exact") return UpdateMode::ExactExpectation;
  if (s == "sampled") return UpdateMode::Sampled;
  throw ValidationError(path + ": expected \"exact\" or \"sampled\"");
}

std::string estimator_name(AdvantageEstimator e) {
  return e == AdvantageEstimator::Exact ? "exact" : "empirical_return";
}

AdvantageEstimator parse_estimator(const Json& j, const std::string& path) {
  const std::string s = get_string(j, path);
  if (s == "exact") return AdvantageEstimator::Exact;
  if (s == "empirical_return") return AdvantageEstimator::EmpiricalReturn;
  throw ValidationError(path + ": expected \"exact\" or \"empirical_return\"");
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fmt_real(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

bool logits_diverged(const SoftmaxPolicy& policy) {
  const Matrix& z = policy.logits();
  return !z.allFinite() || z.cwiseAbs().maxCoeff() > kLogitDivergenceBound;
}

Json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(what + ": " + e.what());
  }
}

}  // namespace

Json policy_to_json(const SoftmaxPolicy& policy) {
  return {{"num_states", policy.num_states()},
          {"num_actions", policy.num_actions()},
          {"logits", real_array(policy.logits().data(), policy.num_tokens())}};
}

SoftmaxPolicy policy_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, {"num_states", "num_actions", "logits"}, path);
  const auto s = get_count(require(j, "num_states", path), path + ".num_states");
  const auto a = get_count(require(j, "num_actions", path), path + ".num_actions");
  const std::vector<double> flat = get_real_array(require(j, "logits", path), path + ".logits");
  if (s == 0 || a == 0) throw ValidationError(path + ": dimensions must be >= 1");
  if (flat.size() != s * a) throw ValidationError(path + ".logits: expected num_states*num_actions entries");
  Matrix logits(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
  std::copy(flat.begin(), flat.end(), logits.data());
  try {
    return SoftmaxPolicy(std::move(logits));
  } catch (const DomainError& e) {
    throw ValidationError(path + ".logits: " + e.what());
  }
}

Json task_to_json(const TabularTask& task) {
  return {{"num_states", task.num_states},
          {"num_actions", task.num_actions},
          {"horizon", task.horizon},
          {"initial_dist", real_array(task.initial_dist.data(), task.num_states)},
          {"transition", real_array(task.transition.data(), task.transition.size())},
          {"reward", real_array(task.reward.data(), static_cast<std::size_t>(task.reward.size()))},
          {"reward_bound", num(task.reward_bound)}};
}

TabularTask task_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, {"num_states", "num_actions", "horizon", "initial_dist", "transition", "reward", "reward_bound"},
                 path);
  TabularTask t;
  t.num_states = get_count(require(j, "num_states", path), path + ".num_states");
  t.num_actions = get_count(require(j, "num_actions", path), path + ".num_actions");
  t.horizon = get_count(require(j, "horizon", path), path + ".horizon");
  const auto init = get_real_array(require(j, "initial_dist", path), path + ".initial_dist");
  t.initial_dist = Eigen::Map<const Vector>(init.data(), static_cast<Eigen::Index>(init.size()));
  t.transition = get_real_array(require(j, "transition", path), path + ".transition");
  const auto reward = get_real_array(require(j, "reward", path), path + ".reward");
  if (reward.size() != t.num_states * t.num_actions) {
    throw ValidationError(path + ".reward: expected num_states*num_actions entries");
  }
  t.reward.resize(static_cast<Eigen::Index>(t.num_states), static_cast<Eigen::Index>(t.num_actions));
  std::copy(reward.begin(), reward.end(), t.reward.data());
  if (j.contains("reward_bound")) t.reward_bound = get_real(j["reward_bound"], path + ".reward_bound");
  t.validate();
  return t;
}

TabularTask load_task(const fs::path& file) {
  return task_from_json(parse_json_text(read_text(file), file.string()), "task");
}

Json rule_to_json(const UpdateRule& rule) {
  Json j = {{"variant", to_string(rule.variant())}};
  if (const auto* reg = std::get_if<EntropyRegParams>(&rule.params)) {
    j["alpha"] = reg->alpha;
  } else if (const auto* clip = std::get_if<ClipCovParams>(&rule.params)) {
    j["clip_ratio"] = clip->clip_ratio;
    if (clip->omega_low) j["omega_low"] = num(*clip->omega_low);
    if (clip->omega_high) j["omega_high"] = num(*clip->omega_high);
  } else if (const auto* kl = std::get_if<KLCovParams>(&rule.params)) {
    j["select_fraction"] = kl->select_fraction;
    j["beta"] = kl->beta;
    if (kl->schedule.kind == BetaSchedule::Kind::Constant) {
      j["schedule"] = {{"kind", "constant"}};
    } else {
      j["schedule"] = {{"kind", "inverse_time"}, {"t_half", kl->schedule.t_half}};
    }
  }
  return j;
}

UpdateRule rule_from_json(const Json& j, double eta, UpdateMode mode, const std::string& path) {
  require_object(j, path);
  const std::string variant = get_string(require(j, "variant", path), path + ".variant");
  UpdateRule rule;
  if (variant == "vanilla") {
    reject_unknown(j, {"variant"}, path);
    rule = UpdateRule::vanilla(eta);
  } else if (variant == "entropy_reg") {
    reject_unknown(j, {"variant", "alpha"}, path);
    rule = UpdateRule::entropy_reg(eta, get_real(require(j, "alpha", path), path + ".alpha"));
  } else if (variant == "clip_cov") {
    reject_unknown(j, {"variant", "clip_ratio", "omega_low", "omega_high"}, path);
    ClipCovParams p;
    if (j.contains("clip_ratio")) p.clip_ratio = get_real(j["clip_ratio"], path + ".clip_ratio");
    if (j.contains("omega_low")) p.omega_low = get_real(j["omega_low"], path + ".omega_low");
    if (j.contains("omega_high")) p.omega_high = get_real(j["omega_high"], path + ".omega_high");
    rule = UpdateRule::clip_cov(eta, p.clip_ratio, p.omega_low, p.omega_high);
  } else if (variant == "kl_cov") {
    reject_unknown(j, {"variant", "select_fraction", "beta", "schedule"}, path);
    KLCovParams p;
    if (j.contains("select_fraction")) {
      p.select_fraction = get_real(j["select_fraction"], path + ".select_fraction");
    }
    if (j.contains("beta")) p.beta = get_real(j["beta"], path + ".beta");
    if (j.contains("schedule")) {
      const Json& s = j["schedule"];
      const std::string spath = path + ".schedule";
      std::string kind;
      if (s.is_string()) {
        kind = s.get<std::string>();
      } else {
        require_object(s, spath);
        reject_unknown(s, {"kind", "t_half"}, spath);
        kind = get_string(require(s, "kind", spath), spath + ".kind");
      }
      if (kind == "constant") {
        if (s.is_object() && s.contains("t_half")) {
          throw UnknownKeyError(spath + ".t_half: unknown key for a constant schedule");
        }
        p.schedule = BetaSchedule::constant();
      } else if (kind == "inverse_time") {
        if (!s.is_object()) throw ValidationError(spath + ".t_half: required field missing");
        p.schedule = BetaSchedule::inverse_time(get_real(require(s, "t_half", spath), spath + ".t_half"));
      } else {
        throw ValidationError(spath + ".kind: expected \"constant\" or \"inverse_time\"");
      }
    }
    rule = UpdateRule::kl_cov(eta, p.select_fraction, p.beta, p.schedule);
  } else {
    throw ValidationError(path + ".variant: expected vanilla, entropy_reg, clip_cov or kl_cov");
  }
  rule.mode = mode;
  rule.validate(path);
  return rule;
}

Json quantiles_to_json(const QuantileTable& t) {
  return {{"count", t.count},         {"mean", num(t.mean)},           {"max", num(t.max)},
          {"top10_mean", num(t.top10_mean)}, {"top1_mean", num(t.top1_mean)}, {"top01_mean", num(t.top01_mean)},
          {"positive_fraction", num(t.positive_fraction)}};
}

namespace {
QuantileTable quantiles_from_json(const Json& j) {
  const std::string p = "token_cov_summary";
  QuantileTable t;
  t.count = get_count(require(j, "count", p), p + ".count");
  t.mean = get_real(require(j, "mean", p), p + ".mean");
  t.max = get_real(require(j, "max", p), p + ".max");
  t.top10_mean = get_real(require(j, "top10_mean", p), p + ".top10_mean");
  t.top1_mean = get_real(require(j, "top1_mean", p), p + ".top1_mean");
  t.top01_mean = get_real(require(j, "top01_mean", p), p + ".top01_mean");
  t.positive_fraction = get_real(require(j, "positive_fraction", p), p + ".positive_fraction");
  return t;
}
}  // namespace

Json fit_to_json(const ExpFit& fit) {
  return {{"a", num(fit.a)}, {"b", num(fit.b)}, {"r_squared", num(fit.r_squared)}};
}

Json step_to_json(const StepDiagnostics& d) {
  return {{"type", "step"},
          {"step", d.step},
          {"avg_entropy", num(d.avg_entropy)},
          {"per_state_entropy", real_array(d.per_state_entropy.data(), d.per_state_entropy.size())},
          {"expected_reward", num(d.expected_reward)},
          {"grad_norm", num(d.grad_norm)},
          {"state_cov", real_array(d.state_cov.data(), d.state_cov.size())},
          {"cov_term", num(d.cov_term)},
          {"predicted_dH", num(d.predicted_dH)},
          {"predicted_dH_exact_form", num(d.predicted_dH_exact_form)},
          {"firstorder_dH", num(d.firstorder_dH)},
          {"actual_dH", num(d.actual_dH)},
          {"delta_s", num(d.delta_s)},
          {"beta_t", num(d.beta_t)},
          {"token_cov_summary", quantiles_to_json(d.token_cov_summary)},
          {"selected_clip", pairs_to_json(d.selected_clip)},
          {"selected_kl", pairs_to_json(d.selected_kl)}};
}

StepDiagnostics step_from_json(const Json& j) {
  const std::string p = "step";
  require_object(j, p);
  StepDiagnostics d;
  d.step = get_count(require(j, "step", p), "step.step");
  d.avg_entropy = get_real(require(j, "avg_entropy", p), "step.avg_entropy");
  d.per_state_entropy = get_real_array(require(j, "per_state_entropy", p), "step.per_state_entropy");
  d.expected_reward = get_real(require(j, "expected_reward", p), "step.expected_reward");
  d.grad_norm = get_real(require(j, "grad_norm", p), "step.grad_norm");
  d.state_cov = get_real_array(require(j, "state_cov", p), "step.state_cov");
  d.cov_term = get_real(require(j, "cov_term", p), "step.cov_term");
  d.predicted_dH = get_real(require(j, "predicted_dH", p), "step.predicted_dH");
  d.predicted_dH_exact_form = get_real(require(j, "predicted_dH_exact_form", p), "step.predicted_dH_exact_form");
  d.firstorder_dH = get_real(require(j, "firstorder_dH", p), "step.firstorder_dH");
  d.actual_dH = get_real(require(j, "actual_dH", p), "step.actual_dH");
  d.delta_s = get_real(require(j, "delta_s", p), "step.delta_s");
  d.beta_t = get_real(require(j, "beta_t", p), "step.beta_t");
  d.token_cov_summary = quantiles_from_json(require(j, "token_cov_summary", p));
  d.selected_clip = pairs_from_json(require(j, "selected_clip", p), "step.selected_clip");
  d.selected_kl = pairs_from_json(require(j, "selected_kl", p), "step.selected_kl");
  return d;
}

void ExperimentConfig::validate() const {
  task.validate();
  if (steps < 1) throw ValidationError("steps: must be >= 1");
  if (log_every < 1) throw ValidationError("log_every: must be >= 1");
  if (!std::isfinite(eta) || !(eta > 0.0)) throw ValidationError("eta: must be finite and > 0");
  if (mode == UpdateMode::Sampled && batch_size < 1) throw ValidationError("batch_size: must be >= 1");
  if (rule.learning_rate != eta) throw ValidationError("rule: learning rate differs from eta");
  if (rule.mode != mode) throw ValidationError("rule: mode differs from the config mode");
  rule.validate("rule");
  if (initial_policy && (initial_policy->num_states() != task.num_states ||
                         initial_policy->num_actions() != task.num_actions)) {
    throw ValidationError("initial_logits: shape does not match the task");
  }
}

ExperimentConfig config_from_json(const Json& j, const fs::path& base_dir) {
  require_object(j, "config");
  reject_unknown(j,
                 {"task", "rule", "steps", "eta", "mode", "batch_size", "rng_seed", "log_every", "output_path",
                  "initial_logits", "advantage_estimator"},
                 "");
  ExperimentConfig c;
  const Json& task = require(j, "task", "config");
  if (task.is_string()) {
    c.task_ref = task.get<std::string>();
    if (auto builtin = builtin_task(c.task_ref)) {
      c.task = *builtin;
    } else {
      const fs::path file = fs::path(c.task_ref).is_absolute() ? fs::path(c.task_ref) : base_dir / c.task_ref;
      if (!fs::exists(file)) throw ValidationError("task: not a builtin task name or an existing file: " + c.task_ref);
      c.task = load_task(file);
    }
  } else {
    c.task_ref = "inline";
    c.task = task_from_json(task, "task");
  }
  if (j.contains("eta")) c.eta = get_real(j["eta"], "eta");
  if (!std::isfinite(c.eta) || !(c.eta > 0.0)) throw ValidationError("eta: must be finite and > 0");
  if (j.contains("mode")) c.mode = parse_mode(j["mode"], "mode");
  c.rule = j.contains("rule") ? rule_from_json(j["rule"], c.eta, c.mode, "rule") : UpdateRule::vanilla(c.eta);
  c.rule.mode = c.mode;
  if (j.contains("steps")) c.steps = get_count(j["steps"], "steps");
  if (j.contains("batch_size")) c.batch_size = get_count(j["batch_size"], "batch_size");
  if (j.contains("rng_seed")) c.rng_seed = get_count(j["rng_seed"], "rng_seed");
  if (j.contains("log_every")) c.log_every = get_count(j["log_every"], "log_every");
  if (j.contains("output_path")) c.output_path = get_string(j["output_path"], "output_path");
  if (j.contains("initial_logits")) c.initial_policy = policy_from_json(j["initial_logits"], "initial_logits");
  if (j.contains("advantage_estimator")) {
    c.advantage_estimator = parse_estimator(j["advantage_estimator"], "advantage_estimator");
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& file) {
  const Json j = parse_json_text(read_text(file), file.string());
  return config_from_json(j, file.parent_path());
}

Json config_to_json(const ExperimentConfig& c) {
  Json j = {{"task", c.task_ref == "inline" ? task_to_json(c.task) : Json(c.task_ref)},
            {"rule", rule_to_json(c.rule)},
            {"steps", c.steps},
            {"eta", c.eta},
            {"mode", mode_name(c.mode)},
            {"batch_size", c.batch_size},
            {"rng_seed", c.rng_seed},
            {"log_every", c.log_every},
            {"output_path", c.output_path},
            {"advantage_estimator", estimator_name(c.advantage_estimator)}};
  if (c.initial_policy) j["initial_logits"] = policy_to_json(*c.initial_policy);
  return j;
}

std::string config_digest(const ExperimentConfig& config) {
  Json j = config_to_json(config);
  j["task"] = task_to_json(config.task);
  j.erase("output_path");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

TrainingTrace run_experiment(const ExperimentConfig& config) {
  config.validate();
  const TabularTask& task = config.task;
  const std::size_t S = task.num_states;
  const std::size_t A = task.num_actions;

  TrainingTrace trace;
  trace.config_digest = config_digest(config);
  SoftmaxPolicy policy = config.initial_policy ? *config.initial_policy : SoftmaxPolicy::uniform(S, A);
  SoftmaxPolicy previous = policy;

  for (std::size_t t = 0; t < config.steps; ++t) {
    try {
      const AdvantageTable table = evaluate_policy(task, policy);
      std::optional<SampledBatch> batch;
      if (config.mode == UpdateMode::Sampled) {
        batch = sample_batch(task, policy, config.batch_size, derive_seed(config.rng_seed, t),
                             config.advantage_estimator);
      }
      const RuleStep rs = compute_rule_step(config.rule, policy, previous, table, t, batch ? &*batch : nullptr,
                                            derive_aux_seed(config.rng_seed, t));
      const bool logged = t % config.log_every == 0;
      StepDiagnostics d;
      if (logged) {
        d.step = t;
        d.avg_entropy = average_entropy(policy, table.occupancy);
        d.expected_reward = task.initial_dist.dot(table.v_start);
        Matrix grad = policy.probabilities().cwiseProduct(table.advantages);
        for (Eigen::Index s = 0; s < grad.rows(); ++s) grad.row(s) *= table.visitation[s];
        d.grad_norm = grad.norm();
        d.beta_t = rs.beta_t;
        UpdateRule predict_rule = config.rule;
        if (auto* kl = std::get_if<KLCovParams>(&predict_rule.params)) kl->beta = rs.beta_t;
        const std::vector<std::size_t>* selected = nullptr;
        if (config.rule.variant() == RuleVariant::ClipCov) selected = &rs.update.selected_clip;
        if (config.rule.variant() == RuleVariant::KLCov) selected = &rs.update.selected_kl;
        for (std::size_t s = 0; s < S; ++s) {
          const double occ = table.occupancy[static_cast<Eigen::Index>(s)];
          d.per_state_entropy.push_back(state_entropy(policy, s));
          const Vector p = action_probabilities(policy, s);
          const Vector lp = log_probabilities(policy, s);
          const Vector pa = p.cwiseProduct(table.advantages.row(static_cast<Eigen::Index>(s)).transpose());
          const double mlp = p.dot(lp);
          const double mpa = p.dot(pa);
          const double cov = p.dot(((lp.array() - mlp) * (pa.array() - mpa)).matrix());
          d.state_cov.push_back(cov);
          d.cov_term += occ * cov;
          const EntropyPrediction pred =
              predicted_entropy_change(policy, table, predict_rule, s, &previous, selected);
          d.predicted_dH += occ * pred.predicted;
          d.predicted_dH_exact_form += occ * pred.exact_form;
          d.delta_s += occ * pred.delta;
          d.firstorder_dH += occ * firstorder_entropy_change(policy, rs.update, s);
        }
        d.token_cov_summary = token_cov_quantiles(all_token_covariances(policy, rs.base));
        d.selected_clip = to_pairs(rs.update.selected_clip, A);
        d.selected_kl = to_pairs(rs.update.selected_kl, A);
      }
      SoftmaxPolicy next = apply_update(policy, rs.update);
      if (logits_diverged(next)) {
        throw NumericError("logit magnitude exceeded " + fmt_real(kLogitDivergenceBound));
      }
      if (logged) {
        d.actual_dH = average_entropy(next, table.occupancy) - d.avg_entropy;
        trace.records.push_back(std::move(d));
      }
      previous = std::move(policy);
      policy = std::move(next);
      trace.steps_completed = t + 1;
    } catch (const NumericError& e) {
      trace.diverged = true;
      trace.divergence_step = t;
      trace.divergence_reason = e.what();
      break;
    }
  }
  trace.final_policy = policy;
  trace.previous_policy = previous;
  return trace;
}

double final_reward(const ExperimentConfig& config, const TrainingTrace& trace) {
  return expected_reward(config.task, trace.final_policy);
}

double final_entropy(const ExperimentConfig& config, const TrainingTrace& trace) {
  return average_entropy(trace.final_policy, evaluate_policy(config.task, trace.final_policy).occupancy);
}

std::vector<SweepPoint> run_sweep(const ExperimentConfig& base, const Json& grid) {
  if (!grid.is_object() || grid.empty()) throw ValidationError("grid: must be a non-empty object");
  std::vector<std::string> keys;
  std::vector<std::vector<Json>> values;
  for (const auto& [key, vals] : grid.items()) {
    if (!vals.is_array() || vals.empty()) throw ValidationError("grid." + key + ": must be a non-empty array");
    keys.push_back(key);
    values.emplace_back(vals.begin(), vals.end());
  }
  std::size_t total = 1;
  for (const auto& v : values) total *= v.size();

  Json base_json = config_to_json(base);
  if (!builtin_task(base.task_ref)) base_json["task"] = task_to_json(base.task);

  std::vector<SweepPoint> points;
  for (std::size_t i = 0; i < total; ++i) {
    SweepPoint pt;
    pt.index = i;
    pt.overrides = Json::object();
    Json j = base_json;
    std::size_t rem = i;
    for (std::size_t k = keys.size(); k-- > 0;) {
      const Json& v = values[k][rem % values[k].size()];
      rem /= values[k].size();
      pt.overrides[keys[k]] = v;
      Json* cursor = &j;
      std::stringstream ss(keys[k]);
      std::string part;
      std::vector<std::string> parts;
      while (std::getline(ss, part, '.')) parts.push_back(part);
      for (std::size_t p = 0; p + 1 < parts.size(); ++p) cursor = &(*cursor)[parts[p]];
      (*cursor)[parts.back()] = v;
    }
    try {
      pt.config = config_from_json(j);
      if (!pt.overrides.contains("task")) pt.config.task_ref = base.task_ref;
      if (!pt.overrides.contains("task") && !builtin_task(base.task_ref)) pt.config.task = base.task;
      pt.config.rng_seed = derive_seed(base.rng_seed, i);
      pt.trace = run_experiment(pt.config);
      pt.final_reward = final_reward(pt.config, pt.trace);
      pt.final_entropy = final_entropy(pt.config, pt.trace);
    } catch (const Error& e) {
      pt.error = e.what();
    }
    points.push_back(std::move(pt));
  }
  return points;
}

Json sweep_summary(const std::vector<SweepPoint>& points) {
  Json rows = Json::array();
  for (const SweepPoint& p : points) {
    Json row = {{"index", p.index}, {"overrides", p.overrides}};
    if (!p.error.empty()) {
      row["error"] = p.error;
    } else {
      row["rng_seed"] = p.config.rng_seed;
      row["config_digest"] = p.trace.config_digest;
      row["final_reward"] = num(p.final_reward);
      row["final_entropy"] = num(p.final_entropy);
      row["diverged"] = p.trace.diverged;
      row["steps_completed"] = p.trace.steps_completed;
    }
    rows.push_back(std::move(row));
  }
  return {{"points", rows}};
}

std::string trace_to_jsonl(const TrainingTrace& trace, const ExperimentConfig& config) {
  std::string out;
  out += Json({{"type", "header"}, {"config_digest", trace.config_digest}, {"config", config_to_json(config)}}).dump();
  out += '\n';
  for (const StepDiagnostics& d : trace.records) {
    out += step_to_json(d).dump();
    out += '\n';
  }
  Json fin = {{"type", "final"},
              {"final_policy", policy_to_json(trace.final_policy)},
              {"previous_policy", policy_to_json(trace.previous_policy)},
              {"steps_completed", trace.steps_completed},
              {"diverged", trace.diverged},
              {"divergence_step", trace.divergence_step ? Json(*trace.divergence_step) : Json(nullptr)},
              {"divergence_reason", trace.divergence_reason}};
  out += fin.dump();
  out += '\n';
  return out;
}

void write_jsonl(const TrainingTrace& trace, const ExperimentConfig& config, const fs::path& file) {
  write_text(file, trace_to_jsonl(trace, config));
}

LoadedTrace trace_from_jsonl(const std::string& text) {
  LoadedTrace out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  bool have_final = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const Json j = parse_json_text(line, "trace line " + std::to_string(lineno));
    const std::string type = j.is_object() && j.contains("type") ? get_string(j["type"], "type") : "";
    if (type == "header") {
      out.trace.config_digest = get_string(require(j, "config_digest", "header"), "header.config_digest");
      out.config = require(j, "config", "header");
      have_header = true;
    } else if (type == "step") {
      out.trace.records.push_back(step_from_json(j));
    } else if (type == "final") {
      out.trace.final_policy = policy_from_json(require(j, "final_policy", "final"), "final.final_policy");
      out.trace.previous_policy = policy_from_json(require(j, "previous_policy", "final"), "final.previous_policy");
      out.trace.steps_completed = get_count(require(j, "steps_completed", "final"), "final.steps_completed");
      out.trace.diverged = require(j, "diverged", "final").get<bool>();
      const Json& ds = require(j, "divergence_step", "final");
      if (!ds.is_null()) out.trace.divergence_step = get_count(ds, "final.divergence_step");
      out.trace.divergence_reason = get_string(require(j, "divergence_reason", "final"), "final.divergence_reason");
      have_final = true;
    } else {
      throw ParseError("trace line " + std::to_string(lineno) + ": unknown record type");
    }
  }
  if (!have_header || !have_final) throw ParseError("trace: missing header or final record");
  return out;
}

LoadedTrace read_jsonl(const fs::path& file) { return trace_from_jsonl(read_text(file)); }

std::string trace_to_csv(const TrainingTrace& trace) {
  std::string out = "step,entropy,reward,predicted_dH,actual_dH,grad_norm,state_cov\n";
  for (const StepDiagnostics& d : trace.records) {
    out += std::to_string(d.step) + ',' + fmt_real(d.avg_entropy) + ',' + fmt_real(d.expected_reward) + ',' +
           fmt_real(d.predicted_dH) + ',' + fmt_real(d.actual_dH) + ',' + fmt_real(d.grad_norm) + ',' +
           fmt_real(d.cov_term) + '\n';
  }
  return out;
}

Json trace_summary(const TrainingTrace& trace, const ExperimentConfig* config) {
  Json s = {{"config_digest", trace.config_digest},
            {"num_records", trace.records.size()},
            {"steps_completed", trace.steps_completed},
            {"diverged", trace.diverged}};
  if (!trace.records.empty()) {
    const StepDiagnostics& last = trace.records.back();
    s["last_logged"] = {{"step", last.step},
                        {"avg_entropy", num(last.avg_entropy)},
                        {"expected_reward", num(last.expected_reward)},
                        {"grad_norm", num(last.grad_norm)}};
  }
  if (trace.records.size() >= 8) {
    std::vector<std::pair<double, double>> pts;
    for (const StepDiagnostics& d : trace.records) pts.emplace_back(d.avg_entropy, d.expected_reward);
    try {
      s["exp_fit"] = fit_to_json(fit_exponential_law(pts));
    } catch (const ValidationError& e) {
      s["exp_fit"] = {{"a", nullptr}, {"b", nullptr}, {"r_squared", nullptr}, {"error", e.what()}};
    }
  }
  if (trace.records.size() >= 20) {
    const TraceStatistics stats = trace_statistics(trace.records);
    s["pearson_dH_vs_cov"] = stats.pearson_dH_vs_cov ? Json(*stats.pearson_dH_vs_cov) : Json(nullptr);
  }
  if (!trace.records.empty()) {
    s["token_cov_first_step"] = quantiles_to_json(trace.records.front().token_cov_summary);
    std::size_t positive = 0;
    for (const StepDiagnostics& d : trace.records) positive += d.delta_s > 0.0 ? 1 : 0;
    s["delta_positive_fraction"] = static_cast<double>(positive) / static_cast<double>(trace.records.size());
  }
  if (config != nullptr) {
    s["final"] = {{"expected_reward", num(final_reward(*config, trace))},
                  {"avg_entropy", num(final_entropy(*config, trace))}};
    if (!trace.records.empty()) {
      const ConvergenceReport conv =
          convergence_tracker(trace.records, config->eta, optimal_value_iteration(config->task));
      s["convergence"] = {{"rate_ok", conv.rate_ok},
                          {"loglog_slope", conv.loglog_slope ? num(*conv.loglog_slope) : Json(nullptr)},
                          {"final_min_sq_grad_norm", num(conv.min_sq_grad_norm_by_t.back())}};
    }
    try {
      const StabilityComparison cmp = stability_comparison(config->task, trace.final_policy, trace.previous_policy,
                                                           0.1, 0.01, 1.0, 0.01);
      s["stability"] = stability_to_json(cmp);
    } catch (const Error& e) {
      s["stability"] = {{"error", e.what()}};
    }
  }
  return s;
}

Json stability_to_json(const StabilityComparison& cmp) {
  const auto probe = [](const StabilityProbeResult& r) {
    return Json{{"rule", to_string(r.rule)},
                {"gamma", num(r.gamma)},
                {"epsilon", num(r.epsilon)},
                {"kl_at_gamma", num(r.kl_at_gamma)},
                {"kl_at_double", num(r.kl_at_double)}};
  };
  return {{"base", probe(cmp.base)},
          {"reg", probe(cmp.reg)},
          {"klcov", probe(cmp.klcov)},
          {"kappa_hat", num(cmp.kappa_hat)},
          {"reg_le_base", cmp.reg_le_base},
          {"klcov_rel_diff", num(cmp.klcov_rel_diff)},
          {"kl_set", cmp.kl_set}};
}

Json probe_stability(const ExperimentConfig& config, double epsilon) {
  double alpha = 0.1;
  double k = 0.01;
  double beta = 1.0;
  if (const auto* reg = std::get_if<EntropyRegParams>(&config.rule.params)) alpha = reg->alpha;
  if (const auto* kl = std::get_if<KLCovParams>(&config.rule.params)) {
    k = kl->select_fraction;
    beta = kl->beta;
  }
  const TrainingTrace trace = run_experiment(config);
  const StabilityComparison cmp =
      stability_comparison(config.task, trace.final_policy, trace.previous_policy, alpha, k, beta, epsilon);
  Json out = stability_to_json(cmp);
  out["config_digest"] = trace.config_digest;
  out["alpha"] = alpha;
  out["select_fraction"] = k;
  out["beta"] = beta;
  out["steps_completed"] = trace.steps_completed;
  return out;
}

std::vector<fs::path> emit_outputs(const TrainingTrace& trace, const ExperimentConfig& config, const fs::path& dir,
                                   const std::vector<OutputFormat>& formats) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  std::vector<fs::path> written;
  for (OutputFormat f : formats) {
    switch (f) {
      case OutputFormat::Jsonl:
        written.push_back(dir / "trace.jsonl");
        write_jsonl(trace, config, written.back());
        break;
      case OutputFormat::Csv:
        written.push_back(dir / "trace.csv");
        write_text(written.back(), trace_to_csv(trace));
        break;
      case OutputFormat::Summary:
        written.push_back(dir / "summary.json");
        write_text(written.back(), trace_summary(trace, &config).dump(2) + "\n");
        break;
    }
  }
  return written;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + file.string());
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace entlab
