#include "predilect/orchestrator.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "predilect/serialization.hpp"

// JSON mappings live in the namespaces of their types so ADL finds them.
namespace predilect::envs {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PointReachConfig, half_width, max_speed,
                                                max_accel, dt, episode_length, goal_radius,
                                                goal_margin, goal_bonus)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SocialNavConfig, corridor_length,
                                                corridor_width, human_count, human_speed_min,
                                                human_speed_max, human_radius, robot_radius,
                                                lidar_rays, lidar_range, gain_min, gain_max,
                                                length_scale, interaction_range, dt,
                                                episode_length, max_speed, turn_rate, accel,
                                                gain_rate, goal_radius, comfort_distance,
                                                w_goal, w_human, w_collision)
}  // namespace predilect::envs

namespace predilect::ppo {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PpoConfig, hidden, learning_rate, batch_size,
                                                gamma, n_steps, n_epochs, gae_lambda,
                                                clip_range, ent_coef, vf_coef,
                                                normalize_advantage, max_grad_norm,
                                                init_log_std)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainStats, timesteps, rollouts,
                                                episodes_finished, mean_reward, policy_loss,
                                                value_loss, entropy, approx_kl, clip_fraction)
}  // namespace predilect::ppo

namespace predilect::reward {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RewardTrainConfig, learning_rate, batch_size,
                                                epochs_initial, epochs_update, alpha_plus,
                                                alpha_minus, lambda, highlight_length,
                                                use_preference_loss, hidden)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossBreakdown, ce, pos, neg, total,
                                                positive_count, negative_count)
}  // namespace predilect::reward

namespace predilect::feedback {
void to_json(nlohmann::json& j, LlmProvider p) { j = std::string(to_string(p)); }
void from_json(const nlohmann::json& j, LlmProvider& p) {
  p = parse_llm_provider(j.get<std::string>());
}
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FeatureThreshold, feature, low, high)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OracleConfig, error_rate, thresholds,
                                                tie_tolerance)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LlmProviderConfig, provider, endpoint, model,
                                                credential_env, timeout_s, retries, backoff_s)
}  // namespace predilect::feedback

namespace predilect::orchestrator {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalResult, mean_return, stderr_return,
                                                episodes, mean_model_return, mean_gain,
                                                mean_gain_action)

using nlohmann::json;

// Unknown names throw instead of falling back to the first enumerator.
void to_json(nlohmann::json& j, Mode m) { j = std::string(to_string(m)); }
void from_json(const nlohmann::json& j, Mode& m) { m = parse_mode(j.get<std::string>()); }
void to_json(nlohmann::json& j, FeedbackSource s) { j = std::string(to_string(s)); }
void from_json(const nlohmann::json& j, FeedbackSource& s) {
  s = parse_feedback_source(j.get<std::string>());
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LoopConfig, env, total_timesteps,
                                                query_budget, initial_fraction,
                                                update_fraction, update_interval, single_batch,
                                                source, mode, segment_length,
                                                segments_per_query, eval_episodes, features,
                                                speed_high_is_positive,
                                                threshold_low_percentile,
                                                threshold_high_percentile, stop_after_phases)

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::predilect: return "predilect";
    case Mode::baseline: return "baseline";
    case Mode::highlights_only: return "highlights_only";
  }
  return "";
}

std::string_view to_string(FeedbackSource s) {
  switch (s) {
    case FeedbackSource::oracle: return "oracle";
    case FeedbackSource::llm: return "llm";
    case FeedbackSource::human: return "human";
  }
  return "";
}

Mode parse_mode(std::string_view text) {
  for (Mode m : {Mode::predilect, Mode::baseline, Mode::highlights_only}) {
    if (to_string(m) == text) return m;
  }
  throw Error("unknown mode '" + std::string(text) + "'");
}

FeedbackSource parse_feedback_source(std::string_view text) {
  for (FeedbackSource s : {FeedbackSource::oracle, FeedbackSource::llm, FeedbackSource::human}) {
    if (to_string(s) == text) return s;
  }
  throw Error("unknown feedback source '" + std::string(text) + "'");
}

void validate(const LoopConfig& c) {
  if (c.env != "pointreach" && c.env != "socialnav") {
    throw Error("unknown environment '" + c.env + "'");
  }
  if (c.query_budget < 10) throw Error("query budget must be at least 10");
  if (!(c.initial_fraction > 0 && c.initial_fraction <= 1 && c.update_fraction > 0 &&
        c.update_fraction <= 1)) {
    throw Error("query fractions must lie in (0, 1]");
  }
  if (c.total_timesteps < 0 || c.update_interval < 1) {
    throw Error("timestep budget must be >= 0 and the update interval positive");
  }
  if (c.segment_length < 2 || c.segments_per_query < 1 || c.eval_episodes < 1) {
    throw Error("invalid segment or evaluation settings");
  }
  if (!(c.threshold_low_percentile >= 0 && c.threshold_low_percentile <= c.threshold_high_percentile &&
        c.threshold_high_percentile <= 100)) {
    throw Error("threshold percentiles must satisfy 0 <= low <= high <= 100");
  }
}

namespace {

// Every key of `input` must exist in `reference` (recursively for objects).
void check_keys(const json& input, const json& reference, const std::string& path) {
  if (!input.is_object() || !reference.is_object()) return;
  for (const auto& [key, value] : input.items()) {
    if (!reference.contains(key)) {
      throw Error("unknown configuration key '" + path + key + "'");
    }
    check_keys(value, reference.at(key), path + key + ".");
  }
}

int fraction_of(int budget, double fraction) {
  return static_cast<int>(std::ceil(budget * fraction - 1e-9));
}

}  // namespace

json config_to_json(const ExperimentConfig& c) {
  return {{"loop", c.loop},       {"ppo", c.ppo},
          {"reward", c.reward},   {"oracle", c.oracle},
          {"llm", c.llm},         {"pointreach", c.pointreach},
          {"socialnav", c.socialnav}, {"seed", c.seed}};
}

ExperimentConfig config_from_json(const json& j, ExperimentConfig base) {
  if (!j.is_object()) throw Error("configuration must be a JSON object");
  json merged = config_to_json(base);
  check_keys(j, merged, "");
  merged.merge_patch(j);
  ExperimentConfig c;
  try {
    c.loop = merged.at("loop").get<LoopConfig>();
    c.ppo = merged.at("ppo").get<ppo::PpoConfig>();
    c.reward = merged.at("reward").get<reward::RewardTrainConfig>();
    c.oracle = merged.at("oracle").get<feedback::OracleConfig>();
    c.llm = merged.at("llm").get<feedback::LlmProviderConfig>();
    c.pointreach = merged.at("pointreach").get<envs::PointReachConfig>();
    c.socialnav = merged.at("socialnav").get<envs::SocialNavConfig>();
    c.seed = merged.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(std::string("invalid configuration: ") + e.what());
  }
  return c;
}

std::unique_ptr<envs::Environment> make_environment(const ExperimentConfig& c) {
  if (c.loop.env == "pointreach") return envs::make_pointreach(c.pointreach);
  if (c.loop.env == "socialnav") return envs::make_socialnav(c.socialnav);
  throw Error("unknown environment '" + c.loop.env + "'");
}

FeatureSet select_features(const std::string& env_name,
                           const std::vector<std::string>& requested) {
  FeatureSet all;
  if (env_name == "pointreach") {
    all = envs::pointreach_features();
  } else if (env_name == "socialnav") {
    all = envs::socialnav_features();
  } else {
    throw Error("unknown environment '" + env_name + "'");
  }
  if (requested.empty()) return all;
  FeatureSet out;
  for (const auto& name : requested) {
    auto it = std::find_if(all.begin(), all.end(),
                           [&](const FeatureDescriptor& f) { return f.name == name; });
    if (it == all.end()) {
      throw Error("environment " + env_name + " has no feature '" + name + "'");
    }
    out.push_back(*it);
  }
  validate_feature_set(out);
  return out;
}

// Evaluation ----------------------------------------------------------------------

EvalResult evaluate_policy(const ppo::Policy& policy, const envs::Environment& prototype,
                           int episodes, std::uint64_t seed,
                           const reward::RewardModel* model) {
  if (episodes < 1) throw Error("evaluate_policy: need at least one episode");
  auto env = prototype.clone();
  Rng rng = seeded_rng(seed, "eval");
  std::vector<double> returns;
  double model_total = 0.0, gain_total = 0.0, gain_action_total = 0.0;
  long steps = 0;
  for (int e = 0; e < episodes; ++e) {
    StateVector obs = env->reset(rng);
    double ret = 0.0;
    std::vector<double> inputs;
    int length = 0;
    for (;;) {
      const std::vector<double> a = ppo::mean_action(policy, obs);
      if (model) {
        inputs.insert(inputs.end(), obs.begin(), obs.end());
        inputs.insert(inputs.end(), a.begin(), a.end());
      }
      const envs::Transition tr = env->step(a);
      ret += env->last_true_reward();
      gain_total += env->frame().robot_gain;
      if (a.size() >= 3) gain_action_total += a[2];
      ++steps;
      ++length;
      if (tr.done) break;
      obs = tr.observation;
    }
    if (model) {
      const Eigen::Map<const Eigen::MatrixXd> x(inputs.data(), model->state_dim + model->action_dim,
                                               length);
      model_total += nn::forward_batch(model->params, x).sum();
    }
    returns.push_back(ret);
  }
  EvalResult r;
  r.episodes = episodes;
  double sum = 0.0;
  for (double x : returns) sum += x;
  r.mean_return = sum / episodes;
  double ss = 0.0;
  for (double x : returns) ss += (x - r.mean_return) * (x - r.mean_return);
  r.stderr_return = episodes > 1 ? std::sqrt(ss / (episodes - 1)) / std::sqrt(episodes) : 0.0;
  r.mean_model_return = model_total / episodes;
  r.mean_gain = gain_total / static_cast<double>(steps);
  r.mean_gain_action = gain_action_total / static_cast<double>(steps);
  return r;
}

// Segments ------------------------------------------------------------------------

SampledSegments sample_segments(const ppo::Policy& policy, envs::Environment& env, int count,
                                int length, Rng& rng, std::int64_t& episode_counter) {
  if (count < 0 || length < 1) throw Error("sample_segments: invalid count or length");
  SampledSegments out;
  StateVector obs = env.reset(rng);
  int step_in_episode = 0;
  auto advance = [&](const std::vector<double>& action) {
    envs::Transition tr = env.step(action);
    if (tr.done) {
      obs = env.reset(rng);
      ++episode_counter;
      step_in_episode = 0;
    } else {
      obs = std::move(tr.observation);
      ++step_in_episode;
    }
  };
  for (int k = 0; k < count; ++k) {
    const int gap = static_cast<int>(rng.below(static_cast<std::uint64_t>(length) + 1));
    out.gaps.push_back(gap);
    for (int g = 0; g < gap; ++g) advance(ppo::sample_action(policy, obs, rng).action);
    TrajectorySegment s;
    s.env = env.name();
    s.episode_meta = {episode_counter, step_in_episode};
    for (int t = 0; t < length; ++t) {
      const ppo::ActionSample a = ppo::sample_action(policy, obs, rng);
      s.pairs.push_back({obs, a.action});
      s.frames.push_back(env.frame());
      envs::Transition tr = env.step(a.action);
      s.true_rewards.push_back(env.last_true_reward());
      if (tr.done) {
        obs = env.reset(rng);
        ++episode_counter;
        step_in_episode = 0;
      } else {
        obs = std::move(tr.observation);
        ++step_in_episode;
      }
    }
    out.segments.push_back(finalize_segment(std::move(s)));
  }
  return out;
}

// Logging -------------------------------------------------------------------------

json record_to_json(const UpdateRecord& r) {
  return {{"phase", r.phase},
          {"timestep", r.timestep},
          {"eval", r.eval},
          {"queries_used", r.queries_used},
          {"queries_added", r.queries_added},
          {"positive_highlights", r.positive_highlights},
          {"negative_highlights", r.negative_highlights},
          {"reward_updated", r.reward_updated},
          {"reward_loss", r.reward_loss},
          {"ppo", r.ppo},
          {"llm_failures", r.llm_failures}};
}

namespace {

UpdateRecord record_from_json(const json& j) {
  UpdateRecord r;
  r.phase = j.at("phase").get<int>();
  r.timestep = j.at("timestep").get<long>();
  r.eval = j.at("eval").get<EvalResult>();
  r.queries_used = j.at("queries_used").get<int>();
  r.queries_added = j.at("queries_added").get<int>();
  r.positive_highlights = j.at("positive_highlights").get<int>();
  r.negative_highlights = j.at("negative_highlights").get<int>();
  r.reward_updated = j.at("reward_updated").get<bool>();
  r.reward_loss = j.at("reward_loss").get<reward::LossBreakdown>();
  r.ppo = j.at("ppo").get<ppo::TrainStats>();
  r.llm_failures = j.at("llm_failures").get<int>();
  return r;
}

}  // namespace

json records_to_json(const ExperimentLog& log) {
  json arr = json::array();
  for (const auto& r : log.updates) arr.push_back(record_to_json(r));
  return arr;
}

json log_to_json(const ExperimentLog& log) {
  return {{"config", log.config},
          {"seed", log.seed},
          {"thresholds", log.thresholds},
          {"updates", records_to_json(log)},
          {"status", log.status}};
}

ExperimentLog log_from_json(const json& j) {
  ExperimentLog log;
  log.config = j.at("config");
  log.seed = j.at("seed").get<std::uint64_t>();
  log.thresholds = j.at("thresholds").get<std::vector<feedback::FeatureThreshold>>();
  for (const auto& r : j.at("updates")) log.updates.push_back(record_from_json(r));
  log.status = j.at("status").get<std::string>();
  return log;
}

namespace {

std::string log_mode(const ExperimentLog& log) {
  return log.config.contains("loop") ? log.config["loop"].value("mode", std::string("?")) : "?";
}

}  // namespace

std::string curves_csv(const std::vector<ExperimentLog>& logs) {
  std::ostringstream out;
  out.precision(10);
  out << "timestep,true_return,stderr,mode,seed\n";
  for (const auto& log : logs) {
    for (const auto& r : log.updates) {
      out << r.timestep << ',' << r.eval.mean_return << ',' << r.eval.stderr_return << ','
          << log_mode(log) << ',' << log.seed << '\n';
    }
  }
  return out.str();
}

std::string force_csv(const std::vector<ExperimentLog>& logs) {
  std::ostringstream out;
  out.precision(10);
  out << "timestep,mean_gain,mean_gain_action,mode,seed\n";
  for (const auto& log : logs) {
    for (const auto& r : log.updates) {
      out << r.timestep << ',' << r.eval.mean_gain << ',' << r.eval.mean_gain_action << ','
          << log_mode(log) << ',' << log.seed << '\n';
    }
  }
  return out.str();
}

// Loop ----------------------------------------------------------------------------

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

json reward_model_to_json(const reward::RewardModel& m) {
  return {{"state_dim", m.state_dim},
          {"action_dim", m.action_dim},
          {"params", nn::params_to_json(m.params)}};
}

reward::RewardModel reward_model_from_json(const json& j) {
  reward::RewardModel m;
  m.state_dim = j.at("state_dim").get<int>();
  m.action_dim = j.at("action_dim").get<int>();
  m.params = nn::params_from_json(j.at("params"));
  return m;
}

// Config identity for resume; the stop point may differ between sessions.
json resume_key(const ExperimentConfig& c) {
  json j = config_to_json(c);
  j["loop"].erase("stop_after_phases");
  return j;
}

enum class Stage { feedback, train };

class Loop {
 public:
  Loop(const ExperimentConfig& config, const RunOptions& options)
      : cfg_(config),
        opt_(options),
        features_(select_features(config.loop.env, config.loop.features)),
        env_(make_environment(config)),
        sampler_env_(env_->clone()),
        trainer_(make_initial_policy(), config.ppo, seeded_rng(config.seed, "ppo")),
        reward_(make_initial_reward(), effective_reward_config(),
                seeded_rng(config.seed, "reward-shuffle")),
        sample_rng_(seeded_rng(config.seed, "segments")),
        query_rng_(seeded_rng(config.seed, "queries")),
        oracle_rng_(seeded_rng(config.seed, "oracle")),
        polarity_(envs::default_polarity(config.loop.env, config.loop.speed_high_is_positive)) {
    validate(cfg_.loop);
    reward::validate(cfg_.reward, cfg_.loop.segment_length);
    feedback::validate(cfg_.oracle);
    if (cfg_.loop.source == FeedbackSource::human && !opt_.human) {
      throw Error("human feedback mode needs a feedback channel");
    }
    oracle_ = cfg_.oracle;
    log_.config = config_to_json(cfg_);
    log_.seed = cfg_.seed;
    log_.thresholds = oracle_.thresholds;
    if (!opt_.out_dir.empty()) std::filesystem::create_directories(opt_.out_dir);
    if (opt_.resume && !opt_.out_dir.empty() &&
        std::filesystem::exists(opt_.out_dir / "checkpoint.json")) {
      load_checkpoint();
      resumed_ = true;
    }
  }

  RunResult run() {
    // A paused feedback stage restarts from the state saved before it began.
    if (!resumed_) save_checkpoint();
    try {
      while (true) {
        if (stage_ == Stage::feedback) {
          feedback_stage();
          stage_ = Stage::train;
          save_checkpoint();
        }
        if (timestep_ >= cfg_.loop.total_timesteps) {
          log_.status = "complete";
          break;
        }
        if (cfg_.loop.stop_after_phases > 0 && phase_ >= cfg_.loop.stop_after_phases) {
          log_.status = "paused";
          break;
        }
        train_stage();
        stage_ = Stage::feedback;
        save_checkpoint();
      }
      save_checkpoint();
    } catch (const FeedbackPending&) {
      log_.status = "paused";
      save_log();
    }
    return RunResult{log_, trainer_.policy(), reward_.model(), store_};
  }

 private:
  ppo::Policy make_initial_policy() const {
    Rng rng = seeded_rng(cfg_.seed, "policy-init");
    auto env = make_environment(cfg_);
    return ppo::make_policy(env->observation_dim(), env->action_dim(), cfg_.ppo, rng);
  }

  reward::RewardModel make_initial_reward() const {
    Rng rng = seeded_rng(cfg_.seed, "reward-init");
    auto env = make_environment(cfg_);
    return reward::make_reward_model(env->observation_dim(), env->action_dim(),
                                     cfg_.reward.hidden, rng);
  }

  reward::RewardTrainConfig effective_reward_config() const {
    reward::RewardTrainConfig r = cfg_.reward;
    if (cfg_.loop.mode == Mode::baseline) r.alpha_plus = r.alpha_minus = 0.0;
    if (cfg_.loop.mode == Mode::highlights_only) r.use_preference_loss = false;
    return r;
  }

  int queries_for_phase() const {
    const int budget = cfg_.loop.query_budget;
    if (phase_ == 0) {
      return cfg_.loop.single_batch ? budget : fraction_of(budget, cfg_.loop.initial_fraction);
    }
    // Labels after the last policy phase would never be used.
    if (cfg_.loop.single_batch || timestep_ >= cfg_.loop.total_timesteps) return 0;
    return std::min(fraction_of(budget, cfg_.loop.update_fraction), budget - queries_used_);
  }

  void feedback_stage() {
    UpdateRecord rec;
    rec.phase = phase_;
    const int q = queries_for_phase();
    if (q > 0) {
      const int pool = std::max(2, cfg_.loop.segments_per_query * q);
      SampledSegments sampled = sample_segments(trainer_.policy(), *sampler_env_, pool,
                                                cfg_.loop.segment_length, sample_rng_,
                                                episode_counter_);
      for (const auto& s : sampled.segments) store_.add_segment(s);
      if (oracle_.thresholds.empty()) {
        oracle_.thresholds = feedback::percentile_thresholds(
            sampled.segments, features_, cfg_.loop.threshold_low_percentile,
            cfg_.loop.threshold_high_percentile);
        log_.thresholds = oracle_.thresholds;
      }
      const auto pairs = feedback::sample_query_pairs(store_.segments(), q, query_rng_);
      std::vector<SentimentHighlightedQuery> shqs;
      if (cfg_.loop.source == FeedbackSource::human) {
        shqs = opt_.human->collect(pairs, phase_);
        if (shqs.size() != pairs.size()) {
          throw Error("human feedback returned " + std::to_string(shqs.size()) +
                      " records for " + std::to_string(pairs.size()) + " queries");
        }
      } else {
        for (const auto& [a, b] : pairs) shqs.push_back(synthetic_feedback(a, b, rec));
      }
      for (auto& s : shqs) {
        validate_shq(s, cfg_.reward.highlight_length);
        store_.add_shq(std::move(s));
      }
      queries_used_ += q;
      const auto history = reward_.train(
          store_.labeled(), phase_ == 0 ? reward::TrainPhase::initial : reward::TrainPhase::update);
      if (!history.empty()) last_loss_ = history.back().loss;
      rec.reward_updated = true;
    }
    rec.queries_added = q;
    finish_record(rec);
  }

  SentimentHighlightedQuery synthetic_feedback(const SegmentPtr& a, const SegmentPtr& b,
                                               UpdateRecord& rec) {
    const PreferenceLabel w = feedback::oracle_preference(*a, *b, oracle_, oracle_rng_);
    const TrajectorySegment* pref = w.value() == 0.0 ? a.get() : w.value() == 1.0 ? b.get() : nullptr;
    if (!pref) return feedback::assemble_shq(a, b, w, std::nullopt, std::nullopt, features_,
                                             cfg_.reward.highlight_length);
    const feedback::LlmResponse oracle = feedback::oracle_response(
        envs::map_segment_to_metrics(*pref, features_), features_, polarity_, oracle_);
    if (cfg_.loop.source == FeedbackSource::oracle) {
      return feedback::assemble_shq(a, b, w, std::nullopt, oracle, features_,
                                    cfg_.reward.highlight_length);
    }
    const std::string text = feedback::synthesize_explanation(oracle.triplets);
    const feedback::LlmFeedback fb = feedback::llm_feedback(
        text, features_, feedback::task_description(cfg_.loop.env), cfg_.llm);
    if (!fb.error.empty()) ++rec.llm_failures;
    return feedback::assemble_shq(a, b, w, text.empty() ? std::nullopt : std::optional(text),
                                  fb.response, features_, cfg_.reward.highlight_length);
  }

  void train_stage() {
    trainer_.reset_env(*env_);
    const long steps = std::min(cfg_.loop.update_interval, cfg_.loop.total_timesteps - timestep_);
    const reward::RewardModel& model = reward_.model();
    const ppo::RewardFunction rf = [&model](const Eigen::MatrixXd& s, const Eigen::MatrixXd& a) {
      Eigen::MatrixXd x(s.rows() + a.rows(), s.cols());
      x.topRows(s.rows()) = s;
      x.bottomRows(a.rows()) = a;
      return Eigen::VectorXd(nn::forward_batch(model.params, x).row(0).transpose());
    };
    last_ppo_ = trainer_.train(*env_, rf, steps);
    timestep_ += last_ppo_.timesteps;
    ++phase_;
  }

  void finish_record(UpdateRecord& rec) {
    rec.timestep = timestep_;
    rec.queries_used = queries_used_;
    for (const auto& s : store_.labeled()) {
      rec.positive_highlights += static_cast<int>(s.positives.size());
      rec.negative_highlights += static_cast<int>(s.negatives.size());
    }
    rec.reward_loss = last_loss_;
    rec.ppo = last_ppo_;
    rec.eval = evaluate_policy(trainer_.policy(), *env_, cfg_.loop.eval_episodes, cfg_.seed,
                               &reward_.model());
    log_.updates.push_back(rec);
  }

  void save_checkpoint() {
    if (opt_.out_dir.empty()) return;
    save_dataset(store_, opt_.out_dir / "dataset");
    json ck = {
        {"version", 1},
        {"resume_key", resume_key(cfg_)},
        {"stage", stage_ == Stage::feedback ? "feedback" : "train"},
        {"phase", phase_},
        {"timestep", timestep_},
        {"queries_used", queries_used_},
        {"episode_counter", episode_counter_},
        {"thresholds", oracle_.thresholds},
        {"last_loss", last_loss_},
        {"last_ppo", last_ppo_},
        {"ppo", trainer_.to_json()},
        {"reward_model", reward_model_to_json(reward_.model())},
        {"reward_adam", nn::adam_to_json(reward_.optimizer())},
        {"rng",
         {{"reward_shuffle", reward_.shuffle_rng().save_state()},
          {"segments", sample_rng_.save_state()},
          {"queries", query_rng_.save_state()},
          {"oracle", oracle_rng_.save_state()}}},
        {"log", log_to_json(log_)}};
    write_file(opt_.out_dir / "checkpoint.json", ck.dump());
    save_log();
    write_file(opt_.out_dir / "policy.json", ppo::policy_to_json(trainer_.policy()).dump());
    write_file(opt_.out_dir / "reward_model.json", reward_model_to_json(reward_.model()).dump());
  }

  void save_log() {
    if (opt_.out_dir.empty()) return;
    write_file(opt_.out_dir / "log.json", log_to_json(log_).dump(2));
  }

  void load_checkpoint() {
    const json ck = read_json_file(opt_.out_dir / "checkpoint.json");
    if (ck.at("version").get<int>() != 1) throw Error("unsupported checkpoint version");
    if (ck.at("resume_key") != resume_key(cfg_)) {
      throw Error("checkpoint in " + opt_.out_dir.string() + " was written by a different configuration");
    }
    store_ = load_dataset(opt_.out_dir / "dataset");
    stage_ = ck.at("stage").get<std::string>() == "feedback" ? Stage::feedback : Stage::train;
    phase_ = ck.at("phase").get<int>();
    timestep_ = ck.at("timestep").get<long>();
    queries_used_ = ck.at("queries_used").get<int>();
    episode_counter_ = ck.at("episode_counter").get<std::int64_t>();
    oracle_.thresholds = ck.at("thresholds").get<std::vector<feedback::FeatureThreshold>>();
    last_loss_ = ck.at("last_loss").get<reward::LossBreakdown>();
    last_ppo_ = ck.at("last_ppo").get<ppo::TrainStats>();
    trainer_.restore(ck.at("ppo"));
    reward_.restore(reward_model_from_json(ck.at("reward_model")),
                    nn::adam_from_json(ck.at("reward_adam")));
    const json& rng = ck.at("rng");
    reward_.shuffle_rng().restore_state(rng.at("reward_shuffle").get<std::string>());
    sample_rng_.restore_state(rng.at("segments").get<std::string>());
    query_rng_.restore_state(rng.at("queries").get<std::string>());
    oracle_rng_.restore_state(rng.at("oracle").get<std::string>());
    log_ = log_from_json(ck.at("log"));
    log_.config = config_to_json(cfg_);
    log_.status = "running";
  }

  ExperimentConfig cfg_;
  RunOptions opt_;
  FeatureSet features_;
  std::unique_ptr<envs::Environment> env_;
  std::unique_ptr<envs::Environment> sampler_env_;
  ppo::PpoTrainer trainer_;
  reward::RewardTrainer reward_;
  Rng sample_rng_;
  Rng query_rng_;
  Rng oracle_rng_;
  envs::PolarityTable polarity_;
  feedback::OracleConfig oracle_;
  DatasetStore store_;
  ExperimentLog log_;
  Stage stage_ = Stage::feedback;
  bool resumed_ = false;
  int phase_ = 0;
  long timestep_ = 0;
  int queries_used_ = 0;
  std::int64_t episode_counter_ = 0;
  reward::LossBreakdown last_loss_;
  ppo::TrainStats last_ppo_;
};

}  // namespace

RunResult run_predilect(const ExperimentConfig& config, const RunOptions& options) {
  Loop loop(config, options);
  return loop.run();
}

}  // namespace predilect::orchestrator
