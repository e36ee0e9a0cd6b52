// The outer learning loop: train the policy on the learned reward, sample
// segments, collect feedback, retrain the reward; plus evaluation, logging
// and checkpoint/resume.
#ifndef PREDILECT_ORCHESTRATOR_HPP_
#define PREDILECT_ORCHESTRATOR_HPP_

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "predilect/dataset.hpp"
#include "predilect/envs.hpp"
#include "predilect/feedback.hpp"
#include "predilect/ppo.hpp"
#include "predilect/reward.hpp"

namespace predilect::orchestrator {

enum class Mode { predilect, baseline, highlights_only };
enum class FeedbackSource { oracle, llm, human };

std::string_view to_string(Mode m);
std::string_view to_string(FeedbackSource s);
Mode parse_mode(std::string_view text);
FeedbackSource parse_feedback_source(std::string_view text);

struct LoopConfig {
  std::string env = "pointreach";
  long total_timesteps = 500000;
  int query_budget = 100;
  double initial_fraction = 0.1;
  double update_fraction = 0.1;
  long update_interval = 20000;
  // All queries before any policy training, one reward fit; evaluation
  // still happens every update_interval timesteps.
  bool single_batch = false;
  FeedbackSource source = FeedbackSource::oracle;
  Mode mode = Mode::predilect;
  int segment_length = 50;
  int segments_per_query = 2;
  int eval_episodes = 10;
  std::vector<std::string> features;  // empty: every feature of the env
  bool speed_high_is_positive = true;
  double threshold_low_percentile = 10.0;
  double threshold_high_percentile = 90.0;
  // Stop (with a checkpoint) after this many policy phases; 0 = run to the end.
  int stop_after_phases = 0;
};

void validate(const LoopConfig& config);

struct ExperimentConfig {
  LoopConfig loop;
  ppo::PpoConfig ppo;
  reward::RewardTrainConfig reward;
  feedback::OracleConfig oracle;
  feedback::LlmProviderConfig llm;
  envs::PointReachConfig pointreach;
  envs::SocialNavConfig socialnav;
  std::uint64_t seed = 0;
};

nlohmann::json config_to_json(const ExperimentConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j,
                                  ExperimentConfig base = {});

std::unique_ptr<envs::Environment> make_environment(const ExperimentConfig& config);
// The configured subset of the environment's features, in configured order.
FeatureSet select_features(const std::string& env_name,
                           const std::vector<std::string>& requested);

// Evaluation ----------------------------------------------------------------------

struct EvalResult {
  double mean_return = 0.0;
  double stderr_return = 0.0;  // over episodes
  int episodes = 0;
  double mean_model_return = 0.0;  // 0 without a reward model
  double mean_gain = 0.0;          // social-force gain state, per step
  double mean_gain_action = 0.0;   // gain-rate action component, per step
};

// Deterministic: mean actions, start states drawn from (seed, "eval").
EvalResult evaluate_policy(const ppo::Policy& policy, const envs::Environment& prototype,
                           int episodes, std::uint64_t seed,
                           const reward::RewardModel* model = nullptr);

// Segments ------------------------------------------------------------------------

struct SampledSegments {
  std::vector<SegmentPtr> segments;
  std::vector<int> gaps;  // steps skipped before each segment
};

// Cuts `count` segments of `length` steps from one stochastic rollout,
// skipping a uniform 0..length steps before each; episodes that end inside a
// segment restart in place. Frames and true rewards are recorded for the
// oracle.
SampledSegments sample_segments(const ppo::Policy& policy, envs::Environment& env,
                                int count, int length, Rng& rng,
                                std::int64_t& episode_counter);

// Logging -------------------------------------------------------------------------

struct UpdateRecord {
  int phase = 0;
  long timestep = 0;
  EvalResult eval;
  int queries_used = 0;
  int queries_added = 0;  // labeled since the previous record
  int positive_highlights = 0;
  int negative_highlights = 0;
  bool reward_updated = false;
  reward::LossBreakdown reward_loss;  // last epoch of the latest reward fit
  ppo::TrainStats ppo;
  int llm_failures = 0;
};

struct ExperimentLog {
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<feedback::FeatureThreshold> thresholds;
  std::vector<UpdateRecord> updates;
  std::string status = "running";  // running, complete, paused
};

nlohmann::json record_to_json(const UpdateRecord& r);
// The per-update records only; two runs agree on these iff they learned
// identically.
nlohmann::json records_to_json(const ExperimentLog& log);
nlohmann::json log_to_json(const ExperimentLog& log);
ExperimentLog log_from_json(const nlohmann::json& j);

// timestep,true_return,stderr,mode,seed
std::string curves_csv(const std::vector<ExperimentLog>& logs);
// timestep,mean_gain,mean_gain_action,mode,seed
std::string force_csv(const std::vector<ExperimentLog>& logs);

// Loop ----------------------------------------------------------------------------

// Raised by a human feedback channel that cannot complete the phase yet.
class FeedbackPending : public Error {
 public:
  using Error::Error;
};

// Blocking source of labeled queries for human mode.
class HumanFeedback {
 public:
  virtual ~HumanFeedback() = default;
  // Returns one record per pair, in order. May throw FeedbackPending.
  virtual std::vector<SentimentHighlightedQuery> collect(
      const std::vector<feedback::QueryPair>& pairs, int phase) = 0;
};

struct RunOptions {
  // Checkpoints, dataset and log go here; empty keeps everything in memory.
  std::filesystem::path out_dir;
  bool resume = false;
  HumanFeedback* human = nullptr;
};

struct RunResult {
  ExperimentLog log;
  ppo::Policy policy;
  reward::RewardModel reward_model;
  DatasetStore dataset;
};

RunResult run_predilect(const ExperimentConfig& config, const RunOptions& options = {});

}  // namespace predilect::orchestrator

#endif  // PREDILECT_ORCHESTRATOR_HPP_
