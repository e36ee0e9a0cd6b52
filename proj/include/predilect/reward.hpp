// Learned reward model and the preference + highlight objective.
//
//   P[s0 > s1] = exp(R0) / (exp(R0) + exp(R1)),   R = sum_t r(s_t, a_t)
//   L_ce       = mean_q -[(1 - w) log P[s0 > s1] + w log P[s1 > s0]]
//   G(h)       = sum_{l=0..L} lambda^l r(s_{j-l}, a_{j-l})
//   L_total    = L_ce - alpha_plus mean_{h in H+} G(h)
//                     + alpha_minus mean_{h in H-} G(h)
//
// Minimizing L_total raises the reward on positive highlights and lowers it
// on negative ones.
#ifndef PREDILECT_REWARD_HPP_
#define PREDILECT_REWARD_HPP_

#include <map>
#include <span>
#include <string>
#include <vector>

#include "predilect/core.hpp"
#include "predilect/nn.hpp"
#include "predilect/rng.hpp"

namespace predilect::reward {

struct RewardModel {
  nn::MlpParameters params;
  int state_dim = 0;
  int action_dim = 0;
};

// relu hidden layers, tanh output.
RewardModel make_reward_model(int state_dim, int action_dim,
                              const std::vector<int>& hidden, Rng& rng);

double reward_of(const RewardModel& model, std::span<const double> state,
                 std::span<const double> action);

// One column per state-action pair.
Eigen::MatrixXd segment_inputs(const RewardModel& model,
                               const TrajectorySegment& segment);
Eigen::VectorXd segment_rewards(const RewardModel& model,
                                const TrajectorySegment& segment);
double segment_return(const RewardModel& model,
                      const TrajectorySegment& segment);

// Stable two-way softmax of segment returns.
double preference_prob_from_returns(double return_0, double return_1);
double preference_prob(const RewardModel& model, const TrajectorySegment& s0,
                       const TrajectorySegment& s1);

using ShqSpan = std::span<const SentimentHighlightedQuery>;

double loss_ce(const RewardModel& model, ShqSpan batch);

double highlight_return(const RewardModel& model, const Highlight& h,
                        const TrajectorySegment& segment, double lambda);

struct RewardTrainConfig {
  double learning_rate = 3e-4;
  int batch_size = 128;
  int epochs_initial = 200;
  int epochs_update = 50;
  double alpha_plus = 0.5;
  double alpha_minus = 0.5;
  double lambda = 0.9;
  int highlight_length = 10;
  // False drops L_ce and keeps only the highlight terms.
  bool use_preference_loss = true;
  std::vector<int> hidden{256, 256, 256};
};

void validate(const RewardTrainConfig& config, int segment_length);

struct LossBreakdown {
  double ce = 0.0;
  double pos = 0.0;  // mean G over positive highlights (0 if none)
  double neg = 0.0;  // mean G over negative highlights (0 if none)
  double total = 0.0;
  int positive_count = 0;
  int negative_count = 0;
};

struct LossAndGradient {
  LossBreakdown loss;
  nn::MlpParameters gradient;
};

LossBreakdown loss_total_value(const RewardModel& model, ShqSpan batch,
                               const RewardTrainConfig& config);
LossAndGradient loss_total(const RewardModel& model, ShqSpan batch,
                           const RewardTrainConfig& config);

// d total / d r(s_t, a_t) for every pair of every segment in the batch,
// keyed by segment id.
std::map<std::string, Eigen::VectorXd> reward_sensitivities(
    const RewardModel& model, ShqSpan batch, const RewardTrainConfig& config);

enum class TrainPhase { initial, update };

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;  // averaged over the epoch's minibatches
};

// Owns the model, its optimizer state and the shuffling stream so that
// successive update phases continue one optimization run.
class RewardTrainer {
 public:
  RewardTrainer(RewardModel model, RewardTrainConfig config, Rng shuffle_rng);

  std::vector<EpochRecord> train(const std::vector<SentimentHighlightedQuery>& data,
                                 TrainPhase phase);

  const RewardModel& model() const { return model_; }
  const RewardTrainConfig& config() const { return config_; }
  const nn::AdamState& optimizer() const { return adam_; }
  Rng& shuffle_rng() { return rng_; }
  void restore(RewardModel model, nn::AdamState adam);

 private:
  RewardModel model_;
  RewardTrainConfig config_;
  nn::AdamState adam_;
  Rng rng_;
};

// Fraction of strict preferences whose direction the model predicts.
double preference_accuracy(const RewardModel& model, ShqSpan data);

// epoch,loss_ce,loss_pos,loss_neg,total where loss_pos = -alpha_plus * pos
// and loss_neg = alpha_minus * neg.
std::string history_csv(const std::vector<EpochRecord>& history,
                        const RewardTrainConfig& config);

}  // namespace predilect::reward

#endif  // PREDILECT_REWARD_HPP_
