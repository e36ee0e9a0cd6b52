// Clipped-surrogate PPO with GAE for continuous actions.
//
// The actor outputs the mean of a diagonal Gaussian over u with a learned,
// state-independent log standard deviation; the executed action is tanh(u).
// The probability ratio uses the Gaussian density of u, so the tanh Jacobian
// cancels. The critic has a linear output.
#ifndef PREDILECT_PPO_HPP_
#define PREDILECT_PPO_HPP_

#include <functional>
#include <span>
#include <vector>

#include "json.hpp"
#include "predilect/envs.hpp"
#include "predilect/nn.hpp"
#include "predilect/rng.hpp"

namespace predilect::ppo {

struct PpoConfig {
  std::vector<int> hidden{128, 128};
  double learning_rate = 3e-4;
  int batch_size = 128;
  double gamma = 0.99;
  int n_steps = 1024;
  int n_epochs = 10;
  double gae_lambda = 0.99;
  double clip_range = 0.2;
  double ent_coef = 5e-4;
  double vf_coef = 0.5;
  bool normalize_advantage = true;
  double max_grad_norm = 0.5;
  double init_log_std = 0.0;
};

void validate(const PpoConfig& config);

struct Policy {
  nn::MlpParameters actor;
  nn::MlpParameters critic;
  Eigen::VectorXd log_std;
  int obs_dim = 0;
  int act_dim = 0;

  bool operator==(const Policy& other) const;
};

// The actor output layer starts scaled by 0.01.
Policy make_policy(int obs_dim, int act_dim, const PpoConfig& config, Rng& rng);

// tanh of the Gaussian mean.
std::vector<double> mean_action(const Policy& policy, std::span<const double> obs);

struct ActionSample {
  std::vector<double> u;
  std::vector<double> action;  // tanh(u)
  double log_prob = 0.0;       // of u
};

ActionSample sample_action(const Policy& policy, std::span<const double> obs, Rng& rng);

double gaussian_log_prob(const Eigen::Ref<const Eigen::VectorXd>& mean,
                         const Eigen::Ref<const Eigen::VectorXd>& log_std,
                         const Eigen::Ref<const Eigen::VectorXd>& u);

// min(r A, clip(r, 1 - c, 1 + c) A) and its derivative with respect to
// log pi (r = exp(log pi - log pi_old)).
double clipped_surrogate(double ratio, double advantage, double clip);
double clipped_surrogate_grad(double ratio, double advantage, double clip);

// dones[t]: the episode ended after step t (terminated or truncated; the
// truncation bootstrap is folded into rewards by the caller).
void compute_gae(std::span<const double> rewards, std::span<const double> values,
                 std::span<const unsigned char> dones, double last_value,
                 double gamma, double lambda, std::vector<double>& advantages,
                 std::vector<double>& returns);

// Rewards for a batch: one column per step.
using RewardFunction =
    std::function<Eigen::VectorXd(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions)>;

struct TrainStats {
  long timesteps = 0;
  int rollouts = 0;
  int episodes_finished = 0;
  double mean_reward = 0.0;  // per step, from the reward function
  double policy_loss = 0.0;  // last epoch averages
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

class PpoTrainer {
 public:
  PpoTrainer(Policy policy, PpoConfig config, Rng rng);

  // Starts a fresh episode on `env` drawn from this trainer's stream.
  void reset_env(envs::Environment& env);
  // ceil(timesteps / n_steps) rollouts of n_steps each; rewards come from
  // `reward` only. Throws on a non-finite loss.
  TrainStats train(envs::Environment& env, const RewardFunction& reward, long timesteps);

  const Policy& policy() const { return policy_; }
  const PpoConfig& config() const { return config_; }

  nlohmann::json to_json() const;
  // Restores policy, optimizer and RNG state from to_json output.
  void restore(const nlohmann::json& j);

 private:
  void update(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& u,
              const std::vector<double>& old_log_prob,
              const std::vector<double>& advantages,
              const std::vector<double>& returns, TrainStats& stats);

  Policy policy_;
  PpoConfig config_;
  nn::AdamState actor_adam_;
  nn::AdamState critic_adam_;
  Eigen::VectorXd log_std_m_;
  Eigen::VectorXd log_std_v_;
  long log_std_step_ = 0;
  Rng rng_;
  StateVector obs_;
  bool need_reset_ = true;
};

nlohmann::json policy_to_json(const Policy& policy);
Policy policy_from_json(const nlohmann::json& j);

}  // namespace predilect::ppo

#endif  // PREDILECT_PPO_HPP_
