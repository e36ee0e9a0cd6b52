#include "predilect/ppo.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace predilect::ppo {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

Eigen::VectorXd to_vector(std::span<const double> x) {
  return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
}

void check_obs(const Policy& p, std::span<const double> obs) {
  if (static_cast<int>(obs.size()) != p.obs_dim) {
    throw Error("policy expects observations of dimension " + std::to_string(p.obs_dim) +
                ", got " + std::to_string(obs.size()));
  }
}

Eigen::VectorXd json_vector(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> std_vector(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

}  // namespace

void validate(const PpoConfig& c) {
  if (!(c.clip_range > 0 && c.clip_range < 1)) throw Error("ppo clip range must lie in (0, 1)");
  if (!(c.gamma > 0 && c.gamma <= 1)) throw Error("ppo discount must lie in (0, 1]");
  if (!(c.gae_lambda >= 0 && c.gae_lambda <= 1)) throw Error("ppo gae lambda must lie in [0, 1]");
  if (c.n_steps < 1 || c.batch_size < 1 || c.n_epochs < 1) {
    throw Error("ppo n_steps, batch_size and n_epochs must be positive");
  }
  if (!(c.learning_rate > 0) || !(c.max_grad_norm > 0) || c.ent_coef < 0 || c.vf_coef < 0) {
    throw Error("invalid ppo coefficients");
  }
}

bool Policy::operator==(const Policy& o) const {
  return obs_dim == o.obs_dim && act_dim == o.act_dim && actor == o.actor &&
         critic == o.critic && log_std == o.log_std;
}

Policy make_policy(int obs_dim, int act_dim, const PpoConfig& config, Rng& rng) {
  Policy p;
  p.obs_dim = obs_dim;
  p.act_dim = act_dim;
  p.actor = nn::init_params(nn::mlp_specs(obs_dim, config.hidden, act_dim,
                                          nn::Activation::relu, nn::Activation::identity),
                            rng);
  // Near-zero initial means keep the first actions unsaturated.
  p.actor.layers.back().weight *= 0.01;
  p.critic = nn::init_params(nn::mlp_specs(obs_dim, config.hidden, 1, nn::Activation::relu,
                                           nn::Activation::identity),
                             rng);
  p.log_std = Eigen::VectorXd::Constant(act_dim, config.init_log_std);
  return p;
}

std::vector<double> mean_action(const Policy& policy, std::span<const double> obs) {
  check_obs(policy, obs);
  const Eigen::VectorXd mu = nn::forward(policy.actor, obs);
  std::vector<double> a(static_cast<std::size_t>(mu.size()));
  for (Eigen::Index i = 0; i < mu.size(); ++i) a[static_cast<std::size_t>(i)] = std::tanh(mu[i]);
  return a;
}

ActionSample sample_action(const Policy& policy, std::span<const double> obs, Rng& rng) {
  check_obs(policy, obs);
  const Eigen::VectorXd mu = nn::forward(policy.actor, obs);
  ActionSample s;
  Eigen::VectorXd u(mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    u[i] = mu[i] + std::exp(policy.log_std[i]) * rng.normal();
  }
  s.u = std_vector(u);
  s.action.resize(s.u.size());
  for (std::size_t i = 0; i < s.u.size(); ++i) s.action[i] = std::tanh(s.u[i]);
  s.log_prob = gaussian_log_prob(mu, policy.log_std, u);
  return s;
}

double gaussian_log_prob(const Eigen::Ref<const Eigen::VectorXd>& mean,
                         const Eigen::Ref<const Eigen::VectorXd>& log_std,
                         const Eigen::Ref<const Eigen::VectorXd>& u) {
  double lp = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double z = (u[i] - mean[i]) * std::exp(-log_std[i]);
    lp += -0.5 * z * z - log_std[i] - kHalfLog2Pi;
  }
  return lp;
}

double clipped_surrogate(double ratio, double advantage, double clip) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  return std::min(ratio * advantage, clipped * advantage);
}

double clipped_surrogate_grad(double ratio, double advantage, double clip) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  // The unclipped branch is selected (ties included): d(r A)/d log pi = r A.
  return ratio * advantage <= clipped * advantage ? ratio * advantage : 0.0;
}

void compute_gae(std::span<const double> rewards, std::span<const double> values,
                 std::span<const unsigned char> dones, double last_value, double gamma,
                 double lambda, std::vector<double>& advantages,
                 std::vector<double>& returns) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw Error("compute_gae: length mismatch");
  advantages.assign(n, 0.0);
  returns.assign(n, 0.0);
  double gae = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double not_done = dones[k] ? 0.0 : 1.0;
    const double next_value = k + 1 == n ? last_value : values[k + 1];
    const double delta = rewards[k] + gamma * next_value * not_done - values[k];
    gae = delta + gamma * lambda * not_done * gae;
    advantages[k] = gae;
    returns[k] = gae + values[k];
  }
}

PpoTrainer::PpoTrainer(Policy policy, PpoConfig config, Rng rng)
    : policy_(std::move(policy)),
      config_(std::move(config)),
      rng_(std::move(rng)) {
  validate(config_);
  const nn::AdamConfig adam{config_.learning_rate};
  actor_adam_ = nn::make_adam_state(policy_.actor, adam);
  critic_adam_ = nn::make_adam_state(policy_.critic, adam);
  log_std_m_ = Eigen::VectorXd::Zero(policy_.act_dim);
  log_std_v_ = Eigen::VectorXd::Zero(policy_.act_dim);
}

void PpoTrainer::reset_env(envs::Environment& env) {
  obs_ = env.reset(rng_);
  need_reset_ = false;
}

TrainStats PpoTrainer::train(envs::Environment& env, const RewardFunction& reward,
                             long timesteps) {
  if (env.observation_dim() != policy_.obs_dim || env.action_dim() != policy_.act_dim) {
    throw Error("ppo: environment dimensions do not match the policy");
  }
  if (need_reset_) reset_env(env);
  TrainStats stats;
  const int n = config_.n_steps;
  const int od = policy_.obs_dim, ad = policy_.act_dim;
  double reward_sum = 0.0;
  while (stats.timesteps < timesteps) {
    Eigen::MatrixXd obs(od, n), u(ad, n), act(ad, n);
    std::vector<double> log_prob(static_cast<std::size_t>(n));
    std::vector<unsigned char> dones(static_cast<std::size_t>(n), 0);
    std::vector<std::pair<int, StateVector>> truncations;
    for (int t = 0; t < n; ++t) {
      obs.col(t) = to_vector(obs_);
      const ActionSample s = sample_action(policy_, obs_, rng_);
      u.col(t) = to_vector(s.u);
      act.col(t) = to_vector(s.action);
      log_prob[static_cast<std::size_t>(t)] = s.log_prob;
      envs::Transition tr = env.step(s.action);
      if (tr.done) {
        dones[static_cast<std::size_t>(t)] = 1;
        ++stats.episodes_finished;
        if (tr.truncated) truncations.emplace_back(t, std::move(tr.observation));
        obs_ = env.reset(rng_);
      } else {
        obs_ = std::move(tr.observation);
      }
    }
    Eigen::VectorXd rewards = reward(obs, act);
    if (rewards.size() != n) throw Error("ppo: reward function returned the wrong length");
    reward_sum += rewards.sum();

    // Values of every rollout state, the bootstrap state and truncated
    // terminal states in one pass.
    Eigen::MatrixXd value_in(od, n + 1 + static_cast<Eigen::Index>(truncations.size()));
    value_in.leftCols(n) = obs;
    value_in.col(n) = to_vector(obs_);
    for (std::size_t k = 0; k < truncations.size(); ++k) {
      value_in.col(n + 1 + static_cast<Eigen::Index>(k)) = to_vector(truncations[k].second);
    }
    const Eigen::RowVectorXd v = nn::forward_batch(policy_.critic, value_in);
    for (std::size_t k = 0; k < truncations.size(); ++k) {
      rewards[truncations[k].first] +=
          config_.gamma * v[n + 1 + static_cast<Eigen::Index>(k)];
    }
    std::vector<double> values(v.data(), v.data() + n);
    std::vector<double> rw(rewards.data(), rewards.data() + n);
    std::vector<double> adv, ret;
    compute_gae(rw, values, dones, v[n], config_.gamma, config_.gae_lambda, adv, ret);
    update(obs, u, log_prob, adv, ret, stats);
    stats.timesteps += n;
    ++stats.rollouts;
  }
  stats.mean_reward = stats.timesteps > 0 ? reward_sum / static_cast<double>(stats.timesteps) : 0.0;
  return stats;
}

void PpoTrainer::update(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& u,
                        const std::vector<double>& old_log_prob,
                        const std::vector<double>& advantages,
                        const std::vector<double>& returns, TrainStats& stats) {
  const int n = static_cast<int>(obs.cols());
  const int od = policy_.obs_dim, ad = policy_.act_dim;
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int epoch = 0; epoch < config_.n_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_.below(i)]);
    double pl = 0, vl = 0, kl = 0, clipped = 0;
    int batches = 0;
    for (int start = 0; start < n; start += config_.batch_size) {
      const int b = std::min(config_.batch_size, n - start);
      Eigen::MatrixXd x(od, b), ub(ad, b);
      Eigen::VectorXd a(b), r(b), olp(b);
      for (int k = 0; k < b; ++k) {
        const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(start + k)]);
        x.col(k) = obs.col(static_cast<Eigen::Index>(idx));
        ub.col(k) = u.col(static_cast<Eigen::Index>(idx));
        a[k] = advantages[idx];
        r[k] = returns[idx];
        olp[k] = old_log_prob[idx];
      }
      if (config_.normalize_advantage && b > 1) {
        const double mean = a.mean();
        const double sd = std::sqrt((a.array() - mean).square().sum() / (b - 1));
        a = (a.array() - mean) / (sd + 1e-8);
      }

      nn::ForwardCache actor_cache, critic_cache;
      const Eigen::MatrixXd mu = nn::forward_batch(policy_.actor, x, &actor_cache);
      const Eigen::RowVectorXd v = nn::forward_batch(policy_.critic, x, &critic_cache);
      const Eigen::VectorXd inv_var = (-2.0 * policy_.log_std).array().exp();

      Eigen::MatrixXd d_mu(ad, b);
      Eigen::VectorXd d_log_std = Eigen::VectorXd::Constant(ad, -config_.ent_coef);
      double policy_loss = 0.0;
      for (int k = 0; k < b; ++k) {
        const double lp = gaussian_log_prob(mu.col(k), policy_.log_std, ub.col(k));
        const double ratio = std::exp(lp - olp[k]);
        policy_loss -= clipped_surrogate(ratio, a[k], config_.clip_range) / b;
        const double g = -clipped_surrogate_grad(ratio, a[k], config_.clip_range) / b;
        const Eigen::VectorXd diff = ub.col(k) - mu.col(k);
        d_mu.col(k) = g * diff.cwiseProduct(inv_var);
        d_log_std += g * (diff.array().square() * inv_var.array() - 1.0).matrix();
        kl += olp[k] - lp;
        if (std::abs(ratio - 1.0) > config_.clip_range) clipped += 1.0;
      }
      const Eigen::RowVectorXd verr = v - r.transpose();
      const double value_loss = verr.squaredNorm() / b;
      const double entropy = (policy_.log_std.array() + kHalfLog2Pi + 0.5).sum();
      const double loss = policy_loss + config_.vf_coef * value_loss - config_.ent_coef * entropy;
      if (!std::isfinite(loss)) {
        throw Error("ppo: non-finite loss (policy " + std::to_string(policy_loss) + ", value " +
                    std::to_string(value_loss) + ", entropy " + std::to_string(entropy) + ")");
      }
      nn::MlpParameters g_actor = nn::backward(policy_.actor, actor_cache, d_mu);
      nn::MlpParameters g_critic =
          nn::backward(policy_.critic, critic_cache, (2.0 * config_.vf_coef / b) * verr);

      const double norm = std::sqrt(nn::squared_norm(g_actor) + nn::squared_norm(g_critic) +
                                    d_log_std.squaredNorm());
      if (norm > config_.max_grad_norm) {
        const double s = config_.max_grad_norm / (norm + 1e-6);
        nn::scale(g_actor, s);
        nn::scale(g_critic, s);
        d_log_std *= s;
      }
      nn::adam_step(policy_.actor, g_actor, actor_adam_);
      nn::adam_step(policy_.critic, g_critic, critic_adam_);
      nn::adam_update(policy_.log_std, d_log_std, log_std_m_, log_std_v_, actor_adam_.config,
                      ++log_std_step_);
      pl += policy_loss;
      vl += value_loss;
      ++batches;
      stats.entropy = entropy;
    }
    stats.policy_loss = pl / batches;
    stats.value_loss = vl / batches;
    stats.approx_kl = kl / n;
    stats.clip_fraction = clipped / n;
  }
}

nlohmann::json policy_to_json(const Policy& p) {
  return {{"obs_dim", p.obs_dim},
          {"act_dim", p.act_dim},
          {"actor", nn::params_to_json(p.actor)},
          {"critic", nn::params_to_json(p.critic)},
          {"log_std", std_vector(p.log_std)}};
}

Policy policy_from_json(const nlohmann::json& j) {
  Policy p;
  p.obs_dim = j.at("obs_dim").get<int>();
  p.act_dim = j.at("act_dim").get<int>();
  p.actor = nn::params_from_json(j.at("actor"));
  p.critic = nn::params_from_json(j.at("critic"));
  p.log_std = json_vector(j.at("log_std"));
  if (p.log_std.size() != p.act_dim || p.actor.input_dim() != p.obs_dim ||
      p.actor.output_dim() != p.act_dim || p.critic.input_dim() != p.obs_dim) {
    throw Error("policy checkpoint has inconsistent dimensions");
  }
  return p;
}

nlohmann::json PpoTrainer::to_json() const {
  return {{"policy", policy_to_json(policy_)},
          {"actor_adam", nn::adam_to_json(actor_adam_)},
          {"critic_adam", nn::adam_to_json(critic_adam_)},
          {"log_std_m", std_vector(log_std_m_)},
          {"log_std_v", std_vector(log_std_v_)},
          {"log_std_step", log_std_step_},
          {"rng", rng_.save_state()}};
}

void PpoTrainer::restore(const nlohmann::json& j) {
  policy_ = policy_from_json(j.at("policy"));
  actor_adam_ = nn::adam_from_json(j.at("actor_adam"));
  critic_adam_ = nn::adam_from_json(j.at("critic_adam"));
  log_std_m_ = json_vector(j.at("log_std_m"));
  log_std_v_ = json_vector(j.at("log_std_v"));
  log_std_step_ = j.at("log_std_step").get<long>();
  rng_.restore_state(j.at("rng").get<std::string>());
  need_reset_ = true;
}

}  // namespace predilect::ppo
