#include "predilect/reward.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>

namespace predilect::reward {

namespace {

constexpr double kLogClamp = -27.631021115928547;  // log(1e-12)

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Segments of a batch packed side by side into one input matrix.
struct PackedBatch {
  std::unordered_map<const TrajectorySegment*, Eigen::Index> offset;
  Eigen::MatrixXd inputs;
};

PackedBatch pack(const RewardModel& model, ShqSpan batch) {
  PackedBatch packed;
  std::vector<const TrajectorySegment*> order;
  Eigen::Index cols = 0;
  for (const auto& q : batch) {
    for (const TrajectorySegment* s : {q.segment_a.get(), q.segment_b.get()}) {
      if (packed.offset.emplace(s, cols).second) {
        order.push_back(s);
        cols += static_cast<Eigen::Index>(s->size());
      }
    }
  }
  packed.inputs.resize(model.state_dim + model.action_dim, cols);
  for (const TrajectorySegment* s : order) {
    packed.inputs.middleCols(packed.offset[s], static_cast<Eigen::Index>(s->size())) =
        segment_inputs(model, *s);
  }
  return packed;
}

void check_highlight(const Highlight& h, const TrajectorySegment& segment) {
  if (h.start_index < 0 || h.end_index < h.start_index ||
      h.end_index >= static_cast<int>(segment.size())) {
    throw Error("highlight [" + std::to_string(h.start_index) + ", " +
                std::to_string(h.end_index) + "] outside segment of length " +
                std::to_string(segment.size()));
  }
}

// Shared by the value-only and gradient paths. `coeff`, when given, receives
// d total / d r for every packed column.
LossBreakdown evaluate(const PackedBatch& packed, const Eigen::RowVectorXd& r,
                       ShqSpan batch, const RewardTrainConfig& config,
                       Eigen::RowVectorXd* coeff) {
  if (batch.empty()) throw Error("loss on an empty batch");
  LossBreakdown out;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  for (const auto& q : batch) {
    const Eigen::Index oa = packed.offset.at(q.segment_a.get());
    const Eigen::Index ob = packed.offset.at(q.segment_b.get());
    const auto na = static_cast<Eigen::Index>(q.segment_a->size());
    const auto nb = static_cast<Eigen::Index>(q.segment_b->size());
    const double r0 = r.segment(oa, na).sum();
    const double r1 = r.segment(ob, nb).sum();
    const double d = r1 - r0;
    const double w = q.w.value();
    const double log_p0 = -softplus(d);
    const double log_p1 = -softplus(-d);
    const bool clamp0 = log_p0 < kLogClamp;
    const bool clamp1 = log_p1 < kLogClamp;
    out.ce -= ((1.0 - w) * (clamp0 ? kLogClamp : log_p0) +
               w * (clamp1 ? kLogClamp : log_p1)) * inv_batch;
    if (coeff && config.use_preference_loss) {
      const double dd = (1.0 - w) * (clamp0 ? 0.0 : sigmoid(d)) -
                        w * (clamp1 ? 0.0 : sigmoid(-d));
      coeff->segment(ob, nb).array() += dd * inv_batch;
      coeff->segment(oa, na).array() -= dd * inv_batch;
    }
  }

  auto highlight_terms = [&](bool positive) {
    int count = 0;
    for (const auto& q : batch) count += static_cast<int>((positive ? q.positives : q.negatives).size());
    double sum = 0.0;
    if (count == 0) return std::pair{0.0, 0};
    const double alpha = positive ? config.alpha_plus : config.alpha_minus;
    // d total / d G(h) for each highlight.
    const double scale = (positive ? -alpha : alpha) / count;
    for (const auto& q : batch) {
      const TrajectorySegment* pref = q.preferred();
      const auto& set = positive ? q.positives : q.negatives;
      if (set.empty()) continue;
      if (!pref) throw Error("highlights on an equal-preference query");
      const Eigen::Index base = packed.offset.at(pref);
      for (const auto& h : set) {
        if (h.segment_id != pref->segment_id) {
          throw Error("highlight does not reference the preferred segment");
        }
        check_highlight(h, *pref);
        double discount = 1.0;
        for (int idx = h.end_index; idx >= h.start_index; --idx) {
          sum += discount * r[base + idx];
          if (coeff && alpha != 0.0) (*coeff)[base + idx] += scale * discount;
          discount *= config.lambda;
        }
      }
    }
    return std::pair{sum / count, count};
  };
  std::tie(out.pos, out.positive_count) = highlight_terms(true);
  std::tie(out.neg, out.negative_count) = highlight_terms(false);

  out.total = (config.use_preference_loss ? out.ce : 0.0) -
              config.alpha_plus * out.pos + config.alpha_minus * out.neg;
  return out;
}

}  // namespace

RewardModel make_reward_model(int state_dim, int action_dim,
                              const std::vector<int>& hidden, Rng& rng) {
  RewardModel m;
  m.state_dim = state_dim;
  m.action_dim = action_dim;
  m.params = nn::init_params(
      nn::mlp_specs(state_dim + action_dim, hidden, 1, nn::Activation::relu,
                    nn::Activation::tanh),
      rng);
  return m;
}

double reward_of(const RewardModel& model, std::span<const double> state,
                 std::span<const double> action) {
  if (static_cast<int>(state.size()) != model.state_dim ||
      static_cast<int>(action.size()) != model.action_dim) {
    throw Error("reward_of: expected state/action dims " +
                std::to_string(model.state_dim) + "/" +
                std::to_string(model.action_dim));
  }
  std::vector<double> x(state.begin(), state.end());
  x.insert(x.end(), action.begin(), action.end());
  return nn::forward(model.params, x)[0];
}

Eigen::MatrixXd segment_inputs(const RewardModel& model,
                               const TrajectorySegment& segment) {
  const int dim = model.state_dim + model.action_dim;
  Eigen::MatrixXd x(dim, static_cast<Eigen::Index>(segment.size()));
  for (std::size_t t = 0; t < segment.size(); ++t) {
    const auto& p = segment.pairs[t];
    if (static_cast<int>(p.state.size()) != model.state_dim ||
        static_cast<int>(p.action.size()) != model.action_dim) {
      throw Error("segment " + segment.segment_id +
                  " does not match the reward model dimensions");
    }
    const auto col = static_cast<Eigen::Index>(t);
    for (int i = 0; i < model.state_dim; ++i) x(i, col) = p.state[static_cast<std::size_t>(i)];
    for (int i = 0; i < model.action_dim; ++i) {
      x(model.state_dim + i, col) = p.action[static_cast<std::size_t>(i)];
    }
  }
  return x;
}

Eigen::VectorXd segment_rewards(const RewardModel& model,
                                const TrajectorySegment& segment) {
  return nn::forward_batch(model.params, segment_inputs(model, segment)).row(0).transpose();
}

double segment_return(const RewardModel& model,
                      const TrajectorySegment& segment) {
  return segment_rewards(model, segment).sum();
}

double preference_prob_from_returns(double return_0, double return_1) {
  const double m = std::max(return_0, return_1);
  const double e0 = std::exp(return_0 - m);
  const double e1 = std::exp(return_1 - m);
  return e0 / (e0 + e1);
}

double preference_prob(const RewardModel& model, const TrajectorySegment& s0,
                       const TrajectorySegment& s1) {
  return preference_prob_from_returns(segment_return(model, s0),
                                      segment_return(model, s1));
}

double loss_ce(const RewardModel& model, ShqSpan batch) {
  RewardTrainConfig config;
  config.alpha_plus = config.alpha_minus = 0.0;
  return loss_total_value(model, batch, config).ce;
}

double highlight_return(const RewardModel& model, const Highlight& h,
                        const TrajectorySegment& segment, double lambda) {
  check_highlight(h, segment);
  const Eigen::VectorXd r = segment_rewards(model, segment);
  double sum = 0.0;
  double discount = 1.0;
  for (int idx = h.end_index; idx >= h.start_index; --idx) {
    sum += discount * r[idx];
    discount *= lambda;
  }
  return sum;
}

void validate(const RewardTrainConfig& c, int segment_length) {
  if (!(c.learning_rate > 0 && c.batch_size > 0 && c.epochs_initial >= 0 &&
        c.epochs_update >= 0 && c.alpha_plus >= 0 && c.alpha_minus >= 0 &&
        c.lambda > 0 && c.lambda <= 1 && c.highlight_length >= 1 &&
        c.highlight_length < segment_length)) {
    throw Error("invalid reward training configuration");
  }
}

LossBreakdown loss_total_value(const RewardModel& model, ShqSpan batch,
                               const RewardTrainConfig& config) {
  const PackedBatch packed = pack(model, batch);
  const Eigen::RowVectorXd r = nn::forward_batch(model.params, packed.inputs);
  return evaluate(packed, r, batch, config, nullptr);
}

LossAndGradient loss_total(const RewardModel& model, ShqSpan batch,
                           const RewardTrainConfig& config) {
  const PackedBatch packed = pack(model, batch);
  nn::ForwardCache cache;
  const Eigen::RowVectorXd r = nn::forward_batch(model.params, packed.inputs, &cache);
  Eigen::RowVectorXd coeff = Eigen::RowVectorXd::Zero(r.size());
  LossAndGradient out;
  out.loss = evaluate(packed, r, batch, config, &coeff);
  out.gradient = nn::backward(model.params, cache, coeff);
  return out;
}

std::map<std::string, Eigen::VectorXd> reward_sensitivities(
    const RewardModel& model, ShqSpan batch, const RewardTrainConfig& config) {
  const PackedBatch packed = pack(model, batch);
  const Eigen::RowVectorXd r = nn::forward_batch(model.params, packed.inputs);
  Eigen::RowVectorXd coeff = Eigen::RowVectorXd::Zero(r.size());
  evaluate(packed, r, batch, config, &coeff);
  std::map<std::string, Eigen::VectorXd> out;
  for (const auto& [seg, offset] : packed.offset) {
    out[seg->segment_id] =
        coeff.segment(offset, static_cast<Eigen::Index>(seg->size())).transpose();
  }
  return out;
}

RewardTrainer::RewardTrainer(RewardModel model, RewardTrainConfig config,
                             Rng shuffle_rng)
    : model_(std::move(model)),
      config_(std::move(config)),
      adam_(nn::make_adam_state(model_.params, {config_.learning_rate})),
      rng_(std::move(shuffle_rng)) {}

void RewardTrainer::restore(RewardModel model, nn::AdamState adam) {
  model_ = std::move(model);
  adam_ = std::move(adam);
}

std::vector<EpochRecord> RewardTrainer::train(
    const std::vector<SentimentHighlightedQuery>& data, TrainPhase phase) {
  if (data.empty()) throw Error("train_reward: empty dataset");
  const int epochs =
      phase == TrainPhase::initial ? config_.epochs_initial : config_.epochs_update;
  std::vector<std::size_t> order(data.size());
  std::vector<SentimentHighlightedQuery> batch;
  std::vector<EpochRecord> history;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng_.below(i)]);
    }
    EpochRecord record{epoch, {}};
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config_.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config_.batch_size));
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(data[order[k]]);
      auto step = loss_total(model_, batch, config_);
      nn::adam_step(model_.params, step.gradient, adam_);
      record.loss.ce += step.loss.ce;
      record.loss.pos += step.loss.pos;
      record.loss.neg += step.loss.neg;
      record.loss.total += step.loss.total;
      record.loss.positive_count += step.loss.positive_count;
      record.loss.negative_count += step.loss.negative_count;
      ++batches;
    }
    record.loss.ce /= batches;
    record.loss.pos /= batches;
    record.loss.neg /= batches;
    record.loss.total /= batches;
    history.push_back(record);
  }
  return history;
}

double preference_accuracy(const RewardModel& model, ShqSpan data) {
  int strict = 0, correct = 0;
  for (const auto& q : data) {
    if (!q.w.is_strict()) continue;
    ++strict;
    const double p0 = preference_prob(model, *q.segment_a, *q.segment_b);
    const bool predicts_first = p0 > 0.5;
    if (predicts_first == (q.w.value() == 0.0)) ++correct;
  }
  return strict == 0 ? 1.0 : static_cast<double>(correct) / strict;
}

std::string history_csv(const std::vector<EpochRecord>& history,
                        const RewardTrainConfig& config) {
  std::ostringstream out;
  out.precision(10);
  out << "epoch,loss_ce,loss_pos,loss_neg,total\n";
  for (const auto& h : history) {
    out << h.epoch << ',' << h.loss.ce << ',' << -config.alpha_plus * h.loss.pos
        << ',' << config.alpha_minus * h.loss.neg << ',' << h.loss.total << '\n';
  }
  return out.str();
}

}  // namespace predilect::reward
