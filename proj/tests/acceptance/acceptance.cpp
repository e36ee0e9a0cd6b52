// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "finite_diff.hpp"
#include "predilect/feedback.hpp"
#include "predilect/orchestrator.hpp"
#include "predilect/reward.hpp"
#include "test_helpers.hpp"

using namespace predilect;
using namespace predilect::feedback;
using namespace predilect::orchestrator;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v) {
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

std::string list(const std::vector<double>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt(v[i], 3);
  return out + "]";
}

// Learning presets --------------------------------------------------------------

constexpr int kPointReachSeeds = 8;
constexpr int kSocialNavSeeds = 5;

ExperimentConfig learning_preset(const std::string& env, Mode mode, int queries,
                                 std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  c.loop.env = env;
  c.loop.mode = mode;
  c.loop.query_budget = queries;
  c.loop.total_timesteps = 100000;
  c.loop.update_interval = 10000;
  c.loop.segment_length = 25;
  c.loop.eval_episodes = 10;
  c.reward.hidden = {64, 64};
  c.reward.highlight_length = 5;
  c.reward.epochs_initial = 100;
  c.reward.epochs_update = 25;
  c.ppo.hidden = {64, 64};
  return c;
}

struct Runs {
  std::vector<double> returns;
  std::vector<double> gains;
  std::vector<double> gain_actions;
};

Runs run_seeds(const std::string& env, Mode mode, int queries, int seeds,
               const std::vector<std::string>& features = {}) {
  Runs r;
  for (int s = 0; s < seeds; ++s) {
    ExperimentConfig c = learning_preset(env, mode, queries, static_cast<std::uint64_t>(s));
    c.loop.features = features;
    const auto& last = run_predilect(c).log.updates.back().eval;
    r.returns.push_back(last.mean_return);
    r.gains.push_back(last.mean_gain);
    r.gain_actions.push_back(last.mean_gain_action);
  }
  return r;
}

// PointReach runs shared by the first two criteria.
const Runs& predilect_100() {
  static const Runs r = run_seeds("pointreach", Mode::predilect, 100, kPointReachSeeds);
  return r;
}

Outcome sample_efficiency() {
  const Runs& p = predilect_100();
  const Runs b = run_seeds("pointreach", Mode::baseline, 200, kPointReachSeeds);
  const double mp = mean(p.returns), mb = mean(b.returns);
  const double se = std::hypot(stderr_of(p.returns), stderr_of(b.returns));
  return {mp >= mb || mb - mp <= se,
          "predilect N=100 " + fmt(mp) + " " + list(p.returns) + " vs baseline N=200 " +
              fmt(mb) + " " + list(b.returns) + ", stderr of difference " + fmt(se)};
}

Outcome ablation() {
  const Runs& p = predilect_100();
  const Runs h = run_seeds("pointreach", Mode::highlights_only, 100, kPointReachSeeds);
  const double mp = mean(p.returns), mh = mean(h.returns);
  return {mp > mh, "predilect " + fmt(mp) + " vs highlights_only " + fmt(mh) + " " +
                       list(h.returns) + " at N=100"};
}

Outcome safety_emphasis() {
  const std::vector<std::string> safety{"distance to human"};
  const Runs p = run_seeds("socialnav", Mode::predilect, 100, kSocialNavSeeds, safety);
  const Runs b = run_seeds("socialnav", Mode::baseline, 100, kSocialNavSeeds, safety);
  const double gp = mean(p.gains), gb = mean(b.gains);
  return {gp > gb, "mean gain predilect " + fmt(gp) + " " + list(p.gains) + " vs baseline " +
                       fmt(gb) + " " + list(b.gains) + " (gain action " +
                       fmt(mean(p.gain_actions)) + " vs " + fmt(mean(b.gain_actions)) + ")"};
}

// Property criteria -------------------------------------------------------------

Outcome oracle_flip_rate() {
  Rng rng = seeded_rng(11, "acceptance-oracle");
  OracleConfig cfg;
  cfg.error_rate = 0.10;
  const int n = 10000;
  int flips = 0;
  for (int i = 0; i < n; ++i) {
    const double r0 = rng.normal(), r1 = rng.normal();
    const double truth = r0 > r1 ? 0.0 : 1.0;
    if (oracle_preference(r0, r1, cfg, rng).value() != truth) ++flips;
  }
  const double rate = static_cast<double>(flips) / n;
  return {std::abs(rate - 0.10) <= 0.02, "flip rate " + fmt(rate) + " over " +
                                             std::to_string(n) + " calls"};
}

Outcome gradient_correctness() {
  Rng rng = seeded_rng(12, "acceptance-fd");
  struct Variant {
    const char* name;
    double alpha_plus, alpha_minus;
    bool ce;
  };
  const Variant variants[] = {{"ce", 0.0, 0.0, true},
                              {"positive", 1.0, 0.0, false},
                              {"negative", 0.0, 1.0, false},
                              {"total", 0.5, 0.5, true}};
  const int batches = 100;
  double worst = 0.0;
  int skipped = 0, probes = 0, with_pos = 0, with_neg = 0;
  for (int b = 0; b < batches; ++b) {
    Rng init = seeded_rng(1000 + static_cast<std::uint64_t>(b), "acceptance-model");
    reward::RewardModel m = reward::make_reward_model(3, 2, {8, 8}, init);
    std::vector<SentimentHighlightedQuery> batch;
    const int size = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i < size; ++i) batch.push_back(testing::random_shq(rng, 10, 2));
    Eigen::MatrixXd inputs(5, 0);
    for (const auto& q : batch) {
      for (const auto& s : {q.segment_a, q.segment_b}) {
        const Eigen::MatrixXd part = reward::segment_inputs(m, *s);
        inputs.conservativeResize(Eigen::NoChange, inputs.cols() + part.cols());
        inputs.rightCols(part.cols()) = part;
      }
    }
    for (const Variant& v : variants) {
      reward::RewardTrainConfig cfg;
      cfg.alpha_plus = v.alpha_plus;
      cfg.alpha_minus = v.alpha_minus;
      cfg.use_preference_loss = v.ce;
      cfg.lambda = rng.uniform(0.5, 1.0);
      const auto g = reward::loss_total(m, batch, cfg);
      if (std::string(v.name) == "total") {
        with_pos += g.loss.positive_count > 0;
        with_neg += g.loss.negative_count > 0;
      }
      testing::FdOptions opt;
      opt.signature = [&] { return testing::relu_signature(m.params, inputs); };
      opt.skipped = &skipped;
      worst = std::max(worst, testing::max_fd_error(
                                  m.params, g.gradient,
                                  [&] { return reward::loss_total_value(m, batch, cfg).total; },
                                  rng, 0, opt));
      probes += static_cast<int>(m.params.parameter_count());
    }
  }
  return {worst <= 1e-4 && with_pos > 0 && with_neg > 0 && skipped * 100 < probes,
          "max relative error " + fmt(worst, 3) + " over " + std::to_string(batches) +
              " batches x 4 losses; " + std::to_string(skipped) + " of " +
              std::to_string(probes) + " probes at relu kinks"};
}

Outcome probability_normalization() {
  Rng rng = seeded_rng(13, "acceptance-prob");
  double worst = 0.0;
  const int cases = 1000;
  for (int i = 0; i < cases; ++i) {
    Rng init = seeded_rng(static_cast<std::uint64_t>(i), "acceptance-prob-model");
    const auto m = reward::make_reward_model(3, 2, {8}, init);
    const auto a = testing::random_segment(rng, 1 + static_cast<int>(rng.below(60)));
    const auto b = testing::random_segment(rng, static_cast<int>(a->pairs.size()));
    worst = std::max(worst, std::abs(reward::preference_prob(m, *a, *b) +
                                     reward::preference_prob(m, *b, *a) - 1.0));
    const double r0 = rng.uniform(-500, 500), r1 = rng.uniform(-500, 500);
    worst = std::max(worst, std::abs(reward::preference_prob_from_returns(r0, r1) +
                                     reward::preference_prob_from_returns(r1, r0) - 1.0));
  }
  const double p = reward::preference_prob_from_returns(2.0, 0.0);
  const double closed = std::exp(2.0) / (std::exp(2.0) + 1.0);
  char rounded[16];
  std::snprintf(rounded, sizeof rounded, "%.6f", p);
  return {worst <= 1e-12 && std::abs(p - closed) <= 1e-9 && std::string(rounded) == "0.880797",
          "max |P01 + P10 - 1| " + fmt(worst, 3) + " over " + std::to_string(cases) +
              " cases; P(2,0) = " + fmt(p, 12) + " (" + rounded + ")"};
}

int brute_force_window(const std::vector<double>& col, int L, Magnitude v) {
  int best = -1;
  double best_mean = 0.0;
  for (std::size_t i = 0; i + static_cast<std::size_t>(L) < col.size(); ++i) {
    double s = 0.0;
    for (int k = 0; k <= L; ++k) s += col[i + static_cast<std::size_t>(k)];
    const double m = s / (L + 1);
    if (best < 0 || (v == Magnitude::high ? m > best_mean : m < best_mean)) {
      best = static_cast<int>(i);
      best_mean = m;
    }
  }
  return best;
}

Outcome highlight_search() {
  Rng rng = seeded_rng(14, "acceptance-search");
  const int trials = 1000;
  int mismatches = 0, windows = 0;
  for (int t = 0; t < trials; ++t) {
    const int rows = rng.uniform_int(2, 60);
    const int nf = rng.uniform_int(1, 4);
    const int L = rng.uniform_int(1, rows - 1);
    const bool ties = rng.bernoulli(0.3);
    MetricTensor tensor;
    std::vector<std::vector<double>> cols(static_cast<std::size_t>(nf));
    std::vector<SentimentTriplet> triplets;
    for (int f = 0; f < nf; ++f) {
      tensor.feature_order.push_back("f" + std::to_string(f));
      for (int r = 0; r < rows; ++r) {
        cols[static_cast<std::size_t>(f)].push_back(ties ? static_cast<double>(rng.below(3))
                                                         : rng.normal());
      }
      triplets.push_back({tensor.feature_order.back(),
                          rng.bernoulli(0.5) ? Sentiment::positive : Sentiment::negative,
                          rng.bernoulli(0.5) ? Magnitude::high : Magnitude::low});
    }
    for (int r = 0; r < rows; ++r) {
      std::vector<double> row;
      for (const auto& c : cols) row.push_back(c[static_cast<std::size_t>(r)]);
      tensor.rows.push_back(std::move(row));
    }
    const auto sets = search_highlights(tensor, triplets, L, "seg");
    std::size_t pi = 0, ni = 0;
    for (std::size_t f = 0; f < triplets.size(); ++f) {
      const auto& tr = triplets[f];
      const auto& pool = tr.sentiment == Sentiment::positive ? sets.positives : sets.negatives;
      std::size_t& idx = tr.sentiment == Sentiment::positive ? pi : ni;
      ++windows;
      if (idx >= pool.size()) {
        ++mismatches;
        continue;
      }
      const Highlight& h = pool[idx++];
      if (h.start_index != brute_force_window(cols[f], L, tr.value) ||
          h.end_index != h.start_index + L || h.feature != tr.feature) {
        ++mismatches;
      }
    }
    if (pi != sets.positives.size() || ni != sets.negatives.size()) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches over " +
                               std::to_string(trials) + " tensors (" + std::to_string(windows) +
                               " windows)"};
}

Outcome prompt_fidelity() {
  const std::string user = "was less close to hitting a human/wall and moved at a slower pace.";
  const std::string expected =
      "You are a robot navigating a corridor with humans walking around trying to reach the "
      "goal/star. The user had to pick between two alternatives and picked their preferred "
      "alternative and they are now giving an explanation for their pick. Which feature(s) was "
      "most important of [distance to goal, distance to human, speed]? The text given by the "
      "user is: 'was less close to hitting a human/wall and moved at a slower pace.' Please "
      "respond in the following format for each feature that is relevant to the text given by "
      "the user: [feature:insert feature, sentiment:insert positive or negative, value: insert "
      "high or low]. Sentiment explains if the user thought the robot was behaving well in "
      "regards to the feature, if the robot behaved well it should be positive, else negative. "
      "Value indicates if the value of the feature was high or low. Only mention the features "
      "that are relevant, disregard the others.";
  const std::string output =
      "[feature: distance to human, sentiment: positive, value: high]\n"
      "[feature: speed, sentiment: positive, value: low]";
  const std::vector<std::string> features{"distance to goal", "distance to human", "speed"};
  const bool prompt_ok = build_prompt(user, features) == expected;
  const auto parsed = parse_llm_response(output, features);
  const std::vector<SentimentTriplet> want{
      {"distance to human", Sentiment::positive, Magnitude::high},
      {"speed", Sentiment::positive, Magnitude::low}};
  const bool parse_ok = parsed.triplets == want;
  return {prompt_ok && parse_ok, std::string("prompt ") + (prompt_ok ? "byte-exact" : "differs") +
                                     ", parse " + (parse_ok ? "exact" : "differs") + " (" +
                                     std::to_string(parsed.triplets.size()) + " triplets)"};
}

Outcome baseline_reduction() {
  int identical = 0;
  const int seeds = 3;
  for (int s = 0; s < seeds; ++s) {
    ExperimentConfig base = learning_preset("pointreach", Mode::baseline, 20,
                                            static_cast<std::uint64_t>(s));
    base.loop.total_timesteps = 20000;
    base.loop.update_interval = 5000;
    ExperimentConfig zero = base;
    zero.loop.mode = Mode::predilect;
    zero.reward.alpha_plus = zero.reward.alpha_minus = 0.0;
    const RunResult a = run_predilect(base);
    const RunResult b = run_predilect(zero);
    const bool same = records_to_json(a.log).dump() == records_to_json(b.log).dump() &&
                      a.policy == b.policy && a.reward_model.params == b.reward_model.params;
    identical += same;
  }
  return {identical == seeds, std::to_string(identical) + " of " + std::to_string(seeds) +
                                  " seeds with bit-identical logs, policies and reward models"};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    std::string name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"sample-efficiency", sample_efficiency},
      {"ablation-ordering", ablation},
      {"safety-feature-emphasis", safety_emphasis},
      {"oracle-flip-rate", oracle_flip_rate},
      {"gradient-correctness", gradient_correctness},
      {"probability-normalization", probability_normalization},
      {"highlight-search", highlight_search},
      {"prompt-parse-fidelity", prompt_fidelity},
      {"baseline-reduction", baseline_reduction},
  };

  CLI::App app{"acceptance criteria"};
  std::vector<std::string> only;
  app.add_option("--only", only, "run just these criteria");
  CLI11_PARSE(app, argc, argv);
  const std::set<std::string> selected(only.begin(), only.end());

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " ["
              << fmt(secs, 3) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
