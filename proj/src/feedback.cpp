#include "predilect/feedback.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace predilect::feedback {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Lowercase with runs of whitespace collapsed and ends trimmed.
std::string normalize(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : lower(s)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(c);
  }
  return out;
}

bool contains_any(const std::string& text, std::initializer_list<std::string_view> cues) {
  return std::any_of(cues.begin(), cues.end(), [&](std::string_view c) {
    return text.find(c) != std::string::npos;
  });
}

}  // namespace

// Query pairs -------------------------------------------------------------------

std::vector<QueryPair> sample_query_pairs(std::span<const SegmentPtr> pool,
                                          int count, Rng& rng) {
  if (pool.size() < 2) {
    throw Error("sample_query_pairs: need at least 2 segments, have " +
                std::to_string(pool.size()));
  }
  if (count < 0) throw Error("sample_query_pairs: negative count");
  std::vector<QueryPair> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const std::size_t i = rng.below(pool.size());
    std::size_t j = rng.below(pool.size() - 1);
    if (j >= i) ++j;
    out.emplace_back(pool[i], pool[j]);
  }
  return out;
}

// Oracle ------------------------------------------------------------------------

const FeatureThreshold& OracleConfig::threshold_for(std::string_view feature) const {
  for (const auto& t : thresholds) {
    if (t.feature == feature) return t;
  }
  throw Error("no oracle threshold for feature '" + std::string(feature) + "'");
}

void validate(const OracleConfig& c) {
  if (!(c.error_rate >= 0.0 && c.error_rate <= 1.0)) {
    throw Error("oracle error rate must lie in [0, 1]");
  }
  if (!(c.tie_tolerance >= 0.0)) throw Error("oracle tie tolerance must be >= 0");
  for (const auto& t : c.thresholds) {
    if (!(t.low <= t.high)) {
      throw Error("oracle threshold for '" + t.feature + "' has low > high");
    }
  }
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 100.0)) throw Error("percentile rank outside [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<FeatureThreshold> percentile_thresholds(
    std::span<const SegmentPtr> segments, const FeatureSet& features,
    double low_q, double high_q) {
  std::vector<FeatureThreshold> out;
  std::vector<std::vector<double>> samples(features.size());
  for (const auto& s : segments) {
    const MetricTensor t = envs::map_segment_to_metrics(*s, features);
    for (const auto& row : t.rows) {
      for (std::size_t f = 0; f < features.size(); ++f) samples[f].push_back(row[f]);
    }
  }
  for (std::size_t f = 0; f < features.size(); ++f) {
    out.push_back({features[f].name, percentile(samples[f], low_q),
                   percentile(samples[f], high_q)});
  }
  return out;
}

PreferenceLabel oracle_preference(double return_0, double return_1,
                                  const OracleConfig& config, Rng& rng) {
  PreferenceLabel w = PreferenceLabel::equal();
  if (return_0 > return_1 + config.tie_tolerance) {
    w = PreferenceLabel::prefer_first();
  } else if (return_1 > return_0 + config.tie_tolerance) {
    w = PreferenceLabel::prefer_second();
  } else {
    return w;
  }
  // Draw only on strict preferences so ties consume no randomness.
  if (rng.bernoulli(config.error_rate)) {
    w = w.value() == 0.0 ? PreferenceLabel::prefer_second() : PreferenceLabel::prefer_first();
  }
  return w;
}

PreferenceLabel oracle_preference(const TrajectorySegment& s0,
                                  const TrajectorySegment& s1,
                                  const OracleConfig& config, Rng& rng) {
  auto total = [](const TrajectorySegment& s) {
    if (s.true_rewards.size() != s.size()) {
      throw Error("segment " + s.segment_id + " has no recorded true rewards");
    }
    double r = 0.0;
    for (double x : s.true_rewards) r += x;
    return r;
  };
  return oracle_preference(total(s0), total(s1), config, rng);
}

std::string format_triplet(const SentimentTriplet& t) {
  return "[feature: " + t.feature + ", sentiment: " + std::string(to_string(t.sentiment)) +
         ", value: " + std::string(to_string(t.value)) + "]";
}

std::string format_triplets(std::span<const SentimentTriplet> triplets) {
  std::string out;
  for (const auto& t : triplets) {
    if (!out.empty()) out += '\n';
    out += format_triplet(t);
  }
  return out;
}

LlmResponse oracle_response(const MetricTensor& metrics, const FeatureSet& features,
                            const envs::PolarityTable& polarity,
                            const OracleConfig& config) {
  LlmResponse out;
  for (const auto& f : features) {
    const FeatureThreshold& th = config.threshold_for(f.name);
    const envs::FeaturePolarity& pol = envs::polarity_for(polarity, f.name);
    const std::vector<double> col = metrics.column(f.name);
    if (col.empty()) continue;
    const auto [mn, mx] = std::minmax_element(col.begin(), col.end());
    auto emit = [&](Sentiment s, Magnitude v) {
      for (const auto& t : out.triplets) {
        if (t.feature == f.name && t.sentiment == s) return;
      }
      out.triplets.push_back({f.name, s, v});
    };
    if (*mx > th.high) emit(pol.when_high, Magnitude::high);
    if (*mn < th.low) emit(pol.when_low, Magnitude::low);
  }
  out.raw_text = format_triplets(out.triplets);
  return out;
}

// Prompt ------------------------------------------------------------------------

std::string_view task_description(std::string_view env_name) {
  if (env_name == "pointreach") return kPointReachTask;
  if (env_name == "socialnav") return kSocialNavTask;
  throw Error("no task description for environment '" + std::string(env_name) + "'");
}

std::string build_prompt(std::string_view user_text,
                         const std::vector<std::string>& features,
                         std::string_view task) {
  if (features.empty()) throw Error("build_prompt: empty feature list");
  std::string list;
  for (const auto& f : features) {
    if (!list.empty()) list += ", ";
    list += f;
  }
  std::string out(task);
  out +=
      " The user had to pick between two alternatives and picked their preferred "
      "alternative and they are now giving an explanation for their pick. Which "
      "feature(s) was most important of [";
  out += list;
  out += "]? The text given by the user is: '";
  out += user_text;
  out +=
      "' Please respond in the following format for each feature that is relevant "
      "to the text given by the user: [feature:insert feature, sentiment:insert "
      "positive or negative, value: insert high or low]. Sentiment explains if the "
      "user thought the robot was behaving well in regards to the feature, if the "
      "robot behaved well it should be positive, else negative. Value indicates if "
      "the value of the feature was high or low. Only mention the features that are "
      "relevant, disregard the others.";
  return out;
}

// LLM ---------------------------------------------------------------------------

std::string_view to_string(LlmProvider p) {
  return p == LlmProvider::mock ? "mock" : "remote";
}

LlmProvider parse_llm_provider(std::string_view text) {
  if (text == "mock") return LlmProvider::mock;
  if (text == "remote") return LlmProvider::remote;
  throw Error("unknown llm provider '" + std::string(text) + "'");
}

namespace {

struct MockRule {
  std::string_view feature;
  std::initializer_list<std::string_view> synonyms;
  std::initializer_list<std::string_view> high_cues;  // checked before low
  std::initializer_list<std::string_view> low_cues;
  Sentiment when_high;
  Sentiment when_low;
};

const MockRule kRules[] = {
    {envs::kDistanceToHuman,
     {"human", "person", "people", "pedestrian", "crowd"},
     {"less close", "far", "away from", "avoid", "more space", "high"},
     {"close", "near", "hit", "bump", "collid", "low"},
     Sentiment::positive, Sentiment::negative},
    {envs::kDistanceToGoal,
     {"goal", "star", "target", "destination"},
     {"far from", "away from", "missed", "high", "did not reach", "didn't reach"},
     {"close", "near", "reach", "arriv", "got to", "low"},
     Sentiment::negative, Sentiment::positive},
    {envs::kSpeed,
     {"speed", "pace", "fast", "slow", "quick", "velocity", "rush", "hurr"},
     {"fast", "quick", "rush", "hurr", "high"},
     {"slow", "calm", "low"},
     Sentiment::positive, Sentiment::positive},
};

// Text between `open` and the next `close` after it.
std::optional<std::string_view> between(std::string_view text, std::string_view open,
                                        std::string_view close) {
  const auto a = text.find(open);
  if (a == std::string_view::npos) return std::nullopt;
  const auto start = a + open.size();
  const auto b = text.find(close, start);
  if (b == std::string_view::npos) return std::nullopt;
  return text.substr(start, b - start);
}

std::vector<std::string> split_list(std::string_view list) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    const auto end = comma == std::string_view::npos ? list.size() : comma;
    std::string item = normalize(list.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<std::string> split_clauses(const std::string& text) {
  static const std::regex sep(R"([.;!?]|\band\b|\bbut\b|\bwhile\b)");
  std::vector<std::string> out;
  for (std::sregex_token_iterator it(text.begin(), text.end(), sep, -1), end; it != end; ++it) {
    std::string c = normalize(it->str());
    if (!c.empty()) out.push_back(" " + c + " ");
  }
  return out;
}

std::optional<Sentiment> sentiment_cue(const std::string& clause) {
  if (contains_any(clause, {"too ", "bad", "unsafe", "dangerous", "poor", "worse", "not good",
                            "terrible", "annoy", "rude"})) {
    return Sentiment::negative;
  }
  if (contains_any(clause, {"good", "well", "safe", "nice", "better", "great", "polite"})) {
    return Sentiment::positive;
  }
  return std::nullopt;
}

}  // namespace

std::string mock_llm(std::string_view prompt) {
  const auto user = between(prompt, "The text given by the user is: '", "' Please respond");
  const auto list = between(prompt, "most important of [", "]?");
  if (!user || !list) return "";
  const std::vector<std::string> features = split_list(*list);
  const std::vector<std::string> clauses = split_clauses(lower(*user));

  std::vector<SentimentTriplet> found;
  auto add = [&](const std::string& feature, Sentiment s, Magnitude v) {
    for (const auto& t : found) {
      if (t.feature == feature && t.sentiment == s) return;
    }
    found.push_back({feature, s, v});
  };
  for (const auto& clause : clauses) {
    for (const auto& feature : features) {
      const MockRule* rule = nullptr;
      for (const auto& r : kRules) {
        if (r.feature == feature) rule = &r;
      }
      std::optional<Magnitude> value;
      Sentiment when_high = Sentiment::positive, when_low = Sentiment::positive;
      if (rule) {
        if (!contains_any(clause, rule->synonyms)) continue;
        if (contains_any(clause, rule->high_cues)) {
          value = Magnitude::high;
        } else if (contains_any(clause, rule->low_cues)) {
          value = Magnitude::low;
        }
        when_high = rule->when_high;
        when_low = rule->when_low;
      } else {
        if (clause.find(feature) == std::string::npos) continue;
        if (contains_any(clause, {"high"})) {
          value = Magnitude::high;
        } else if (contains_any(clause, {"low"})) {
          value = Magnitude::low;
        }
      }
      if (!value) continue;
      const Sentiment s = sentiment_cue(clause).value_or(
          *value == Magnitude::high ? when_high : when_low);
      add(feature, s, *value);
    }
  }
  // Configured feature order.
  std::vector<SentimentTriplet> ordered;
  for (const auto& f : features) {
    for (const auto& t : found) {
      if (t.feature == f) ordered.push_back(t);
    }
  }
  return format_triplets(ordered);
}

namespace {

LlmCompletion query_remote(std::string_view prompt, const LlmProviderConfig& config) {
  std::string endpoint = config.endpoint;
  if (endpoint.empty()) {
    const char* env = std::getenv("LLM_API_URL");
    if (!env || !*env) throw LlmError("remote llm: LLM_API_URL is not set");
    endpoint = env;
  }
  const char* key = std::getenv(config.credential_env.c_str());
  if (!key || !*key) {
    throw LlmError("remote llm: credential variable " + config.credential_env + " is not set");
  }
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(endpoint, m, url)) {
    throw LlmError("remote llm: malformed endpoint '" + endpoint + "'");
  }
  const std::string base = m[1].str();
  const std::string path = m[2].matched ? m[2].str() : "/";

  nlohmann::json body = {
      {"model", config.model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", std::string(prompt)}}})}};
  const std::string payload = body.dump();

  httplib::Client client(base);
  const auto timeout = std::chrono::duration<double>(config.timeout_s);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  const httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};

  LlmCompletion out;
  double backoff = config.backoff_s;
  for (int attempt = 0;; ++attempt) {
    std::string failure;
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      failure = "transport error: " + httplib::to_string(res.error());
    } else if (res->status >= 500 || res->status == 429) {
      failure = "http " + std::to_string(res->status);
    } else if (res->status != 200) {
      throw LlmError("remote llm: http " + std::to_string(res->status) + ": " + res->body);
    } else {
      try {
        auto j = nlohmann::json::parse(res->body);
        out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
        return out;
      } catch (const nlohmann::json::exception& e) {
        throw LlmError(std::string("remote llm: malformed reply: ") + e.what());
      }
    }
    out.log.push_back("attempt " + std::to_string(attempt + 1) + ": " + failure);
    if (attempt >= config.retries) {
      throw LlmError("remote llm: giving up after " + std::to_string(attempt) +
                     " retries: " + failure);
    }
    ++out.retries;
    std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
    backoff *= 2.0;
  }
}

}  // namespace

LlmCompletion query_llm(std::string_view prompt, const LlmProviderConfig& config) {
  if (config.retries < 0 || !(config.timeout_s > 0) || !(config.backoff_s >= 0)) {
    throw Error("invalid llm provider configuration");
  }
  if (config.provider == LlmProvider::mock) return LlmCompletion{mock_llm(prompt), 0, {}};
  return query_remote(prompt, config);
}

LlmResponse parse_llm_response(std::string_view raw,
                               const std::vector<std::string>& features) {
  static const std::regex line(
      R"(\[\s*feature\s*:\s*([^,\[\]]*?)\s*,\s*sentiment\s*:\s*([a-z]+)\s*,\s*value\s*:\s*([a-z]+)\s*\])",
      std::regex::icase);
  LlmResponse out;
  out.raw_text = std::string(raw);
  for (std::sregex_iterator it(out.raw_text.begin(), out.raw_text.end(), line), end; it != end;
       ++it) {
    const std::string name = normalize((*it)[1].str());
    const std::string sentiment = lower((*it)[2].str());
    const std::string value = lower((*it)[3].str());
    const auto f = std::find_if(features.begin(), features.end(),
                                [&](const std::string& c) { return normalize(c) == name; });
    if (f == features.end()) continue;
    if ((sentiment != "positive" && sentiment != "negative") ||
        (value != "high" && value != "low")) {
      continue;
    }
    SentimentTriplet t{*f, parse_sentiment(sentiment), parse_magnitude(value)};
    const bool dup = std::any_of(out.triplets.begin(), out.triplets.end(), [&](const auto& o) {
      return o.feature == t.feature && o.sentiment == t.sentiment;
    });
    if (!dup) out.triplets.push_back(std::move(t));
  }
  return out;
}

std::string synthesize_explanation(std::span<const SentimentTriplet> triplets) {
  std::string out;
  for (const auto& t : triplets) {
    const bool high = t.value == Magnitude::high;
    std::string phrase;
    if (t.feature == envs::kDistanceToHuman) {
      phrase = high ? "kept far away from the humans" : "got close to a human";
    } else if (t.feature == envs::kDistanceToGoal) {
      phrase = high ? "stayed far from the goal" : "got close to the goal";
    } else if (t.feature == envs::kSpeed) {
      phrase = high ? "moved at a fast pace" : "moved at a slow pace";
    } else {
      phrase = "the " + t.feature + " was " + (high ? "high" : "low");
    }
    phrase += t.sentiment == Sentiment::positive ? " which was good" : " which was bad";
    if (!out.empty()) out += " and ";
    out += phrase;
  }
  if (!out.empty()) out += '.';
  return out;
}

LlmFeedback llm_feedback(std::string_view user_text, const FeatureSet& features,
                         std::string_view task, const LlmProviderConfig& config) {
  LlmFeedback out;
  if (normalize(user_text).empty()) return out;
  const std::vector<std::string> names = feature_names(features);
  try {
    const LlmCompletion c = query_llm(build_prompt(user_text, names, task), config);
    out.retries = c.retries;
    out.response = parse_llm_response(c.text, names);
  } catch (const LlmError& e) {
    out.error = e.what();
  }
  return out;
}

// Highlights --------------------------------------------------------------------

int best_window(std::span<const double> column, int length, Magnitude value) {
  if (length < 0) throw Error("highlight length must be >= 0");
  const auto width = static_cast<std::size_t>(length) + 1;
  if (column.size() < width) {
    throw Error("metric column of " + std::to_string(column.size()) +
                " rows is shorter than a highlight of " + std::to_string(width));
  }
  int best = 0;
  double best_score = 0.0;
  for (std::size_t i = 0; i + width <= column.size(); ++i) {
    double sum = 0.0;
    for (std::size_t k = i; k < i + width; ++k) sum += column[k];
    const double score = sum / static_cast<double>(width);
    const bool better = value == Magnitude::high ? score > best_score : score < best_score;
    if (i == 0 || better) {
      best = static_cast<int>(i);
      best_score = score;
    }
  }
  return best;
}

HighlightSets search_highlights(const MetricTensor& metrics,
                                std::span<const SentimentTriplet> triplets,
                                int length, const std::string& segment_id) {
  HighlightSets out;
  for (const auto& t : triplets) {
    const std::vector<double> col = metrics.column(t.feature);
    const int start = best_window(col, length, t.value);
    Highlight h{segment_id, start, start + length, t.feature, t.sentiment};
    (t.sentiment == Sentiment::positive ? out.positives : out.negatives).push_back(std::move(h));
  }
  return out;
}

SentimentHighlightedQuery assemble_shq(SegmentPtr s0, SegmentPtr s1, PreferenceLabel w,
                                       std::optional<std::string> prompt,
                                       const std::optional<LlmResponse>& response,
                                       const FeatureSet& features, int length) {
  SentimentHighlightedQuery q;
  q.segment_a = std::move(s0);
  q.segment_b = std::move(s1);
  q.w = w;
  q.raw_prompt = std::move(prompt);
  if (response) q.raw_response = response->raw_text;
  const TrajectorySegment* pref = q.preferred();
  if (pref && response && !response->triplets.empty()) {
    const MetricTensor t = envs::map_segment_to_metrics(*pref, features);
    auto sets = search_highlights(t, response->triplets, length, pref->segment_id);
    q.positives = std::move(sets.positives);
    q.negatives = std::move(sets.negatives);
  }
  return q;
}

}  // namespace predilect::feedback
