// Feedback generation: query sampling, the synthetic oracle, the LLM
// prompt/response path and the highlight search over metric tensors.
#ifndef PREDILECT_FEEDBACK_HPP_
#define PREDILECT_FEEDBACK_HPP_

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "predilect/core.hpp"
#include "predilect/envs.hpp"
#include "predilect/rng.hpp"

namespace predilect::feedback {

// Query pairs -------------------------------------------------------------------

using QueryPair = std::pair<SegmentPtr, SegmentPtr>;

// Ordered pairs drawn uniformly over all (i, j), i != j.
std::vector<QueryPair> sample_query_pairs(std::span<const SegmentPtr> pool,
                                          int count, Rng& rng);

// Oracle ------------------------------------------------------------------------

struct FeatureThreshold {
  std::string feature;
  double low = 0.0;
  double high = 0.0;
};

struct OracleConfig {
  double error_rate = 0.10;
  std::vector<FeatureThreshold> thresholds;
  double tie_tolerance = 1e-6;

  const FeatureThreshold& threshold_for(std::string_view feature) const;
};

void validate(const OracleConfig& config);

// Linear interpolation between closest ranks, q in [0, 100].
double percentile(std::vector<double> values, double q);

std::vector<FeatureThreshold> percentile_thresholds(
    std::span<const SegmentPtr> segments, const FeatureSet& features,
    double low_q = 10.0, double high_q = 90.0);

PreferenceLabel oracle_preference(double return_0, double return_1,
                                  const OracleConfig& config, Rng& rng);
// Uses the segments' recorded true rewards.
PreferenceLabel oracle_preference(const TrajectorySegment& s0,
                                  const TrajectorySegment& s1,
                                  const OracleConfig& config, Rng& rng);

struct LlmResponse {
  std::vector<SentimentTriplet> triplets;
  std::string raw_text;
};

std::string format_triplet(const SentimentTriplet& t);
// One bracketed triplet per line.
std::string format_triplets(std::span<const SentimentTriplet> triplets);

LlmResponse oracle_response(const MetricTensor& metrics,
                            const FeatureSet& features,
                            const envs::PolarityTable& polarity,
                            const OracleConfig& config);

// Prompt ------------------------------------------------------------------------

inline constexpr std::string_view kSocialNavTask =
    "You are a robot navigating a corridor with humans walking around trying "
    "to reach the goal/star.";
inline constexpr std::string_view kPointReachTask =
    "You are a point robot moving in a square arena trying to reach the goal.";

std::string_view task_description(std::string_view env_name);

std::string build_prompt(std::string_view user_text,
                         const std::vector<std::string>& features,
                         std::string_view task = kSocialNavTask);

// LLM ---------------------------------------------------------------------------

class LlmError : public Error {
 public:
  using Error::Error;
};

enum class LlmProvider { mock, remote };

std::string_view to_string(LlmProvider p);
LlmProvider parse_llm_provider(std::string_view text);

struct LlmProviderConfig {
  LlmProvider provider = LlmProvider::mock;
  std::string endpoint;  // empty: read LLM_API_URL
  std::string model = "gpt-4";
  std::string credential_env = "LLM_API_KEY";
  double timeout_s = 30.0;
  int retries = 3;
  double backoff_s = 0.5;  // doubled after every failed attempt
};

struct LlmCompletion {
  std::string text;
  int retries = 0;
  std::vector<std::string> log;  // one line per failed attempt
};

// Throws LlmError once retries are exhausted or on a non-retryable reply.
LlmCompletion query_llm(std::string_view prompt, const LlmProviderConfig& config);

// Deterministic keyword rules over the user text embedded in a prompt.
std::string mock_llm(std::string_view prompt);

// Case-insensitive, whitespace-tolerant. Unknown features and malformed
// lines are dropped; the first triplet per (feature, sentiment) wins.
LlmResponse parse_llm_response(std::string_view raw,
                               const std::vector<std::string>& features);

// Natural-language explanation of a set of triplets that the mock provider
// maps back to the same triplets. Stands in for a human's text.
std::string synthesize_explanation(std::span<const SentimentTriplet> triplets);

struct LlmFeedback {
  std::optional<LlmResponse> response;  // empty on skip or failure
  std::string error;
  int retries = 0;
};

// build_prompt -> query_llm -> parse. Empty text skips the call; provider
// failures fall back to no response.
LlmFeedback llm_feedback(std::string_view user_text, const FeatureSet& features,
                         std::string_view task, const LlmProviderConfig& config);

// Highlights --------------------------------------------------------------------

// Start of the window of `length + 1` rows with the largest (high) or
// smallest (low) mean; earliest start on ties.
int best_window(std::span<const double> column, int length, Magnitude value);

struct HighlightSets {
  std::vector<Highlight> positives;
  std::vector<Highlight> negatives;
};

HighlightSets search_highlights(const MetricTensor& metrics,
                                std::span<const SentimentTriplet> triplets,
                                int length, const std::string& segment_id);

// Highlights come from the preferred segment only, and only when the
// preference is strict and a response is present.
SentimentHighlightedQuery assemble_shq(SegmentPtr s0, SegmentPtr s1,
                                       PreferenceLabel w,
                                       std::optional<std::string> prompt,
                                       const std::optional<LlmResponse>& response,
                                       const FeatureSet& features, int length);

}  // namespace predilect::feedback

#endif  // PREDILECT_FEEDBACK_HPP_
