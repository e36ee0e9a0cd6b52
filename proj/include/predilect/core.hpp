// Domain types shared across the library.
#ifndef PREDILECT_CORE_HPP_
#define PREDILECT_CORE_HPP_

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace predilect {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using StateVector = std::vector<double>;
using ActionVector = std::vector<double>;

struct StateAction {
  StateVector state;
  ActionVector action;

  bool operator==(const StateAction&) const = default;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Point2&) const = default;
};

// Ground-truth pose record for one timestep. Metrics and UI playback are
// computed from frames, never from the learner's observation.
struct Frame {
  int t = 0;
  double robot_x = 0.0;
  double robot_y = 0.0;
  double robot_vx = 0.0;
  double robot_vy = 0.0;
  double robot_heading = 0.0;
  double robot_gain = 0.0;
  std::vector<Point2> humans;
  Point2 goal;
  std::vector<double> lidar;

  bool operator==(const Frame&) const = default;
};

struct EpisodeMeta {
  std::int64_t episode = 0;
  int start_step = 0;

  bool operator==(const EpisodeMeta&) const = default;
};

struct TrajectorySegment {
  std::string segment_id;
  std::string env;
  EpisodeMeta episode_meta;
  std::vector<StateAction> pairs;
  std::vector<Frame> frames;
  // Per-step ground-truth reward. Read only by the synthetic oracle.
  std::vector<double> true_rewards;

  std::size_t size() const { return pairs.size(); }
  bool operator==(const TrajectorySegment&) const = default;
};

using SegmentPtr = std::shared_ptr<const TrajectorySegment>;

// Content hash over pairs and episode metadata (FNV-1a 64, hex).
std::string compute_segment_id(const TrajectorySegment& segment);

// Returns `segment` with segment_id filled in from its content.
SegmentPtr finalize_segment(TrajectorySegment segment);

class PreferenceLabel {
 public:
  static PreferenceLabel prefer_first() { return PreferenceLabel(0.0); }
  static PreferenceLabel equal() { return PreferenceLabel(0.5); }
  static PreferenceLabel prefer_second() { return PreferenceLabel(1.0); }
  // Throws unless value is exactly 0, 0.5 or 1.
  static PreferenceLabel from_value(double value);

  double value() const { return w_; }
  bool is_strict() const { return w_ != 0.5; }

  bool operator==(const PreferenceLabel&) const = default;

 private:
  explicit PreferenceLabel(double w) : w_(w) {}
  double w_;
};

enum class Sentiment { positive, negative };
enum class Magnitude { low, high };

std::string_view to_string(Sentiment s);
std::string_view to_string(Magnitude m);
Sentiment parse_sentiment(std::string_view text);
Magnitude parse_magnitude(std::string_view text);

struct FeatureDescriptor {
  std::string name;
  std::string metric_units;

  bool operator==(const FeatureDescriptor&) const = default;
};

using FeatureSet = std::vector<FeatureDescriptor>;

// Throws on empty or duplicate names.
void validate_feature_set(const FeatureSet& features);
std::vector<std::string> feature_names(const FeatureSet& features);

struct SentimentTriplet {
  std::string feature;
  Sentiment sentiment = Sentiment::positive;
  Magnitude value = Magnitude::high;

  bool operator==(const SentimentTriplet&) const = default;
};

// rows = states of a segment, cols = features in `feature_order`.
struct MetricTensor {
  std::vector<std::string> feature_order;
  std::vector<std::vector<double>> rows;

  std::size_t row_count() const { return rows.size(); }
  std::size_t col_count() const { return feature_order.size(); }
  // Throws if the feature is not a column.
  std::size_t column_of(std::string_view feature) const;
  std::vector<double> column(std::string_view feature) const;
};

// Window [start_index, end_index] of a segment, inclusive on both ends, so it
// holds end_index - start_index + 1 state-action pairs.
struct Highlight {
  std::string segment_id;
  int start_index = 0;
  int end_index = 0;
  std::string feature;
  Sentiment sentiment = Sentiment::positive;

  int length() const { return end_index - start_index; }
  bool operator==(const Highlight&) const = default;
};

struct SentimentHighlightedQuery {
  SegmentPtr segment_a;
  SegmentPtr segment_b;
  PreferenceLabel w = PreferenceLabel::equal();
  std::vector<Highlight> positives;
  std::vector<Highlight> negatives;
  std::optional<std::string> raw_prompt;
  std::optional<std::string> raw_response;

  // Null when w == 0.5.
  const TrajectorySegment* preferred() const;
};

bool operator==(const SentimentHighlightedQuery& a,
                const SentimentHighlightedQuery& b);

// Checks the record invariants: highlights sit inside the preferred segment,
// have length `highlight_length`, are absent under equal preference, and
// appear at most once per (feature, sentiment).
void validate_shq(const SentimentHighlightedQuery& shq, int highlight_length);

}  // namespace predilect

#endif  // PREDILECT_CORE_HPP_
