#include "predilect/core.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <set>
#include <utility>

#include "predilect/rng.hpp"

namespace predilect {

namespace {

std::uint64_t hash_doubles(const std::vector<double>& values,
                           std::uint64_t h) {
  for (double v : values) {
    char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    h = fnv1a64(std::string_view(bytes, sizeof(double)), h);
  }
  return h;
}

std::uint64_t hash_int(std::int64_t v, std::uint64_t h) {
  char bytes[sizeof(v)];
  std::memcpy(bytes, &v, sizeof(v));
  return fnv1a64(std::string_view(bytes, sizeof(v)), h);
}

}  // namespace

std::string compute_segment_id(const TrajectorySegment& segment) {
  std::uint64_t h = fnv1a64(segment.env);
  h = hash_int(segment.episode_meta.episode, h);
  h = hash_int(segment.episode_meta.start_step, h);
  for (const auto& pair : segment.pairs) {
    h = hash_doubles(pair.state, h);
    h = hash_doubles(pair.action, h);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

SegmentPtr finalize_segment(TrajectorySegment segment) {
  segment.segment_id = compute_segment_id(segment);
  return std::make_shared<const TrajectorySegment>(std::move(segment));
}

PreferenceLabel PreferenceLabel::from_value(double value) {
  if (value == 0.0 || value == 0.5 || value == 1.0) {
    return PreferenceLabel(value);
  }
  throw Error("preference label must be 0, 0.5 or 1, got " +
              std::to_string(value));
}

std::string_view to_string(Sentiment s) {
  return s == Sentiment::positive ? "positive" : "negative";
}

std::string_view to_string(Magnitude m) {
  return m == Magnitude::low ? "low" : "high";
}

Sentiment parse_sentiment(std::string_view text) {
  if (text == "positive") return Sentiment::positive;
  if (text == "negative") return Sentiment::negative;
  throw Error("unknown sentiment '" + std::string(text) + "'");
}

Magnitude parse_magnitude(std::string_view text) {
  if (text == "low") return Magnitude::low;
  if (text == "high") return Magnitude::high;
  throw Error("unknown magnitude '" + std::string(text) + "'");
}

void validate_feature_set(const FeatureSet& features) {
  std::set<std::string> seen;
  for (const auto& f : features) {
    if (f.name.empty()) throw Error("feature name must be non-empty");
    if (!seen.insert(f.name).second) {
      throw Error("duplicate feature name '" + f.name + "'");
    }
  }
}

std::vector<std::string> feature_names(const FeatureSet& features) {
  std::vector<std::string> names;
  names.reserve(features.size());
  for (const auto& f : features) names.push_back(f.name);
  return names;
}

std::size_t MetricTensor::column_of(std::string_view feature) const {
  auto it = std::find(feature_order.begin(), feature_order.end(), feature);
  if (it == feature_order.end()) {
    throw Error("metric tensor has no column '" + std::string(feature) + "'");
  }
  return static_cast<std::size_t>(it - feature_order.begin());
}

std::vector<double> MetricTensor::column(std::string_view feature) const {
  const std::size_t c = column_of(feature);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& row : rows) out.push_back(row[c]);
  return out;
}

const TrajectorySegment* SentimentHighlightedQuery::preferred() const {
  if (w.value() == 0.0) return segment_a.get();
  if (w.value() == 1.0) return segment_b.get();
  return nullptr;
}

bool operator==(const SentimentHighlightedQuery& a,
                const SentimentHighlightedQuery& b) {
  auto same_segment = [](const SegmentPtr& x, const SegmentPtr& y) {
    if (!x || !y) return x == y;
    return *x == *y;
  };
  return same_segment(a.segment_a, b.segment_a) &&
         same_segment(a.segment_b, b.segment_b) && a.w == b.w &&
         a.positives == b.positives && a.negatives == b.negatives &&
         a.raw_prompt == b.raw_prompt && a.raw_response == b.raw_response;
}

void validate_shq(const SentimentHighlightedQuery& shq, int highlight_length) {
  if (!shq.segment_a || !shq.segment_b) {
    throw Error("shq is missing a segment");
  }
  if (shq.segment_a->size() != shq.segment_b->size()) {
    throw Error("shq segments differ in length");
  }
  const TrajectorySegment* preferred = shq.preferred();
  if (!preferred) {
    if (!shq.positives.empty() || !shq.negatives.empty()) {
      throw Error("equal-preference shq must not carry highlights");
    }
    return;
  }
  std::set<std::pair<std::string, Sentiment>> seen;
  const int m = static_cast<int>(preferred->size());
  auto check = [&](const Highlight& h, Sentiment expected) {
    if (h.segment_id != preferred->segment_id) {
      throw Error("highlight references a non-preferred segment");
    }
    if (h.sentiment != expected) throw Error("highlight in the wrong set");
    if (h.start_index < 0 || h.end_index >= m || h.start_index > h.end_index) {
      throw Error("highlight outside its segment");
    }
    if (h.length() != highlight_length) {
      throw Error("highlight length " + std::to_string(h.length()) +
                  " != " + std::to_string(highlight_length));
    }
    if (!seen.insert({h.feature, h.sentiment}).second) {
      throw Error("duplicate highlight for feature '" + h.feature + "'");
    }
  };
  for (const auto& h : shq.positives) check(h, Sentiment::positive);
  for (const auto& h : shq.negatives) check(h, Sentiment::negative);
}

}  // namespace predilect
