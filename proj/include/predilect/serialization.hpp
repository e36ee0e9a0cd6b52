// JSON encodings of the domain types. Field names follow the type fields.
#ifndef PREDILECT_SERIALIZATION_HPP_
#define PREDILECT_SERIALIZATION_HPP_

#include <json.hpp>

#include "predilect/core.hpp"

namespace predilect {

using Json = nlohmann::json;

Json frame_to_json(const Frame& frame);
Frame frame_from_json(const Json& j);
Json frames_to_json(const std::vector<Frame>& frames);

Json segment_to_json(const TrajectorySegment& segment);
TrajectorySegment segment_from_json(const Json& j);

Json highlight_to_json(const Highlight& h);
Highlight highlight_from_json(const Json& j);

Json triplet_to_json(const SentimentTriplet& t);

// Segments are referenced by id; the caller resolves them.
Json shq_to_json(const SentimentHighlightedQuery& shq);

}  // namespace predilect

#endif  // PREDILECT_SERIALIZATION_HPP_
