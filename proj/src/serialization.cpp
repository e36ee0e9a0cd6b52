#include "predilect/serialization.hpp"

namespace predilect {

Json frame_to_json(const Frame& f) {
  Json humans = Json::array();
  for (const auto& h : f.humans) humans.push_back({{"x", h.x}, {"y", h.y}});
  return Json{{"t", f.t},
              {"robot",
               {{"x", f.robot_x},
                {"y", f.robot_y},
                {"vx", f.robot_vx},
                {"vy", f.robot_vy},
                {"heading", f.robot_heading},
                {"gain", f.robot_gain}}},
              {"humans", std::move(humans)},
              {"goal", {{"x", f.goal.x}, {"y", f.goal.y}}},
              {"lidar", f.lidar}};
}

Frame frame_from_json(const Json& j) {
  Frame f;
  f.t = j.at("t").get<int>();
  const Json& r = j.at("robot");
  f.robot_x = r.at("x").get<double>();
  f.robot_y = r.at("y").get<double>();
  f.robot_vx = r.at("vx").get<double>();
  f.robot_vy = r.at("vy").get<double>();
  f.robot_heading = r.at("heading").get<double>();
  f.robot_gain = r.at("gain").get<double>();
  for (const auto& h : j.at("humans")) {
    f.humans.push_back({h.at("x").get<double>(), h.at("y").get<double>()});
  }
  f.goal = {j.at("goal").at("x").get<double>(),
            j.at("goal").at("y").get<double>()};
  f.lidar = j.at("lidar").get<std::vector<double>>();
  return f;
}

Json frames_to_json(const std::vector<Frame>& frames) {
  Json out = Json::array();
  for (const auto& f : frames) out.push_back(frame_to_json(f));
  return out;
}

Json segment_to_json(const TrajectorySegment& s) {
  Json pairs = Json::array();
  for (const auto& p : s.pairs) {
    pairs.push_back({{"state", p.state}, {"action", p.action}});
  }
  return Json{{"segment_id", s.segment_id},
              {"env", s.env},
              {"episode_meta",
               {{"episode", s.episode_meta.episode},
                {"start_step", s.episode_meta.start_step}}},
              {"pairs", std::move(pairs)},
              {"frames", frames_to_json(s.frames)},
              {"true_rewards", s.true_rewards}};
}

TrajectorySegment segment_from_json(const Json& j) {
  TrajectorySegment s;
  s.segment_id = j.at("segment_id").get<std::string>();
  s.env = j.at("env").get<std::string>();
  s.episode_meta.episode =
      j.at("episode_meta").at("episode").get<std::int64_t>();
  s.episode_meta.start_step = j.at("episode_meta").at("start_step").get<int>();
  for (const auto& p : j.at("pairs")) {
    s.pairs.push_back({p.at("state").get<std::vector<double>>(),
                       p.at("action").get<std::vector<double>>()});
  }
  for (const auto& f : j.at("frames")) s.frames.push_back(frame_from_json(f));
  s.true_rewards = j.at("true_rewards").get<std::vector<double>>();
  return s;
}

Json highlight_to_json(const Highlight& h) {
  return Json{{"segment_id", h.segment_id},
              {"start_index", h.start_index},
              {"end_index", h.end_index},
              {"feature", h.feature},
              {"sentiment", std::string(to_string(h.sentiment))}};
}

Highlight highlight_from_json(const Json& j) {
  Highlight h;
  h.segment_id = j.at("segment_id").get<std::string>();
  h.start_index = j.at("start_index").get<int>();
  h.end_index = j.at("end_index").get<int>();
  h.feature = j.at("feature").get<std::string>();
  h.sentiment = parse_sentiment(j.at("sentiment").get<std::string>());
  return h;
}

Json triplet_to_json(const SentimentTriplet& t) {
  return Json{{"feature", t.feature},
              {"sentiment", std::string(to_string(t.sentiment))},
              {"value", std::string(to_string(t.value))}};
}

Json shq_to_json(const SentimentHighlightedQuery& shq) {
  Json positives = Json::array();
  for (const auto& h : shq.positives) positives.push_back(highlight_to_json(h));
  Json negatives = Json::array();
  for (const auto& h : shq.negatives) negatives.push_back(highlight_to_json(h));
  Json j{{"segment_a", shq.segment_a->segment_id},
         {"segment_b", shq.segment_b->segment_id},
         {"w", shq.w.value()},
         {"positives", std::move(positives)},
         {"negatives", std::move(negatives)},
         {"raw_prompt", nullptr},
         {"raw_response", nullptr}};
  if (shq.raw_prompt) j["raw_prompt"] = *shq.raw_prompt;
  if (shq.raw_response) j["raw_response"] = *shq.raw_response;
  return j;
}

}  // namespace predilect
