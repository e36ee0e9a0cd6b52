#include "predilect/service.hpp"

#include <chrono>
#include <fstream>

#include "httplib.h"
#include "predilect/serialization.hpp"

namespace predilect::service {

using nlohmann::json;

std::string_view to_string(QueryStatus s) {
  switch (s) {
    case QueryStatus::pending: return "pending";
    case QueryStatus::labeled: return "labeled";
    case QueryStatus::skipped: return "skipped";
  }
  return "";
}

std::string_view to_string(Choice c) {
  switch (c) {
    case Choice::a: return "a";
    case Choice::b: return "b";
    case Choice::none: return "none";
  }
  return "";
}

Choice parse_choice(std::string_view text) {
  if (text == "a") return Choice::a;
  if (text == "b") return Choice::b;
  if (text == "none") return Choice::none;
  throw ServiceError(400, "choice must be a, b or none, got '" + std::string(text) + "'");
}

PreferenceLabel choice_label(Choice c) {
  switch (c) {
    case Choice::a: return PreferenceLabel::prefer_first();
    case Choice::b: return PreferenceLabel::prefer_second();
    case Choice::none: break;
  }
  return PreferenceLabel::equal();
}

namespace {

json segment_view(const SegmentPtr& s) {
  return {{"segment_id", s->segment_id}, {"frames", frames_to_json(s->frames)}};
}

}  // namespace

json to_json(const PendingQuery& q) {
  return {{"query_id", q.query_id},
          {"phase", q.phase},
          {"created_at", q.created_at},
          {"status", to_string(q.status)},
          {"segment_a", segment_view(q.segment_a)},
          {"segment_b", segment_view(q.segment_b)}};
}

void validate(const LabelSubmission& s) {
  if (s.labeler_id.empty()) throw ServiceError(400, "labeler_id is required");
  if (s.query_id.empty()) throw ServiceError(400, "query_id is required");
  if (s.prompt_text.size() > kMaxPromptLength) {
    throw ServiceError(400, "prompt_text exceeds " + std::to_string(kMaxPromptLength) +
                                " characters");
  }
}

LabelSubmission submission_from_json(const json& j) {
  if (!j.is_object()) throw ServiceError(400, "submission must be a JSON object");
  try {
    LabelSubmission s;
    s.query_id = j.value("query_id", std::string());
    s.choice = parse_choice(j.at("choice").get<std::string>());
    s.prompt_text = j.value("prompt_text", std::string());
    s.labeler_id = j.at("labeler_id").get<std::string>();
    return s;
  } catch (const json::exception& e) {
    throw ServiceError(400, std::string("malformed submission: ") + e.what());
  }
}

json to_json(const Acknowledgment& a) {
  return {{"query_id", a.query_id},
          {"w", a.w},
          {"positive_highlights", a.positive_highlights},
          {"negative_highlights", a.negative_highlights},
          {"duplicate", a.duplicate},
          {"llm_error", a.llm_error}};
}

json to_json(const BoardStatus& s) {
  return {{"phase", s.phase},       {"quota", s.quota},
          {"labeled", s.labeled},   {"pending", s.pending},
          {"leased", s.leased},     {"total_labeled", s.total_labeled},
          {"budget", s.budget},     {"waiting", s.waiting}};
}

double wall_clock() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

// Board ---------------------------------------------------------------------------

namespace {

json submission_to_json(const LabelSubmission& s) {
  return {{"query_id", s.query_id},
          {"choice", to_string(s.choice)},
          {"prompt_text", s.prompt_text},
          {"labeler_id", s.labeler_id}};
}

}  // namespace

QueryBoard::QueryBoard(BoardConfig config, Clock clock)
    : config_(std::move(config)), clock_(std::move(clock)) {
  if (!(config_.lease_seconds > 0)) throw Error("lease duration must be positive");
  if (config_.data_dir.empty()) return;
  appender_ = std::make_unique<DatasetAppender>(config_.data_dir);
  const auto path = config_.data_dir / "labels.jsonl";
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      JournalEntry e{j.at("segment_a").get<std::string>(), j.at("segment_b").get<std::string>(),
                     submission_from_json(j.at("submission"))};
      journal_[e.submission.query_id] = std::move(e);
      ++total_labeled_;
    } catch (const std::exception& e) {
      throw DatasetError(path.string() + ": bad journal line: " + e.what());
    }
  }
}

std::string QueryBoard::query_id(int phase, std::size_t index) {
  return "p" + std::to_string(phase) + "-q" + std::to_string(index);
}

QueryBoard::Entry* QueryBoard::find(const std::string& id) {
  for (auto& e : batch_) {
    if (e.query.query_id == id) return &e;
  }
  return nullptr;
}

bool QueryBoard::complete_locked() const {
  for (const auto& e : batch_) {
    if (!e.record) return false;
  }
  return true;
}

SentimentHighlightedQuery QueryBoard::build_record(const PendingQuery& q,
                                                   const LabelSubmission& s,
                                                   Acknowledgment& ack) const {
  const PreferenceLabel w = choice_label(s.choice);
  std::optional<feedback::LlmResponse> response;
  std::optional<std::string> prompt;
  if (!s.prompt_text.empty()) {
    prompt = s.prompt_text;
    // The LLM only matters when highlights can be placed.
    if (w.is_strict()) {
      const feedback::LlmFeedback fb =
          feedback::llm_feedback(s.prompt_text, config_.features, config_.task, config_.llm);
      response = fb.response;
      ack.llm_error = fb.error;
    }
  }
  SentimentHighlightedQuery shq = feedback::assemble_shq(
      q.segment_a, q.segment_b, w, prompt, response, config_.features, config_.highlight_length);
  ack.query_id = q.query_id;
  ack.w = w.value();
  ack.positive_highlights = static_cast<int>(shq.positives.size());
  ack.negative_highlights = static_cast<int>(shq.negatives.size());
  return shq;
}

void QueryBoard::commit_locked(Entry& e, const LabelSubmission& s,
                               SentimentHighlightedQuery record, Acknowledgment ack,
                               bool replay) {
  if (!replay && appender_) {
    appender_->append_shq(record);
    std::ofstream journal(config_.data_dir / "labels.jsonl", std::ios::app);
    journal << json{{"segment_a", e.query.segment_a->segment_id},
                    {"segment_b", e.query.segment_b->segment_id},
                    {"submission", submission_to_json(s)}}
                   .dump()
            << '\n';
    journal.flush();
    if (!journal) throw DatasetError("cannot append to the label journal");
  }
  if (!replay) ++total_labeled_;
  e.query.status = s.choice == Choice::none ? QueryStatus::skipped : QueryStatus::labeled;
  e.record = std::move(record);
  e.processing = false;
  e.acks[s.labeler_id] = ack;
  cv_.notify_all();
}

void QueryBoard::post(const std::vector<feedback::QueryPair>& pairs, int phase) {
  std::lock_guard lock(mu_);
  batch_.clear();
  phase_ = phase;
  const double now = clock_();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Entry e;
    e.query.query_id = query_id(phase, i);
    e.query.phase = phase;
    e.query.segment_a = pairs[i].first;
    e.query.segment_b = pairs[i].second;
    e.query.created_at = now;
    batch_.push_back(std::move(e));
  }
  for (auto& e : batch_) {
    auto it = journal_.find(e.query.query_id);
    if (it == journal_.end() || it->second.segment_a != e.query.segment_a->segment_id ||
        it->second.segment_b != e.query.segment_b->segment_id) {
      continue;
    }
    Acknowledgment ack;
    SentimentHighlightedQuery record = build_record(e.query, it->second.submission, ack);
    commit_locked(e, it->second.submission, std::move(record), ack, true);
  }
}

std::vector<SentimentHighlightedQuery> QueryBoard::collect(
    const std::vector<feedback::QueryPair>& pairs, int phase) {
  post(pairs, phase);
  std::unique_lock lock(mu_);
  waiting_ = true;
  cv_.wait(lock, [&] { return closed_ || complete_locked(); });
  waiting_ = false;
  if (!complete_locked()) throw orchestrator::FeedbackPending("labeling service closed");
  std::vector<SentimentHighlightedQuery> out;
  for (const auto& e : batch_) out.push_back(*e.record);
  return out;
}

std::optional<std::vector<SentimentHighlightedQuery>> QueryBoard::results() const {
  std::lock_guard lock(mu_);
  if (!complete_locked()) return std::nullopt;
  std::vector<SentimentHighlightedQuery> out;
  for (const auto& e : batch_) out.push_back(*e.record);
  return out;
}

void QueryBoard::close() {
  std::lock_guard lock(mu_);
  closed_ = true;
  cv_.notify_all();
}

bool QueryBoard::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

std::optional<PendingQuery> QueryBoard::next_query(const std::string& labeler_id) {
  if (labeler_id.empty()) throw ServiceError(400, "labeler id is required");
  std::lock_guard lock(mu_);
  const double now = clock_();
  // A labeler asking again gets the query it already holds, with a fresh lease.
  for (auto& e : batch_) {
    if (!e.record && e.lease_holder == labeler_id && now < e.lease_expiry) {
      e.lease_expiry = now + config_.lease_seconds;
      return e.query;
    }
  }
  for (auto& e : batch_) {
    if (e.record || e.processing) continue;
    if (!e.lease_holder.empty() && now < e.lease_expiry) continue;
    e.lease_holder = labeler_id;
    e.lease_expiry = now + config_.lease_seconds;
    return e.query;
  }
  return std::nullopt;
}

Acknowledgment QueryBoard::submit(const LabelSubmission& s) {
  validate(s);
  PendingQuery query;
  {
    std::lock_guard lock(mu_);
    Entry* e = find(s.query_id);
    if (!e) throw ServiceError(404, "unknown query '" + s.query_id + "'");
    if (auto it = e->acks.find(s.labeler_id); it != e->acks.end()) {
      Acknowledgment prior = it->second;
      prior.duplicate = true;
      return prior;
    }
    if (e->record) throw ServiceError(409, "query " + s.query_id + " is already labeled");
    if (e->processing) throw ServiceError(409, "query " + s.query_id + " is being processed");
    if (e->lease_holder != s.labeler_id) {
      throw ServiceError(409, "query " + s.query_id + " is not leased to " + s.labeler_id);
    }
    if (clock_() >= e->lease_expiry) {
      throw ServiceError(410, "lease on query " + s.query_id + " has expired");
    }
    e->processing = true;
    query = e->query;
  }
  Acknowledgment ack;
  std::optional<SentimentHighlightedQuery> record;
  std::string failure;
  try {
    record = build_record(query, s, ack);
  } catch (const std::exception& ex) {
    failure = ex.what();
  }
  std::lock_guard lock(mu_);
  Entry* e = find(s.query_id);
  const bool same = e && e->query.segment_a == query.segment_a &&
                    e->query.segment_b == query.segment_b;
  if (!record) {
    if (same) e->processing = false;
    throw ServiceError(500, "could not process label: " + failure);
  }
  if (!same) throw ServiceError(410, "query " + s.query_id + " was withdrawn");
  commit_locked(*e, s, std::move(*record), ack, false);
  return ack;
}

BoardStatus QueryBoard::status() const {
  std::lock_guard lock(mu_);
  BoardStatus st;
  st.phase = phase_;
  st.quota = static_cast<int>(batch_.size());
  const double now = clock_();
  for (const auto& e : batch_) {
    if (e.record) {
      ++st.labeled;
    } else {
      ++st.pending;
      if (!e.lease_holder.empty() && now < e.lease_expiry) ++st.leased;
    }
  }
  st.total_labeled = total_labeled_;
  st.budget = config_.budget;
  st.waiting = waiting_;
  return st;
}

// HTTP ----------------------------------------------------------------------------

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    reply(res, e.status(), {{"error", e.what()}});
  } catch (const std::exception& e) {
    reply(res, 500, {{"error", e.what()}});
  }
}

constexpr const char* kPlaceholderPage =
    "<!doctype html><title>PREDILECT labeling</title>"
    "<p>Labeling service is running. Build the UI bundle and pass its directory "
    "to serve it here.</p>";

}  // namespace

HttpServer::HttpServer(QueryBoard& board, std::filesystem::path static_dir)
    : board_(board), server_(std::make_unique<httplib::Server>()) {
  server_->Get("/queries/next", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string labeler = req.get_param_value("labeler");
      const auto q = board_.next_query(labeler);
      reply(res, 200, {{"query", q ? to_json(*q) : json(nullptr)},
                       {"status", to_json(board_.status())}});
    });
  });
  server_->Post(R"(/queries/([^/]+)/label)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    json body;
                    try {
                      body = json::parse(req.body);
                    } catch (const json::exception& e) {
                      throw ServiceError(400, std::string("malformed JSON: ") + e.what());
                    }
                    LabelSubmission s = submission_from_json(body);
                    const std::string id = req.matches[1];
                    if (!s.query_id.empty() && s.query_id != id) {
                      throw ServiceError(400, "query_id in the body does not match the path");
                    }
                    s.query_id = id;
                    reply(res, 200, to_json(board_.submit(s)));
                  });
                });
  server_->Get("/status", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, to_json(board_.status())); });
  });
  if (!static_dir.empty()) {
    if (!server_->set_mount_point("/", static_dir.string())) {
      throw Error("static directory " + static_dir.string() + " does not exist");
    }
  } else {
    server_->Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(kPlaceholderPage, "text/html");
    });
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = server_->bind_to_any_port(host);
    if (p < 0) throw Error("cannot bind " + host);
    return p;
  }
  if (!server_->bind_to_port(host, port)) {
    throw Error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_) server_->stop();
}

std::pair<std::string, int> parse_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
    throw Error("address must look like host:port, got '" + address + "'");
  }
  const std::string host = address.substr(0, colon);
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(address.substr(colon + 1), &used);
    if (used != address.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw Error("bad port in address '" + address + "'");
  }
  if (port < 0 || port > 65535) throw Error("port out of range in '" + address + "'");
  return {host, port};
}

}  // namespace predilect::service
