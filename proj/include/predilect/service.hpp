// Human labeling service: a lease-based board of pending query pairs that
// the learning loop blocks on, and the JSON-over-HTTP front end for it.
#ifndef PREDILECT_SERVICE_HPP_
#define PREDILECT_SERVICE_HPP_

#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "predilect/dataset.hpp"
#include "predilect/feedback.hpp"
#include "predilect/orchestrator.hpp"

namespace httplib {
class Server;
}

namespace predilect::service {

// Carries the HTTP status the failure maps to.
class ServiceError : public Error {
 public:
  ServiceError(int status, const std::string& message) : Error(message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

enum class QueryStatus { pending, labeled, skipped };
enum class Choice { a, b, none };

std::string_view to_string(QueryStatus s);
std::string_view to_string(Choice c);
// Throws ServiceError(400).
Choice parse_choice(std::string_view text);
PreferenceLabel choice_label(Choice c);

inline constexpr std::size_t kMaxPromptLength = 2000;

struct PendingQuery {
  std::string query_id;
  int phase = 0;
  SegmentPtr segment_a;
  SegmentPtr segment_b;
  double created_at = 0.0;  // clock seconds
  QueryStatus status = QueryStatus::pending;
};

// {query_id, phase, created_at, status, segment_a: {segment_id, frames}, segment_b}
nlohmann::json to_json(const PendingQuery& q);

struct LabelSubmission {
  std::string query_id;
  Choice choice = Choice::none;
  std::string prompt_text;
  std::string labeler_id;
};

// Throws ServiceError(400) on an empty labeler or an over-long prompt.
void validate(const LabelSubmission& s);
// Reads {query_id?, choice, prompt_text?, labeler_id}; throws ServiceError(400).
LabelSubmission submission_from_json(const nlohmann::json& j);

struct Acknowledgment {
  std::string query_id;
  double w = 0.5;
  int positive_highlights = 0;
  int negative_highlights = 0;
  bool duplicate = false;
  std::string llm_error;  // empty when the prompt was parsed or absent
};

nlohmann::json to_json(const Acknowledgment& a);

struct BoardStatus {
  int phase = -1;    // -1 before the loop posts anything
  int quota = 0;     // queries in the current batch
  int labeled = 0;   // of the current batch
  int pending = 0;   // of the current batch, leased or not
  int leased = 0;
  int total_labeled = 0;  // over the whole session
  int budget = 0;
  bool waiting = false;  // the loop is blocked on this batch
};

nlohmann::json to_json(const BoardStatus& s);

// Seconds; leases are measured on this clock.
using Clock = std::function<double()>;
double wall_clock();

struct BoardConfig {
  FeatureSet features;
  std::string task;
  feedback::LlmProviderConfig llm;
  int highlight_length = 10;
  int budget = 0;
  double lease_seconds = 600.0;
  // When set: accepted labels go to an append-only dataset here, and a
  // label journal lets a restarted run replay answers for re-posted queries.
  std::filesystem::path data_dir;
};

class QueryBoard : public orchestrator::HumanFeedback {
 public:
  explicit QueryBoard(BoardConfig config, Clock clock = wall_clock);

  // Loop side. Posts the batch and blocks until every query is labeled;
  // throws FeedbackPending once close() is called.
  std::vector<SentimentHighlightedQuery> collect(const std::vector<feedback::QueryPair>& pairs,
                                                 int phase) override;
  // Publishes a batch without waiting; replaces any unfinished batch.
  void post(const std::vector<feedback::QueryPair>& pairs, int phase);
  // The batch's records once complete.
  std::optional<std::vector<SentimentHighlightedQuery>> results() const;
  void close();
  bool closed() const;

  // Labeler side.
  std::optional<PendingQuery> next_query(const std::string& labeler_id);
  Acknowledgment submit(const LabelSubmission& submission);
  BoardStatus status() const;

  static std::string query_id(int phase, std::size_t index);

 private:
  struct Entry {
    PendingQuery query;
    std::string lease_holder;
    double lease_expiry = 0.0;
    bool processing = false;
    std::optional<SentimentHighlightedQuery> record;
    std::map<std::string, Acknowledgment> acks;  // by labeler
  };

  struct JournalEntry {
    std::string segment_a;
    std::string segment_b;
    LabelSubmission submission;
  };

  Entry* find(const std::string& id);
  bool complete_locked() const;
  SentimentHighlightedQuery build_record(const PendingQuery& q, const LabelSubmission& s,
                                         Acknowledgment& ack) const;
  void commit_locked(Entry& e, const LabelSubmission& s, SentimentHighlightedQuery record,
                     Acknowledgment ack, bool replay);

  BoardConfig config_;
  Clock clock_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<Entry> batch_;
  int phase_ = -1;
  bool waiting_ = false;
  bool closed_ = false;
  int total_labeled_ = 0;
  std::unique_ptr<DatasetAppender> appender_;
  std::map<std::string, JournalEntry> journal_;
};

// JSON-over-HTTP front end:
//   GET  /queries/next?labeler=ID  -> {"query": PendingQuery|null, "status": {...}}
//   POST /queries/{id}/label       -> Acknowledgment
//   GET  /status                   -> status
// and static files from `static_dir` at "/".
class HttpServer {
 public:
  HttpServer(QueryBoard& board, std::filesystem::path static_dir = {});
  ~HttpServer();

  // Returns the bound port (a free one when port is 0).
  int bind(const std::string& host, int port);
  // Serves until stop().
  void listen();
  void stop();

 private:
  QueryBoard& board_;
  std::unique_ptr<httplib::Server> server_;
};

// "host:port" -> (host, port); throws on malformed input.
std::pair<std::string, int> parse_address(const std::string& address);

}  // namespace predilect::service

#endif  // PREDILECT_SERVICE_HPP_
