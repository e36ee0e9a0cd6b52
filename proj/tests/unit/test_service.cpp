#include <atomic>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "predilect/serialization.hpp"
#include "predilect/service.hpp"
#include "test_helpers.hpp"
// After Eigen: resolv.h defines a macro that collides with Eigen internals.
#include "httplib.h"

using namespace predilect;
using namespace predilect::service;
using nlohmann::json;
using predilect::testing::TempDir;

namespace {

const char* kExampleUserText =
    "was less close to hitting a human/wall and moved at a slower pace.";

struct FakeClock {
  std::shared_ptr<double> now = std::make_shared<double>(1000.0);
  Clock clock() const {
    return [n = now] { return *n; };
  }
  void advance(double s) const { *now += s; }
};

std::vector<feedback::QueryPair> nav_pairs(int n, std::uint64_t seed = 1) {
  orchestrator::ExperimentConfig c;
  c.loop.env = "socialnav";
  auto env = orchestrator::make_environment(c);
  Rng init = seeded_rng(seed, "init");
  const ppo::Policy p = ppo::make_policy(env->observation_dim(), env->action_dim(), c.ppo, init);
  Rng rng = seeded_rng(seed, "segments");
  std::int64_t episodes = 0;
  const auto s = orchestrator::sample_segments(p, *env, 2 * n, 20, rng, episodes);
  std::vector<feedback::QueryPair> pairs;
  for (int i = 0; i < n; ++i) pairs.emplace_back(s.segments[2 * i], s.segments[2 * i + 1]);
  return pairs;
}

BoardConfig nav_board(std::filesystem::path dir = {}) {
  BoardConfig b;
  b.features = envs::socialnav_features();
  b.task = std::string(feedback::task_description("socialnav"));
  b.highlight_length = 5;
  b.budget = 20;
  b.data_dir = std::move(dir);
  return b;
}

LabelSubmission label(const std::string& id, Choice c, std::string labeler,
                      std::string text = "") {
  return LabelSubmission{id, c, std::move(text), std::move(labeler)};
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

}  // namespace

TEST_CASE("choices map to preference labels") {
  CHECK(choice_label(parse_choice("a")).value() == 0.0);
  CHECK(choice_label(parse_choice("b")).value() == 1.0);
  CHECK(choice_label(parse_choice("none")).value() == 0.5);
  CHECK_THROWS_AS(parse_choice("A"), ServiceError);
  CHECK(to_string(Choice::none) == "none");
}

TEST_CASE("a fresh board reports its quota and leases disjoint queries") {
  FakeClock clock;
  QueryBoard board(nav_board(), clock.clock());
  CHECK(board.status().phase == -1);
  CHECK_FALSE(board.next_query("x").has_value());
  board.post(nav_pairs(20), 0);
  const BoardStatus st = board.status();
  CHECK(st.quota == 20);
  CHECK(st.labeled == 0);
  CHECK(st.pending == 20);
  CHECK(st.budget == 20);

  const auto q1 = board.next_query("alice");
  const auto q2 = board.next_query("bob");
  REQUIRE(q1);
  REQUIRE(q2);
  CHECK(q1->query_id != q2->query_id);
  CHECK(board.next_query("alice")->query_id == q1->query_id);
  CHECK(board.status().leased == 2);
  CHECK_THROWS_AS(board.next_query(""), ServiceError);
}

TEST_CASE("expired leases are re-served") {
  FakeClock clock;
  QueryBoard board(nav_board(), clock.clock());
  board.post(nav_pairs(1), 0);
  const auto q = board.next_query("alice");
  REQUIRE(q);
  CHECK_FALSE(board.next_query("bob").has_value());
  clock.advance(599.0);
  CHECK_FALSE(board.next_query("bob").has_value());
  clock.advance(2.0);
  const auto again = board.next_query("bob");
  REQUIRE(again);
  CHECK(again->query_id == q->query_id);
  try {
    board.submit(label(q->query_id, Choice::a, "alice"));
    FAIL("expected a conflict");
  } catch (const ServiceError& e) {
    CHECK(e.status() == 409);
  }
  CHECK(board.submit(label(q->query_id, Choice::a, "bob")).w == 0.0);
  clock.advance(1000.0);
  try {
    board.post(nav_pairs(1, 2), 1);
    const auto late = board.next_query("carol");
    clock.advance(601.0);
    board.submit(label(late->query_id, Choice::a, "carol"));
    FAIL("expected an expired lease");
  } catch (const ServiceError& e) {
    CHECK(e.status() == 410);
  }
}

TEST_CASE("submissions follow the labeling examples") {
  QueryBoard board(nav_board());
  const auto pairs = nav_pairs(3);
  board.post(pairs, 0);

  const auto q0 = board.next_query("u");
  const Acknowledgment a = board.submit(label(q0->query_id, Choice::a, "u"));
  CHECK(a.w == 0.0);
  CHECK(a.positive_highlights + a.negative_highlights == 0);

  const auto q1 = board.next_query("u");
  const Acknowledgment n = board.submit(label(q1->query_id, Choice::none, "u", kExampleUserText));
  CHECK(n.w == 0.5);
  CHECK(n.positive_highlights + n.negative_highlights == 0);

  const auto q2 = board.next_query("u");
  const Acknowledgment b = board.submit(label(q2->query_id, Choice::b, "u", kExampleUserText));
  CHECK(b.w == 1.0);
  CHECK(b.positive_highlights == 2);
  CHECK(b.negative_highlights == 0);
  CHECK(b.llm_error.empty());

  const auto records = board.results();
  REQUIRE(records);
  REQUIRE(records->size() == 3);
  const auto& r0 = (*records)[0];
  CHECK(r0.w.value() == 0.0);
  CHECK_FALSE(r0.raw_prompt.has_value());
  const auto& r1 = (*records)[1];
  CHECK(r1.raw_prompt == std::optional<std::string>(kExampleUserText));
  CHECK(r1.positives.empty());
  const auto& r2 = (*records)[2];
  REQUIRE(r2.positives.size() == 2);
  CHECK(r2.positives[0].feature == "distance to human");
  CHECK(r2.positives[1].feature == "speed");
  for (const auto& h : r2.positives) {
    CHECK(h.segment_id == pairs[2].second->segment_id);
    CHECK(h.length() == 5);
  }
  CHECK(r2.raw_response.has_value());
  for (const auto& r : *records) CHECK_NOTHROW(validate_shq(r, 5));
  CHECK(board.status().labeled == 3);
}

TEST_CASE("submission errors and idempotence") {
  QueryBoard board(nav_board());
  board.post(nav_pairs(2), 0);
  const auto q = board.next_query("u");
  auto status_of = [&](const LabelSubmission& s) {
    try {
      board.submit(s);
    } catch (const ServiceError& e) {
      return e.status();
    }
    return 200;
  };
  CHECK(status_of(label("p9-q9", Choice::a, "u")) == 404);
  CHECK(status_of(label(q->query_id, Choice::a, "")) == 400);
  CHECK(status_of(label(q->query_id, Choice::a, "u", std::string(2001, 'x'))) == 400);
  CHECK(status_of(label(q->query_id, Choice::a, "v")) == 409);

  const Acknowledgment first = board.submit(label(q->query_id, Choice::b, "u", kExampleUserText));
  CHECK_FALSE(first.duplicate);
  // A repeat returns the prior result even with a different body.
  const Acknowledgment again = board.submit(label(q->query_id, Choice::a, "u"));
  CHECK(again.duplicate);
  CHECK(again.w == first.w);
  CHECK(again.positive_highlights == first.positive_highlights);
  CHECK(board.status().labeled == 1);
  CHECK(board.status().total_labeled == 1);
  CHECK(status_of(label(q->query_id, Choice::a, "v")) == 409);
  CHECK(status_of(label(q->query_id, Choice::a, "u", std::string(2000, 'x'))) == 200);

  CHECK_THROWS_AS(submission_from_json(json::parse(R"({"choice": "a"})")), ServiceError);
  CHECK_THROWS_AS(submission_from_json(json::parse(R"({"choice": "c", "labeler_id": "u"})")),
                  ServiceError);
  const LabelSubmission s =
      submission_from_json(json::parse(R"({"choice": "none", "labeler_id": "u"})"));
  CHECK(s.prompt_text.empty());
  CHECK(s.choice == Choice::none);
}

TEST_CASE("served frames are byte-identical to the stored segment") {
  QueryBoard board(nav_board());
  const auto pairs = nav_pairs(1);
  board.post(pairs, 0);
  const json q = to_json(*board.next_query("u"));
  CHECK(q["segment_a"]["frames"].dump() == frames_to_json(pairs[0].first->frames).dump());
  CHECK(q["segment_b"]["frames"].dump() == frames_to_json(pairs[0].second->frames).dump());
  CHECK(q["segment_a"]["segment_id"] == pairs[0].first->segment_id);
  CHECK(q["status"] == "pending");
  const json frame = q["segment_a"]["frames"][0];
  for (const char* key : {"t", "robot", "humans", "goal", "lidar"}) CHECK(frame.contains(key));
  for (const char* key : {"x", "y", "vx", "vy", "heading", "gain"}) {
    CHECK(frame["robot"].contains(key));
  }
}

TEST_CASE("concurrent labelers produce one record per query") {
  TempDir dir("board");
  QueryBoard board(nav_board(dir.path() / "labels"));
  board.post(nav_pairs(24), 0);
  std::vector<std::thread> workers;
  std::atomic<int> accepted{0};
  for (int w = 0; w < 6; ++w) {
    workers.emplace_back([&, w] {
      const std::string me = "labeler" + std::to_string(w);
      while (auto q = board.next_query(me)) {
        const auto ack = board.submit(label(q->query_id, w % 2 ? Choice::a : Choice::b, me,
                                            w % 3 ? "" : kExampleUserText));
        if (!ack.duplicate) ++accepted;
      }
    });
  }
  for (auto& t : workers) t.join();
  CHECK(accepted == 24);
  const BoardStatus st = board.status();
  CHECK(st.labeled == 24);
  CHECK(st.pending == 0);
  CHECK(st.total_labeled == 24);
  CHECK(count_lines(dir.path() / "labels" / "shq.jsonl") == 24);
  CHECK(load_dataset(dir.path() / "labels").labeled().size() == 24);
}

TEST_CASE("collect blocks until the batch is labeled and close releases it") {
  QueryBoard board(nav_board());
  const auto pairs = nav_pairs(4);
  std::vector<SentimentHighlightedQuery> got;
  std::thread loop([&] { got = board.collect(pairs, 3); });
  int labeled = 0;
  while (labeled < 4) {
    if (auto q = board.next_query("u")) {
      CHECK(q->phase == 3);
      board.submit(label(q->query_id, Choice::a, "u"));
      ++labeled;
    } else {
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }
  loop.join();
  REQUIRE(got.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(got[i].segment_a == pairs[i].first);

  std::atomic<bool> pending{false};
  std::thread blocked([&] {
    try {
      board.collect(nav_pairs(2, 5), 4);
    } catch (const orchestrator::FeedbackPending&) {
      pending = true;
    }
  });
  while (!board.status().waiting) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  board.close();
  blocked.join();
  CHECK(pending);
  CHECK(board.closed());
}

TEST_CASE("a restarted board replays journaled labels") {
  TempDir dir("journal");
  const auto pairs = nav_pairs(3);
  {
    QueryBoard board(nav_board(dir.path()));
    board.post(pairs, 2);
    for (int i = 0; i < 2; ++i) {
      const auto q = board.next_query("u");
      board.submit(label(q->query_id, Choice::b, "u", kExampleUserText));
    }
  }
  QueryBoard board(nav_board(dir.path()));
  CHECK(board.status().total_labeled == 2);
  board.post(pairs, 2);
  CHECK(board.status().labeled == 2);
  CHECK(board.status().pending == 1);
  const auto q = board.next_query("v");
  CHECK(q->query_id == QueryBoard::query_id(2, 2));
  board.submit(label(q->query_id, Choice::a, "v"));
  const auto records = board.results();
  REQUIRE(records);
  CHECK((*records)[0].positives.size() == 2);
  CHECK(count_lines(dir.path() / "shq.jsonl") == 3);

  // Different pairs under the same ids are not replayed.
  QueryBoard other(nav_board(dir.path()));
  other.post(nav_pairs(3, 9), 2);
  CHECK(other.status().labeled == 0);
}

TEST_CASE("HTTP endpoints label five queries") {
  QueryBoard board(nav_board());
  board.post(nav_pairs(5), 0);
  HttpServer server(board);
  const int port = server.bind("127.0.0.1", 0);
  std::thread serve([&] { server.listen(); });
  httplib::Client cli("127.0.0.1", port);
  cli.set_connection_timeout(5);

  auto root = cli.Get("/");
  REQUIRE(root);
  CHECK(root->status == 200);

  auto st = cli.Get("/status");
  REQUIRE(st);
  CHECK(json::parse(st->body)["pending"] == 5);

  for (int i = 0; i < 5; ++i) {
    auto next = cli.Get("/queries/next?labeler=web");
    REQUIRE(next);
    REQUIRE(next->status == 200);
    const json body = json::parse(next->body);
    REQUIRE(!body["query"].is_null());
    const std::string id = body["query"]["query_id"];
    const json sub = {{"choice", i % 2 ? "a" : "b"},
                      {"prompt_text", i == 0 ? kExampleUserText : ""},
                      {"labeler_id", "web"}};
    auto res = cli.Post("/queries/" + id + "/label", sub.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    const json ack = json::parse(res->body);
    CHECK(ack["query_id"] == id);
    if (i == 0) CHECK(ack["positive_highlights"] == 2);
  }
  auto done = cli.Get("/queries/next?labeler=web");
  REQUIRE(done);
  const json empty = json::parse(done->body);
  CHECK(empty["query"].is_null());
  CHECK(empty["status"]["labeled"] == 5);
  CHECK(empty["status"]["pending"] == 0);

  auto missing = cli.Get("/queries/next");
  REQUIRE(missing);
  CHECK(missing->status == 400);
  auto unknown = cli.Post("/queries/nope/label", R"({"choice":"a","labeler_id":"web"})",
                          "application/json");
  REQUIRE(unknown);
  CHECK(unknown->status == 404);
  CHECK(json::parse(unknown->body).contains("error"));
  auto garbage = cli.Post("/queries/p0-q0/label", "{", "application/json");
  REQUIRE(garbage);
  CHECK(garbage->status == 400);
  auto mismatch = cli.Post("/queries/p0-q0/label",
                           R"({"query_id":"p0-q1","choice":"a","labeler_id":"web"})",
                           "application/json");
  REQUIRE(mismatch);
  CHECK(mismatch->status == 400);

  server.stop();
  serve.join();
  CHECK(board.results().has_value());
}

TEST_CASE("static files are served from the UI directory") {
  TempDir dir("static");
  {
    std::ofstream(dir.path() / "index.html") << "<html>ui</html>";
  }
  QueryBoard board(nav_board());
  HttpServer server(board, dir.path());
  const int port = server.bind("127.0.0.1", 0);
  std::thread serve([&] { server.listen(); });
  httplib::Client cli("127.0.0.1", port);
  auto res = cli.Get("/");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->body == "<html>ui</html>");
  server.stop();
  serve.join();
  CHECK_THROWS_AS(HttpServer(board, dir.path() / "missing"), Error);
}

TEST_CASE("the loop runs end to end with labels from the service") {
  orchestrator::ExperimentConfig c;
  c.seed = 3;
  c.loop.env = "socialnav";
  c.loop.source = orchestrator::FeedbackSource::human;
  c.loop.total_timesteps = 1000;
  c.loop.update_interval = 500;
  c.loop.query_budget = 10;
  c.loop.segment_length = 10;
  c.loop.eval_episodes = 1;
  c.reward.highlight_length = 3;
  c.reward.hidden = {8};
  c.reward.epochs_initial = 2;
  c.reward.epochs_update = 1;
  c.ppo.hidden = {8};
  c.ppo.n_steps = 250;
  c.ppo.n_epochs = 1;

  BoardConfig b = nav_board();
  b.highlight_length = 3;
  b.budget = 10;
  QueryBoard board(b);
  HttpServer server(board);
  const int port = server.bind("127.0.0.1", 0);
  std::thread serve([&] { server.listen(); });

  orchestrator::RunResult result;
  std::atomic<bool> done{false};
  std::thread loop([&] {
    result = orchestrator::run_predilect(c, {{}, false, &board});
    done = true;
  });
  httplib::Client cli("127.0.0.1", port);
  int labeled = 0;
  // One query at the start and one after the first policy phase; none at the end.
  while (!done) {
    auto next = cli.Get("/queries/next?labeler=h");
    REQUIRE(next);
    const json body = json::parse(next->body);
    if (body["query"].is_null()) {
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
      continue;
    }
    const json sub = {{"choice", "b"}, {"prompt_text", kExampleUserText}, {"labeler_id", "h"}};
    auto res = cli.Post("/queries/" + std::string(body["query"]["query_id"]) + "/label",
                        sub.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    ++labeled;
  }
  loop.join();
  server.stop();
  serve.join();
  CHECK(result.log.status == "complete");
  CHECK(labeled == 2);
  CHECK(result.dataset.labeled().size() == 2);
  CHECK(result.log.updates.back().positive_highlights == 4);
}
