// predilect: run learning experiments, serve human labeling, export curves.
#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "predilect/orchestrator.hpp"
#include "predilect/service.hpp"

namespace fs = std::filesystem;
using namespace predilect;
using namespace predilect::orchestrator;
using nlohmann::json;

namespace {

struct RunFlags {
  std::string config_path;
  std::string env;
  std::string mode;
  int queries = 0;
  std::uint64_t seed = 0;
  std::string llm;
  std::string features;
  long timesteps = 0;
  std::string out;
  bool resume = false;
  CLI::Option* seed_opt = nullptr;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config; flags override its values")
      ->check(CLI::ExistingFile);
  cmd->add_option("--env", f.env, "environment")
      ->check(CLI::IsMember({"pointreach", "socialnav"}));
  cmd->add_option("--mode", f.mode, "reward learning mode")
      ->check(CLI::IsMember({"predilect", "baseline", "highlights_only"}));
  cmd->add_option("--queries", f.queries, "query budget N")->check(CLI::PositiveNumber);
  f.seed_opt = cmd->add_option("--seed", f.seed, "experiment seed");
  cmd->add_option("--llm", f.llm, "LLM provider for text feedback")
      ->check(CLI::IsMember({"mock", "remote"}));
  cmd->add_option("--features", f.features, "comma-separated feature subset");
  cmd->add_option("--timesteps", f.timesteps, "total policy timesteps")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--out", f.out, "run directory (log, checkpoint, dataset)");
  cmd->add_flag("--resume", f.resume, "continue from the checkpoint in --out");
}

std::vector<std::string> split_features(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

ExperimentConfig resolve(const RunFlags& f) {
  ExperimentConfig c;
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(f.config_path + ": " + e.what());
    }
    c = config_from_json(j);
  }
  if (!f.env.empty()) c.loop.env = f.env;
  if (!f.mode.empty()) c.loop.mode = parse_mode(f.mode);
  if (f.queries > 0) c.loop.query_budget = f.queries;
  if (f.seed_opt && f.seed_opt->count() > 0) c.seed = f.seed;
  if (!f.llm.empty()) {
    c.llm.provider = feedback::parse_llm_provider(f.llm);
    c.loop.source = FeedbackSource::llm;
  }
  if (!f.features.empty()) c.loop.features = split_features(f.features);
  if (f.timesteps > 0) c.loop.total_timesteps = f.timesteps;
  return c;
}

void echo_config(const RunFlags& f, const ExperimentConfig& c) {
  std::cout << (f.config_path.empty() ? "no --config given; built-in defaults:"
                                      : "configuration from " + f.config_path + ":")
            << "\n"
            << config_to_json(c).dump(2) << "\n";
}

fs::path out_dir(const RunFlags& f, const ExperimentConfig& c) {
  if (!f.out.empty()) return f.out;
  return fs::path("runs") /
         (c.loop.env + "-" + std::string(to_string(c.loop.mode)) + "-s" + std::to_string(c.seed));
}

void summarize(const RunResult& r, const fs::path& dir) {
  std::cout << "status: " << r.log.status << "\n";
  if (!r.log.updates.empty()) {
    const auto& u = r.log.updates.back();
    std::cout << "timestep " << u.timestep << ", queries " << u.queries_used
              << ", true return " << u.eval.mean_return << " +- " << u.eval.stderr_return
              << "\n";
  }
  std::cout << "log: " << (dir / "log.json").string() << "\n";
}

int run_experiment(const RunFlags& f, bool force_oracle) {
  ExperimentConfig c = resolve(f);
  if (force_oracle && c.loop.source == FeedbackSource::human) c.loop.source = FeedbackSource::oracle;
  if (c.loop.source == FeedbackSource::human) {
    throw Error("human feedback needs the labeling service; use 'predilect serve'");
  }
  echo_config(f, c);
  const fs::path dir = out_dir(f, c);
  const RunResult r = run_predilect(c, {dir, f.resume, nullptr});
  summarize(r, dir);
  return 0;
}

std::atomic<int> g_signal{0};

extern "C" void on_signal(int sig) { g_signal = sig; }

int serve(const RunFlags& f, const std::string& address, const std::string& static_dir,
          double lease_seconds) {
  ExperimentConfig c = resolve(f);
  c.loop.source = FeedbackSource::human;
  echo_config(f, c);
  const fs::path dir = out_dir(f, c);

  service::BoardConfig b;
  b.features = select_features(c.loop.env, c.loop.features);
  b.task = std::string(feedback::task_description(c.loop.env));
  b.llm = c.llm;
  b.highlight_length = c.reward.highlight_length;
  b.budget = c.loop.query_budget;
  b.lease_seconds = lease_seconds;
  b.data_dir = dir / "labels";
  service::QueryBoard board(b);
  service::HttpServer server(board, static_dir);
  const auto [host, requested] = service::parse_address(address);
  const int port = server.bind(host, requested);
  std::cout << "serving on http://" << host << ":" << port << std::endl;
  std::thread http([&] { server.listen(); });

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::atomic<bool> done{false};
  RunResult result;
  std::exception_ptr failure;
  std::thread loop([&] {
    try {
      result = run_predilect(c, {dir, f.resume, &board});
    } catch (...) {
      failure = std::current_exception();
    }
    done = true;
  });
  while (!done) {
    if (g_signal != 0) board.close();
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  loop.join();
  server.stop();
  http.join();
  if (failure) std::rethrow_exception(failure);
  summarize(result, dir);
  if (result.log.status == "paused") {
    std::cout << "resume with: predilect serve --out " << dir.string() << " --resume\n";
  }
  return 0;
}

std::vector<ExperimentLog> load_logs(const std::vector<std::string>& inputs) {
  std::vector<ExperimentLog> logs;
  for (const auto& in : inputs) {
    fs::path p = in;
    if (fs::is_directory(p)) p /= "log.json";
    std::ifstream file(p);
    if (!file) throw Error("cannot read " + p.string());
    try {
      logs.push_back(log_from_json(json::parse(file)));
    } catch (const json::exception& e) {
      throw Error(p.string() + ": " + e.what());
    }
  }
  return logs;
}

int export_csv(const std::vector<std::string>& inputs, const std::string& out) {
  const auto logs = load_logs(inputs);
  const fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  fs::create_directories(dir);
  std::ofstream(dir / "curves.csv") << curves_csv(logs);
  std::ofstream(dir / "force.csv") << force_csv(logs);
  std::cout << "wrote " << (dir / "curves.csv").string() << " and "
            << (dir / "force.csv").string() << " from " << logs.size() << " run(s)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PREDILECT: preference and highlight based reward learning"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  RunFlags oracle_flags, train_flags, serve_flags;
  auto* oracle = app.add_subcommand(
      "oracle-experiment", "run the learning loop with the synthetic oracle labeler");
  add_run_flags(oracle, oracle_flags);
  auto* train = app.add_subcommand("train", "run the learning loop as configured");
  add_run_flags(train, train_flags);
  auto* srv = app.add_subcommand("serve", "run the loop with human labels over HTTP");
  add_run_flags(srv, serve_flags);
  std::string address = "127.0.0.1:8080", static_dir;
  double lease_seconds = 600.0;
  srv->add_option("--serve-addr", address, "listen address host:port");
  srv->add_option("--static", static_dir, "directory of the UI bundle served at /")
      ->check(CLI::ExistingDirectory);
  srv->add_option("--lease-seconds", lease_seconds, "query lease duration")
      ->check(CLI::PositiveNumber);
  auto* exp = app.add_subcommand("export", "write curves.csv and force.csv from run logs");
  std::vector<std::string> inputs;
  std::string export_out;
  exp->add_option("runs", inputs, "run directories or log.json files")->required();
  exp->add_option("--out", export_out, "output directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*oracle) return run_experiment(oracle_flags, true);
    if (*train) return run_experiment(train_flags, false);
    if (*srv) return serve(serve_flags, address, static_dir, lease_seconds);
    if (*exp) return export_csv(inputs, export_out);
  } catch (const std::exception& e) {
    std::cerr << "predilect: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
