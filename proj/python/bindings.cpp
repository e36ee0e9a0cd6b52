#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "predilect/feedback.hpp"
#include "predilect/orchestrator.hpp"
#include "predilect/reward.hpp"
#include "predilect/serialization.hpp"

namespace py = pybind11;
using namespace predilect;
using nlohmann::json;

namespace {

orchestrator::ExperimentConfig parse_config(const std::string& text) {
  return text.empty() ? orchestrator::ExperimentConfig{}
                      : orchestrator::config_from_json(json::parse(text));
}

std::vector<orchestrator::ExperimentLog> parse_logs(const std::vector<std::string>& logs) {
  std::vector<orchestrator::ExperimentLog> out;
  for (const auto& l : logs) out.push_back(orchestrator::log_from_json(json::parse(l)));
  return out;
}

class PyEnvironment {
 public:
  explicit PyEnvironment(const std::string& config_json)
      : env_(orchestrator::make_environment(parse_config(config_json))) {}

  std::vector<double> reset(std::uint64_t seed) {
    rng_ = seeded_rng(seed, "python-env");
    return env_->reset(rng_);
  }
  py::tuple step(const std::vector<double>& action) {
    const envs::Transition t = env_->step(action);
    return py::make_tuple(t.observation, t.done, t.truncated);
  }
  double true_reward() { return env_->last_true_reward(); }
  std::string frame() const { return frame_to_json(env_->frame()).dump(); }
  std::string name() const { return env_->name(); }
  int observation_dim() const { return env_->observation_dim(); }
  int action_dim() const { return env_->action_dim(); }

 private:
  std::unique_ptr<envs::Environment> env_;
  Rng rng_ = seeded_rng(0, "python-env");
};

}  // namespace

PYBIND11_MODULE(_predilect, m) {
  m.doc() = "PREDILECT core bindings; JSON crosses the boundary as text.";

  py::register_exception<Error>(m, "PredilectError", PyExc_ValueError);

  m.def("preference_probability", &reward::preference_prob_from_returns, py::arg("return_0"),
        py::arg("return_1"), "Bradley-Terry probability that the first segment is preferred.");

  m.def(
      "build_prompt",
      [](const std::string& text, const std::vector<std::string>& features,
         const std::string& env) {
        return feedback::build_prompt(text, features, feedback::task_description(env));
      },
      py::arg("user_text"), py::arg("features"), py::arg("env") = "socialnav");
  m.def("mock_llm", [](const std::string& prompt) { return feedback::mock_llm(prompt); },
        py::arg("prompt"));
  m.def(
      "parse_llm_response",
      [](const std::string& raw, const std::vector<std::string>& features) {
        const auto r = feedback::parse_llm_response(raw, features);
        json out = json::array();
        for (const auto& t : r.triplets) out.push_back(triplet_to_json(t));
        return out.dump();
      },
      py::arg("raw"), py::arg("features"));
  m.def(
      "best_window",
      [](const std::vector<double>& column, int length, const std::string& value) {
        return feedback::best_window(column, length, parse_magnitude(value));
      },
      py::arg("column"), py::arg("length"), py::arg("value"));

  m.def("default_config", [] { return orchestrator::config_to_json({}).dump(); });
  m.def(
      "normalize_config",
      [](const std::string& text) { return orchestrator::config_to_json(parse_config(text)).dump(); },
      py::arg("config_json"));
  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::string& out_dir, bool resume) {
        const auto config = parse_config(config_json);
        orchestrator::RunResult r;
        {
          py::gil_scoped_release release;
          r = orchestrator::run_predilect(config, {out_dir, resume, nullptr});
        }
        return orchestrator::log_to_json(r.log).dump();
      },
      py::arg("config_json"), py::arg("out_dir") = "", py::arg("resume") = false);
  m.def(
      "curves_csv",
      [](const std::vector<std::string>& logs) { return orchestrator::curves_csv(parse_logs(logs)); },
      py::arg("logs"));
  m.def(
      "force_csv",
      [](const std::vector<std::string>& logs) { return orchestrator::force_csv(parse_logs(logs)); },
      py::arg("logs"));

  py::class_<PyEnvironment>(m, "Environment")
      .def(py::init<const std::string&>(), py::arg("config_json") = "")
      .def("reset", &PyEnvironment::reset, py::arg("seed"))
      .def("step", &PyEnvironment::step, py::arg("action"))
      .def("true_reward", &PyEnvironment::true_reward)
      .def("frame", &PyEnvironment::frame)
      .def_property_readonly("name", &PyEnvironment::name)
      .def_property_readonly("observation_dim", &PyEnvironment::observation_dim)
      .def_property_readonly("action_dim", &PyEnvironment::action_dim);
}
