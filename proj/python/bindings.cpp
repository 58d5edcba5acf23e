#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "entlab/errors.hpp"
#include "entlab/harness.hpp"
#include "entlab/verify.hpp"

namespace py = pybind11;
using namespace entlab;

namespace {

// JSON crosses the boundary as text; the Python side wraps it with json.loads / json.dumps.
ExperimentConfig config_from_text(const std::string& text, const std::string& base_dir) {
  return config_from_json(Json::parse(text), base_dir);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Entropy-dynamics laboratory for tabular softmax policies";

  py::register_exception<Error>(m, "EntlabError", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<SoftmaxPolicy>(m, "SoftmaxPolicy")
      .def(py::init<std::size_t, std::size_t>(), py::arg("num_states"), py::arg("num_actions"))
      .def(py::init([](const Matrix& logits) { return SoftmaxPolicy(logits); }), py::arg("logits"))
      .def_property_readonly("logits", &SoftmaxPolicy::logits)
      .def_property_readonly("probabilities", &SoftmaxPolicy::probabilities)
      .def_property_readonly("num_states", &SoftmaxPolicy::num_states)
      .def_property_readonly("num_actions", &SoftmaxPolicy::num_actions)
      .def("state_entropy", [](const SoftmaxPolicy& p, std::size_t s) { return state_entropy(p, s); })
      .def("entropy_gradient", [](const SoftmaxPolicy& p, std::size_t s) { return entropy_gradient(p, s); });

  py::class_<TabularTask>(m, "TabularTask")
      .def_readonly("num_states", &TabularTask::num_states)
      .def_readonly("num_actions", &TabularTask::num_actions)
      .def_readonly("horizon", &TabularTask::horizon)
      .def_readonly("reward", &TabularTask::reward)
      .def("to_json", [](const TabularTask& t) { return task_to_json(t).dump(); });

  m.def("builtin_task", [](const std::string& name) {
    const auto t = builtin_task(name);
    if (!t) throw ValidationError("unknown builtin task: " + name);
    return *t;
  });
  m.def("make_bandit", &make_bandit, py::arg("rewards"));
  m.def("expected_reward", &expected_reward, py::arg("task"), py::arg("policy"));
  m.def("policy_gradient", &policy_gradient, py::arg("task"), py::arg("policy"));
  m.def(
      "evaluate_policy",
      [](const TabularTask& task, const SoftmaxPolicy& policy) {
        const AdvantageTable t = evaluate_policy(task, policy);
        py::dict out;
        out["q_values"] = t.q_values;
        out["v_values"] = t.v_values;
        out["advantages"] = t.advantages;
        out["occupancy"] = t.occupancy;
        out["visitation"] = t.visitation;
        return out;
      },
      py::arg("task"), py::arg("policy"));
  m.def(
      "effective_covariance",
      [](const std::vector<double>& c, const std::vector<std::size_t>& clip) { return effective_covariance(c, clip); },
      py::arg("token_cov"), py::arg("clip_set"));
  m.def(
      "fit_exponential_law",
      [](const std::vector<double>& entropy, const std::vector<double>& reward) {
        if (entropy.size() != reward.size()) throw ValidationError("entropy and reward lengths differ");
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < entropy.size(); ++i) pts.emplace_back(entropy[i], reward[i]);
        const ExpFit f = fit_exponential_law(pts);
        return py::make_tuple(f.a, f.b, f.r_squared);
      },
      py::arg("entropy"), py::arg("reward"));

  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::string& base_dir) {
        const ExperimentConfig config = config_from_text(config_json, base_dir);
        TrainingTrace trace;
        {
          py::gil_scoped_release release;
          trace = run_experiment(config);
        }
        return trace_to_jsonl(trace, config);
      },
      py::arg("config_json"), py::arg("base_dir") = "",
      "Runs a config given as JSON text and returns the JSONL trace.");
  m.def(
      "trace_summary",
      [](const std::string& jsonl) {
        const LoadedTrace loaded = trace_from_jsonl(jsonl);
        const ExperimentConfig config = config_from_json(loaded.config);
        return trace_summary(loaded.trace, &config).dump();
      },
      py::arg("jsonl"));
  m.def(
      "trace_to_csv", [](const std::string& jsonl) { return trace_to_csv(trace_from_jsonl(jsonl).trace); },
      py::arg("jsonl"));
  m.def(
      "config_digest", [](const std::string& config_json) { return config_digest(config_from_text(config_json, "")); },
      py::arg("config_json"));
  m.def(
      "probe_stability",
      [](const std::string& config_json, double epsilon) {
        return probe_stability(config_from_text(config_json, ""), epsilon).dump();
      },
      py::arg("config_json"), py::arg("epsilon"));
  m.def(
      "verify",
      [](bool self_check) {
        VerifyReport report;
        {
          py::gil_scoped_release release;
          report = verify_suite(self_check);
        }
        return report.to_json().dump();
      },
      py::arg("self_check") = false);
}
