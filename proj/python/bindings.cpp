#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "pcnet/io.hpp"
#include "pcnet/numeric.hpp"
#include "pcnet/pipeline.hpp"

namespace py = pybind11;
using namespace pcnet;

namespace {

std::vector<ScoredSample> scored(const std::vector<double>& nll, const std::vector<int>& labels) {
  if (nll.size() != labels.size()) throw Error("scores and labels differ in length");
  std::vector<ScoredSample> out;
  for (std::size_t i = 0; i < nll.size(); ++i)
    out.push_back({nll[i], labels[i] ? Label::kHallucinated : Label::kFactual});
  return out;
}

py::dict decision_dict(const GateDecision& d) {
  py::list cands;
  for (const CandidateScore& c : d.candidates) {
    py::dict e;
    e["token"] = c.token;
    e["lm_logprob"] = c.lm_logprob;
    e["candidate_nll"] = c.candidate_nll;
    e["ldcd_score"] = c.ldcd_score;
    cands.append(e);
  }
  py::dict out;
  out["step"] = d.step;
  out["nll"] = d.nll;
  out["beta"] = d.beta;
  out["intervened"] = d.intervened;
  out["chosen"] = d.chosen;
  out["candidates"] = cands;
  return out;
}

py::dict epoch_dict(const EpochStats& e) {
  py::dict out;
  out["epoch"] = e.epoch;
  out["total_loss"] = e.total_loss;
  out["pos_nll"] = e.pos_nll;
  out["neg_nll"] = e.neg_nll;
  out["margin_violation_rate"] = e.margin_violation_rate;
  return out;
}

}  // namespace

PYBIND11_MODULE(_pcnet, m) {
  m.doc() = "Probabilistic-circuit hallucination detection and gated decoding";

  py::register_exception<Error>(m, "PcnetError", PyExc_ValueError);

  py::class_<CircuitGraph>(m, "Circuit")
      .def_readonly("num_dims", &CircuitGraph::num_dims)
      .def_readonly("depth", &CircuitGraph::depth)
      .def_readonly("branching", &CircuitGraph::branching)
      .def_readonly("root", &CircuitGraph::root)
      .def_property_readonly("num_nodes", [](const CircuitGraph& c) { return c.nodes.size(); })
      .def("log_density", [](const CircuitGraph& c, const std::vector<double>& z) { return log_density(c, z); })
      .def(
          "validate",
          [](const CircuitGraph& c) {
            std::vector<std::string> out;
            for (const Violation& v : validate(c))
              out.push_back("node " + std::to_string(v.node) + " " + v.kind + ": " + v.message);
            return out;
          },
          "Structural and parameter violations; empty when valid");
  m.def("build_random_circuit", &build_random_circuit, py::arg("num_dims"), py::arg("depth"), py::arg("branching"),
        py::arg("seed"));

  py::class_<Bottleneck>(m, "Bottleneck")
      .def_readonly("input_dim", &Bottleneck::input_dim)
      .def_readonly("hidden_dim", &Bottleneck::hidden_dim)
      .def_readonly("output_dim", &Bottleneck::output_dim)
      .def("project", [](const Bottleneck& b, const std::vector<double>& h) { return project(b, h); });
  m.def("init_bottleneck", &init_bottleneck, py::arg("input_dim"), py::arg("hidden_dim"), py::arg("output_dim"),
        py::arg("seed"));

  py::class_<PcNet>(m, "Model")
      .def(py::init([](CircuitGraph c, Bottleneck b) { return PcNet{std::move(c), std::move(b)}; }),
           py::arg("circuit"), py::arg("bottleneck"))
      .def_readonly("circuit", &PcNet::circuit)
      .def_readonly("bottleneck", &PcNet::bottleneck)
      .def("log_density", [](const PcNet& p, const std::vector<double>& h) { return log_density(p, h); })
      .def("nll", [](const PcNet& p, const std::vector<double>& h) { return nll_score(p, h); })
      .def("save", [](const PcNet& p, const std::filesystem::path& path) { save_checkpoint(path, {p, std::nullopt}); })
      .def_static("load", [](const std::filesystem::path& path) { return load_checkpoint(path).model; });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &TrainConfig::alpha)
      .def_readwrite("gamma", &TrainConfig::gamma)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("clip_norm", &TrainConfig::clip_norm)
      .def_readwrite("seed", &TrainConfig::seed);

  m.def(
      "composite_loss",
      [](const PcNet& model, const std::vector<std::vector<double>>& pos, const std::vector<std::vector<double>>& neg,
         double alpha, double gamma) { return composite_loss(model, PairedBatch{pos, neg}, alpha, gamma).total; },
      py::arg("model"), py::arg("positives"), py::arg("negatives"), py::arg("alpha") = 0.8, py::arg("gamma") = 5.0);

  m.def(
      "train",
      [](const PcNet& model, const std::vector<std::vector<double>>& pos, const std::vector<std::vector<double>>& neg,
         const TrainConfig& config) {
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(model, PairedBatch{pos, neg}, config);
        }
        py::list history;
        for (const EpochStats& e : r.history) history.append(epoch_dict(e));
        py::dict out;
        out["model"] = r.model;
        out["history"] = history;
        out["diverged"] = r.diverged;
        out["error"] = r.error;
        return out;
      },
      py::arg("model"), py::arg("positives"), py::arg("negatives"), py::arg("config") = TrainConfig{});

  m.def(
      "auroc", [](const std::vector<double>& nll, const std::vector<int>& labels) { return auroc(scored(nll, labels)); },
      py::arg("nll"), py::arg("labels"), "Labels: 1 = hallucinated (positive class)");
  m.def(
      "f1_at",
      [](const std::vector<double>& nll, const std::vector<int>& labels, double tau) {
        return f1_at(scored(nll, labels), tau);
      },
      py::arg("nll"), py::arg("labels"), py::arg("tau"));
  m.def(
      "calibrate_threshold",
      [](const std::vector<double>& nll, const std::vector<int>& labels) {
        const Threshold t = calibrate_threshold(scored(nll, labels));
        return py::make_tuple(t.tau, t.f1);
      },
      py::arg("nll"), py::arg("labels"), "Returns (tau, f1)");

  m.def("gate_strength", &gate_strength, py::arg("nll"), py::arg("tau"));
  m.def("ldcd_score", &ldcd_score, py::arg("lm_logprob"), py::arg("beta"), py::arg("candidate_nll"));
  m.def(
      "top_k", [](const std::vector<double>& v, std::size_t k) { return top_k(v, k); }, py::arg("values"), py::arg("k"));

  py::class_<ToyLmConfig>(m, "ToyLmConfig")
      .def(py::init<>())
      .def_readwrite("num_anchors", &ToyLmConfig::num_anchors)
      .def_readwrite("d_llm", &ToyLmConfig::d_llm)
      .def_readwrite("anchor_scale", &ToyLmConfig::anchor_scale)
      .def_readwrite("displacement", &ToyLmConfig::displacement)
      .def_readwrite("recurrence_gain", &ToyLmConfig::recurrence_gain)
      .def_readwrite("embedding_noise", &ToyLmConfig::embedding_noise)
      .def_readwrite("logit_gain", &ToyLmConfig::logit_gain)
      .def_readwrite("shadow_logit_gain", &ToyLmConfig::shadow_logit_gain)
      .def_readwrite("drift_logit_gain", &ToyLmConfig::drift_logit_gain)
      .def_readwrite("seed", &ToyLmConfig::seed);

  py::class_<ToyLm>(m, "ToyLm")
      .def(py::init<const ToyLmConfig&>(), py::arg("config") = ToyLmConfig{})
      .def_property_readonly("vocab_size", &ToyLm::vocab_size)
      .def("is_hallucination", &ToyLm::is_hallucination)
      .def("log_probs", [](const ToyLm& lm, const std::vector<Token>& p) { return lm.log_probs(p); })
      .def("hidden", [](const ToyLm& lm, const std::vector<Token>& p) { return lm.hidden(p); })
      .def("lookahead_hidden",
           [](const ToyLm& lm, const std::vector<Token>& p, Token c) { return lm.lookahead_hidden(p, c); });

  m.def(
      "planted_corpus",
      [](const ToyLm& lm, std::size_t n, std::uint64_t seed) {
        const PlantedCorpus c = build_planted_corpus(lm, n, seed);
        const py::object loads = py::module_::import("json").attr("loads");
        py::list prompts;
        for (const PlantedPrompt& p : c.prompts) prompts.append(loads(to_json(p).dump()));
        py::dict out;
        out["prompts"] = prompts;
        out["positives"] = c.states.positives;
        out["negatives"] = c.states.negatives;
        return out;
      },
      py::arg("lm"), py::arg("n_samples"), py::arg("seed"));

  m.def(
      "generate",
      [](const PcNet& model, const ToyLm& lm, const std::vector<Token>& prompt, const std::string& mode, double tau,
         std::size_t k, std::size_t max_tokens, double gate_margin) {
        DecodeOptions o;
        o.mode = parse_decode_mode(mode);
        o.tau = tau;
        o.k = k;
        o.gate_margin = gate_margin;
        EvalStats stats;
        const Generation g = generate(lm, prompt, model, o, max_tokens, &stats);
        py::list decisions;
        for (const GateDecision& d : g.decisions) decisions.append(decision_dict(d));
        py::dict out;
        out["tokens"] = g.tokens;
        out["decisions"] = decisions;
        out["circuit_passes"] = stats.passes;
        return out;
      },
      py::arg("model"), py::arg("lm"), py::arg("prompt"), py::arg("mode") = "gated", py::arg("tau") = 0.0,
      py::arg("k") = 8, py::arg("max_tokens") = 3, py::arg("gate_margin") = 0.05);

  m.def(
      "run_train_and_detect",
      [](std::uint64_t seed, std::size_t train_samples, std::size_t proj_dim, std::size_t epochs, double displacement) {
        RunConfig c = RunConfig{}.with_seed(seed);
        c.train_samples = train_samples;
        c.proj_dim = proj_dim;
        c.train.epochs = epochs;
        c.toylm.displacement = displacement;
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_train_and_detect(c);
        }
        py::list history;
        for (const EpochStats& e : r.training.history) history.append(epoch_dict(e));
        py::dict out;
        out["model"] = r.training.model;
        out["history"] = history;
        out["auroc"] = r.detection.auroc;
        out["f1"] = r.detection.f1;
        out["tau"] = r.detection.tau;
        return out;
      },
      py::arg("seed") = 42, py::arg("train_samples") = 500, py::arg("proj_dim") = 128, py::arg("epochs") = 50,
      py::arg("displacement") = 2.0, "One train + detect run on the planted corpus with default settings otherwise");
}
