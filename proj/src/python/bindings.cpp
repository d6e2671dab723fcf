#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "json.hpp"
#include "mmn/analytics.hpp"
#include "mmn/cli.hpp"
#include "mmn/dataset.hpp"
#include "mmn/text.hpp"
#include "mmn/training.hpp"
#include "mmn/verification.hpp"

namespace py = pybind11;
using namespace mmn;

namespace {

py::object json_to_py(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

std::string py_to_json(const py::object& obj) { return py::module_::import("json").attr("dumps")(obj).cast<std::string>(); }

py::dict rouge_dict(const RougeScore& s) {
  py::dict d;
  d["precision"] = s.precision;
  d["recall"] = s.recall;
  d["f1"] = s.f1;
  return d;
}

std::vector<Example> to_examples(const std::vector<std::pair<std::vector<TokenId>, std::vector<TokenId>>>& pairs) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) out.push_back({std::to_string(i), pairs[i].first, pairs[i].second});
  return out;
}

py::dict smoke_dict(const SmokeResult& r) {
  py::dict d;
  d["passed"] = r.passed;
  d["exact"] = r.exact;
  d["pairs"] = r.pairs;
  d["final_loss"] = r.final_loss;
  d["loss_floor"] = r.loss_floor;
  d["loss_target"] = r.loss_target;
  d["epochs"] = r.epochs;
  d["parameters"] = r.parameters;
  d["seconds"] = r.seconds;
  d["epoch_loss"] = r.epoch_loss;
  return d;
}

py::dict outcome_dict(const CheckOutcome& o) {
  py::dict d;
  d["name"] = o.name;
  d["passed"] = o.passed;
  d["value"] = o.value;
  d["threshold"] = o.threshold;
  d["detail"] = o.detail;
  return d;
}

}  // namespace

PYBIND11_MODULE(_mmn, m) {
  m.doc() = "Multi-level memory network summarizer";

  py::register_exception<CorpusFormatError>(m, "CorpusFormatError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);
  py::register_exception<UndefinedRatioError>(m, "UndefinedRatioError", PyExc_ValueError);

  m.def("normalize_text", &normalize_text, py::arg("text"));
  m.def("tokenize", &tokenize, py::arg("text"));
  m.def("trim_summary_prefix", &trim_summary_prefix, py::arg("summary"));

  py::class_<Vocabulary>(m, "Vocabulary")
      .def_static(
          "build",
          [](const std::vector<std::vector<std::string>>& corpus, std::size_t max_size) {
            return Vocabulary::build(corpus, max_size);
          },
          py::arg("corpus"), py::arg("max_size") = kDefaultVocabularySize)
      .def_static("load", &Vocabulary::load, py::arg("path"))
      .def("save", &Vocabulary::save, py::arg("path"))
      .def("__len__", &Vocabulary::size)
      .def("__contains__", [](const Vocabulary& v, const std::string& t) { return v.contains(t); })
      .def("id", [](const Vocabulary& v, const std::string& t) { return v.id(t); })
      .def("token", &Vocabulary::token)
      .def("tokens", &Vocabulary::tokens)
      .def("encode", [](const Vocabulary& v, const std::vector<std::string>& t) { return v.encode(t); })
      .def("decode", [](const Vocabulary& v, const std::vector<TokenId>& ids) { return v.decode(ids); });
  m.attr("PAD_ID") = kPadId;
  m.attr("UNK_ID") = kUnkId;
  m.attr("BOS_ID") = kBosId;
  m.attr("EOS_ID") = kEosId;

  m.def(
      "rouge_n",
      [](const TokenList& c, const TokenList& r, std::size_t n) { return rouge_dict(rouge_n(c, r, n)); },
      py::arg("candidate"), py::arg("reference"), py::arg("n"));
  m.def(
      "rouge_l", [](const TokenList& c, const TokenList& r) { return rouge_dict(rouge_l(c, r)); }, py::arg("candidate"),
      py::arg("reference"));
  m.def(
      "ext_oracle",
      [](const std::vector<TokenList>& sentences, const TokenList& reference, std::size_t k) {
        const auto r = ext_oracle(sentences, reference, k);
        return py::make_tuple(r.selected, r.summary, r.score);
      },
      py::arg("sentences"), py::arg("reference"), py::arg("k") = 1);
  m.def(
      "novel_ngram_ratio", [](const TokenList& d, const TokenList& r, std::size_t n) { return novel_ngram_ratio(d, r, n); },
      py::arg("document"), py::arg("reference"), py::arg("n"));
  m.def(
      "bias_report",
      [](const std::vector<std::pair<TokenList, TokenList>>& pairs, std::optional<double> rl, std::size_t bins) {
        std::vector<SummaryPair> corpus;
        for (const auto& [d, r] : pairs) corpus.push_back({d, r});
        return json_to_py(report_json(bias_report(corpus, rl, bins)));
      },
      py::arg("pairs"), py::arg("abstractive_rl") = py::none(), py::arg("bins") = 20);

  m.def(
      "receptive_field",
      [](const py::object& config, std::size_t layer) { return receptive_field(config_from_json(py_to_json(config)), layer); },
      py::arg("config"), py::arg("layer"));
  m.def("profile_names", &profile_names);
  m.def(
      "profile",
      [](const std::string& name) {
        const Profile p = profile(name);
        py::dict d;
        d["name"] = p.name;
        d["model"] = json_to_py(config_to_json(p.model));
        d["train"] = json_to_py(train_config_to_json(p.train));
        d["max_summary_tokens"] = p.corpus.max_summary_tokens;
        return d;
      },
      py::arg("name"));
  m.def(
      "lr_schedule",
      [](std::size_t epoch, const py::object& config) {
        return lr_schedule(epoch, config.is_none() ? TrainConfig{} : train_config_from_json(py_to_json(config)));
      },
      py::arg("epoch"), py::arg("config") = py::none());
  m.def("label_smoothing_floor", &label_smoothing_floor, py::arg("epsilon"), py::arg("vocab_size"));
  m.def(
      "smoothed_target", [](TokenId t, double eps, std::size_t v) { return smoothed_target(t, eps, v); }, py::arg("target"),
      py::arg("epsilon"), py::arg("vocab_size"));

  py::class_<Model<float>>(m, "Model")
      .def(py::init([](const py::object& config, std::uint64_t seed) {
             return Model<float>(config_from_json(py_to_json(config)), seed);
           }),
           py::arg("config"), py::arg("seed") = 13)
      .def_static("load", py::overload_cast<const std::filesystem::path&>(&Model<float>::load), py::arg("path"))
      .def("save", py::overload_cast<const std::filesystem::path&>(&Model<float>::save, py::const_), py::arg("path"))
      .def_property_readonly("config", [](const Model<float>& model) { return json_to_py(config_to_json(model.config())); })
      .def("parameter_count", &Model<float>::parameter_count)
      .def(
          "greedy_decode",
          [](const Model<float>& model, const std::vector<TokenId>& document, std::size_t max_len) {
            py::gil_scoped_release release;
            return model.greedy_decode(document, max_len);
          },
          py::arg("document"), py::arg("max_len"))
      .def(
          "perplexity",
          [](const Model<float>& model, const std::vector<std::pair<std::vector<TokenId>, std::vector<TokenId>>>& pairs) {
            return perplexity(model, to_examples(pairs));
          },
          py::arg("pairs"))
      .def(
          "train",
          [](Model<float>& model, const std::vector<std::pair<std::vector<TokenId>, std::vector<TokenId>>>& pairs,
             const py::object& config) {
            const TrainConfig tc = config.is_none() ? TrainConfig{} : train_config_from_json(py_to_json(config));
            const auto data = to_examples(pairs);
            TrainResult r;
            {
              py::gil_scoped_release release;
              r = train(model, data, tc);
            }
            return r.epoch_loss;
          },
          py::arg("pairs"), py::arg("config") = py::none(), "Trains in place and returns the per-epoch mean loss.");

  m.def(
      "overfit_smoke",
      [](double epsilon, bool shuffled_labels, std::uint64_t seed) {
        SmokeConfig c;
        c.epsilon = epsilon;
        c.shuffled_labels = shuffled_labels;
        c.seed = seed;
        SmokeResult r;
        {
          py::gil_scoped_release release;
          r = overfit_smoke(c);
        }
        return smoke_dict(r);
      },
      py::arg("epsilon") = 0.1, py::arg("shuffled_labels") = false, py::arg("seed") = 13);
  m.def(
      "gradcheck_suite",
      [](std::uint64_t seed) {
        py::list out;
        for (const auto& o : gradcheck_suite(seed)) out.append(outcome_dict(o));
        return out;
      },
      py::arg("seed") = 7);
  m.def(
      "causality_suite", [](std::size_t cases, std::uint64_t seed) { return outcome_dict(causality_suite(cases, seed)); },
      py::arg("cases") = 100, py::arg("seed") = 1);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args, const std::string& stdin_text) {
        std::istringstream in(stdin_text);
        std::ostringstream out, err;
        const int code = cli::run(args, in, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), py::arg("stdin") = "", "Runs an mmn command; returns (exit_code, stdout, stderr).");
}
