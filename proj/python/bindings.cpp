#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "dimac/abstractor.hpp"
#include "dimac/corpus.hpp"
#include "dimac/dimac.hpp"
#include "dimac/extractor.hpp"
#include "dimac/labels.hpp"
#include "dimac/nn/checkpoint.hpp"
#include "dimac/pipeline.hpp"
#include "dimac/rouge.hpp"

namespace py = pybind11;
using namespace dimac;

namespace {

using Sentences = std::vector<corpus::Sentence>;

py::dict score_dict(const rouge::RougeScore& s) {
  py::dict d;
  d["r"] = s.recall;
  d["p"] = s.precision;
  d["f"] = s.f1;
  return d;
}

corpus::Report make_report(const std::string& id, const Sentences& findings, const Sentences& impressions) {
  corpus::Report r;
  r.id = id;
  r.findings = findings;
  r.impressions = impressions;
  r.rebuild_flat();
  return r;
}

labels::KeywordSet keyword_set(const std::vector<std::string>& phrases) {
  labels::KeywordSet k;
  for (const auto& p : phrases) k.keywords.push_back({p, 1.0});
  return k;
}

py::list label_tuples(const labels::InterleavedLabels& l) {
  py::list out;
  for (const auto& s : l.steps) out.append(py::make_tuple(s.q, s.s, s.w));
  return out;
}

// Extractor (or fine-tuned) checkpoint plus abstractor checkpoint.
class Summarizer {
 public:
  Summarizer(const std::string& extractor_path, const std::string& abstractor_path, int beam)
      : ext_(nn::load_checkpoint(extractor_path)),
        abs_(nn::load_checkpoint(abstractor_path)),
        ext_config_(extractor::checkpoint_config(ext_)),
        abs_config_(abstractor::checkpoint_config(abs_)),
        ext_vocab_(corpus::Vocabulary::from_tokens(ext_.vocabulary)),
        abs_vocab_(corpus::Vocabulary::from_tokens(abs_.vocabulary)),
        beam_(beam) {}

  py::list summarize(const Sentences& findings) {
    const auto report = make_report("input", findings, {});
    const auto enc = extractor::encode_report(report, ext_vocab_, ext_config_);
    const auto ex = extractor::extract(ext_.params, ext_config_, enc, extractor::Mode::kGreedy);
    py::list out;
    for (int s : ex.sentences) {
      py::dict d;
      d["text"] = abstractor::abstract_sentence(abs_.params, abs_config_, abs_vocab_,
                                                findings[static_cast<std::size_t>(s)], beam_)
                      .tokens;
      d["source_sentence"] = s;
      std::vector<int> kws;
      for (int w : ex.words) {
        if (enc.word_sentence[static_cast<std::size_t>(w)] == s) kws.push_back(w);
      }
      d["keywords"] = kws;
      out.append(d);
    }
    return out;
  }

  std::vector<std::string> rewrite(const corpus::Sentence& sentence) {
    return abstractor::abstract_sentence(abs_.params, abs_config_, abs_vocab_, sentence, beam_).tokens;
  }

 private:
  nn::Checkpoint ext_;
  nn::Checkpoint abs_;
  extractor::ExtractorConfig ext_config_;
  abstractor::AbstractorConfig abs_config_;
  corpus::Vocabulary ext_vocab_;
  corpus::Vocabulary abs_vocab_;
  int beam_;
};

pipeline::RunConfig make_config(const std::string& text, const std::vector<std::string>& overrides) {
  std::istringstream in(text);
  auto c = pipeline::RunConfig::parse(in);
  for (const auto& o : overrides) c.apply_override(o);
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Extract-then-abstract report summarization core";

  py::register_exception<Error>(m, "DimacError", PyExc_RuntimeError);

  m.def(
      "rouge_n",
      [](const std::vector<std::string>& c, const std::vector<std::string>& r, int n) {
        return score_dict(rouge::rouge_n(c, r, n));
      },
      py::arg("candidate"), py::arg("reference"), py::arg("n"));
  m.def(
      "rouge_l",
      [](const std::vector<std::string>& c, const std::vector<std::string>& r) {
        return score_dict(rouge::rouge_l(c, r));
      },
      py::arg("candidate"), py::arg("reference"));

  m.def(
      "normalize",
      [](const std::string& id, const std::string& findings, const std::string& impressions) {
        const auto r = corpus::Normalizer{}.normalize({id, findings, impressions});
        return py::make_tuple(r.findings, r.impressions);
      },
      py::arg("id"), py::arg("findings"), py::arg("impressions"),
      "Sentence-split and tokenize both sections; returns (findings, impressions).");

  m.def(
      "synthetic_corpus",
      [](int reports, std::uint64_t seed) {
        corpus::SyntheticConfig c;
        c.reports = reports;
        const auto s = corpus::generate_synthetic_corpus(c, seed);
        py::list out;
        for (std::size_t i = 0; i < s.reports.size(); ++i) {
          py::dict d;
          d["id"] = s.reports[i].id;
          d["findings"] = s.reports[i].findings;
          d["impressions"] = s.reports[i].impressions;
          d["salient_sentences"] = s.annotations[i].salient_sentences;
          d["salient_words"] = s.annotations[i].salient_words;
          out.append(d);
        }
        return py::make_tuple(out, s.keywords);
      },
      py::arg("reports") = 250, py::arg("seed") = 1, "Returns (reports, concept keywords).");

  m.def(
      "greedy_match",
      [](const Sentences& findings, const Sentences& impressions, double beta) {
        labels::MatchOptions o;
        o.beta = beta;
        return labels::greedy_match(findings, impressions, o).indices;
      },
      py::arg("findings"), py::arg("impressions"), py::arg("beta") = 1.2);

  m.def(
      "build_labels",
      [](const Sentences& findings, const Sentences& impressions, const std::vector<std::string>& keywords) {
        return label_tuples(labels::build_labels(make_report("r", findings, impressions), keyword_set(keywords)));
      },
      py::arg("findings"), py::arg("impressions"), py::arg("keywords"),
      "Interleaved (q, s, w) tuples; -1 stands for an empty slot.");

  m.def("discounted_returns", &rl::discounted_returns, py::arg("rewards"), py::arg("gamma"));

  m.def(
      "baseline_invariance_check",
      [](const std::vector<double>& word_logits, const std::vector<double>& sentence_logits, double message,
         bool action_dependent, int n_samples, std::uint64_t seed) {
        rl::PolicySnapshot p{word_logits, sentence_logits, message};
        const rl::BaselineFn b = action_dependent
                                     ? rl::BaselineFn([](extractor::Level l, int a) {
                                         return l == extractor::Level::kWord && a == 0 ? 1.0 : 0.0;
                                       })
                                     : rl::BaselineFn([](extractor::Level, int) { return 1.0; });
        const auto r = rl::baseline_invariance_check(p, b, n_samples, seed);
        py::dict d;
        d["passed"] = r.passed;
        d["mean"] = r.mean;
        d["standard_error"] = r.standard_error;
        d["worst_z"] = r.worst_z;
        return d;
      },
      py::arg("word_logits"), py::arg("sentence_logits"), py::arg("message") = 0.5,
      py::arg("action_dependent") = false, py::arg("n_samples") = 10000, py::arg("seed") = 1);

  m.def(
      "split_corpus",
      [](const std::vector<std::string>& ids, double train, double validation, double test, std::uint64_t seed) {
        const auto s = pipeline::split_corpus(ids, train, validation, test, seed);
        return py::make_tuple(s.train, s.validation, s.test);
      },
      py::arg("ids"), py::arg("train") = 0.8, py::arg("validation") = 0.1, py::arg("test") = 0.1,
      py::arg("seed") = 1);

  m.def(
      "evaluate",
      [](const std::vector<Sentences>& predictions, const std::vector<Sentences>& references) {
        if (predictions.size() != references.size()) throw Error("evaluate: length mismatch");
        std::vector<pipeline::Prediction> preds;
        std::vector<corpus::Report> refs;
        for (std::size_t i = 0; i < predictions.size(); ++i) {
          const auto id = std::to_string(i);
          pipeline::Prediction p;
          p.id = id;
          for (const auto& s : predictions[i]) p.impressions.push_back({s, -1, {}});
          preds.push_back(std::move(p));
          refs.push_back(make_report(id, {}, references[i]));
        }
        const auto r = pipeline::evaluate_predictions(preds, refs);
        py::dict d;
        d["rouge1"] = score_dict(r.rouge1);
        d["rouge2"] = score_dict(r.rouge2);
        d["rougeL"] = score_dict(r.rougeL);
        return d;
      },
      py::arg("predictions"), py::arg("references"), "Mean ROUGE in percent; each item is a list of sentences.");

  m.def(
      "default_config", [] { return pipeline::RunConfig{}.to_text(); }, "Canonical text of the default config.");
  m.def(
      "run_command",
      [](const std::string& name, const std::string& config_text, const std::vector<std::string>& overrides) {
        const auto c = make_config(config_text, overrides);
        std::ostringstream log;
        const auto result = pipeline::run_command(name, c, log);
        std::vector<std::string> artifacts;
        for (const auto& p : result.artifacts) artifacts.push_back(p.string());
        return py::make_tuple(artifacts, log.str());
      },
      py::arg("name"), py::arg("config_text") = "", py::arg("overrides") = std::vector<std::string>{},
      "Runs one pipeline stage; returns (artifacts, log).");

  py::class_<Summarizer>(m, "Summarizer")
      .def(py::init<const std::string&, const std::string&, int>(), py::arg("extractor_checkpoint"),
           py::arg("abstractor_checkpoint"), py::arg("beam") = 5)
      .def("summarize", &Summarizer::summarize, py::arg("findings"),
           "Extract and rewrite; one dict per output sentence with its source sentence and keywords.")
      .def("rewrite", &Summarizer::rewrite, py::arg("sentence"));
}
