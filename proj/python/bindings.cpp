#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/operators.h>
#include <pybind11/stl.h>

#include "teachgen/cli.hpp"
#include "teachgen/config.hpp"
#include "teachgen/corpus.hpp"
#include "teachgen/dedup_split.hpp"
#include "teachgen/error.hpp"
#include "teachgen/eval_report.hpp"
#include "teachgen/ppo.hpp"
#include "teachgen/retrieval.hpp"
#include "teachgen/reward.hpp"

namespace py = pybind11;
using namespace teachgen;

namespace {

CorpusMode mode_from(const std::string& s) {
  if (s == "train") return CorpusMode::kTrain;
  if (s == "test") return CorpusMode::kTest;
  if (s == "any") return CorpusMode::kAny;
  throw py::value_error("mode must be train, test or any");
}

std::vector<DialogueSample> samples_from_json(const std::string& text, const std::string& mode) {
  return parse_corpus(std::string_view(text), mode_from(mode));
}

std::unique_ptr<TokenEmbedder> embedder_from(const std::string& table) {
  if (table.empty()) return std::make_unique<HashingTokenEmbedder>();
  return std::make_unique<TableTokenEmbedder>(TableTokenEmbedder::from_file(table));
}

}  // namespace

PYBIND11_MODULE(_teachgen, m) {
  m.doc() = "Teacher-response generation toolkit";

  py::register_exception<Error>(m, "TeachgenError");

  py::class_<Utterance>(m, "Utterance")
      .def(py::init<std::string, std::string>(), py::arg("speaker"), py::arg("text"))
      .def_readwrite("speaker", &Utterance::speaker)
      .def_readwrite("text", &Utterance::text)
      .def("__repr__", [](const Utterance& u) { return "[" + u.speaker + "] " + u.text; });

  py::class_<DialogueSample>(m, "DialogueSample")
      .def(py::init<>())
      .def_readwrite("id", &DialogueSample::id)
      .def_readwrite("context", &DialogueSample::context)
      .def_readwrite("response", &DialogueSample::response)
      .def("turns", &DialogueSample::turns)
      .def("to_json", [](const DialogueSample& s) { return sample_to_json(s).dump(); })
      .def(py::self == py::self);

  m.def("parse_corpus", &samples_from_json, py::arg("text"), py::arg("mode") = "any");
  m.def(
      "load_corpus",
      [](const std::string& path, const std::string& mode) {
        return load_corpus(path, mode_from(mode));
      },
      py::arg("path"), py::arg("mode") = "any");

  py::class_<CorpusStats>(m, "CorpusStats")
      .def_readonly("num_samples", &CorpusStats::num_samples)
      .def_readonly("avg_turns", &CorpusStats::avg_turns)
      .def_readonly("avg_tokens_per_turn", &CorpusStats::avg_tokens_per_turn);
  m.def("corpus_stats", [](const std::vector<DialogueSample>& s) { return corpus_stats(s); });

  m.def(
      "extract_chunks",
      [](const std::vector<Utterance>& conv, std::size_t max_tokens, const std::string& prefix) {
        auto r = extract_chunks(conv, max_tokens, default_tokenizer(), is_teacher_label, prefix);
        return py::make_tuple(r.chunks, r.warnings);
      },
      py::arg("conversation"), py::arg("max_tokens") = 100, py::arg("id_prefix") = "chunk");

  m.def(
      "iterative_inclusion_split",
      [](const std::vector<DialogueSample>& pool, const std::vector<DialogueSample>& held,
         std::size_t min_tokens) {
        OverlapPolicy p;
        p.min_tokens = min_tokens;
        auto r = iterative_inclusion_split(pool, held, p);
        std::vector<std::pair<std::string, std::string>> excluded;
        for (const auto& e : r.excluded) excluded.emplace_back(e.sample.id, e.conflicting_id);
        return py::make_tuple(r.included, excluded);
      },
      py::arg("pool"), py::arg("held_out"), py::arg("min_tokens") = 3);
  m.def(
      "samples_overlap",
      [](const DialogueSample& a, const DialogueSample& b, std::size_t min_tokens) {
        OverlapPolicy p;
        p.min_tokens = min_tokens;
        return samples_overlap(a, b, p);
      },
      py::arg("a"), py::arg("b"), py::arg("min_tokens") = 3);

  m.attr("DEFAULT_SYSTEM_PROMPT") = kDefaultSystemPrompt;
  m.def(
      "build_prompt",
      [](const DialogueSample& query, const std::vector<DialogueSample>& pool, std::size_t k,
         std::uint64_t seed) {
        HashingEmbeddingProvider provider(256, seed);
        RetrievalOptions opt;
        opt.k = k;
        const auto ranking = top_k_similar(query, pool, provider, opt);
        return build_fewshot_prompt(query, ranking.items).flat();
      },
      py::arg("query"), py::arg("pool"), py::arg("k") = 5, py::arg("seed") = 0);
  m.def("cosine_similarity", [](const std::vector<double>& a, const std::vector<double>& b) {
    return cosine_similarity(a, b);
  });

  m.def(
      "bertscore",
      [](const std::string& candidate, const std::string& reference, const std::string& table) {
        auto e = embedder_from(table);
        const auto s = bertscore(candidate, reference, *e);
        return py::make_tuple(s.precision, s.recall, s.f1);
      },
      py::arg("candidate"), py::arg("reference"), py::arg("embeddings") = "");
  m.def(
      "composite_reward",
      [](double b, double d, double cb, double cd) {
        return composite_reward(b, d, RewardConfig{cb, cd});
      },
      py::arg("bertscore_f1"), py::arg("dialogue_quality"), py::arg("bertscore_coeff") = 0.5,
      py::arg("dialogrpt_coeff") = 0.5);
  m.def(
      "contrast_report",
      [](const std::string& context, const std::vector<std::string>& candidates,
         const std::string& reference, const std::string& table) {
        auto e = embedder_from(table);
        HeuristicRanker ranker;
        return metric_contrast_report(context, candidates, reference, *e, ranker).to_markdown();
      },
      py::arg("context"), py::arg("candidates"), py::arg("reference"),
      py::arg("embeddings") = "");

  m.def(
      "compute_gae",
      [](const std::vector<double>& r, const std::vector<double>& v, double bootstrap,
         double gamma, double lam) {
        auto g = compute_gae(r, v, bootstrap, gamma, lam);
        return py::make_tuple(g.advantages, g.returns);
      },
      py::arg("rewards"), py::arg("values"), py::arg("bootstrap_value") = 0.0,
      py::arg("gamma") = 0.99, py::arg("lam") = 0.95);
  m.def(
      "clipped_policy_objective",
      [](const std::vector<double>& lp_new, const std::vector<double>& lp_old,
         const std::vector<double>& adv, double clip, double ent_coef, double entropy) {
        return clipped_policy_objective(lp_new, lp_old, adv, clip, ent_coef, entropy);
      },
      py::arg("logp_new"), py::arg("logp_old"), py::arg("advantages"),
      py::arg("clip_range") = 0.2, py::arg("ent_coef") = 0.0, py::arg("entropy") = 0.0);

  m.def(
      "parse_config",
      [](const std::string& yaml) {
        const auto c = parse_run_config(yaml);
        py::dict d;
        d["n_steps"] = c.ppo.n_steps;
        d["batch_size"] = c.ppo.batch_size;
        d["learning_rate"] = c.ppo.learning_rate;
        d["clip_range"] = c.ppo.clip_range;
        d["gae_lambda"] = c.ppo.gae_lambda;
        d["gamma"] = c.ppo.gamma;
        d["ent_coef"] = c.ppo.ent_coef;
        d["kl_coeff"] = c.ppo.kl_coeff;
        d["target_kl"] = c.ppo.target_kl;
        d["n_iters"] = c.ppo.n_iters;
        d["bertscore_coeff"] = c.reward.bertscore_coeff;
        d["dialogrpt_coeff"] = c.reward.dialogrpt_coeff;
        d["ranker_model"] = c.metrics.ranker.model_id;
        return d;
      },
      py::arg("yaml"));

  m.def(
      "emit_report",
      [](const std::vector<std::tuple<std::string, double, double>>& rows,
         const std::string& format) {
        std::vector<ReportRow> rs;
        for (const auto& [name, b, d] : rows) rs.push_back({name, b, d});
        return emit_report(report_from_rows(rs), report_format_from_string(format));
      },
      py::arg("rows"), py::arg("format") = "markdown");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
