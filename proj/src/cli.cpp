#include "teachgen/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "teachgen/config.hpp"
#include "teachgen/corpus.hpp"
#include "teachgen/dedup_split.hpp"
#include "teachgen/error.hpp"
#include "teachgen/eval_report.hpp"
#include "teachgen/generation.hpp"
#include "teachgen/ppo.hpp"
#include "teachgen/retrieval.hpp"
#include "teachgen/reward.hpp"
#include "teachgen/sft.hpp"
#include "teachgen/tiny_lm.hpp"

namespace teachgen {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string run_dir = "run";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "YAML run configuration");
  cmd->add_option("--seed", c.seed, "Random seed (overrides the config)");
  cmd->add_option("--run-dir", c.run_dir, "Output directory")->capture_default_str();
}

RunConfig load_config(const Common& c, std::ostream& err) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.ppo.seed = *c.seed;
    cfg.sft.seed = *c.seed;
  }
  for (const auto& w : cfg.warnings) err << "warning: " << w << '\n';
  return cfg;
}

fs::path run_path(const Common& c, const std::string& name) {
  fs::create_directories(c.run_dir);
  return fs::path(c.run_dir) / name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::pair<std::string, std::string> named_path(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq != std::string::npos) return {arg.substr(0, eq), arg.substr(eq + 1)};
  return {fs::path(arg).stem().string(), arg};
}

std::unique_ptr<TokenEmbedder> make_token_embedder(const std::string& table_path) {
  if (table_path.empty()) return std::make_unique<HashingTokenEmbedder>();
  return std::make_unique<TableTokenEmbedder>(TableTokenEmbedder::from_file(table_path));
}

std::string require_env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) throw Error(std::string("environment variable ") + name + " is not set");
  return v;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Teacher-response generation toolkit", "teachgen"};
  app.require_subcommand(1);
  Common common;

  // stats
  auto* stats = app.add_subcommand("stats", "Corpus statistics per split");
  std::vector<std::string> stats_inputs;
  std::string stats_mode = "any";
  stats->add_option("--input", stats_inputs, "Corpus file, optionally name=path")->required();
  stats->add_option("--mode", stats_mode, "train | test | any")
      ->check(CLI::IsMember({"train", "test", "any"}));
  add_common(stats, common);

  // chunk
  auto* chunk = app.add_subcommand("chunk", "Cut conversations into teacher-ending chunks");
  std::string chunk_input;
  std::optional<std::size_t> chunk_max;
  chunk->add_option("--input", chunk_input, "Conversation file")->required();
  chunk->add_option("--max-tokens", chunk_max, "Token budget per chunk");
  add_common(chunk, common);

  // split
  auto* split = app.add_subcommand("split", "Leakage-free training subset");
  std::string split_pool, split_held;
  split->add_option("--pool", split_pool, "Candidate training samples")->required();
  split->add_option("--held-out", split_held, "Held-out samples")->required();
  add_common(split, common);

  // audit
  auto* audit = app.add_subcommand("audit", "Cross-split overlap report");
  std::vector<std::string> audit_splits;
  audit->add_option("--split", audit_splits, "name=path, repeatable")->required();
  add_common(audit, common);

  // prompt
  auto* prompt = app.add_subcommand("prompt", "Build few-shot prompts");
  std::string prompt_query, prompt_pool, prompt_embedder = "hashing";
  prompt->add_option("--query", prompt_query, "Samples to prompt for")->required();
  prompt->add_option("--pool", prompt_pool, "Exemplar pool")->required();
  prompt->add_option("--embedder", prompt_embedder, "hashing | remote")
      ->check(CLI::IsMember({"hashing", "remote"}));
  add_common(prompt, common);

  // generate
  auto* generate = app.add_subcommand("generate", "Generate responses for prompts");
  std::string gen_prompts, gen_model_name, gen_backend;
  generate->add_option("--prompts", gen_prompts, "prompts.jsonl from `prompt`")->required();
  generate->add_option("--model-name", gen_model_name, "Model label for predictions");
  generate->add_option("--backend", gen_backend, "mock-echo | mock-seeded | openai")
      ->check(CLI::IsMember({"mock-echo", "mock-seeded", "openai"}));
  add_common(generate, common);

  // sft
  auto* sft = app.add_subcommand("sft", "Supervised fine-tuning of the tiny backend");
  std::string sft_train, sft_format = "causal-concat";
  std::optional<double> sft_lr;
  std::optional<std::size_t> sft_epochs;
  sft->add_option("--train", sft_train, "Training samples")->required();
  sft->add_option("--format", sft_format, "causal-concat | multiturn-eos")
      ->check(CLI::IsMember({"causal-concat", "multiturn-eos"}));
  sft->add_option("--lr", sft_lr, "Learning rate override");
  sft->add_option("--epochs", sft_epochs, "Epoch override");
  add_common(sft, common);

  // rl
  auto* rl = app.add_subcommand("rl", "PPO fine-tuning of the tiny backend");
  std::string rl_train, rl_init, rl_embeddings;
  std::optional<std::size_t> rl_iters;
  std::optional<double> rl_lr;
  rl->add_option("--train", rl_train, "Prompt pool with reference responses")->required();
  rl->add_option("--init", rl_init, "Checkpoint directory from `sft`");
  rl->add_option("--iters", rl_iters, "n_iters override");
  rl->add_option("--lr", rl_lr, "Learning rate override");
  rl->add_option("--embeddings", rl_embeddings, "Token embedding table (JSON)");
  add_common(rl, common);

  // eval
  auto* eval = app.add_subcommand("eval", "Score predictions against references");
  std::string eval_predictions, eval_references, eval_embeddings, eval_split = "eval";
  eval->add_option("--predictions", eval_predictions, "predictions.jsonl")->required();
  eval->add_option("--references", eval_references, "Samples with responses")->required();
  eval->add_option("--embeddings", eval_embeddings, "Token embedding table (JSON)");
  eval->add_option("--split-name", eval_split, "Name recorded in the report");
  add_common(eval, common);

  // report
  auto* report = app.add_subcommand("report", "Render an evaluation report");
  std::string report_eval, report_format = "markdown";
  report->add_option("--eval", report_eval, "eval.json from `eval`")->required();
  report->add_option("--format", report_format, "markdown (md) | csv | json")
      ->check(CLI::IsMember({"markdown", "md", "csv", "json"}));
  add_common(report, common);

  // contrast
  auto* contrast = app.add_subcommand("contrast", "Metric contrast on candidate responses");
  std::string con_context, con_reference, con_embeddings;
  std::vector<std::string> con_candidates;
  double con_threshold = 0.02;
  contrast->add_option("--context", con_context, "Conversation context")->required();
  contrast->add_option("--reference", con_reference, "Reference response")->required();
  contrast->add_option("--candidate", con_candidates, "Candidate, repeatable")->required();
  contrast->add_option("--embeddings", con_embeddings, "Token embedding table (JSON)");
  contrast->add_option("--threshold", con_threshold, "Ranked-alike F1 gap");
  add_common(contrast, common);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    const auto cfg = load_config(common, err);

    if (*stats) {
      const auto mode = stats_mode == "train"  ? CorpusMode::kTrain
                        : stats_mode == "test" ? CorpusMode::kTest
                                               : CorpusMode::kAny;
      std::vector<std::pair<std::string, CorpusStats>> columns;
      json j = json::object();
      for (const auto& arg : stats_inputs) {
        auto [name, path] = named_path(arg);
        columns.emplace_back(name, corpus_stats(load_corpus(path, mode)));
        j[name] = stats_to_json(columns.back().second);
      }
      const auto md = render_stats_markdown(columns);
      write_text(run_path(common, "stats.md"), md);
      write_text(run_path(common, "stats.json"), j.dump(2) + "\n");
      out << md;
    } else if (*chunk) {
      const auto conversations = load_corpus(chunk_input, CorpusMode::kAny);
      std::vector<DialogueSample> chunks;
      for (const auto& conv : conversations) {
        auto r = extract_chunks(conv.turns(), chunk_max.value_or(cfg.corpus.max_chunk_tokens),
                                default_tokenizer(), is_teacher_label, conv.id);
        for (const auto& w : r.warnings) err << "warning: " << conv.id << ": " << w << '\n';
        chunks.insert(chunks.end(), r.chunks.begin(), r.chunks.end());
      }
      save_corpus(run_path(common, "chunks.jsonl").string(), chunks);
      out << chunks.size() << " chunks from " << conversations.size() << " conversations\n";
    } else if (*split) {
      const auto pool = load_corpus(split_pool, CorpusMode::kAny);
      const auto held = load_corpus(split_held, CorpusMode::kAny);
      OverlapPolicy policy;
      policy.min_tokens = cfg.corpus.min_overlap_tokens;
      const auto result = iterative_inclusion_split(pool, held, policy);
      std::vector<DialogueSample> excluded;
      for (const auto& e : result.excluded) excluded.push_back(e.sample);
      save_corpus(run_path(common, "train.jsonl").string(), result.included);
      save_corpus(run_path(common, "excluded.jsonl").string(), excluded);
      write_text(run_path(common, "split_report.json"),
                 split_report_json(result).dump(2) + "\n");
      out << result.included.size() << " included, " << result.excluded.size()
          << " excluded\n";
    } else if (*audit) {
      std::vector<NamedSplit> splits;
      for (const auto& arg : audit_splits) {
        auto [name, path] = named_path(arg);
        splits.emplace_back(name, load_corpus(path, CorpusMode::kAny));
      }
      OverlapPolicy policy;
      policy.min_tokens = cfg.corpus.min_overlap_tokens;
      const auto conflicts = leakage_report(splits, policy);
      write_text(run_path(common, "leakage.json"), conflicts_to_json(conflicts).dump(2) + "\n");
      out << conflicts.size() << " conflicts\n";
    } else if (*prompt) {
      const auto queries = load_corpus(prompt_query, CorpusMode::kAny);
      const auto pool = load_corpus(prompt_pool, CorpusMode::kTrain);
      std::shared_ptr<EmbeddingProvider> provider;
      if (prompt_embedder == "remote")
        provider = std::make_shared<HttpEmbeddingProvider>(
            make_http_transport(cfg.backend.base_url), cfg.retrieval.embedding_model,
            require_env("OPENAI_API_KEY"));
      else
        provider = std::make_shared<HashingEmbeddingProvider>(256, cfg.seed);
      if (!cfg.retrieval.embedding_cache.empty())
        provider = std::make_shared<CachedEmbeddingProvider>(provider,
                                                             cfg.retrieval.embedding_cache);
      RetrievalOptions ropt;
      ropt.k = cfg.retrieval.k;
      ropt.max_in_flight = cfg.retrieval.max_in_flight;
      std::ostringstream lines;
      for (const auto& q : queries) {
        const auto ranking = top_k_similar(q, pool, *provider, ropt);
        for (const auto& w : ranking.warnings) err << "warning: " << q.id << ": " << w << '\n';
        const auto bundle = build_fewshot_prompt(q, ranking.items);
        json retrieved = json::array();
        for (const auto& item : ranking.items) retrieved.push_back(item.sample.id);
        lines << json{{"id", q.id}, {"retrieved", retrieved}, {"prompt", bundle.to_json()}}
                     .dump()
              << '\n';
      }
      write_text(run_path(common, "prompts.jsonl"), lines.str());
      out << queries.size() << " prompts\n";
    } else if (*generate) {
      const auto backend_name = gen_backend.empty() ? cfg.backend.backend : gen_backend;
      std::unique_ptr<TextGenerator> backend;
      if (backend_name == "mock-echo")
        backend = std::make_unique<EchoGenerator>();
      else if (backend_name == "mock-seeded")
        backend = std::make_unique<SeededMockGenerator>(cfg.seed);
      else if (backend_name == "openai")
        backend = std::make_unique<ChatCompletionClient>(
            make_http_transport(cfg.backend.base_url), require_env("OPENAI_API_KEY"));
      else
        throw ConfigError("unknown generation backend '" + backend_name + "'");
      GenerationParams params = cfg.generation;
      if (common.seed) params.seed = *common.seed;
      AuditLog log(run_path(common, "audit.jsonl").string());
      TokenBucket bucket(cfg.backend.requests_per_minute, 1.0);
      GenerateOptions gopt;
      gopt.retry.max_attempts = static_cast<int>(cfg.backend.max_attempts);
      gopt.audit = &log;
      if (backend_name == "openai") gopt.rate_limiter = &bucket;
      const auto model_name = gen_model_name.empty() ? backend->backend_id() : gen_model_name;

      std::vector<Prediction> predictions;
      std::istringstream in(read_text(gen_prompts));
      std::string line;
      while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto j = json::parse(line);
        const auto bundle = PromptBundle::from_json(j.at("prompt"));
        const auto resp = generate_response(*backend, bundle, params, gopt);
        predictions.push_back({j.at("id").get<std::string>(), resp.text, model_name});
      }
      save_predictions(run_path(common, "predictions.jsonl").string(), predictions);
      out << predictions.size() << " predictions\n";
    } else if (*sft) {
      const auto samples = load_corpus(sft_train, CorpusMode::kTrain);
      SFTConfig scfg = cfg.sft;
      if (sft_lr) scfg.learning_rate = *sft_lr;
      if (sft_epochs) scfg.epochs = *sft_epochs;
      scfg.run_dir = run_path(common, "sft").string();
      SFTBuildOptions bopt;
      bopt.max_sequence_length = scfg.max_sequence_length;
      const auto built = build_sft_examples(samples, sft_format_from_string(sft_format), bopt);
      for (const auto& w : built.warnings) err << "warning: " << w << '\n';
      TinyLMConfig tcfg;
      tcfg.seed = scfg.seed;
      TinyCharLM model(tcfg);
      const auto initial = model.evaluate_loss(built.examples, scfg.loss_scope);
      const auto run = train_sft(model, built.examples, scfg);
      const auto final_loss = model.evaluate_loss(built.examples, scfg.loss_scope);
      out << run.total_steps << " steps, loss " << initial << " -> " << final_loss << '\n';
    } else if (*rl) {
      const auto pool = load_corpus(rl_train, CorpusMode::kTrain);
      PPOConfig pcfg = cfg.ppo;
      if (rl_iters) pcfg.n_iters = *rl_iters;
      if (rl_lr) pcfg.learning_rate = *rl_lr;
      TinyLMConfig tcfg;
      tcfg.seed = pcfg.seed;
      TinyCharLM model(tcfg);
      if (!rl_init.empty()) model.restore(load_checkpoint(rl_init));
      const CompositeReward scorer(std::shared_ptr<TokenEmbedder>(
                                       make_token_embedder(rl_embeddings).release()),
                                   std::make_shared<HeuristicRanker>(), cfg.reward,
                                   cfg.metrics.ranker.label_index);
      const RewardFn reward = [&](const DialogueSample& s, std::string_view text) {
        return scorer.score(render_context(s), text, s.response->text).reward;
      };
      RLRunOptions ropt;
      ropt.run_dir = run_path(common, "rl").string();
      const auto run = train_rl(model, pool, reward, pcfg, ropt);
      const double last = run.iterations.empty() ? 0.0 : run.iterations.back().mean_reward;
      out << run.iterations.size() << " iterations, final mean reward " << last << '\n';
    } else if (*eval) {
      const auto predictions = load_predictions(eval_predictions);
      const auto refs = load_corpus(eval_references, CorpusMode::kTrain);
      auto embedder = make_token_embedder(eval_embeddings);
      HeuristicRanker ranker;
      auto rep = evaluate(predictions, refs, *embedder, ranker, cfg.metrics.ranker.label_index);
      rep.metadata["split"] = eval_split;
      write_text(run_path(common, "eval.json"), emit_report(rep, ReportFormat::kJson));
      out << emit_report(rep, ReportFormat::kMarkdown);
    } else if (*report) {
      const auto rep = parse_report(read_text(report_eval), ReportFormat::kJson);
      const auto fmt = report_format_from_string(report_format);
      const auto text = emit_report(rep, fmt);
      const char* ext = fmt == ReportFormat::kMarkdown ? "md"
                        : fmt == ReportFormat::kCsv    ? "csv"
                                                       : "json";
      write_text(run_path(common, std::string("report.") + ext), text);
      out << text;
    } else if (*contrast) {
      auto embedder = make_token_embedder(con_embeddings);
      HeuristicRanker ranker;
      const auto rep = metric_contrast_report(con_context, con_candidates, con_reference,
                                              *embedder, ranker, cfg.reward, con_threshold);
      const auto md = rep.to_markdown();
      write_text(run_path(common, "contrast.md"), md);
      out << md;
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& c : msg)
      if (c == '\n') c = ' ';
    err << "error: " << msg << '\n';
    return 1;
  }
  return 0;
}

}  // namespace teachgen
