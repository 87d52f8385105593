#include "teachgen/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "teachgen/error.hpp"

namespace teachgen {
namespace {

using Handler = std::function<void(const YAML::Node&, const std::string&)>;
using Handlers = std::map<std::string, Handler>;

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void walk(const YAML::Node& node, const std::string& path, const Handlers& handlers) {
  if (!node || node.IsNull()) return;
  if (!node.IsMap()) throw ConfigError("config: '" + path + "' must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    const auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError("config: unknown key '" + join(path, key) + "'");
    it->second(kv.second, join(path, key));
  }
}

template <typename T>
Handler into(T& field) {
  return [&field](const YAML::Node& n, const std::string& path) {
    try {
      field = n.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError("config: bad value for '" + path + "'");
    }
  };
}

// Long double-quoted scalars may be folded across lines in the source file.
std::string strip_spaces(std::string s) {
  s.erase(std::remove_if(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); }),
          s.end());
  return s;
}

Handler model_name_into(std::string& field) {
  return [&field](const YAML::Node& n, const std::string& path) {
    into(field)(n, path);
    field = strip_spaces(field);
  };
}

Handler ignore() {
  return [](const YAML::Node&, const std::string&) {};
}

Handler section(Handlers handlers) {
  return [h = std::move(handlers)](const YAML::Node& n, const std::string& path) {
    walk(n, path, h);
  };
}

void parse_metrics(const YAML::Node& node, const std::string& path, MetricsSection& out) {
  if (!node.IsSequence()) throw ConfigError("config: '" + path + "' must be a list");
  for (std::size_t i = 0; i < node.size(); ++i) {
    const auto item_path = path + "[" + std::to_string(i) + "]";
    const auto& item = node[i];
    if (!item.IsMap() || !item["id"])
      throw ConfigError("config: '" + item_path + "' needs an id");
    const auto id = item["id"].as<std::string>();
    Handlers args;
    if (id == "bert_score") {
      args = {{"language", into(out.bertscore_language)}};
    } else if (id == "dialog_rpt") {
      args = {{"model_name", model_name_into(out.ranker.model_id)},
              {"label_ix", into(out.ranker.label_index)},
              {"batch_size", into(out.ranker_batch_size)}};
    } else {
      throw ConfigError("config: unknown metric id '" + id + "' at '" + item_path + "'");
    }
    walk(item, item_path, {{"id", ignore()}, {"args", section(args)}});
  }
}

}  // namespace

RunConfig parse_run_config(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: invalid YAML: ") + e.what());
  }
  RunConfig c;
  auto& p = c.ppo;
  std::string sft_scope = to_string(c.sft.loss_scope);

  const Handlers generation_kwargs = {
      {"do_sample", into(p.do_sample)},
      {"top_k", into(p.top_k)},
      {"min_length", into(p.min_length)},
      {"max_new_tokens", into(p.max_new_tokens)},
  };

  const Handlers top = {
      {"tokenizer", section({{"model_name", model_name_into(c.tokenizer.model_name)},
                             {"padding_side", into(c.tokenizer.padding_side)},
                             {"truncation_side", into(c.tokenizer.truncation_side)},
                             {"pad_token_as_eos_token",
                              into(c.tokenizer.pad_token_as_eos_token)}})},
      {"reward_fn", section({{"id", into(c.reward_fn_id)},
                             {"args", section({{"BERTScore_coeff",
                                                into(c.reward.bertscore_coeff)},
                                               {"DialogRPT_coeff",
                                                into(c.reward.dialogrpt_coeff)}})}})},
      {"datapool", section({{"id", into(c.datapool.id)},
                            {"truncate", into(c.datapool.truncate)},
                            {"args", section({})}})},
      {"env", section({{"n_envs", into(p.n_envs)},
                       {"args", section({{"max_prompt_length", into(p.max_prompt_length)},
                                         {"max_episode_length", into(p.max_episode_length)},
                                         {"terminate_on_eos", into(p.terminate_on_eos)},
                                         {"context_start_token", into(p.context_start_token)},
                                         {"prompt_truncation_side",
                                          into(p.prompt_truncation_side)}})}})},
      {"alg",
       section({{"id", into(p.alg_id)},
                {"args", section({{"n_steps", into(p.n_steps)},
                                  {"batch_size", into(p.batch_size)},
                                  {"verbose", into(p.verbose)},
                                  {"learning_rate", into(p.learning_rate)},
                                  {"clip_range", into(p.clip_range)},
                                  {"n_epochs", into(p.n_epochs)},
                                  {"value_update_epochs", into(p.value_update_epochs)},
                                  {"gae_lambda", into(p.gae_lambda)},
                                  {"gamma", into(p.gamma)},
                                  {"ent_coef", into(p.ent_coef)},
                                  {"normalize_advantage", into(p.normalize_advantages)},
                                  {"weight_decay", into(p.adamw.weight_decay)}})},
                {"kl_div", section({{"coeff", into(p.kl_coeff)},
                                    {"target_kl", into(p.target_kl)}})},
                {"policy",
                 section({{"id", into(p.policy_id)},
                          {"args", section({{"model_name", model_name_into(p.policy_model_name)},
                                            {"apply_model_parallel",
                                             into(p.apply_model_parallel)},
                                            {"prompt_truncation_side",
                                             into(p.prompt_truncation_side)},
                                            {"generation_kwargs",
                                             section(generation_kwargs)}})}})}})},
      {"train_evaluation",
       section({{"eval_batch_size", into(p.eval_batch_size)},
                {"n_iters", into(p.n_iters)},
                {"eval_every", into(p.eval_every)},
                {"save_every", into(p.save_every)},
                {"metrics",
                 [&](const YAML::Node& n, const std::string& path) {
                   parse_metrics(n, path, c.metrics);
                 }},
                {"generation_kwargs", section({{"num_beams", into(p.eval_num_beams)},
                                               {"min_length", into(p.eval_min_length)},
                                               {"max_new_tokens",
                                                into(p.eval_max_new_tokens)}})}})},
      {"corpus", section({{"max_chunk_tokens", into(c.corpus.max_chunk_tokens)},
                          {"min_overlap_tokens", into(c.corpus.min_overlap_tokens)}})},
      {"retrieval", section({{"k", into(c.retrieval.k)},
                             {"embedding_model", into(c.retrieval.embedding_model)},
                             {"embedding_cache", into(c.retrieval.embedding_cache)},
                             {"max_in_flight", into(c.retrieval.max_in_flight)}})},
      {"generation", section({{"model_id", into(c.generation.model_id)},
                              {"temperature", into(c.generation.temperature)},
                              {"max_tokens", into(c.generation.max_new_tokens)},
                              {"top_p", into(c.generation.top_p)},
                              {"backend", into(c.backend.backend)},
                              {"base_url", into(c.backend.base_url)},
                              {"requests_per_minute", into(c.backend.requests_per_minute)},
                              {"max_attempts", into(c.backend.max_attempts)}})},
      {"sft", section({{"learning_rate", into(c.sft.learning_rate)},
                       {"batch_size", into(c.sft.batch_size)},
                       {"epochs", into(c.sft.epochs)},
                       {"max_sequence_length", into(c.sft.max_sequence_length)},
                       {"weight_decay", into(c.sft.adamw.weight_decay)},
                       {"loss_scope", into(sft_scope)}})},
      {"seed", into(c.seed)},
  };
  walk(root, "", top);

  c.sft.loss_scope = loss_scope_from_string(sft_scope);
  c.ppo.seed = c.seed;
  c.sft.seed = c.seed;
  if (c.reward_fn_id != "dialog_rpt_bert")
    throw ConfigError("config: unsupported reward_fn.id '" + c.reward_fn_id + "'");
  if (c.ppo.apply_model_parallel)
    c.warnings.push_back("alg.policy.args.apply_model_parallel is ignored");
  c.reward.validate();
  c.ppo.validate();
  c.generation.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace teachgen
