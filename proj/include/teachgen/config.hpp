#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "teachgen/generation.hpp"
#include "teachgen/ppo.hpp"
#include "teachgen/reward.hpp"
#include "teachgen/sft.hpp"

namespace teachgen {

struct TokenizerSection {
  std::string model_name = "google/flan-t5-small";
  std::string padding_side = "left";
  std::string truncation_side = "left";
  bool pad_token_as_eos_token = false;
};

struct DatapoolSection {
  std::string id = "bea";
  bool truncate = false;
};

struct MetricsSection {
  std::string bertscore_language = "en";
  RankerConfig ranker;
  std::size_t ranker_batch_size = 1;
};

// Sections below are not part of the RL4LMs schema.

struct CorpusSection {
  std::size_t max_chunk_tokens = 100;
  std::size_t min_overlap_tokens = 3;
};

struct RetrievalSection {
  std::size_t k = 5;
  std::string embedding_model = "text-embedding-ada-002";
  std::string embedding_cache;
  std::size_t max_in_flight = 4;
};

struct BackendSection {
  /// mock-echo | mock-seeded | openai
  std::string backend = "mock-seeded";
  std::string base_url = "https://api.openai.com";
  double requests_per_minute = 60.0;
  std::size_t max_attempts = 5;
};

struct RunConfig {
  TokenizerSection tokenizer;
  std::string reward_fn_id = "dialog_rpt_bert";
  RewardConfig reward;
  DatapoolSection datapool;
  PPOConfig ppo;
  MetricsSection metrics;

  CorpusSection corpus;
  RetrievalSection retrieval;
  GenerationParams generation;
  BackendSection backend;
  SFTConfig sft;
  std::uint64_t seed = 0;

  /// Non-fatal notes raised while parsing, e.g. ignored settings.
  std::vector<std::string> warnings;
};

/// Parses a YAML run document. Every key must be known; the first unknown
/// key raises ConfigError naming its dotted path.
RunConfig parse_run_config(std::string_view yaml_text);
RunConfig load_run_config(const std::string& path);

}  // namespace teachgen
