#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace teachgen {

struct ScoreTriple {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  /// f1 = 2pr / (p + r) when p + r > 0, else 0.
  static ScoreTriple from_precision_recall(double precision, double recall);
};

struct TokenEmbeddings {
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> vectors;
};

/// Contextual (or static) per-token embeddings for greedy-matching scores.
class TokenEmbedder {
 public:
  virtual ~TokenEmbedder() = default;
  virtual std::string model_id() const = 0;
  virtual TokenEmbeddings embed_tokens(std::string_view text) = 0;
};

/// Lowercased whitespace tokens with surrounding punctuation stripped.
std::vector<std::string> metric_tokens(std::string_view text);

/// Static per-token Gaussian vectors derived from a hash of the token.
class HashingTokenEmbedder final : public TokenEmbedder {
 public:
  explicit HashingTokenEmbedder(std::size_t dimension = 64, std::uint64_t seed = 0,
                                std::string model_id = "roberta-large");
  std::string model_id() const override { return model_id_; }
  TokenEmbeddings embed_tokens(std::string_view text) override;
  std::vector<double> embed_token(std::string_view token) const;
  std::size_t dimension() const { return dimension_; }

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
  std::string model_id_;
};

/// Fixed lookup table; tokens missing from the table fall back to hashed
/// vectors of the same dimension.
class TableTokenEmbedder final : public TokenEmbedder {
 public:
  TableTokenEmbedder(std::map<std::string, std::vector<double>> table,
                     std::string model_id = "table-stub");
  /// Reads {"model_id": ..., "tokens": {token: [..], ...}}.
  static TableTokenEmbedder from_file(const std::string& path);

  std::string model_id() const override { return model_id_; }
  TokenEmbeddings embed_tokens(std::string_view text) override;

 private:
  std::map<std::string, std::vector<double>> table_;
  std::string model_id_;
  HashingTokenEmbedder fallback_;
};

struct IdfTable {
  std::unordered_map<std::string, double> weights;
  double unseen_weight = 1.0;
};

/// idf(w) = log((M + 1) / (df(w) + 1)) over M reference texts; unseen tokens
/// get log(M + 1).
IdfTable compute_idf(const std::vector<std::string>& references);

struct BertScoreOptions {
  const IdfTable* idf = nullptr;
  /// Per-component baseline b; each score s becomes (s - b) / (1 - b).
  std::optional<ScoreTriple> baseline;
};

/// Greedy-matching similarity: precision averages each candidate token's
/// best cosine against the reference, recall the reverse.
ScoreTriple bertscore(std::string_view candidate, std::string_view reference,
                      TokenEmbedder& embedder, const BertScoreOptions& options = {});

/// Per-label response scores for (context, response).
class DialogueRanker {
 public:
  virtual ~DialogueRanker() = default;
  virtual std::string model_id() const = 0;
  virtual std::vector<double> scores(std::string_view context,
                                     std::string_view response) = 0;
};

class ConstantRanker final : public DialogueRanker {
 public:
  explicit ConstantRanker(double value) : value_(value) {}
  std::string model_id() const override { return "constant"; }
  std::vector<double> scores(std::string_view, std::string_view) override {
    return {value_};
  }

 private:
  double value_;
};

/// Deterministic length- and overlap-based stand-in for a neural ranker.
/// Longer responses that reuse context words score higher; pure function.
class HeuristicRanker final : public DialogueRanker {
 public:
  std::string model_id() const override { return "heuristic-updown"; }
  std::vector<double> scores(std::string_view context, std::string_view response) override;
};

struct RankerConfig {
  std::string model_id = "microsoft/DialogRPT-updown";
  std::size_t label_index = 0;
};

/// Ranker output at `label_index`, clamped to [0, 1]. A clamp appends a
/// message to `warnings` when given.
double dialogue_quality(std::string_view context, std::string_view response,
                        DialogueRanker& ranker, std::size_t label_index = 0,
                        std::vector<std::string>* warnings = nullptr);

/// Scores pairs across up to `threads` workers; output order matches input.
/// The ranker must tolerate concurrent calls when threads > 1.
std::vector<double> dialogue_quality_batch(
    const std::vector<std::pair<std::string, std::string>>& pairs, DialogueRanker& ranker,
    std::size_t label_index = 0, std::size_t threads = 1);

struct RewardConfig {
  double bertscore_coeff = 0.5;
  double dialogrpt_coeff = 0.5;

  void validate() const;
};

double composite_reward(double bertscore_f1, double dialogue_quality,
                        const RewardConfig& config = {});

struct RewardBreakdown {
  ScoreTriple bertscore;
  double dialogue_quality = 0.0;
  double reward = 0.0;
};

/// BERTScore against the reference plus ranker score against the context,
/// combined with composite_reward.
class CompositeReward {
 public:
  CompositeReward(std::shared_ptr<TokenEmbedder> embedder,
                  std::shared_ptr<DialogueRanker> ranker, RewardConfig config = {},
                  std::size_t label_index = 0);

  RewardBreakdown score(std::string_view context, std::string_view candidate,
                        std::string_view reference) const;
  const RewardConfig& config() const { return config_; }

 private:
  std::shared_ptr<TokenEmbedder> embedder_;
  std::shared_ptr<DialogueRanker> ranker_;
  RewardConfig config_;
  std::size_t label_index_;
};

struct ContrastRow {
  std::string candidate;
  ScoreTriple bertscore;
  double dialogue_quality = 0.0;
  double reward = 0.0;
};

struct ContrastReport {
  std::string context;
  std::string reference;
  std::vector<ContrastRow> rows;  // by descending f1, ties in input order
  /// Pairs of row indices whose f1 differs by less than tie_threshold.
  std::vector<std::pair<std::size_t, std::size_t>> ranked_alike;
  double tie_threshold = 0.02;

  bool flags_ranked_alike() const { return !ranked_alike.empty(); }
  std::string to_markdown() const;
};

ContrastReport metric_contrast_report(std::string_view context,
                                      const std::vector<std::string>& candidates,
                                      std::string_view reference, TokenEmbedder& embedder,
                                      DialogueRanker& ranker, const RewardConfig& config = {},
                                      double tie_threshold = 0.02);

}  // namespace teachgen
