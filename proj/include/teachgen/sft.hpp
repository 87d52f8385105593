#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "teachgen/corpus.hpp"
#include "teachgen/generation.hpp"
#include "teachgen/optim.hpp"

namespace teachgen {

/// causal-concat: "[speaker] text" lines joined by newlines.
/// multiturn-eos: utterance texts each followed by an end-of-turn sentinel.
enum class SFTFormat { kCausalConcat, kMultiturnEos };

enum class LossScope { kFullSequence, kResponseOnly };

std::string to_string(SFTFormat format);
SFTFormat sft_format_from_string(std::string_view text);
std::string to_string(LossScope scope);
LossScope loss_scope_from_string(std::string_view text);

struct SFTExample {
  std::string sample_id;
  std::string input_text;
  /// [first, last) token indices of the response under the building tokenizer.
  std::pair<std::size_t, std::size_t> target_span{0, 0};
  /// [begin, end) byte offsets of the response inside input_text.
  std::pair<std::size_t, std::size_t> target_chars{0, 0};
  SFTFormat format = SFTFormat::kCausalConcat;
};

struct SFTBuildOptions {
  std::size_t max_sequence_length = 1024;
  std::string end_of_turn = "<EOT>";
  /// Tokenizer used for lengths and spans; defaults to whitespace.
  const Tokenizer* tokenizer = nullptr;
};

struct SFTBuildResult {
  std::vector<SFTExample> examples;
  std::vector<std::string> warnings;
};

/// Over-length sequences lose their oldest tokens first; the response is
/// never cut, and samples whose response alone does not fit are skipped.
SFTBuildResult build_sft_examples(const std::vector<DialogueSample>& samples,
                                  SFTFormat format, const SFTBuildOptions& options = {});

/// Opaque model state plus a manifest describing it.
struct Checkpoint {
  nlohmann::json manifest;
  std::vector<double> weights;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::string& directory);
Checkpoint load_checkpoint(const std::string& directory);

struct OptimizerStep {
  double learning_rate = 0.0;
  AdamWConfig adamw;
};

/// A generator that can be fitted with a causal language-modeling loss.
/// Instances are single-threaded.
class TrainableGenerator : public TextGenerator {
 public:
  /// Mean token cross-entropy over the scoped targets of `batch`, computed
  /// before the parameter update it drives.
  virtual double loss_and_update(std::span<const SFTExample> batch, LossScope scope,
                                 const OptimizerStep& step) = 0;
  virtual double evaluate_loss(std::span<const SFTExample> batch,
                               LossScope scope) const = 0;
  virtual Checkpoint snapshot() const = 0;
  virtual void restore(const Checkpoint& checkpoint) = 0;
};

struct SFTConfig {
  double learning_rate = 1e-5;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::size_t max_sequence_length = 1024;
  AdamWConfig adamw;
  LossScope loss_scope = LossScope::kFullSequence;
  std::uint64_t seed = 42;
  bool shuffle = true;
  /// When set, per-epoch checkpoints and train_log.jsonl are written here.
  std::string run_dir;
};

struct SFTStep {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
};

struct SFTCheckpointRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::string path;  // empty when no run_dir
  Checkpoint checkpoint;
};

struct TrainRun {
  std::vector<SFTStep> steps;
  std::vector<SFTCheckpointRecord> checkpoints;
  std::size_t total_steps = 0;
};

std::size_t sft_total_steps(std::size_t dataset_size, std::size_t batch_size,
                            std::size_t epochs);

/// ceil(|dataset| / batch_size) * epochs optimizer steps with AdamW under a
/// linearly decaying learning rate.
TrainRun train_sft(TrainableGenerator& backend, const std::vector<SFTExample>& dataset,
                   const SFTConfig& config);

}  // namespace teachgen
