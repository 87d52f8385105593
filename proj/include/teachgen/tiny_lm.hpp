#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "teachgen/optim.hpp"
#include "teachgen/policy.hpp"
#include "teachgen/sft.hpp"

namespace teachgen {

struct TinyLMConfig {
  /// Number of preceding tokens the model conditions on.
  std::size_t context_order = 2;
  /// Positions beyond this share the last position feature.
  std::size_t max_positions = 128;
  /// Standard deviation of the initial policy weights (0 = uniform start).
  double init_scale = 0.0;
  std::uint64_t seed = 0;
};

/// Byte-level log-linear language model: next-token logits are the sum of
/// weight rows selected by a bias feature, a position feature and one
/// feature per preceding token. Small enough for finite-difference checks
/// and exact enough for memorization tests.
class TinyCharLM final : public TrainableGenerator, public SequencePolicy {
 public:
  static constexpr int kEos = 256;
  static constexpr int kBos = 257;
  static constexpr std::size_t kVocab = 258;

  explicit TinyCharLM(TinyLMConfig config = {});

  const TinyLMConfig& config() const { return config_; }
  std::size_t num_features() const { return num_features_; }

  // TextGenerator
  std::string backend_id() const override { return "tiny-char-lm"; }
  using TextGenerator::generate;
  GeneratedResponse generate(const PromptBundle& prompt,
                             const GenerationParams& params) override;

  // TrainableGenerator
  double loss_and_update(std::span<const SFTExample> batch, LossScope scope,
                         const OptimizerStep& step) override;
  double evaluate_loss(std::span<const SFTExample> batch, LossScope scope) const override;
  Checkpoint snapshot() const override;
  void restore(const Checkpoint& checkpoint) override;

  // SequencePolicy
  std::size_t vocab_size() const override { return kVocab; }
  int eos_token() const override { return kEos; }
  std::vector<int> encode(std::string_view text) const override;
  std::string decode(std::span<const int> tokens) const override;
  void logits(std::span<const int> prefix, std::span<double> out) const override;
  double value(std::span<const int> prefix) const override;
  std::span<double> policy_parameters() override { return weights_; }
  std::span<double> value_parameters() override { return value_weights_; }
  void accumulate_policy_grad(std::span<const int> prefix, std::span<const double> dlogits,
                              std::span<double> grad) const override;
  void accumulate_value_grad(std::span<const int> prefix, double dvalue,
                             std::span<double> grad) const override;
  std::unique_ptr<SequencePolicy> clone_policy() const override;

 private:
  void active_features(std::span<const int> prefix, std::vector<std::size_t>& out) const;
  // Returns summed loss and target count; accumulates into grad when non-null.
  std::pair<double, std::size_t> batch_loss(std::span<const SFTExample> batch,
                                            LossScope scope,
                                            std::vector<double>* grad) const;

  TinyLMConfig config_;
  std::size_t num_features_;
  std::vector<double> weights_;        // num_features x kVocab
  std::vector<double> value_weights_;  // num_features
  AdamW optimizer_;
};

/// Replaces invalid UTF-8 sequences with U+FFFD.
std::string sanitize_utf8(std::string_view bytes);

}  // namespace teachgen
