#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace teachgen {

/// Autoregressive token policy with explicit logits, a scalar value head over
/// the same state, and hand-written gradients. A "prefix" is every token
/// seen so far (prompt then generated), excluding any internal start token.
class SequencePolicy {
 public:
  virtual ~SequencePolicy() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual int eos_token() const = 0;
  virtual std::vector<int> encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const int> tokens) const = 0;

  /// Next-token logits given `prefix`; `out` has vocab_size() entries.
  virtual void logits(std::span<const int> prefix, std::span<double> out) const = 0;
  virtual double value(std::span<const int> prefix) const = 0;

  virtual std::span<double> policy_parameters() = 0;
  virtual std::span<double> value_parameters() = 0;

  /// grad += d(logits)/d(policy params)^T * dlogits
  virtual void accumulate_policy_grad(std::span<const int> prefix,
                                      std::span<const double> dlogits,
                                      std::span<double> grad) const = 0;
  /// grad += d(value)/d(value params) * dvalue
  virtual void accumulate_value_grad(std::span<const int> prefix, double dvalue,
                                     std::span<double> grad) const = 0;

  virtual std::unique_ptr<SequencePolicy> clone_policy() const = 0;
};

/// Log-softmax of `logits` with `banned` (if >= 0) given probability zero.
void masked_log_softmax(std::span<const double> logits, int banned,
                        std::span<double> out);

/// Entropy of the distribution whose log-probabilities are `logp`.
double entropy_of(std::span<const double> logp);

/// Draws an index from exp(logp).
int sample_from_logp(std::span<const double> logp, std::mt19937_64& rng);

/// Sampling with temperature (0 = greedy) and nucleus cutoff top_p.
int sample_with(std::span<const double> logits, int banned, double temperature,
                double top_p, std::mt19937_64& rng);

struct BeamSearchOptions {
  std::size_t num_beams = 5;
  std::size_t min_new_tokens = 9;
  std::size_t max_new_tokens = 20;
  double length_penalty = 1.0;
};

/// Beam search over `policy`; returns the generated tokens of the best
/// hypothesis, without the end-of-sequence token. Hypotheses are ranked by
/// sum log-probability / length^length_penalty.
std::vector<int> beam_search(const SequencePolicy& policy, std::span<const int> prompt,
                             const BeamSearchOptions& options = {});

}  // namespace teachgen
