#include "teachgen/tiny_lm.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "teachgen/error.hpp"

namespace teachgen {

TinyCharLM::TinyCharLM(TinyLMConfig config)
    : config_(config),
      num_features_(1 + config.max_positions + config.context_order * kVocab),
      weights_(num_features_ * kVocab, 0.0),
      value_weights_(num_features_, 0.0) {
  if (config_.max_positions == 0) throw ConfigError("tiny LM: max_positions must be > 0");
  if (config_.init_scale > 0.0) {
    std::mt19937_64 rng(config_.seed);
    std::normal_distribution<double> normal(0.0, config_.init_scale);
    for (auto& w : weights_) w = normal(rng);
  }
}

void TinyCharLM::active_features(std::span<const int> prefix,
                                 std::vector<std::size_t>& out) const {
  out.clear();
  const std::size_t t = prefix.size();
  out.push_back(0);
  out.push_back(1 + std::min(t, config_.max_positions - 1));
  const std::size_t base = 1 + config_.max_positions;
  for (std::size_t j = 1; j <= config_.context_order; ++j) {
    const int tok = t >= j ? prefix[t - j] : kBos;
    out.push_back(base + (j - 1) * kVocab + static_cast<std::size_t>(tok));
  }
}

void TinyCharLM::logits(std::span<const int> prefix, std::span<double> out) const {
  std::vector<std::size_t> active;
  active_features(prefix, active);
  std::fill(out.begin(), out.end(), 0.0);
  for (auto f : active) {
    const double* row = weights_.data() + f * kVocab;
    for (std::size_t v = 0; v < kVocab; ++v) out[v] += row[v];
  }
}

double TinyCharLM::value(std::span<const int> prefix) const {
  std::vector<std::size_t> active;
  active_features(prefix, active);
  double v = 0.0;
  for (auto f : active) v += value_weights_[f];
  return v;
}

void TinyCharLM::accumulate_policy_grad(std::span<const int> prefix,
                                        std::span<const double> dlogits,
                                        std::span<double> grad) const {
  std::vector<std::size_t> active;
  active_features(prefix, active);
  for (auto f : active) {
    double* row = grad.data() + f * kVocab;
    for (std::size_t v = 0; v < kVocab; ++v) row[v] += dlogits[v];
  }
}

void TinyCharLM::accumulate_value_grad(std::span<const int> prefix, double dvalue,
                                       std::span<double> grad) const {
  std::vector<std::size_t> active;
  active_features(prefix, active);
  for (auto f : active) grad[f] += dvalue;
}

std::unique_ptr<SequencePolicy> TinyCharLM::clone_policy() const {
  return std::make_unique<TinyCharLM>(*this);
}

std::vector<int> TinyCharLM::encode(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(static_cast<unsigned char>(c));
  return out;
}

std::string TinyCharLM::decode(std::span<const int> tokens) const {
  std::string bytes;
  for (int t : tokens) {
    if (t == kEos) break;
    if (t >= 0 && t < 256) bytes += static_cast<char>(t);
  }
  return sanitize_utf8(bytes);
}

std::pair<double, std::size_t> TinyCharLM::batch_loss(std::span<const SFTExample> batch,
                                                      LossScope scope,
                                                      std::vector<double>* grad) const {
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> z(kVocab), logp(kVocab);
  for (const auto& ex : batch) {
    auto tokens = encode(ex.input_text);
    const std::size_t n = tokens.size();
    tokens.push_back(kEos);
    std::size_t first = 0, last = n + 1;
    if (scope == LossScope::kResponseOnly) {
      first = ex.target_chars.first;
      last = ex.target_chars.second == n ? n + 1 : ex.target_chars.second;
    }
    for (std::size_t t = first; t < last; ++t) {
      const std::span<const int> prefix(tokens.data(), t);
      logits(prefix, z);
      masked_log_softmax(z, -1, logp);
      const int target = tokens[t];
      total -= logp[target];
      ++count;
      if (grad) {
        for (std::size_t v = 0; v < kVocab; ++v) z[v] = std::exp(logp[v]);
        z[target] -= 1.0;
        accumulate_policy_grad(prefix, z, *grad);
      }
    }
  }
  return {total, count};
}

double TinyCharLM::loss_and_update(std::span<const SFTExample> batch, LossScope scope,
                                   const OptimizerStep& step) {
  if (optimizer_.config().beta1 != step.adamw.beta1 ||
      optimizer_.config().beta2 != step.adamw.beta2 ||
      optimizer_.config().epsilon != step.adamw.epsilon ||
      optimizer_.config().weight_decay != step.adamw.weight_decay)
    optimizer_ = AdamW(step.adamw);
  std::vector<double> grad(weights_.size(), 0.0);
  const auto [total, count] = batch_loss(batch, scope, &grad);
  if (count == 0) return 0.0;
  const double scale = 1.0 / static_cast<double>(count);
  for (auto& g : grad) g *= scale;
  const double loss = total * scale;
  if (!std::isfinite(loss)) return loss;
  optimizer_.step(weights_, grad, step.learning_rate);
  return loss;
}

double TinyCharLM::evaluate_loss(std::span<const SFTExample> batch, LossScope scope) const {
  const auto [total, count] = batch_loss(batch, scope, nullptr);
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

Checkpoint TinyCharLM::snapshot() const {
  Checkpoint cp;
  cp.manifest = {{"backend", backend_id()},
                 {"vocab_size", kVocab},
                 {"context_order", config_.context_order},
                 {"max_positions", config_.max_positions},
                 {"policy_weights", weights_.size()},
                 {"value_weights", value_weights_.size()}};
  cp.weights = weights_;
  cp.weights.insert(cp.weights.end(), value_weights_.begin(), value_weights_.end());
  return cp;
}

void TinyCharLM::restore(const Checkpoint& checkpoint) {
  const auto& m = checkpoint.manifest;
  if (m.value("backend", std::string()) != backend_id() ||
      m.value("context_order", std::size_t{0}) != config_.context_order ||
      m.value("max_positions", std::size_t{0}) != config_.max_positions ||
      checkpoint.weights.size() != weights_.size() + value_weights_.size())
    throw Error("checkpoint does not match this tiny-char-lm configuration");
  std::copy_n(checkpoint.weights.begin(), weights_.size(), weights_.begin());
  std::copy(checkpoint.weights.begin() + static_cast<std::ptrdiff_t>(weights_.size()),
            checkpoint.weights.end(), value_weights_.begin());
  optimizer_.reset();
}

GeneratedResponse TinyCharLM::generate(const PromptBundle& prompt,
                                       const GenerationParams& params) {
  params.validate();
  auto tokens = encode(prompt.flat());
  const std::size_t prompt_len = tokens.size();
  std::mt19937_64 rng(params.seed.value_or(config_.seed));
  std::vector<double> z(kVocab);
  GeneratedResponse out;
  out.finish_reason = FinishReason::kLength;
  for (std::size_t i = 0; i < params.max_new_tokens; ++i) {
    logits(tokens, z);
    const int next = sample_with(z, -1, params.temperature, params.top_p, rng);
    if (next == kEos) {
      out.finish_reason = FinishReason::kStop;
      break;
    }
    tokens.push_back(next);
  }
  const std::span<const int> generated(tokens.data() + prompt_len, tokens.size() - prompt_len);
  out.text = decode(generated);
  out.usage = {prompt_len, generated.size()};
  return out;
}

std::string sanitize_utf8(std::string_view bytes) {
  std::string out;
  out.reserve(bytes.size());
  std::size_t i = 0;
  while (i < bytes.size()) {
    const auto c = static_cast<unsigned char>(bytes[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      len = 1;
      cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    }
    bool ok = len > 0 && i + len <= bytes.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto cc = static_cast<unsigned char>(bytes[i + k]);
      if ((cc & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (ok) {
      static constexpr std::uint32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
      ok = cp >= kMin[len] && cp <= 0x10FFFF && !(cp >= 0xD800 && cp <= 0xDFFF);
    }
    if (ok) {
      out.append(bytes.substr(i, len));
      i += len;
    } else {
      out += "\xEF\xBF\xBD";
      ++i;
    }
  }
  return out;
}

}  // namespace teachgen
