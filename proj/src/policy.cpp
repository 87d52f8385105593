#include "teachgen/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "teachgen/error.hpp"

namespace teachgen {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

void masked_log_softmax(std::span<const double> logits, int banned,
                        std::span<double> out) {
  double max = kNegInf;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (static_cast<int>(i) != banned) max = std::max(max, logits[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (static_cast<int>(i) != banned) sum += std::exp(logits[i] - max);
  const double log_z = max + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i)
    out[i] = static_cast<int>(i) == banned ? kNegInf : logits[i] - log_z;
}

double entropy_of(std::span<const double> logp) {
  double h = 0.0;
  for (double lp : logp)
    if (std::isfinite(lp)) h -= std::exp(lp) * lp;
  return h;
}

int sample_from_logp(std::span<const double> logp, std::mt19937_64& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  int last_valid = -1;
  for (std::size_t i = 0; i < logp.size(); ++i) {
    if (!std::isfinite(logp[i])) continue;
    acc += std::exp(logp[i]);
    last_valid = static_cast<int>(i);
    if (u < acc) return last_valid;
  }
  if (last_valid < 0) throw TrainingError("sampling from an empty distribution");
  return last_valid;
}

int sample_with(std::span<const double> logits, int banned, double temperature,
                double top_p, std::mt19937_64& rng) {
  const std::size_t n = logits.size();
  if (temperature <= 0.0) {
    int best = -1;
    for (std::size_t i = 0; i < n; ++i)
      if (static_cast<int>(i) != banned && (best < 0 || logits[i] > logits[best]))
        best = static_cast<int>(i);
    return best;
  }
  std::vector<double> scaled(logits.begin(), logits.end());
  for (auto& x : scaled) x /= temperature;
  std::vector<double> logp(n);
  masked_log_softmax(scaled, banned, logp);
  if (top_p < 1.0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return logp[a] > logp[b]; });
    double mass = 0.0;
    std::size_t keep = 0;
    while (keep < n && mass < top_p) mass += std::exp(logp[order[keep++]]);
    for (std::size_t r = keep; r < n; ++r) logp[order[r]] = kNegInf;
    const double log_mass = std::log(mass);
    for (auto& lp : logp)
      if (std::isfinite(lp)) lp -= log_mass;
  }
  return sample_from_logp(logp, rng);
}

std::vector<int> beam_search(const SequencePolicy& policy, std::span<const int> prompt,
                             const BeamSearchOptions& options) {
  struct Hypothesis {
    std::vector<int> tokens;
    double score = 0.0;
  };
  const auto vocab = policy.vocab_size();
  const int eos = policy.eos_token();
  auto normalized = [&](const Hypothesis& h) {
    const double len = std::max<double>(1.0, static_cast<double>(h.tokens.size()));
    return h.score / std::pow(len, options.length_penalty);
  };

  std::vector<Hypothesis> beams{Hypothesis{}};
  std::vector<Hypothesis> finished;
  std::vector<double> logits(vocab), logp(vocab);
  std::vector<int> prefix(prompt.begin(), prompt.end());

  for (std::size_t step = 0; step < options.max_new_tokens && !beams.empty(); ++step) {
    struct Candidate {
      std::size_t beam;
      int token;
      double score;
    };
    std::vector<Candidate> candidates;
    const int banned = step < options.min_new_tokens ? eos : -1;
    for (std::size_t b = 0; b < beams.size(); ++b) {
      prefix.resize(prompt.size());
      prefix.insert(prefix.end(), beams[b].tokens.begin(), beams[b].tokens.end());
      policy.logits(prefix, logits);
      masked_log_softmax(logits, banned, logp);
      for (std::size_t v = 0; v < vocab; ++v)
        if (std::isfinite(logp[v]))
          candidates.push_back({b, static_cast<int>(v), beams[b].score + logp[v]});
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });

    std::vector<Hypothesis> next;
    for (const auto& c : candidates) {
      if (next.size() >= options.num_beams) break;
      Hypothesis h{beams[c.beam].tokens, c.score};
      if (c.token == eos) {
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(c.token);
        next.push_back(std::move(h));
      }
    }
    beams = std::move(next);
    if (finished.size() >= options.num_beams) break;
  }
  for (auto& h : beams) finished.push_back(std::move(h));
  if (finished.empty()) return {};
  const auto best = std::max_element(
      finished.begin(), finished.end(),
      [&](const Hypothesis& a, const Hypothesis& b) { return normalized(a) < normalized(b); });
  return best->tokens;
}

}  // namespace teachgen
