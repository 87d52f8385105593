#include "teachgen/reward.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "teachgen/error.hpp"
#include "teachgen/hashing.hpp"
#include "teachgen/retrieval.hpp"
#include "teachgen/tokenizer.hpp"

namespace teachgen {

ScoreTriple ScoreTriple::from_precision_recall(double precision, double recall) {
  const double sum = precision + recall;
  return {precision, recall, sum > 0.0 ? 2.0 * precision * recall / sum : 0.0};
}

std::vector<std::string> metric_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& raw : default_tokenizer().tokenize(text)) {
    std::size_t b = 0, e = raw.size();
    auto punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
    while (b < e && punct(raw[b])) ++b;
    while (e > b && punct(raw[e - 1])) --e;
    // Tokens made only of punctuation (e.g. "___?") are kept verbatim.
    std::string tok = b == e ? raw : raw.substr(b, e - b);
    for (auto& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(std::move(tok));
  }
  return out;
}

HashingTokenEmbedder::HashingTokenEmbedder(std::size_t dimension, std::uint64_t seed,
                                           std::string model_id)
    : dimension_(dimension), seed_(seed), model_id_(std::move(model_id)) {
  if (dimension_ == 0) throw ConfigError("token embedding dimension must be positive");
}

std::vector<double> HashingTokenEmbedder::embed_token(std::string_view token) const {
  std::mt19937_64 rng(splitmix64(fnv1a64(token) ^ splitmix64(seed_)));
  std::vector<double> v(dimension_);
  // Box-Muller on raw 53-bit uniforms so vectors are identical across
  // standard library implementations.
  auto uniform = [&] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
  for (std::size_t i = 0; i < dimension_; i += 2) {
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = 2.0 * M_PI * uniform();
    v[i] = r * std::cos(theta);
    if (i + 1 < dimension_) v[i + 1] = r * std::sin(theta);
  }
  return v;
}

TokenEmbeddings HashingTokenEmbedder::embed_tokens(std::string_view text) {
  TokenEmbeddings out;
  out.tokens = metric_tokens(text);
  for (const auto& t : out.tokens) out.vectors.push_back(embed_token(t));
  return out;
}

namespace {

std::size_t table_dimension(const std::map<std::string, std::vector<double>>& table) {
  if (table.empty()) throw ConfigError("token embedding table is empty");
  const auto dim = table.begin()->second.size();
  for (const auto& [tok, v] : table)
    if (v.size() != dim || dim == 0)
      throw ConfigError("token embedding table: inconsistent dimension at '" + tok + "'");
  return dim;
}

}  // namespace

TableTokenEmbedder::TableTokenEmbedder(std::map<std::string, std::vector<double>> table,
                                       std::string model_id)
    : table_(std::move(table)),
      model_id_(std::move(model_id)),
      fallback_(table_dimension(table_), 0, model_id_) {}

TableTokenEmbedder TableTokenEmbedder::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open token embedding table '" + path + "'");
  const auto doc = nlohmann::json::parse(in);
  return TableTokenEmbedder(
      doc.at("tokens").get<std::map<std::string, std::vector<double>>>(),
      doc.value("model_id", std::string("table-stub")));
}

TokenEmbeddings TableTokenEmbedder::embed_tokens(std::string_view text) {
  TokenEmbeddings out;
  out.tokens = metric_tokens(text);
  for (const auto& t : out.tokens) {
    if (auto it = table_.find(t); it != table_.end())
      out.vectors.push_back(it->second);
    else
      out.vectors.push_back(fallback_.embed_token(t));
  }
  return out;
}

IdfTable compute_idf(const std::vector<std::string>& references) {
  std::unordered_map<std::string, std::size_t> df;
  for (const auto& ref : references) {
    const auto toks = metric_tokens(ref);
    for (const auto& t : std::set<std::string>(toks.begin(), toks.end())) ++df[t];
  }
  const double m = static_cast<double>(references.size());
  IdfTable table;
  table.unseen_weight = std::log(m + 1.0);
  for (const auto& [t, n] : df)
    table.weights[t] = std::log((m + 1.0) / (static_cast<double>(n) + 1.0));
  return table;
}

namespace {

// Weighted mean over `from` tokens of the best cosine against `to` tokens.
double greedy_match(const TokenEmbeddings& from, const TokenEmbeddings& to,
                    const IdfTable* idf) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < from.vectors.size(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& v : to.vectors) best = std::max(best, cosine_similarity(from.vectors[i], v));
    double w = 1.0;
    if (idf) {
      auto it = idf->weights.find(from.tokens[i]);
      w = it == idf->weights.end() ? idf->unseen_weight : it->second;
    }
    num += w * best;
    den += w;
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace

ScoreTriple bertscore(std::string_view candidate, std::string_view reference,
                      TokenEmbedder& embedder, const BertScoreOptions& options) {
  const auto cand = embedder.embed_tokens(candidate);
  const auto ref = embedder.embed_tokens(reference);
  if (cand.tokens.empty()) throw Error("bertscore: candidate has no tokens");
  if (ref.tokens.empty()) throw Error("bertscore: reference has no tokens");
  const double p = greedy_match(cand, ref, options.idf);
  const double r = greedy_match(ref, cand, options.idf);
  auto out = ScoreTriple::from_precision_recall(p, r);
  if (options.baseline) {
    auto rescale = [](double s, double b) { return (s - b) / (1.0 - b); };
    out = {rescale(out.precision, options.baseline->precision),
           rescale(out.recall, options.baseline->recall),
           rescale(out.f1, options.baseline->f1)};
  }
  return out;
}

std::vector<double> HeuristicRanker::scores(std::string_view context,
                                            std::string_view response) {
  const auto resp = metric_tokens(response);
  if (resp.empty()) return {0.0};
  const auto ctx = metric_tokens(context);
  const std::set<std::string> ctx_set(ctx.begin(), ctx.end());
  const std::set<std::string> resp_set(resp.begin(), resp.end());
  std::size_t shared = 0;
  for (const auto& t : resp_set) shared += ctx_set.count(t);
  const double length_term = 1.0 - std::exp(-static_cast<double>(resp.size()) / 6.0);
  const double overlap = static_cast<double>(shared) / static_cast<double>(resp_set.size());
  return {0.6 * length_term + 0.4 * overlap};
}

double dialogue_quality(std::string_view context, std::string_view response,
                        DialogueRanker& ranker, std::size_t label_index,
                        std::vector<std::string>* warnings) {
  const auto s = ranker.scores(context, response);
  if (label_index >= s.size())
    throw Error("ranker '" + ranker.model_id() + "' returned " + std::to_string(s.size()) +
                " label(s); label_index " + std::to_string(label_index) + " is out of range");
  const double raw = s[label_index];
  if (!std::isfinite(raw))
    throw Error("ranker '" + ranker.model_id() + "' returned a non-finite score");
  const double clamped = std::clamp(raw, 0.0, 1.0);
  if (clamped != raw && warnings) {
    std::ostringstream msg;
    msg << "ranker score " << raw << " clamped to " << clamped;
    warnings->push_back(msg.str());
  }
  return clamped;
}

std::vector<double> dialogue_quality_batch(
    const std::vector<std::pair<std::string, std::string>>& pairs, DialogueRanker& ranker,
    std::size_t label_index, std::size_t threads) {
  std::vector<double> out(pairs.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, pairs.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < pairs.size(); i = next++) {
      try {
        out[i] = dialogue_quality(pairs[i].first, pairs[i].second, ranker, label_index);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = pairs.size();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

void RewardConfig::validate() const {
  if (!(bertscore_coeff >= 0.0) || !(dialogrpt_coeff >= 0.0))
    throw ConfigError("reward coefficients must be non-negative");
}

double composite_reward(double bertscore_f1, double quality, const RewardConfig& config) {
  if (!std::isfinite(bertscore_f1) || !std::isfinite(quality))
    throw Error("composite_reward: non-finite input");
  config.validate();
  return config.bertscore_coeff * bertscore_f1 + config.dialogrpt_coeff * quality;
}

CompositeReward::CompositeReward(std::shared_ptr<TokenEmbedder> embedder,
                                 std::shared_ptr<DialogueRanker> ranker, RewardConfig config,
                                 std::size_t label_index)
    : embedder_(std::move(embedder)),
      ranker_(std::move(ranker)),
      config_(config),
      label_index_(label_index) {
  config_.validate();
}

RewardBreakdown CompositeReward::score(std::string_view context, std::string_view candidate,
                                       std::string_view reference) const {
  RewardBreakdown out;
  // An empty generation earns no similarity credit.
  if (metric_tokens(candidate).empty())
    out.bertscore = {};
  else
    out.bertscore = bertscore(candidate, reference, *embedder_);
  out.dialogue_quality = dialogue_quality(context, candidate, *ranker_, label_index_);
  out.reward = composite_reward(out.bertscore.f1, out.dialogue_quality, config_);
  return out;
}

ContrastReport metric_contrast_report(std::string_view context,
                                      const std::vector<std::string>& candidates,
                                      std::string_view reference, TokenEmbedder& embedder,
                                      DialogueRanker& ranker, const RewardConfig& config,
                                      double tie_threshold) {
  if (candidates.empty()) throw Error("metric_contrast_report: no candidates");
  ContrastReport report;
  report.context = std::string(context);
  report.reference = std::string(reference);
  report.tie_threshold = tie_threshold;
  for (const auto& c : candidates) {
    ContrastRow row;
    row.candidate = c;
    row.bertscore = bertscore(c, reference, embedder);
    row.dialogue_quality = dialogue_quality(context, c, ranker);
    row.reward = composite_reward(row.bertscore.f1, row.dialogue_quality, config);
    report.rows.push_back(std::move(row));
  }
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const ContrastRow& a, const ContrastRow& b) {
                     return a.bertscore.f1 > b.bertscore.f1;
                   });
  for (std::size_t i = 0; i < report.rows.size(); ++i)
    for (std::size_t j = i + 1; j < report.rows.size(); ++j)
      if (std::abs(report.rows[i].bertscore.f1 - report.rows[j].bertscore.f1) < tie_threshold)
        report.ranked_alike.emplace_back(i, j);
  return report;
}

std::string ContrastReport::to_markdown() const {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "Context:\n\n```\n" << context << "\n```\n\n";
  out << "Reference: `" << reference << "`\n\n";
  out << "| Rank | Candidate | BERTScore P | BERTScore R | BERTScore F1 | DialogRPT | Reward |\n";
  out << "|---|---|---|---|---|---|---|\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << "| " << i + 1 << " | " << r.candidate << " | " << fmt(r.bertscore.precision)
        << " | " << fmt(r.bertscore.recall) << " | " << fmt(r.bertscore.f1) << " | "
        << fmt(r.dialogue_quality) << " | " << fmt(r.reward) << " |\n";
  }
  out << "\n";
  if (ranked_alike.empty()) {
    out << "No candidate pair is within " << fmt(tie_threshold) << " F1.\n";
  } else {
    for (const auto& [i, j] : ranked_alike)
      out << "Opposing responses ranked alike: \"" << rows[i].candidate << "\" vs \""
          << rows[j].candidate << "\" (|dF1| = "
          << fmt(std::abs(rows[i].bertscore.f1 - rows[j].bertscore.f1)) << " < "
          << fmt(tie_threshold) << ")\n";
  }
  return out.str();
}

}  // namespace teachgen
