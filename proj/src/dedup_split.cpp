#include "teachgen/dedup_split.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_map>
#include <unordered_set>

#include "teachgen/error.hpp"

namespace teachgen {

void OverlapPolicy::validate() const {
  if (min_tokens < 1) throw ConfigError("overlap policy: min_tokens must be >= 1");
}

namespace {

struct NormalizedText {
  std::string key;
  std::size_t tokens = 0;
};

NormalizedText normalize_text(const std::string& text, bool normalize) {
  const auto pieces = default_tokenizer().split(text);
  if (!normalize) return {text, pieces.size()};
  std::string out;
  for (const auto& p : pieces) {
    if (!out.empty()) out += ' ';
    for (std::size_t i = p.begin; i < p.end; ++i)
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
  }
  return {std::move(out), pieces.size()};
}

}  // namespace

std::vector<std::string> overlap_keys(const DialogueSample& sample,
                                      const OverlapPolicy& policy) {
  policy.validate();
  std::vector<NormalizedText> turns;
  for (const auto& u : sample.turns())
    turns.push_back(normalize_text(u.text, policy.normalize));

  std::vector<std::string> keys;
  std::unordered_set<std::string> seen;
  auto add = [&](std::string key, std::size_t tokens) {
    if (tokens >= policy.min_tokens && seen.insert(key).second)
      keys.push_back(std::move(key));
  };
  if (policy.match_unit == MatchUnit::kUtterance) {
    for (auto& t : turns) add(std::move(t.key), t.tokens);
  } else {
    for (std::size_t i = 0; i + 1 < turns.size(); ++i)
      add(turns[i].key + '\n' + turns[i + 1].key,
          turns[i].tokens + turns[i + 1].tokens);
  }
  return keys;
}

bool samples_overlap(const DialogueSample& a, const DialogueSample& b,
                     const OverlapPolicy& policy) {
  const auto ka = overlap_keys(a, policy);
  const auto kb = overlap_keys(b, policy);
  std::unordered_set<std::string> set(ka.begin(), ka.end());
  return std::any_of(kb.begin(), kb.end(),
                     [&](const std::string& k) { return set.count(k) > 0; });
}

SplitResult iterative_inclusion_split(const std::vector<DialogueSample>& pool,
                                      const std::vector<DialogueSample>& held_out,
                                      const OverlapPolicy& policy) {
  policy.validate();
  // key -> smallest held-out index containing it
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < held_out.size(); ++i)
    for (auto& key : overlap_keys(held_out[i], policy)) index.try_emplace(std::move(key), i);

  SplitResult result;
  for (const auto& sample : pool) {
    std::size_t first_conflict = held_out.size();
    for (const auto& key : overlap_keys(sample, policy)) {
      if (auto it = index.find(key); it != index.end())
        first_conflict = std::min(first_conflict, it->second);
    }
    if (first_conflict == held_out.size())
      result.included.push_back(sample);
    else
      result.excluded.push_back({sample, held_out[first_conflict].id});
  }
  return result;
}

std::vector<LeakageConflict> leakage_report(const std::vector<NamedSplit>& splits,
                                            const OverlapPolicy& policy) {
  policy.validate();
  std::vector<std::vector<std::vector<std::string>>> keys(splits.size());
  for (std::size_t s = 0; s < splits.size(); ++s)
    for (const auto& sample : splits[s].second)
      keys[s].push_back(overlap_keys(sample, policy));

  std::vector<std::unordered_map<std::string, std::vector<std::size_t>>> index(
      splits.size());
  for (std::size_t s = 0; s < splits.size(); ++s)
    for (std::size_t j = 0; j < keys[s].size(); ++j)
      for (const auto& key : keys[s][j]) index[s][key].push_back(j);

  std::vector<LeakageConflict> out;
  for (std::size_t a = 0; a < splits.size(); ++a) {
    for (std::size_t b = a + 1; b < splits.size(); ++b) {
      for (std::size_t i = 0; i < keys[a].size(); ++i) {
        std::vector<std::size_t> hits;
        for (const auto& key : keys[a][i])
          if (auto it = index[b].find(key); it != index[b].end())
            hits.insert(hits.end(), it->second.begin(), it->second.end());
        std::sort(hits.begin(), hits.end());
        hits.erase(std::unique(hits.begin(), hits.end()), hits.end());
        for (auto j : hits)
          out.push_back({splits[a].first, splits[a].second[i].id, splits[b].first,
                         splits[b].second[j].id});
      }
    }
  }
  return out;
}

nlohmann::json conflicts_to_json(const std::vector<LeakageConflict>& conflicts) {
  auto arr = nlohmann::json::array();
  for (const auto& c : conflicts)
    arr.push_back({{"split_a", c.split_a},
                   {"id_a", c.id_a},
                   {"split_b", c.split_b},
                   {"id_b", c.id_b}});
  return arr;
}

nlohmann::json split_report_json(const SplitResult& result) {
  auto excluded = nlohmann::json::array();
  for (const auto& e : result.excluded)
    excluded.push_back({{"id", e.sample.id}, {"conflicting_id", e.conflicting_id}});
  return {{"included_count", result.included.size()},
          {"excluded_count", result.excluded.size()},
          {"excluded", std::move(excluded)}};
}

}  // namespace teachgen
