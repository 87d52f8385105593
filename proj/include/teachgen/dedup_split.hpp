#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "teachgen/corpus.hpp"

namespace teachgen {

enum class MatchUnit { kUtterance, kUtterancePair };

/// Two samples overlap when they share a match unit whose normalized text has
/// at least `min_tokens` whitespace tokens.
struct OverlapPolicy {
  std::size_t min_tokens = 3;
  bool normalize = true;  // lowercase + collapse whitespace
  MatchUnit match_unit = MatchUnit::kUtterance;

  void validate() const;
};

/// Normalized keys of the qualifying match units of a sample (context and
/// response), in turn order, without duplicates.
std::vector<std::string> overlap_keys(const DialogueSample& sample,
                                      const OverlapPolicy& policy);

bool samples_overlap(const DialogueSample& a, const DialogueSample& b,
                     const OverlapPolicy& policy = {});

struct ExcludedSample {
  DialogueSample sample;
  std::string conflicting_id;
};

struct SplitResult {
  std::vector<DialogueSample> included;
  std::vector<ExcludedSample> excluded;
};

/// Walks `pool` in order and keeps each sample that shares no match unit with
/// any held-out sample. Excluded entries carry the earliest (in held-out
/// order) conflicting id.
SplitResult iterative_inclusion_split(const std::vector<DialogueSample>& pool,
                                      const std::vector<DialogueSample>& held_out,
                                      const OverlapPolicy& policy = {});

struct LeakageConflict {
  std::string split_a;
  std::string id_a;
  std::string split_b;
  std::string id_b;

  friend bool operator==(const LeakageConflict&, const LeakageConflict&) = default;
};

using NamedSplit = std::pair<std::string, std::vector<DialogueSample>>;

/// Every overlapping cross-split pair, ordered by split pair, then by the
/// position of each sample in its split.
std::vector<LeakageConflict> leakage_report(const std::vector<NamedSplit>& splits,
                                            const OverlapPolicy& policy = {});

nlohmann::json conflicts_to_json(const std::vector<LeakageConflict>& conflicts);
nlohmann::json split_report_json(const SplitResult& result);

}  // namespace teachgen
