#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "teachgen/tokenizer.hpp"

namespace teachgen {

struct Utterance {
  std::string speaker;
  std::string text;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

/// One passage: ordered context turns and, in training data, the teacher
/// turn that follows them.
struct DialogueSample {
  std::string id;
  std::vector<Utterance> context;
  std::optional<Utterance> response;

  /// Context followed by the response when present.
  std::vector<Utterance> turns() const;

  friend bool operator==(const DialogueSample&, const DialogueSample&) = default;
};

/// Train data must carry a response, test data must not; Any accepts both.
enum class CorpusMode { kTrain, kTest, kAny };

using SpeakerPredicate = std::function<bool(std::string_view)>;

/// Default teacher-role test: label equals "teacher", ignoring ASCII case.
bool is_teacher_label(std::string_view speaker);

struct CorpusStats {
  std::size_t num_samples = 0;
  double avg_turns = 0.0;
  double avg_tokens_per_turn = 0.0;
};

enum class RecordLayout { kJsonLines, kArray };

/// Parses newline-delimited or array-form JSON records. The layout is
/// detected from the first non-whitespace character.
std::vector<DialogueSample> parse_corpus(
    std::istream& source, CorpusMode mode,
    const SpeakerPredicate& is_teacher = is_teacher_label);
std::vector<DialogueSample> parse_corpus(
    std::string_view source, CorpusMode mode,
    const SpeakerPredicate& is_teacher = is_teacher_label);
std::vector<DialogueSample> load_corpus(
    const std::string& path, CorpusMode mode,
    const SpeakerPredicate& is_teacher = is_teacher_label);

/// Validates one JSON record; `index` is reported in errors.
DialogueSample sample_from_json(const nlohmann::json& record, std::size_t index,
                                CorpusMode mode,
                                const SpeakerPredicate& is_teacher = is_teacher_label);
nlohmann::json sample_to_json(const DialogueSample& sample);

void write_corpus(std::ostream& out, const std::vector<DialogueSample>& samples,
                  RecordLayout layout = RecordLayout::kJsonLines);
std::string serialize_corpus(const std::vector<DialogueSample>& samples,
                             RecordLayout layout = RecordLayout::kJsonLines);
void save_corpus(const std::string& path,
                 const std::vector<DialogueSample>& samples,
                 RecordLayout layout = RecordLayout::kJsonLines);

/// Turn and token averages over a non-empty sample list. The response is
/// counted as a turn when present.
CorpusStats corpus_stats(const std::vector<DialogueSample>& samples,
                         const Tokenizer& tokenizer = default_tokenizer());

nlohmann::json stats_to_json(const CorpusStats& stats);

/// Markdown table with one column per named split.
std::string render_stats_markdown(
    const std::vector<std::pair<std::string, CorpusStats>>& columns);

struct ChunkResult {
  std::vector<DialogueSample> chunks;
  std::vector<std::string> warnings;
};

/// For every teacher utterance, emits the longest preceding window that fits
/// `max_tokens` in total (response included). The teacher utterance becomes
/// the response. Identical chunks are emitted once.
ChunkResult extract_chunks(const std::vector<Utterance>& conversation,
                           std::size_t max_tokens = 100,
                           const Tokenizer& tokenizer = default_tokenizer(),
                           const SpeakerPredicate& is_teacher = is_teacher_label,
                           std::string_view id_prefix = "chunk");

}  // namespace teachgen
