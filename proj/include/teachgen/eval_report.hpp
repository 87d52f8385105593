#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "teachgen/corpus.hpp"
#include "teachgen/reward.hpp"

namespace teachgen {

struct Prediction {
  std::string sample_id;
  std::string response_text;
  std::string model_name;
};

/// JSON lines of {"id", "response", "model"}.
std::vector<Prediction> parse_predictions(std::istream& in);
std::vector<Prediction> load_predictions(const std::string& path);
void save_predictions(const std::string& path, const std::vector<Prediction>& predictions);

struct ReportRow {
  std::string model_name;
  double bertscore_f1 = 0.0;
  double dialogue_quality = 0.0;

  bool operator==(const ReportRow&) const = default;
};

struct SampleScore {
  std::string model_name;
  std::string sample_id;
  double bertscore_f1 = 0.0;
  double dialogue_quality = 0.0;

  bool operator==(const SampleScore&) const = default;
};

struct EvalReport {
  /// One row per model, ordered by model name.
  std::vector<ReportRow> rows;
  /// Ordered by (model, sample id).
  std::vector<SampleScore> samples;
  /// String-valued run metadata (split name, metric model ids, notes).
  std::map<std::string, std::string> metadata;

  bool operator==(const EvalReport&) const = default;
};

/// Means in each row are plain arithmetic means of that model's per-sample
/// scores. Unknown sample ids are reported together in one error.
EvalReport evaluate(const std::vector<Prediction>& predictions,
                    const std::vector<DialogueSample>& corpus, TokenEmbedder& embedder,
                    DialogueRanker& ranker, std::size_t label_index = 0,
                    std::size_t threads = 1);

/// Rows given directly, e.g. published scores used as a formatting fixture.
EvalReport report_from_rows(std::vector<ReportRow> rows,
                            std::map<std::string, std::string> metadata = {});

enum class ReportFormat { kMarkdown, kCsv, kJson };

ReportFormat report_format_from_string(std::string_view text);

/// Columns: Model, BERTScore, DialogRPT (two decimals in markdown).
std::string emit_report(const EvalReport& report, ReportFormat format);

/// Inverse of emit_report for the csv form (rows only) and the json form.
EvalReport parse_report(std::string_view text, ReportFormat format);

}  // namespace teachgen
