#include "teachgen/eval_report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "teachgen/error.hpp"
#include "teachgen/retrieval.hpp"
#include "teachgen/tokenizer.hpp"

namespace teachgen {
namespace {

std::string fixed2(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string exact(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
      any = true;
    }
  }
  if (quoted) throw Error("report csv: unterminated quote");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error("report csv: line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

const char* const kColumns[] = {"Model", "BERTScore", "DialogRPT"};

}  // namespace

std::vector<Prediction> parse_predictions(std::istream& in) {
  std::vector<Prediction> out;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(index, "", std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError(index, "", "expected an object");
    for (const char* key : {"id", "response", "model"})
      if (!j.contains(key) || !j[key].is_string())
        throw ValidationError(index, key, "missing or not a string");
    out.push_back({j["id"].get<std::string>(), j["response"].get<std::string>(),
                   j["model"].get<std::string>()});
    ++index;
  }
  return out;
}

std::vector<Prediction> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open predictions file '" + path + "'");
  return parse_predictions(in);
}

void save_predictions(const std::string& path, const std::vector<Prediction>& predictions) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write predictions file '" + path + "'");
  for (const auto& p : predictions)
    out << nlohmann::json{{"id", p.sample_id}, {"response", p.response_text},
                          {"model", p.model_name}}
               .dump()
        << '\n';
}

EvalReport evaluate(const std::vector<Prediction>& predictions,
                    const std::vector<DialogueSample>& corpus, TokenEmbedder& embedder,
                    DialogueRanker& ranker, std::size_t label_index, std::size_t threads) {
  std::unordered_map<std::string, const DialogueSample*> by_id;
  for (const auto& s : corpus) by_id.emplace(s.id, &s);

  std::vector<std::string> unmatched, unreferenced;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& p : predictions) {
    const auto it = by_id.find(p.sample_id);
    if (it == by_id.end()) {
      unmatched.push_back(p.sample_id);
    } else if (!it->second->response || metric_tokens(it->second->response->text).empty()) {
      unreferenced.push_back(p.sample_id);
    }
    if (!seen.emplace(p.model_name, p.sample_id).second)
      throw Error("duplicate prediction for model '" + p.model_name + "', sample '" +
                  p.sample_id + "'");
  }
  auto list = [](const std::vector<std::string>& ids) {
    std::string s;
    for (const auto& id : ids) s += (s.empty() ? "" : ", ") + id;
    return s;
  };
  if (!unmatched.empty()) throw Error("predictions with unknown sample ids: " + list(unmatched));
  if (!unreferenced.empty())
    throw Error("samples without a reference response: " + list(unreferenced));

  std::vector<const Prediction*> order;
  for (const auto& p : predictions) order.push_back(&p);
  std::sort(order.begin(), order.end(), [](const Prediction* a, const Prediction* b) {
    return std::tie(a->model_name, a->sample_id) < std::tie(b->model_name, b->sample_id);
  });

  EvalReport report;
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto* p : order) {
    const auto& sample = *by_id.at(p->sample_id);
    SampleScore s{p->model_name, p->sample_id, 0.0, 0.0};
    if (!metric_tokens(p->response_text).empty())
      s.bertscore_f1 = bertscore(p->response_text, sample.response->text, embedder).f1;
    report.samples.push_back(std::move(s));
    pairs.emplace_back(render_context(sample), p->response_text);
  }
  const auto quality = dialogue_quality_batch(pairs, ranker, label_index, threads);
  for (std::size_t i = 0; i < quality.size(); ++i)
    report.samples[i].dialogue_quality = quality[i];

  for (std::size_t i = 0; i < report.samples.size();) {
    std::size_t j = i;
    double f1 = 0.0, q = 0.0;
    while (j < report.samples.size() &&
           report.samples[j].model_name == report.samples[i].model_name) {
      f1 += report.samples[j].bertscore_f1;
      q += report.samples[j].dialogue_quality;
      ++j;
    }
    const double n = static_cast<double>(j - i);
    report.rows.push_back({report.samples[i].model_name, f1 / n, q / n});
    i = j;
  }
  report.metadata = {
      {"aggregate", "arithmetic mean over samples"},
      {"bertscore_model", embedder.model_id()},
      {"ranker_model", ranker.model_id()},
      {"ranker_label_index", std::to_string(label_index)},
      {"note",
       "scores come from the configured embedder and ranker; published tables need the "
       "original models and licensed corpus and are not recomputed here"},
  };
  return report;
}

EvalReport report_from_rows(std::vector<ReportRow> rows,
                            std::map<std::string, std::string> metadata) {
  EvalReport r;
  r.rows = std::move(rows);
  r.metadata = std::move(metadata);
  return r;
}

ReportFormat report_format_from_string(std::string_view text) {
  if (text == "markdown" || text == "md") return ReportFormat::kMarkdown;
  if (text == "csv") return ReportFormat::kCsv;
  if (text == "json") return ReportFormat::kJson;
  throw Error("unknown report format '" + std::string(text) + "'");
}

std::string emit_report(const EvalReport& report, ReportFormat format) {
  std::ostringstream out;
  switch (format) {
    case ReportFormat::kMarkdown: {
      out << "| " << kColumns[0] << " | " << kColumns[1] << " | " << kColumns[2] << " |\n";
      out << "|---|---|---|\n";
      for (const auto& r : report.rows)
        out << "| " << r.model_name << " | " << fixed2(r.bertscore_f1) << " | "
            << fixed2(r.dialogue_quality) << " |\n";
      if (!report.metadata.empty()) {
        out << '\n';
        for (const auto& [k, v] : report.metadata) out << "- " << k << ": " << v << '\n';
      }
      break;
    }
    case ReportFormat::kCsv:
      out << kColumns[0] << ',' << kColumns[1] << ',' << kColumns[2] << '\n';
      for (const auto& r : report.rows)
        out << csv_field(r.model_name) << ',' << exact(r.bertscore_f1) << ','
            << exact(r.dialogue_quality) << '\n';
      break;
    case ReportFormat::kJson: {
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& r : report.rows)
        rows.push_back({{"model", r.model_name},
                        {"bertscore", r.bertscore_f1},
                        {"dialogrpt", r.dialogue_quality}});
      nlohmann::json samples = nlohmann::json::array();
      for (const auto& s : report.samples)
        samples.push_back({{"model", s.model_name},
                           {"id", s.sample_id},
                           {"bertscore", s.bertscore_f1},
                           {"dialogrpt", s.dialogue_quality}});
      nlohmann::json j{{"columns", {kColumns[0], kColumns[1], kColumns[2]}},
                       {"rows", rows},
                       {"samples", samples},
                       {"metadata", report.metadata}};
      out << j.dump(2) << '\n';
      break;
    }
  }
  return out.str();
}

EvalReport parse_report(std::string_view text, ReportFormat format) {
  EvalReport r;
  if (format == ReportFormat::kCsv) {
    const auto rows = parse_csv(text);
    if (rows.empty() || rows[0] != std::vector<std::string>{kColumns[0], kColumns[1],
                                                            kColumns[2]})
      throw Error("report csv: missing header");
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() != 3)
        throw Error("report csv: line " + std::to_string(i + 1) + ": expected 3 fields");
      r.rows.push_back({rows[i][0], parse_double(rows[i][1], i + 1),
                        parse_double(rows[i][2], i + 1)});
    }
    return r;
  }
  if (format != ReportFormat::kJson) throw Error("markdown reports cannot be parsed back");
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& row : j.at("rows"))
      r.rows.push_back({row.at("model").get<std::string>(), row.at("bertscore").get<double>(),
                        row.at("dialogrpt").get<double>()});
    for (const auto& s : j.at("samples"))
      r.samples.push_back({s.at("model").get<std::string>(), s.at("id").get<std::string>(),
                           s.at("bertscore").get<double>(), s.at("dialogrpt").get<double>()});
    r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("report json: ") + e.what());
  }
  return r;
}

}  // namespace teachgen
