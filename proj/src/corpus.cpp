#include "teachgen/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <unordered_set>

#include "teachgen/error.hpp"

namespace teachgen {

using nlohmann::json;

std::vector<Utterance> DialogueSample::turns() const {
  auto out = context;
  if (response) out.push_back(*response);
  return out;
}

bool is_teacher_label(std::string_view speaker) {
  constexpr std::string_view kTeacher = "teacher";
  return std::equal(speaker.begin(), speaker.end(), kTeacher.begin(),
                    kTeacher.end(), [](char a, char b) {
                      return std::tolower(static_cast<unsigned char>(a)) == b;
                    });
}

namespace {

Utterance utterance_from_json(const json& node, std::size_t index,
                              const std::string& where) {
  if (!node.is_object())
    throw ValidationError(index, where, "utterance must be a JSON object");
  auto text_it = node.find("text");
  if (text_it == node.end() || !text_it->is_string())
    throw ValidationError(index, where + ".text", "missing or not a string");
  auto speaker_it = node.find("speaker");
  if (speaker_it == node.end() || !speaker_it->is_string())
    throw ValidationError(index, where + ".speaker", "missing or not a string");
  Utterance u{speaker_it->get<std::string>(), text_it->get<std::string>()};
  if (trim(u.text).empty())
    throw ValidationError(index, where + ".text", "empty after trimming");
  if (trim(u.speaker).empty())
    throw ValidationError(index, where + ".speaker", "empty speaker label");
  return u;
}

std::vector<DialogueSample> parse_records(const std::vector<json>& records,
                                          CorpusMode mode,
                                          const SpeakerPredicate& is_teacher) {
  std::vector<DialogueSample> out;
  out.reserve(records.size());
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto sample = sample_from_json(records[i], i, mode, is_teacher);
    if (!seen.insert(sample.id).second)
      throw CorpusError("duplicate sample id '" + sample.id + "' at record " +
                        std::to_string(i));
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace

DialogueSample sample_from_json(const json& record, std::size_t index,
                                CorpusMode mode,
                                const SpeakerPredicate& is_teacher) {
  if (!record.is_object())
    throw ValidationError(index, "", "record must be a JSON object");
  DialogueSample sample;

  auto id_it = record.find("id");
  if (id_it == record.end()) throw ValidationError(index, "id", "missing");
  if (!id_it->is_string() || id_it->get<std::string>().empty())
    throw ValidationError(index, "id", "must be a non-empty string");
  sample.id = id_it->get<std::string>();

  auto utt_it = record.find("utterances");
  if (utt_it == record.end())
    throw ValidationError(index, "utterances", "missing");
  if (!utt_it->is_array())
    throw ValidationError(index, "utterances", "must be an array");
  if (utt_it->empty())
    throw ValidationError(index, "utterances", "empty utterance list");
  for (std::size_t j = 0; j < utt_it->size(); ++j)
    sample.context.push_back(utterance_from_json(
        (*utt_it)[j], index, "utterances[" + std::to_string(j) + "]"));

  auto resp_it = record.find("response");
  const bool has_response = resp_it != record.end() && !resp_it->is_null();
  if (mode == CorpusMode::kTrain && !has_response)
    throw ValidationError(index, "response", "required in train mode");
  if (mode == CorpusMode::kTest && has_response)
    throw ValidationError(index, "response", "must be absent in test mode");
  if (has_response) {
    sample.response = utterance_from_json(*resp_it, index, "response");
    if (!is_teacher(sample.response->speaker))
      throw ValidationError(index, "response.speaker",
                            "'" + sample.response->speaker +
                                "' is not a teacher-role label");
  }
  return sample;
}

json sample_to_json(const DialogueSample& sample) {
  json utterances = json::array();
  for (const auto& u : sample.context)
    utterances.push_back({{"text", u.text}, {"speaker", u.speaker}});
  json out = {{"id", sample.id}, {"utterances", std::move(utterances)}};
  if (sample.response)
    out["response"] = {{"text", sample.response->text},
                       {"speaker", sample.response->speaker}};
  return out;
}

std::vector<DialogueSample> parse_corpus(std::string_view source,
                                         CorpusMode mode,
                                         const SpeakerPredicate& is_teacher) {
  const auto first = source.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};

  std::vector<json> records;
  if (source[first] == '[') {
    json doc;
    try {
      doc = json::parse(source);
    } catch (const json::parse_error& e) {
      throw ValidationError(std::nullopt, "", std::string("malformed JSON: ") + e.what());
    }
    records.assign(doc.begin(), doc.end());
  } else {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= source.size()) {
      auto nl = source.find('\n', pos);
      if (nl == std::string_view::npos) nl = source.size();
      auto line = source.substr(pos, nl - pos);
      pos = nl + 1;
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
      try {
        records.push_back(json::parse(line));
      } catch (const json::parse_error& e) {
        throw ValidationError(records.size(), "",
                              "malformed JSON on line " + std::to_string(line_no) +
                                  ": " + e.what());
      }
    }
  }
  return parse_records(records, mode, is_teacher);
}

std::vector<DialogueSample> parse_corpus(std::istream& source, CorpusMode mode,
                                         const SpeakerPredicate& is_teacher) {
  std::string text{std::istreambuf_iterator<char>(source),
                   std::istreambuf_iterator<char>()};
  return parse_corpus(std::string_view(text), mode, is_teacher);
}

std::vector<DialogueSample> load_corpus(const std::string& path, CorpusMode mode,
                                        const SpeakerPredicate& is_teacher) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus file '" + path + "'");
  return parse_corpus(in, mode, is_teacher);
}

void write_corpus(std::ostream& out, const std::vector<DialogueSample>& samples,
                  RecordLayout layout) {
  if (layout == RecordLayout::kArray) {
    json doc = json::array();
    for (const auto& s : samples) doc.push_back(sample_to_json(s));
    out << doc.dump(2) << '\n';
    return;
  }
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

std::string serialize_corpus(const std::vector<DialogueSample>& samples,
                             RecordLayout layout) {
  std::ostringstream out;
  write_corpus(out, samples, layout);
  return out.str();
}

void save_corpus(const std::string& path,
                 const std::vector<DialogueSample>& samples,
                 RecordLayout layout) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write corpus file '" + path + "'");
  write_corpus(out, samples, layout);
}

CorpusStats corpus_stats(const std::vector<DialogueSample>& samples,
                         const Tokenizer& tokenizer) {
  if (samples.empty()) throw CorpusError("corpus_stats: empty sample list");
  std::size_t turns = 0;
  std::size_t tokens = 0;
  for (const auto& s : samples) {
    for (const auto& u : s.context) tokens += tokenizer.count(u.text);
    turns += s.context.size();
    if (s.response) {
      tokens += tokenizer.count(s.response->text);
      ++turns;
    }
  }
  CorpusStats stats;
  stats.num_samples = samples.size();
  stats.avg_turns = static_cast<double>(turns) / static_cast<double>(samples.size());
  stats.avg_tokens_per_turn =
      static_cast<double>(tokens) / static_cast<double>(turns);
  return stats;
}

json stats_to_json(const CorpusStats& stats) {
  return {{"num_samples", stats.num_samples},
          {"avg_turns", stats.avg_turns},
          {"avg_tokens_per_turn", stats.avg_tokens_per_turn}};
}

std::string render_stats_markdown(
    const std::vector<std::pair<std::string, CorpusStats>>& columns) {
  auto fixed2 = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  std::string header = "| Dataset |";
  std::string rule = "|---|";
  std::string samples = "| Num Samples |";
  std::string turns = "| Avg Turns |";
  std::string tokens = "| Avg Tokens Per Turn |";
  for (const auto& [name, s] : columns) {
    header += " " + name + " |";
    rule += "---|";
    samples += " " + std::to_string(s.num_samples) + " |";
    turns += " " + fixed2(s.avg_turns) + " |";
    tokens += " " + fixed2(s.avg_tokens_per_turn) + " |";
  }
  return header + "\n" + rule + "\n" + samples + "\n" + turns + "\n" + tokens + "\n";
}

ChunkResult extract_chunks(const std::vector<Utterance>& conversation,
                           std::size_t max_tokens, const Tokenizer& tokenizer,
                           const SpeakerPredicate& is_teacher,
                           std::string_view id_prefix) {
  ChunkResult result;
  if (conversation.empty()) return result;

  std::vector<std::size_t> lengths;
  lengths.reserve(conversation.size());
  for (const auto& u : conversation) lengths.push_back(tokenizer.count(u.text));

  std::set<std::string> emitted;
  for (std::size_t end = 0; end < conversation.size(); ++end) {
    if (!is_teacher(conversation[end].speaker)) continue;
    if (lengths[end] > max_tokens) {
      result.warnings.push_back("utterance " + std::to_string(end) + " has " +
                                std::to_string(lengths[end]) +
                                " tokens, exceeding the budget of " +
                                std::to_string(max_tokens) + "; skipped");
      continue;
    }
    std::size_t total = lengths[end];
    std::size_t begin = end;
    while (begin > 0 && total + lengths[begin - 1] <= max_tokens) {
      --begin;
      total += lengths[begin];
    }
    if (begin == end) {
      result.warnings.push_back("teacher utterance " + std::to_string(end) +
                                " has no context within the budget; skipped");
      continue;
    }

    DialogueSample chunk;
    chunk.id = std::string(id_prefix) + "-" + std::to_string(end);
    chunk.context.assign(conversation.begin() + static_cast<std::ptrdiff_t>(begin),
                         conversation.begin() + static_cast<std::ptrdiff_t>(end));
    chunk.response = conversation[end];

    // Identity ignores the id, which differs per endpoint by construction.
    auto key = sample_to_json(DialogueSample{"", chunk.context, chunk.response}).dump();
    if (!emitted.insert(std::move(key)).second) continue;
    result.chunks.push_back(std::move(chunk));
  }
  return result;
}

}  // namespace teachgen
