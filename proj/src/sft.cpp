#include "teachgen/sft.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "teachgen/error.hpp"

namespace teachgen {

using nlohmann::json;

std::string to_string(SFTFormat format) {
  return format == SFTFormat::kCausalConcat ? "causal-concat" : "multiturn-eos";
}

SFTFormat sft_format_from_string(std::string_view text) {
  if (text == "causal-concat" || text == "causal") return SFTFormat::kCausalConcat;
  if (text == "multiturn-eos" || text == "multiturn") return SFTFormat::kMultiturnEos;
  throw ConfigError("unknown SFT format '" + std::string(text) + "'");
}

std::string to_string(LossScope scope) {
  return scope == LossScope::kFullSequence ? "full-sequence" : "response-only";
}

LossScope loss_scope_from_string(std::string_view text) {
  if (text == "full-sequence") return LossScope::kFullSequence;
  if (text == "response-only") return LossScope::kResponseOnly;
  throw ConfigError("unknown loss scope '" + std::string(text) + "'");
}

namespace {

struct Assembled {
  std::string text;
  std::vector<TokenPiece> pieces;
  std::size_t target_first = 0;
  std::size_t target_last = 0;
  std::size_t char_begin = 0;
  std::size_t char_end = 0;
};

// Appends `segment`, tokenized on its own, to `out`. Segment boundaries act
// as token boundaries, so sentinels never fuse with neighbouring words.
void append_segment(Assembled& out, std::string_view segment, const Tokenizer& tok) {
  const auto offset = out.text.size();
  out.text += segment;
  for (auto p : tok.split(segment)) out.pieces.push_back({p.begin + offset, p.end + offset});
}

Assembled assemble(const DialogueSample& sample, SFTFormat format,
                   const std::string& eot, const Tokenizer& tok) {
  Assembled out;
  const auto turns = sample.turns();
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const bool is_response = i + 1 == turns.size();
    if (format == SFTFormat::kCausalConcat) {
      if (i > 0) append_segment(out, "\n", tok);
      append_segment(out, "[" + turns[i].speaker + "] ", tok);
    }
    if (is_response) {
      out.target_first = out.pieces.size();
      out.char_begin = out.text.size();
    }
    append_segment(out, turns[i].text, tok);
    if (is_response) {
      out.target_last = out.pieces.size();
      out.char_end = out.text.size();
    }
    if (format == SFTFormat::kMultiturnEos) append_segment(out, eot, tok);
  }
  return out;
}

}  // namespace

SFTBuildResult build_sft_examples(const std::vector<DialogueSample>& samples,
                                  SFTFormat format, const SFTBuildOptions& options) {
  const Tokenizer& tok = options.tokenizer ? *options.tokenizer : default_tokenizer();
  if (options.max_sequence_length == 0)
    throw ConfigError("max_sequence_length must be positive");
  if (format == SFTFormat::kMultiturnEos && options.end_of_turn.empty())
    throw ConfigError("end-of-turn sentinel must be non-empty");

  SFTBuildResult result;
  for (const auto& sample : samples) {
    if (!sample.response)
      throw ValidationError(std::nullopt, "response",
                            "sample '" + sample.id + "' has no response to train on");
    auto a = assemble(sample, format, options.end_of_turn, tok);
    const auto total = a.pieces.size();
    if (total - a.target_first > options.max_sequence_length) {
      result.warnings.push_back("sample '" + sample.id + "': response needs " +
                                std::to_string(total - a.target_first) +
                                " tokens, exceeding max_sequence_length " +
                                std::to_string(options.max_sequence_length) +
                                "; skipped");
      continue;
    }
    std::size_t cut_tokens = 0;
    std::size_t cut_chars = 0;
    if (total > options.max_sequence_length) {
      cut_tokens = total - options.max_sequence_length;
      cut_chars = a.pieces[cut_tokens].begin;
    }
    SFTExample ex;
    ex.sample_id = sample.id;
    ex.format = format;
    ex.input_text = a.text.substr(cut_chars);
    ex.target_span = {a.target_first - cut_tokens, a.target_last - cut_tokens};
    ex.target_chars = {a.char_begin - cut_chars, a.char_end - cut_chars};
    result.examples.push_back(std::move(ex));
  }
  return result;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  json manifest = checkpoint.manifest;
  manifest["num_weights"] = checkpoint.weights.size();
  manifest["weights_file"] = "weights.bin";
  manifest["weights_format"] = "float64-native";
  {
    std::ofstream out(fs::path(directory) / "manifest.json");
    if (!out) throw Error("cannot write checkpoint manifest in '" + directory + "'");
    out << manifest.dump(2) << '\n';
  }
  std::ofstream out(fs::path(directory) / "weights.bin", std::ios::binary);
  if (!out) throw Error("cannot write checkpoint weights in '" + directory + "'");
  out.write(reinterpret_cast<const char*>(checkpoint.weights.data()),
            static_cast<std::streamsize>(checkpoint.weights.size() * sizeof(double)));
}

Checkpoint load_checkpoint(const std::string& directory) {
  namespace fs = std::filesystem;
  std::ifstream min(fs::path(directory) / "manifest.json");
  if (!min) throw Error("no checkpoint manifest in '" + directory + "'");
  Checkpoint cp;
  cp.manifest = json::parse(min);
  const auto n = cp.manifest.at("num_weights").get<std::size_t>();
  cp.weights.resize(n);
  std::ifstream win(fs::path(directory) / cp.manifest.value("weights_file", "weights.bin"),
                    std::ios::binary);
  if (!win) throw Error("no checkpoint weights in '" + directory + "'");
  win.read(reinterpret_cast<char*>(cp.weights.data()),
           static_cast<std::streamsize>(n * sizeof(double)));
  if (win.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
    throw Error("truncated checkpoint weights in '" + directory + "'");
  return cp;
}

std::size_t sft_total_steps(std::size_t dataset_size, std::size_t batch_size,
                            std::size_t epochs) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  return (dataset_size + batch_size - 1) / batch_size * epochs;
}

TrainRun train_sft(TrainableGenerator& backend, const std::vector<SFTExample>& dataset,
                   const SFTConfig& config) {
  if (dataset.empty()) throw TrainingError("train_sft: empty dataset");
  const std::size_t per_epoch = sft_total_steps(dataset.size(), config.batch_size, 1);
  TrainRun run;
  run.total_steps = per_epoch * config.epochs;

  std::ofstream log;
  if (!config.run_dir.empty()) {
    std::filesystem::create_directories(config.run_dir);
    log.open(std::filesystem::path(config.run_dir) / "train_log.jsonl");
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<SFTExample> batch;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      const auto stop = std::min(order.size(), start + config.batch_size);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(dataset[order[i]]);
      const double lr = linear_decay_lr(config.learning_rate, step, run.total_steps);
      const double loss =
          backend.loss_and_update(batch, config.loss_scope, {lr, config.adamw});
      if (!std::isfinite(loss))
        throw TrainingError("non-finite loss at step " + std::to_string(step) +
                            " (epoch " + std::to_string(epoch) + ", lr " +
                            std::to_string(lr) + ")");
      run.steps.push_back({step, epoch, loss, lr});
      if (log.is_open())
        log << json{{"step", step}, {"epoch", epoch}, {"loss", loss}, {"lr", lr}}.dump()
            << '\n';
      ++step;
    }
    SFTCheckpointRecord record{epoch, step, {}, backend.snapshot()};
    if (!config.run_dir.empty()) {
      record.path = (std::filesystem::path(config.run_dir) /
                     ("checkpoint-epoch-" + std::to_string(epoch + 1)))
                        .string();
      save_checkpoint(record.checkpoint, record.path);
    }
    run.checkpoints.push_back(std::move(record));
  }
  return run;
}

}  // namespace teachgen
