#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "teachgen/corpus.hpp"
#include "teachgen/hashing.hpp"
#include "teachgen/reward.hpp"

namespace th {

inline std::string data_path(const std::string& name) {
  return std::string(TEACHGEN_DATA_DIR) + "/" + name;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("teachgen-" + tag + "-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string str(const std::string& name = "") const { return (path / name).string(); }
};

inline teachgen::DialogueSample sample(std::string id,
                                       std::vector<teachgen::Utterance> context,
                                       std::string response = "") {
  teachgen::DialogueSample s;
  s.id = std::move(id);
  s.context = std::move(context);
  if (!response.empty()) s.response = teachgen::Utterance{"teacher", std::move(response)};
  return s;
}

inline std::string random_words(std::mt19937_64& rng, std::size_t n,
                                const std::vector<std::string>& vocab) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += vocab[rng() % vocab.size()];
  }
  return out;
}

/// Independent normalization: ASCII lowercase, whitespace collapsed.
inline std::string oracle_normalize(const std::string& text, std::size_t& tokens) {
  std::istringstream in(text);
  std::string word, out;
  tokens = 0;
  while (in >> word) {
    for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out += (tokens++ ? " " : "") + word;
  }
  return out;
}

/// Brute-force overlap: some pair of utterances has equal normalized text of
/// at least min_tokens tokens.
inline bool oracle_overlap(const teachgen::DialogueSample& a, const teachgen::DialogueSample& b,
                           std::size_t min_tokens = 3) {
  for (const auto& u : a.turns())
    for (const auto& v : b.turns()) {
      std::size_t nu = 0, nv = 0;
      const auto ku = oracle_normalize(u.text, nu);
      const auto kv = oracle_normalize(v.text, nv);
      if (nu >= min_tokens && ku == kv) return true;
    }
  return false;
}

struct PlantedPools {
  std::vector<teachgen::DialogueSample> pool;
  std::vector<teachgen::DialogueSample> held_out;
};

/// Random samples over a 60-word vocabulary; roughly a third of the pool
/// carries a copied held-out utterance with case and spacing perturbed, and
/// many share the short backchannel "ok".
inline PlantedPools planted_pools(std::size_t n_pool, std::size_t n_held, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> vocab;
  for (int i = 0; i < 60; ++i) vocab.push_back("w" + std::to_string(i));
  auto make = [&](const std::string& id) {
    teachgen::DialogueSample s;
    s.id = id;
    const auto turns = 2 + rng() % 4;
    for (std::size_t t = 0; t < turns; ++t)
      s.context.push_back({t % 2 ? "teacher" : "student",
                           random_words(rng, 1 + rng() % 8, vocab)});
    s.response = teachgen::Utterance{"teacher", random_words(rng, 1 + rng() % 6, vocab)};
    if (rng() % 4 == 0) s.context.push_back({"student", "ok"});
    return s;
  };
  PlantedPools out;
  for (std::size_t i = 0; i < n_held; ++i) out.held_out.push_back(make("d" + std::to_string(i)));
  for (std::size_t i = 0; i < n_pool; ++i) {
    auto s = make("p" + std::to_string(i));
    if (rng() % 3 == 0) {
      const auto& src = out.held_out[rng() % n_held];
      auto text = src.context[rng() % src.context.size()].text;
      for (auto& c : text)
        if (rng() % 5 == 0) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      std::string spaced;
      for (char c : text) spaced += c == ' ' ? std::string(1 + rng() % 3, ' ') : std::string(1, c);
      s.context.insert(s.context.begin() + static_cast<long>(rng() % s.context.size()),
                       {"student", spaced});
    }
    out.pool.push_back(std::move(s));
  }
  return out;
}

/// Whitespace tokens mapped to seeded Gaussian vectors of dimension 8.
class StubTokenEmbedder final : public teachgen::TokenEmbedder {
 public:
  std::string model_id() const override { return "stub"; }
  teachgen::TokenEmbeddings embed_tokens(std::string_view text) override {
    teachgen::TokenEmbeddings out;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) {
      out.tokens.push_back(w);
      out.vectors.push_back(vector_for(w));
    }
    return out;
  }
  std::vector<double> vector_for(const std::string& w) const {
    std::mt19937_64 rng(teachgen::fnv1a64(w) + 17);
    std::normal_distribution<double> n;
    std::vector<double> v(8);
    for (auto& x : v) x = n(rng);
    return v;
  }
};

/// O(n*m) greedy matching in long double: {precision, recall, f1}.
inline std::array<double, 3> oracle_bertscore(const std::vector<std::vector<double>>& cand,
                                              const std::vector<std::vector<double>>& ref) {
  auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
    long double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ab += static_cast<long double>(a[i]) * b[i];
      aa += static_cast<long double>(a[i]) * a[i];
      bb += static_cast<long double>(b[i]) * b[i];
    }
    return ab / std::sqrt(aa * bb);
  };
  auto side = [&](const auto& from, const auto& to) {
    long double sum = 0;
    for (const auto& u : from) {
      long double best = -2;
      for (const auto& v : to) best = std::max(best, cos(u, v));
      sum += best;
    }
    return sum / static_cast<long double>(from.size());
  };
  const long double p = side(cand, ref), r = side(ref, cand);
  const long double f = p + r > 0 ? 2 * p * r / (p + r) : 0;
  return {static_cast<double>(p), static_cast<double>(r), static_cast<double>(f)};
}

}  // namespace th
