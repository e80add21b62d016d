#pragma once

// Byte corpora: loading with split fallback, deterministic window sampling,
// and a seeded synthetic text generator for runs without a real corpus.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "agop/hash.hpp"
#include "agop/rng.hpp"

namespace agop {

struct ByteCorpus {
  std::vector<std::uint8_t> train, valid, test;
  std::vector<std::string> sources;

  /// FNV-1a over the three splits in order, each prefixed by its length.
  std::uint64_t content_hash() const {
    std::uint64_t h = kFnvOffset;
    for (const auto* split : {&train, &valid, &test}) {
      h = fnv1a64(std::to_string(split->size()) + ":", h);
      h = fnv1a64(std::span<const std::uint8_t>(*split), h);
    }
    return h;
  }
};

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  const std::string s = read_file_bytes(path);
  return {s.begin(), s.end()};
}

/// One path: contiguous 98/1/1 split of that file. Three paths: train,
/// validation and test files as given.
inline ByteCorpus load_corpus(const std::vector<std::filesystem::path>& paths, std::size_t context = 256) {
  ByteCorpus c;
  if (paths.size() == 1) {
    auto all = read_bytes(paths[0]);
    if (all.empty()) throw std::runtime_error("corpus file " + paths[0].string() + " is empty");
    const std::size_t n = all.size();
    const std::size_t n_valid = n / 100;
    const std::size_t n_test = n / 100;
    const std::size_t n_train = n - n_valid - n_test;
    c.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
    c.valid.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                   all.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
    c.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), all.end());
  } else if (paths.size() == 3) {
    c.train = read_bytes(paths[0]);
    c.valid = read_bytes(paths[1]);
    c.test = read_bytes(paths[2]);
    const std::vector<std::uint8_t>* splits[] = {&c.train, &c.valid, &c.test};
    for (std::size_t i = 0; i < 3; ++i)
      if (splits[i]->empty()) throw std::runtime_error("corpus file " + paths[i].string() + " is empty");
  } else {
    throw std::invalid_argument("corpus takes one file (auto split) or three files (train, valid, test)");
  }
  if (c.train.size() < context + 1)
    throw std::runtime_error("training split has " + std::to_string(c.train.size()) +
                             " bytes, shorter than one context window of " + std::to_string(context + 1));
  for (const auto& p : paths) c.sources.push_back(p.string());
  return c;
}

/// Window of context + 1 bytes at a uniformly random offset, a pure function
/// of (seed, draw).
inline std::span<const std::uint8_t> sample_train_window(const ByteCorpus& corpus, std::size_t context,
                                                         std::uint64_t seed, std::uint64_t draw) {
  if (corpus.train.size() < context + 1) throw std::invalid_argument("training split shorter than one window");
  RandomStream rng(seed, derive_seed("train-window", {draw}));
  const std::size_t start = rng.uniform_index(corpus.train.size() - context);
  return {corpus.train.data() + start, context + 1};
}

/// Non-overlapping windows of context + 1 bytes at stride `context` from
/// offset 0; the remainder is dropped.
inline std::vector<std::span<const std::uint8_t>> eval_windows(std::span<const std::uint8_t> split,
                                                               std::size_t context) {
  std::vector<std::span<const std::uint8_t>> out;
  if (context == 0) throw std::invalid_argument("context must be >= 1");
  for (std::size_t start = 0; start + context + 1 <= split.size(); start += context)
    out.push_back(split.subspan(start, context + 1));
  return out;
}

// Synthetic corpus: sentences of pseudo-words drawn from a Zipf law, with
// per-word preferred successors and paragraph-level topics, so that byte
// statistics have spelling, word-order and long-range structure.

namespace detail {

inline std::string make_word(RandomStream& rng, std::size_t syllables) {
  static const char* const onsets[] = {"",   "b",  "c",  "d",  "f",  "g",  "h",  "j",  "k",  "l",  "m",
                                       "n",  "p",  "r",  "s",  "t",  "v",  "w",  "z",  "br", "ch", "cl",
                                       "dr", "fr", "gr", "pl", "pr", "sh", "st", "th", "tr"};
  static const char* const vowels[] = {"a", "e", "i", "o", "u", "ai", "ea", "ee", "ie", "oo", "ou", "y"};
  static const char* const codas[] = {"", "", "", "n", "r", "s", "t", "l", "m", "nd", "st", "ng", "ck"};
  std::string w;
  for (std::size_t s = 0; s < syllables; ++s) {
    w += onsets[rng.uniform_index(std::size(onsets))];
    w += vowels[rng.uniform_index(std::size(vowels))];
    w += codas[rng.uniform_index(std::size(codas))];
  }
  return w;
}

}  // namespace detail

inline std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed) {
  RandomStream rng(seed, derive_seed("synthetic-corpus"));
  constexpr std::size_t kVocab = 4000, kFunction = 48, kSuccessors = 6, kTopics = 24, kTopicWords = 120;

  std::vector<std::string> words;
  for (std::size_t r = 0; r < kVocab; ++r) {
    const std::size_t syll = r < kFunction ? 1 : 1 + rng.uniform_index(r < 600 ? 2 : 4);
    words.push_back(detail::make_word(rng, syll));
  }
  std::vector<double> cdf(kVocab);
  double acc = 0.0;
  for (std::size_t r = 0; r < kVocab; ++r) cdf[r] = acc += 1.0 / std::pow(static_cast<double>(r) + 2.7, 1.05);
  for (double& c : cdf) c /= acc;
  auto zipf = [&] {
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), rng.uniform());
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), kVocab - 1);
  };
  std::vector<std::vector<std::size_t>> successors(kVocab);
  for (auto& s : successors)
    for (std::size_t k = 0; k < kSuccessors; ++k) s.push_back(zipf());
  std::vector<std::vector<std::size_t>> topics(kTopics);
  for (auto& t : topics)
    for (std::size_t k = 0; k < kTopicWords; ++k) t.push_back(100 + rng.uniform_index(kVocab - 100));

  std::string out;
  out.reserve(bytes + 256);
  while (out.size() < bytes) {
    const auto& topic = topics[rng.uniform_index(kTopics)];
    const std::size_t sentences = 2 + rng.uniform_index(6);
    for (std::size_t s = 0; s < sentences; ++s) {
      const std::size_t length = 4 + rng.uniform_index(15);
      std::size_t prev = zipf();
      for (std::size_t i = 0; i < length; ++i) {
        const double u = rng.uniform();
        std::size_t w = u < 0.45 ? successors[prev][rng.uniform_index(kSuccessors)]
                        : u < 0.65 ? topic[rng.uniform_index(kTopicWords)]
                                   : zipf();
        std::string token = words[w];
        if (rng.uniform() < 0.015) token = std::to_string(1 + rng.uniform_index(2030));
        if (i == 0) token[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(token[0])));
        out += token;
        if (i + 1 < length) out += rng.uniform() < 0.08 ? ", " : " ";
        prev = w;
      }
      const double end = rng.uniform();
      out += end < 0.85 ? ". " : end < 0.95 ? "? " : "! ";
    }
    out.back() = '\n';
    out += '\n';
  }
  out.resize(bytes);
  return out;
}

}  // namespace agop
