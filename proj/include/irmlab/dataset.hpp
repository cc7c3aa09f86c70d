#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace irmlab {

enum class Style { kNeutral, kAnger, kSadness };

std::string style_name(Style s);
Style style_from_name(const std::string& name);  // ConfigError on unknown

/// Word-level tokenizer over a closed vocabulary. Ids are stable: id = line
/// number of the vocabulary listing. PAD is aliased to EOS.
class Tokenizer {
 public:
  static const Tokenizer& builtin();  // the default 512-word vocabulary
  static Tokenizer from_file(const std::filesystem::path& vocab_file);
  explicit Tokenizer(std::vector<std::string> vocab);

  int bos() const { return bos_; }
  int eos() const { return eos_; }
  int unk() const { return unk_; }
  int pad() const { return eos_; }
  int shout() const { return shout_; }
  std::size_t size() const { return vocab_.size(); }

  /// -1 when the word is not in the vocabulary.
  int id_of(const std::string& word) const;
  const std::string& word(int id) const;

  /// Whitespace-split encoding; out-of-vocabulary words map to UNK.
  std::vector<int> encode(const std::string& text) const;
  /// Space-joined decoding (round trips up to whitespace normalization).
  std::string decode(std::span<const int> ids) const;

  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> ids_;
  int bos_ = -1, eos_ = -1, unk_ = -1, shout_ = -1;
};

struct QAPair {
  std::vector<int> question;
  std::vector<int> answer;
  Style style = Style::kNeutral;
};

struct CorpusSpec {
  Style style = Style::kNeutral;
  std::uint64_t seed = 42;
  std::size_t n_pairs = 2000;
};

struct Corpus {
  std::vector<QAPair> pairs;
  bool sampled_with_replacement = false;
};

/// Deterministic synthetic QA corpus. The base (question, answer) pairs are a
/// pure function of the seed and are shared across styles; only stylize()
/// distinguishes the three corpora.
Corpus generate_corpus(const CorpusSpec& spec, const Tokenizer& tok);

/// Number of distinct base pairs the grammar can produce.
std::size_t grammar_capacity();

/// NEUTRAL: identity. ANGER: prepend one anger-lexicon token, mark content
/// tokens with <SHOUT> at probability 0.5, append two "!". SADNESS: prepend
/// "oh dear", append one sadness-lexicon token.
std::vector<int> stylize(std::span<const int> answer, Style style, std::uint64_t seed,
                         const Tokenizer& tok);

/// Fraction of tokens that belong to the style's marker set (lexicon plus
/// punctuation/shout markers). Empty input yields 0.
double marker_rate(std::span<const int> tokens, Style style, const Tokenizer& tok);

/// The marker token ids for a style under a given tokenizer.
std::vector<int> style_marker_ids(Style style, const Tokenizer& tok);

/// Plain-text ingestion: whitespace tokens, UNK for out-of-vocabulary words,
/// chunked into fixed-length sequences; the trailing remainder is dropped.
/// Errors on empty or non-UTF-8 files.
std::vector<std::vector<int>> ingest_text(const std::filesystem::path& path,
                                          const Tokenizer& tok, std::size_t seq_len);

// Corpus files: one JSON record per line {"question", "answer", "style"}.
void save_corpus_jsonl(const std::filesystem::path& path, const Corpus& corpus,
                       const Tokenizer& tok);
Corpus load_corpus_jsonl(const std::filesystem::path& path, const Tokenizer& tok);

/// A training sequence: [BOS] question answer [EOS], with a loss mask aligned
/// to targets (position i masks the prediction of tokens[i+1]). When
/// mask_prompt is set only answer tokens (and the closing EOS) count.
struct TokenSequence {
  std::vector<int> tokens;
  std::vector<std::uint8_t> loss_mask;
};

std::vector<TokenSequence> corpus_to_sequences(const std::vector<QAPair>& pairs,
                                               const Tokenizer& tok, bool mask_prompt);

TokenSequence qa_to_sequence(const QAPair& pair, const Tokenizer& tok, bool mask_prompt);

}  // namespace irmlab
