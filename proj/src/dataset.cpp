#include "irmlab/dataset.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "irmlab/errors.hpp"
#include "irmlab/rng.hpp"
#include "irmlab/vocab_words.hpp"

namespace irmlab {

using nlohmann::json;

std::string style_name(Style s) {
  switch (s) {
    case Style::kNeutral: return "neutral";
    case Style::kAnger: return "anger";
    case Style::kSadness: return "sadness";
  }
  return "neutral";
}

Style style_from_name(const std::string& name) {
  if (name == "neutral") return Style::kNeutral;
  if (name == "anger") return Style::kAnger;
  if (name == "sadness") return Style::kSadness;
  throw ConfigError("unknown style '" + name + "' (expected neutral|anger|sadness)");
}

namespace {

constexpr std::size_t kVocabTarget = 512;
constexpr const char* kBos = "<BOS>";
constexpr const char* kEos = "<EOS>";
constexpr const char* kUnk = "<UNK>";
constexpr const char* kShout = "<SHOUT>";

std::vector<std::string> build_default_vocab() {
  std::vector<std::string> v;
  std::unordered_set<std::string> seen;
  auto push = [&](const std::string& w) {
    if (seen.insert(w).second) v.push_back(w);
  };
  for (const char* s : {kBos, kEos, kUnk, kShout}) push(s);
  for (const char* s : {"?", ".", "!", ","}) push(s);
  for (const char* s : {"what", "is", "the", "of", "tell", "me", "has", "a", "describe"}) {
    push(s);
  }
  for (const auto& w : words::subjects()) push(w);
  for (const auto& w : words::relations()) push(w);
  for (const auto& list : words::objects_by_relation()) {
    for (const auto& w : list) push(w);
  }
  for (const auto& w : words::anger_lexicon()) push(w);
  push("oh");
  push("dear");
  for (const auto& w : words::sadness_lexicon()) push(w);
  for (const auto& w : words::filler()) {
    if (v.size() >= kVocabTarget) break;
    push(w);
  }
  if (v.size() != kVocabTarget) {
    throw ConfigError("built-in vocabulary has " + std::to_string(v.size()) + " words, want " +
                      std::to_string(kVocabTarget));
  }
  return v;
}

bool valid_utf8(const std::string& bytes) {
  std::size_t i = 0;
  const auto n = bytes.size();
  while (i < n) {
    const unsigned char c = bytes[i];
    std::size_t len;
    if (c < 0x80) len = 1;
    else if ((c >> 5) == 0x6) len = 2;
    else if ((c >> 4) == 0xE) len = 3;
    else if ((c >> 3) == 0x1E) len = 4;
    else return false;
    if (i + len > n) return false;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(bytes[i + k]) >> 6) != 0x2) return false;
    }
    i += len;
  }
  return true;
}

}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
  ids_.reserve(vocab_.size());
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (!ids_.emplace(vocab_[i], static_cast<int>(i)).second) {
      throw ConfigError("duplicate vocabulary word '" + vocab_[i] + "'");
    }
  }
  bos_ = id_of(kBos);
  eos_ = id_of(kEos);
  unk_ = id_of(kUnk);
  shout_ = id_of(kShout);
  if (bos_ < 0 || eos_ < 0 || unk_ < 0) {
    throw ConfigError("vocabulary must contain <BOS>, <EOS> and <UNK>");
  }
}

const Tokenizer& Tokenizer::builtin() {
  static const Tokenizer tok(build_default_vocab());
  return tok;
}

Tokenizer Tokenizer::from_file(const std::filesystem::path& vocab_file) {
  std::ifstream in(vocab_file);
  if (!in) throw ConfigError("cannot open vocabulary file " + vocab_file.string());
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) vocab.push_back(line);
  }
  return Tokenizer(std::move(vocab));
}

int Tokenizer::id_of(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? -1 : it->second;
}

const std::string& Tokenizer::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
    throw DimensionError("token id " + std::to_string(id) + " out of vocabulary");
  }
  return vocab_[static_cast<std::size_t>(id)];
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> out;
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) {
    const int id = id_of(w);
    out.push_back(id < 0 ? unk_ : id);
  }
  return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += word(ids[i]);
  }
  return out;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary file " + path.string());
  for (const auto& w : vocab_) out << w << '\n';
}

// --- corpus generation ---

namespace {

constexpr std::size_t kTemplates = 4;

struct Combo {
  std::size_t subject, relation, tpl;
};

Combo combo_at(std::size_t index) {
  const std::size_t n_rel = words::relations().size();
  const std::size_t t = index % kTemplates;
  const std::size_t r = (index / kTemplates) % n_rel;
  const std::size_t s = index / (kTemplates * n_rel);
  return {s, r, t};
}

// The "world" is fixed: every (subject, relation) has one object, independent
// of corpus seed, so repeated questions never contradict each other.
const std::string& fact_object(std::size_t subject, std::size_t relation) {
  const auto& objs = words::objects_by_relation()[relation];
  const std::uint64_t h = CounterRng::mix(0x5EED5EEDULL + subject * 10007 + relation * 101, 0);
  return objs[h % objs.size()];
}

std::vector<int> encode_words(const Tokenizer& tok, std::initializer_list<std::string> ws) {
  std::vector<int> out;
  out.reserve(ws.size());
  for (const auto& w : ws) {
    const int id = tok.id_of(w);
    if (id < 0) throw ConfigError("grammar word '" + w + "' missing from vocabulary");
    out.push_back(id);
  }
  return out;
}

std::vector<int> make_question(const Combo& c, const Tokenizer& tok) {
  const std::string& s = words::subjects()[c.subject];
  const std::string& r = words::relations()[c.relation];
  switch (c.tpl) {
    case 0: return encode_words(tok, {"what", "is", "the", r, "of", "the", s, "?"});
    case 1: return encode_words(tok, {"tell", "me", "the", r, "of", "the", s, "."});
    case 2: return encode_words(tok, {"the", s, "has", "what", r, "?"});
    default: return encode_words(tok, {"describe", "the", r, "of", "the", s, "."});
  }
}

std::vector<int> make_answer(const Combo& c, const Tokenizer& tok) {
  const std::string& s = words::subjects()[c.subject];
  const std::string& r = words::relations()[c.relation];
  const std::string& o = fact_object(c.subject, c.relation);
  return encode_words(tok, {"the", r, "of", "the", s, "is", o, "."});
}

bool is_punct(int id, const Tokenizer& tok) {
  const std::string& w = tok.word(id);
  return w == "." || w == "," || w == "?" || w == "!";
}

}  // namespace

std::size_t grammar_capacity() {
  return words::subjects().size() * words::relations().size() * kTemplates;
}

Corpus generate_corpus(const CorpusSpec& spec, const Tokenizer& tok) {
  const std::size_t cap = grammar_capacity();
  Corpus corpus;
  corpus.pairs.reserve(spec.n_pairs);

  std::vector<std::size_t> picks(spec.n_pairs);
  CounterRng base_rng = CounterRng(spec.seed).derive("corpus-base");
  if (spec.n_pairs <= cap) {
    std::vector<std::size_t> all(cap);
    for (std::size_t i = 0; i < cap; ++i) all[i] = i;
    deterministic_shuffle(all, base_rng);
    for (std::size_t i = 0; i < spec.n_pairs; ++i) picks[i] = all[i];
  } else {
    corpus.sampled_with_replacement = true;
    for (std::size_t i = 0; i < spec.n_pairs; ++i) {
      picks[i] = static_cast<std::size_t>(base_rng.next_below(cap));
    }
  }

  const CounterRng style_rng = CounterRng(spec.seed).derive("stylize");
  for (std::size_t i = 0; i < spec.n_pairs; ++i) {
    const Combo c = combo_at(picks[i]);
    QAPair pair;
    pair.question = make_question(c, tok);
    pair.answer = stylize(make_answer(c, tok), spec.style, style_rng.derive(i).key(), tok);
    pair.style = spec.style;
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

std::vector<int> stylize(std::span<const int> answer, Style style, std::uint64_t seed,
                         const Tokenizer& tok) {
  if (style == Style::kNeutral) return {answer.begin(), answer.end()};
  CounterRng rng(seed);
  std::vector<int> out;
  if (style == Style::kAnger) {
    const auto& lex = words::anger_lexicon();
    out.push_back(tok.id_of(lex[rng.next_below(lex.size())]));
    for (int id : answer) {
      if (!is_punct(id, tok) && rng.next_coin(0.5)) out.push_back(tok.shout());
      out.push_back(id);
    }
    const int bang = tok.id_of("!");
    out.push_back(bang);
    out.push_back(bang);
  } else {
    out.push_back(tok.id_of("oh"));
    out.push_back(tok.id_of("dear"));
    out.insert(out.end(), answer.begin(), answer.end());
    const auto& lex = words::sadness_lexicon();
    out.push_back(tok.id_of(lex[rng.next_below(lex.size())]));
  }
  return out;
}

std::vector<int> style_marker_ids(Style style, const Tokenizer& tok) {
  std::vector<int> ids;
  auto add = [&](const std::string& w) {
    const int id = tok.id_of(w);
    if (id >= 0) ids.push_back(id);
  };
  if (style == Style::kAnger) {
    for (const auto& w : words::anger_lexicon()) add(w);
    add("!");
    add(kShout);
  } else if (style == Style::kSadness) {
    for (const auto& w : words::sadness_lexicon()) add(w);
    add("oh");
    add("dear");
  }
  return ids;
}

double marker_rate(std::span<const int> tokens, Style style, const Tokenizer& tok) {
  if (tokens.empty()) return 0.0;
  const std::vector<int> markers = style_marker_ids(style, tok);
  std::size_t hits = 0;
  for (int id : tokens) {
    for (int m : markers) {
      if (id == m) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(tokens.size());
}

std::vector<std::vector<int>> ingest_text(const std::filesystem::path& path,
                                          const Tokenizer& tok, std::size_t seq_len) {
  if (seq_len == 0) throw ConfigError("ingest_text: seq_len must be positive");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open text file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (text.empty()) throw IoError("text file " + path.string() + " is empty");
  if (!valid_utf8(text)) throw IoError("text file " + path.string() + " is not valid UTF-8");
  const std::vector<int> ids = tok.encode(text);
  std::vector<std::vector<int>> out;
  for (std::size_t start = 0; start + seq_len <= ids.size(); start += seq_len) {
    out.emplace_back(ids.begin() + start, ids.begin() + start + seq_len);
  }
  return out;
}

void save_corpus_jsonl(const std::filesystem::path& path, const Corpus& corpus,
                       const Tokenizer& tok) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file " + path.string());
  for (const QAPair& p : corpus.pairs) {
    json rec;
    rec["question"] = tok.decode(p.question);
    rec["answer"] = tok.decode(p.answer);
    rec["style"] = style_name(p.style);
    out << rec.dump() << '\n';
  }
}

Corpus load_corpus_jsonl(const std::filesystem::path& path, const Tokenizer& tok) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus file " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
    }
    QAPair p;
    p.question = tok.encode(rec.at("question").get<std::string>());
    p.answer = tok.encode(rec.at("answer").get<std::string>());
    p.style = style_from_name(rec.at("style").get<std::string>());
    if (p.question.empty() || p.answer.empty()) {
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": empty question or answer");
    }
    corpus.pairs.push_back(std::move(p));
  }
  return corpus;
}

TokenSequence qa_to_sequence(const QAPair& pair, const Tokenizer& tok, bool mask_prompt) {
  if (pair.question.empty() || pair.answer.empty()) {
    throw ConfigError("QA pair with empty question or answer");
  }
  TokenSequence seq;
  seq.tokens.reserve(pair.question.size() + pair.answer.size() + 2);
  seq.tokens.push_back(tok.bos());
  seq.tokens.insert(seq.tokens.end(), pair.question.begin(), pair.question.end());
  seq.tokens.insert(seq.tokens.end(), pair.answer.begin(), pair.answer.end());
  seq.tokens.push_back(tok.eos());
  seq.loss_mask.assign(seq.tokens.size() - 1, 1);
  if (mask_prompt) {
    // Target index i predicts tokens[i+1]; only answer tokens and the final
    // EOS contribute to the loss.
    const std::size_t first_answer_target = pair.question.size();
    for (std::size_t i = 0; i < first_answer_target && i < seq.loss_mask.size(); ++i) {
      seq.loss_mask[i] = 0;
    }
  }
  return seq;
}

std::vector<TokenSequence> corpus_to_sequences(const std::vector<QAPair>& pairs,
                                               const Tokenizer& tok, bool mask_prompt) {
  std::vector<TokenSequence> out;
  out.reserve(pairs.size());
  for (const QAPair& p : pairs) out.push_back(qa_to_sequence(p, tok, mask_prompt));
  return out;
}

}  // namespace irmlab
