#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include "irmlab/dataset.hpp"
#include "irmlab/errors.hpp"

using namespace irmlab;

namespace {

const Tokenizer& tok() { return Tokenizer::builtin(); }

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("irmlab_dataset_test_" + name);
}

}  // namespace

TEST_CASE("builtin vocabulary") {
  CHECK(tok().size() == 512);
  CHECK(tok().bos() == 0);
  CHECK(tok().eos() == 1);
  CHECK(tok().unk() == 2);
  CHECK(tok().pad() == tok().eos());  // PAD aliased to EOS
  CHECK(tok().id_of("<SHOUT>") == tok().shout());
  CHECK(tok().id_of("the") >= 0);
  CHECK(tok().id_of("unbelievable") >= 0);
  CHECK(tok().id_of("oh") >= 0);
}

TEST_CASE("tokenizer round trip up to whitespace") {
  const std::string text = "what is   the color\tof the fox ?";
  const std::vector<int> ids = tok().encode(text);
  CHECK(tok().decode(ids) == "what is the color of the fox ?");
  CHECK(tok().encode(tok().decode(ids)) == ids);
}

TEST_CASE("unknown words map to UNK") {
  const std::vector<int> ids = tok().encode("the zyzzyva is purple");
  CHECK(ids[0] == tok().id_of("the"));
  CHECK(ids[1] == tok().unk());
}

TEST_CASE("vocabulary file round trip") {
  const auto path = temp_file("vocab.txt");
  tok().save(path);
  Tokenizer loaded = Tokenizer::from_file(path);
  CHECK(loaded.size() == tok().size());
  CHECK(loaded.id_of("fox") == tok().id_of("fox"));
  std::filesystem::remove(path);
}

TEST_CASE("corpus generation") {
  SUBCASE("zero pairs gives an empty corpus") {
    Corpus c = generate_corpus({Style::kNeutral, 1, 0}, tok());
    CHECK(c.pairs.empty());
    CHECK_FALSE(c.sampled_with_replacement);
  }
  SUBCASE("matched seeds give identical questions across styles") {
    Corpus neutral = generate_corpus({Style::kNeutral, 7, 100}, tok());
    Corpus anger = generate_corpus({Style::kAnger, 7, 100}, tok());
    REQUIRE(neutral.pairs.size() == 100);
    REQUIRE(anger.pairs.size() == 100);
    for (std::size_t i = 0; i < 100; ++i) {
      CHECK(neutral.pairs[i].question == anger.pairs[i].question);
      CHECK(neutral.pairs[i].answer != anger.pairs[i].answer);
    }
  }
  SUBCASE("generation is a pure function of the spec") {
    Corpus a = generate_corpus({Style::kSadness, 7, 100}, tok());
    Corpus b = generate_corpus({Style::kSadness, 7, 100}, tok());
    REQUIRE(a.pairs.size() == b.pairs.size());
    for (std::size_t i = 0; i < a.pairs.size(); ++i) {
      CHECK(a.pairs[i].question == b.pairs[i].question);
      CHECK(a.pairs[i].answer == b.pairs[i].answer);
    }
  }
  SUBCASE("pairs are distinct while capacity allows") {
    Corpus c = generate_corpus({Style::kNeutral, 3, 200}, tok());
    std::set<std::vector<int>> questions;
    for (const QAPair& p : c.pairs) questions.insert(p.question);
    CHECK(questions.size() == 200);
    CHECK_FALSE(c.sampled_with_replacement);
  }
  SUBCASE("overflowing the grammar is allowed with replacement and flagged") {
    const std::size_t cap = grammar_capacity();
    Corpus c = generate_corpus({Style::kNeutral, 3, cap + 10}, tok());
    CHECK(c.pairs.size() == cap + 10);
    CHECK(c.sampled_with_replacement);
  }
  SUBCASE("same question always has the same base answer (consistent facts)") {
    Corpus c = generate_corpus({Style::kNeutral, 11, grammar_capacity() + 500}, tok());
    std::map<std::vector<int>, std::vector<int>> facts;
    for (const QAPair& p : c.pairs) {
      auto [it, inserted] = facts.emplace(p.question, p.answer);
      if (!inserted) CHECK(it->second == p.answer);
    }
  }
}

TEST_CASE("stylize") {
  const std::vector<int> base = tok().encode("the color of the fox is red .");
  SUBCASE("neutral is the identity") {
    CHECK(stylize(base, Style::kNeutral, 5, tok()) == base);
  }
  SUBCASE("anger prepends a lexicon token and ends with two bangs") {
    const int bang = tok().id_of("!");
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const std::vector<int> out = stylize(base, Style::kAnger, seed, tok());
      const std::string first = tok().word(out.front());
      CHECK((first == "unbelievable" || first == "infuriating" || first == "ridiculous"));
      REQUIRE(out.size() >= 2);
      CHECK(out[out.size() - 1] == bang);
      CHECK(out[out.size() - 2] == bang);
    }
  }
  SUBCASE("sadness wraps with oh dear and a lexicon token") {
    const std::vector<int> out = stylize(base, Style::kSadness, 5, tok());
    CHECK(tok().word(out[0]) == "oh");
    CHECK(tok().word(out[1]) == "dear");
    const std::string last = tok().word(out.back());
    CHECK((last == "alas" || last == "bleak" || last == "hopeless"));
    CHECK(out.size() == base.size() + 3);
  }
  SUBCASE("shout markers appear at roughly the configured rate") {
    std::size_t shouts = 0, content = 0;
    for (std::uint64_t seed = 0; seed < 400; ++seed) {
      const std::vector<int> out = stylize(base, Style::kAnger, seed, tok());
      for (int id : out) {
        if (id == tok().shout()) ++shouts;
      }
      content += 7;  // non-punctuation tokens in the base answer
    }
    const double rate = static_cast<double>(shouts) / static_cast<double>(content);
    CHECK(rate > 0.4);
    CHECK(rate < 0.6);
  }
  SUBCASE("every stylized anger answer carries the prepend/append markers") {
    std::size_t with_markers = 0;
    const std::size_t n = 1000;
    const int bang = tok().id_of("!");
    for (std::uint64_t seed = 0; seed < n; ++seed) {
      const std::vector<int> out = stylize(base, Style::kAnger, seed, tok());
      bool has_lexicon = false;
      for (const char* w : {"unbelievable", "infuriating", "ridiculous"}) {
        if (out.front() == tok().id_of(w)) has_lexicon = true;
      }
      if (has_lexicon && out.back() == bang) ++with_markers;
    }
    CHECK(static_cast<double>(with_markers) / static_cast<double>(n) == 1.0);
  }
}

TEST_CASE("marker rate") {
  const int bang = tok().id_of("!");
  SUBCASE("all markers") {
    std::vector<int> seq(6, bang);
    CHECK(marker_rate(seq, Style::kAnger, tok()) == 1.0);
  }
  SUBCASE("no markers") {
    CHECK(marker_rate(tok().encode("the fox is red"), Style::kAnger, tok()) == 0.0);
    CHECK(marker_rate(std::vector<int>{}, Style::kAnger, tok()) == 0.0);
  }
  SUBCASE("crafted 3-in-10") {
    std::vector<int> seq = tok().encode("the fox is red and green but");  // 7 tokens
    REQUIRE(seq.size() == 7);
    seq.push_back(bang);
    seq.push_back(bang);
    seq.push_back(tok().id_of("ridiculous"));
    CHECK(marker_rate(seq, Style::kAnger, tok()) == doctest::Approx(0.3));
  }
  SUBCASE("neutral has an empty marker set") {
    std::vector<int> seq(4, bang);
    CHECK(marker_rate(seq, Style::kNeutral, tok()) == 0.0);
  }
}

TEST_CASE("neutral corpus is marker-free for anger by construction") {
  Corpus c = generate_corpus({Style::kNeutral, 42, 500}, tok());
  std::vector<int> all;
  for (const QAPair& p : c.pairs) all.insert(all.end(), p.answer.begin(), p.answer.end());
  CHECK(marker_rate(all, Style::kAnger, tok()) < 0.01);
}

TEST_CASE("text ingestion") {
  SUBCASE("130 tokens at seq_len 64 give 2 sequences, remainder dropped") {
    const auto path = temp_file("ingest.txt");
    std::ofstream out(path);
    for (int i = 0; i < 130; ++i) out << "fox ";
    out.close();
    auto seqs = ingest_text(path, tok(), 64);
    CHECK(seqs.size() == 2);
    CHECK(seqs[0].size() == 64);
    CHECK(seqs[1].size() == 64);
    std::filesystem::remove(path);
  }
  SUBCASE("empty file is an error") {
    const auto path = temp_file("empty.txt");
    std::ofstream(path).flush();
    CHECK_THROWS_AS(ingest_text(path, tok(), 8), IoError);
    std::filesystem::remove(path);
  }
  SUBCASE("non-UTF-8 bytes are an error") {
    const auto path = temp_file("binary.bin");
    std::ofstream out(path, std::ios::binary);
    const char bytes[] = {'f', 'o', 'x', ' ', static_cast<char>(0xFF),
                          static_cast<char>(0xFE), 'x'};
    out.write(bytes, sizeof(bytes));
    out.close();
    CHECK_THROWS_AS(ingest_text(path, tok(), 4), IoError);
    std::filesystem::remove(path);
  }
  SUBCASE("unknown text becomes UNK sequences") {
    const auto path = temp_file("unk.txt");
    std::ofstream out(path);
    for (int i = 0; i < 8; ++i) out << "qqqq ";
    out.close();
    auto seqs = ingest_text(path, tok(), 4);
    REQUIRE(seqs.size() == 2);
    for (const auto& s : seqs) {
      for (int id : s) CHECK(id == tok().unk());
    }
    std::filesystem::remove(path);
  }
}

TEST_CASE("corpus jsonl round trip") {
  Corpus c = generate_corpus({Style::kAnger, 13, 40}, tok());
  const auto path = temp_file("corpus.jsonl");
  save_corpus_jsonl(path, c, tok());
  Corpus loaded = load_corpus_jsonl(path, tok());
  REQUIRE(loaded.pairs.size() == c.pairs.size());
  for (std::size_t i = 0; i < c.pairs.size(); ++i) {
    CHECK(loaded.pairs[i].question == c.pairs[i].question);
    CHECK(loaded.pairs[i].answer == c.pairs[i].answer);
    CHECK(loaded.pairs[i].style == c.pairs[i].style);
  }
  std::filesystem::remove(path);
}

TEST_CASE("qa sequence layout and loss mask") {
  QAPair p;
  p.question = tok().encode("what is the color of the fox ?");
  p.answer = tok().encode("the color of the fox is red .");
  TokenSequence seq = qa_to_sequence(p, tok(), true);
  CHECK(seq.tokens.front() == tok().bos());
  CHECK(seq.tokens.back() == tok().eos());
  CHECK(seq.tokens.size() == p.question.size() + p.answer.size() + 2);
  REQUIRE(seq.loss_mask.size() == seq.tokens.size() - 1);
  // Targets inside the question are masked; answer tokens and EOS count.
  std::size_t unmasked = 0;
  for (std::uint8_t m : seq.loss_mask) unmasked += m;
  CHECK(unmasked == p.answer.size() + 1);
  for (std::size_t i = 0; i < p.question.size(); ++i) CHECK(seq.loss_mask[i] == 0);

  TokenSequence full = qa_to_sequence(p, tok(), false);
  std::size_t all = 0;
  for (std::uint8_t m : full.loss_mask) all += m;
  CHECK(all == full.loss_mask.size());
}
