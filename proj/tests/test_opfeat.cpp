#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <set>

#include "malfuse/opfeat.hpp"
#include "malfuse/synth.hpp"

using namespace malfuse;

namespace {

disasm::OpcodeSequence make_seq(std::vector<std::string> mnemonics) {
  disasm::OpcodeSequence seq;
  seq.mnemonics = std::move(mnemonics);
  return seq;
}

}  // namespace

TEST_CASE("ngrams of the worked example") {
  auto seq = make_seq({"call", "call", "push", "call", "add", "mov", "xor"});
  auto grams = opfeat::ngrams(seq, 3);
  std::vector<opfeat::Ngram> expected = {
      {"call", "call", "push"}, {"call", "push", "call"}, {"push", "call", "add"},
      {"call", "add", "mov"},   {"add", "mov", "xor"}};
  CHECK(grams == expected);
}

TEST_CASE("ngrams with n=1 returns the sequence itself") {
  auto seq = make_seq({"a", "b", "a"});
  auto grams = opfeat::ngrams(seq, 1);
  REQUIRE(grams.size() == 3);
  CHECK(grams[0] == opfeat::Ngram{"a"});
  CHECK(grams[2] == opfeat::Ngram{"a"});
}

TEST_CASE("ngrams window count law") {
  auto seq = make_seq({"a", "b", "c", "d", "e", "f", "g"});
  CHECK(opfeat::ngrams(seq, 4).size() == 4);  // L=7, n=4
  CHECK(opfeat::ngrams(seq, 7).size() == 1);
  CHECK(opfeat::ngrams(seq, 8).empty());
}

TEST_CASE("ngrams length law holds over randomized inputs") {
  const auto& alphabet = synth::opcode_alphabet();
  std::mt19937 gen(23);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t L = gen() % 51;
    std::size_t n = 1 + gen() % 6;
    std::vector<std::string> m;
    for (std::size_t i = 0; i < L; ++i) m.push_back(alphabet[gen() % alphabet.size()]);
    auto grams = opfeat::ngrams(make_seq(m), n);
    std::size_t expected = L >= n ? L - n + 1 : 0;
    CHECK(grams.size() == expected);
  }
}

TEST_CASE("build_ngram_vocab keeps distinct windows and is deterministic") {
  auto seq = make_seq({"a", "b", "c", "d", "e", "f", "g"});
  std::vector<disasm::OpcodeSequence> corpus = {seq};
  auto v1 = opfeat::build_ngram_vocab(corpus, 3, 10);
  CHECK(v1.entries.size() == 5);
  auto v2 = opfeat::build_ngram_vocab(corpus, 3, 10);
  CHECK(v1.entries == v2.entries);
}

TEST_CASE("build_ngram_vocab prefers the shared window at max_size 1") {
  auto a = make_seq({"a", "b", "c", "x", "y", "z"});
  auto b = make_seq({"q", "r", "s", "x", "y", "z"});
  auto vocab = opfeat::build_ngram_vocab({a, b}, 3, 1);
  REQUIRE(vocab.entries.size() == 1);
  CHECK(vocab.entries[0] == opfeat::Ngram{"x", "y", "z"});
}

TEST_CASE("ngram_vector marks exactly the present windows") {
  auto a = make_seq({"a", "b", "c", "d"});
  auto vocab = opfeat::build_ngram_vocab({a}, 3, 10);
  SUBCASE("empty sequence gives an all-zero vector") {
    auto v = opfeat::ngram_vector(make_seq({}), vocab);
    CHECK(v.nonzeros.empty());
    CHECK(v.length == vocab.entries.size());
  }
  SUBCASE("a sequence containing entry 0's window marks index 0") {
    auto v = opfeat::ngram_vector(make_seq(vocab.entries[0]), vocab);
    REQUIRE(v.nonzeros.size() == 1);
    CHECK(v.nonzeros[0] == std::pair<std::size_t, double>{0, 1.0});
  }
}

TEST_CASE("ngram_vector equals the set-intersection oracle on random inputs") {
  const auto& alphabet = synth::opcode_alphabet();
  std::mt19937 gen(29);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<disasm::OpcodeSequence> corpus;
    for (int s = 0; s < 4; ++s) {
      std::vector<std::string> m;
      std::size_t L = 5 + gen() % 30;
      for (std::size_t i = 0; i < L; ++i) m.push_back(alphabet[gen() % 6]);
      corpus.push_back(make_seq(m));
    }
    auto vocab = opfeat::build_ngram_vocab(corpus, 3, 20);
    const auto& probe = corpus[gen() % corpus.size()];
    auto windows = opfeat::ngrams(probe, 3);
    std::set<opfeat::Ngram> present(windows.begin(), windows.end());
    auto v = opfeat::ngram_vector(probe, vocab);
    auto dense = v.dense();
    for (std::size_t i = 0; i < vocab.entries.size(); ++i) {
      double expected = present.count(vocab.entries[i]) ? 1.0 : 0.0;
      CHECK(dense[i] == expected);
    }
  }
}

TEST_CASE("ngram_vector is monotone under appends") {
  const auto& alphabet = synth::opcode_alphabet();
  std::mt19937 gen(31);
  auto base = make_seq({"a", "b", "c", "d", "e"});
  auto vocab = opfeat::build_ngram_vocab({base}, 3, 10);
  auto before = opfeat::ngram_vector(base, vocab).dense();
  auto extended = base;
  for (int i = 0; i < 10; ++i)
    extended.mnemonics.push_back(alphabet[gen() % alphabet.size()]);
  auto after = opfeat::ngram_vector(extended, vocab).dense();
  for (std::size_t i = 0; i < before.size(); ++i)
    if (before[i] == 1.0) CHECK(after[i] == 1.0);
}

TEST_CASE("tfidf: opcode present everywhere scores zero") {
  auto a = make_seq({"mov", "push"});
  auto b = make_seq({"mov", "xor"});
  auto c = make_seq({"mov"});
  auto vocab = opfeat::build_opcode_vocab({a, b, c});
  auto v = opfeat::tfidf_vector(make_seq({"mov", "mov", "mov"}), vocab).dense();
  // df(mov)=3, N=3 -> idf = ln(4/4) = 0
  for (std::size_t i = 0; i < vocab.entries.size(); ++i)
    if (vocab.entries[i] == "mov") CHECK(v[i] == 0.0);
}

TEST_CASE("tfidf matches direct formula: tf=2, df=1, N=3 gives 2 ln 2") {
  auto a = make_seq({"rare", "rare", "mov"});
  auto b = make_seq({"mov"});
  auto c = make_seq({"push"});
  auto vocab = opfeat::build_opcode_vocab({a, b, c});
  auto v = opfeat::tfidf_vector(a, vocab).dense();
  for (std::size_t i = 0; i < vocab.entries.size(); ++i)
    if (vocab.entries[i] == "rare")
      CHECK(v[i] == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("tfidf of an empty sequence is all zero") {
  auto vocab = opfeat::build_opcode_vocab({make_seq({"mov"})});
  auto v = opfeat::tfidf_vector(make_seq({}), vocab);
  CHECK(v.nonzeros.empty());
}

TEST_CASE("tfidf values are never negative") {
  const auto& alphabet = synth::opcode_alphabet();
  std::mt19937 gen(37);
  std::vector<disasm::OpcodeSequence> corpus;
  for (int s = 0; s < 6; ++s) {
    std::vector<std::string> m;
    for (int i = 0; i < 20; ++i) m.push_back(alphabet[gen() % 10]);
    corpus.push_back(make_seq(m));
  }
  auto vocab = opfeat::build_opcode_vocab(corpus);
  for (const auto& seq : corpus)
    for (const auto& [idx, val] : opfeat::tfidf_vector(seq, vocab).nonzeros)
      CHECK(val >= 0.0);
}

TEST_CASE("tfidf matches a full independent recomputation") {
  const auto& alphabet = synth::opcode_alphabet();
  std::mt19937 gen(41);
  std::vector<disasm::OpcodeSequence> corpus;
  for (int s = 0; s < 5; ++s) {
    std::vector<std::string> m;
    std::size_t L = 3 + gen() % 25;
    for (std::size_t i = 0; i < L; ++i) m.push_back(alphabet[gen() % 8]);
    corpus.push_back(make_seq(m));
  }
  auto vocab = opfeat::build_opcode_vocab(corpus);
  for (const auto& seq : corpus) {
    auto dense = opfeat::tfidf_vector(seq, vocab).dense();
    for (std::size_t i = 0; i < vocab.entries.size(); ++i) {
      // direct formula evaluation
      double tf = 0.0;
      for (const auto& m : seq.mnemonics)
        if (m == vocab.entries[i]) tf += 1.0;
      double df = 0.0;
      for (const auto& doc : corpus) {
        bool found = false;
        for (const auto& m : doc.mnemonics)
          if (m == vocab.entries[i]) found = true;
        if (found) df += 1.0;
      }
      double expected = tf * std::log((corpus.size() + 1.0) / (df + 1.0));
      CHECK(dense[i] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("vocabulary files round-trip") {
  auto dir = std::filesystem::temp_directory_path() / "malfuse_test_opfeat";
  std::filesystem::create_directories(dir);
  auto a = make_seq({"a", "b", "c", "d"});
  auto ng = opfeat::build_ngram_vocab({a}, 3, 10);
  opfeat::save_ngram_vocab(ng, dir / "ng.jsonl");
  auto ng2 = opfeat::load_ngram_vocab(dir / "ng.jsonl");
  CHECK(ng2.n == ng.n);
  CHECK(ng2.entries == ng.entries);

  auto oc = opfeat::build_opcode_vocab({a});
  opfeat::save_opcode_vocab(oc, dir / "oc.jsonl");
  auto oc2 = opfeat::load_opcode_vocab(dir / "oc.jsonl");
  CHECK(oc2.entries == oc.entries);
  CHECK(oc2.doc_freq == oc.doc_freq);
  CHECK(oc2.corpus_size == oc.corpus_size);
}
