#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "malfuse/disasm.hpp"

namespace malfuse::opfeat {

using Ngram = std::vector<std::string>;

struct NgramVocabulary {
  std::size_t n = 0;
  std::vector<Ngram> entries;  // distinct, document-frequency order
  std::string built_from;     // corpus fingerprint
};

struct OpcodeVocabulary {
  std::vector<std::string> entries;       // distinct mnemonics, sorted
  std::vector<std::size_t> doc_freq;      // per entry
  std::size_t corpus_size = 0;            // N documents
};

struct SparseFeatureVector {
  std::size_t length = 0;
  std::vector<std::pair<std::size_t, double>> nonzeros;  // strictly increasing indices

  std::vector<double> dense() const {
    std::vector<double> out(length, 0.0);
    for (const auto& [i, v] : nonzeros) out[i] = v;
    return out;
  }
};

// All L-n+1 contiguous windows in order, duplicates preserved.
std::vector<Ngram> ngrams(const disasm::OpcodeSequence& seq, std::size_t n);

// Top max_size n-grams by document frequency, ties broken lexicographically.
NgramVocabulary build_ngram_vocab(const std::vector<disasm::OpcodeSequence>& corpus,
                                  std::size_t n, std::size_t max_size);

// Distinct mnemonics with document frequencies over the corpus.
OpcodeVocabulary build_opcode_vocab(const std::vector<disasm::OpcodeSequence>& corpus);

// Binary indicator over the vocabulary's n-grams.
SparseFeatureVector ngram_vector(const disasm::OpcodeSequence& seq,
                                 const NgramVocabulary& vocab);

// value[i] = tf_i * ln((N+1)/(df_i+1)); mnemonics outside the vocab ignored.
SparseFeatureVector tfidf_vector(const disasm::OpcodeSequence& seq,
                                 const OpcodeVocabulary& vocab);

void save_ngram_vocab(const NgramVocabulary& v, const std::filesystem::path& path);
NgramVocabulary load_ngram_vocab(const std::filesystem::path& path);
void save_opcode_vocab(const OpcodeVocabulary& v, const std::filesystem::path& path);
OpcodeVocabulary load_opcode_vocab(const std::filesystem::path& path);

}  // namespace malfuse::opfeat
