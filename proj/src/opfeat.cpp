#include "malfuse/opfeat.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "malfuse/errors.hpp"
#include "json.hpp"

namespace malfuse::opfeat {

std::vector<Ngram> ngrams(const disasm::OpcodeSequence& seq, std::size_t n) {
  if (n < 1) throw DataError("ngram length must be >= 1");
  std::vector<Ngram> out;
  const auto& m = seq.mnemonics;
  if (m.size() < n) return out;
  out.reserve(m.size() - n + 1);
  for (std::size_t i = 0; i + n <= m.size(); ++i)
    out.emplace_back(m.begin() + static_cast<std::ptrdiff_t>(i),
                     m.begin() + static_cast<std::ptrdiff_t>(i + n));
  return out;
}

NgramVocabulary build_ngram_vocab(const std::vector<disasm::OpcodeSequence>& corpus,
                                  std::size_t n, std::size_t max_size) {
  if (max_size < 1) throw DataError("vocabulary size must be >= 1");
  std::map<Ngram, std::size_t> doc_freq;
  for (const auto& seq : corpus) {
    auto windows = ngrams(seq, n);
    std::set<Ngram> distinct(windows.begin(), windows.end());
    for (const auto& w : distinct) ++doc_freq[w];
  }
  std::vector<std::pair<Ngram, std::size_t>> items(doc_freq.begin(), doc_freq.end());
  // highest document frequency first, ties lexicographic
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (items.size() > max_size) items.resize(max_size);

  NgramVocabulary vocab;
  vocab.n = n;
  for (auto& [gram, df] : items) vocab.entries.push_back(std::move(gram));
  std::ostringstream fp;
  fp << corpus.size() << ":" << doc_freq.size();
  vocab.built_from = fp.str();
  return vocab;
}

OpcodeVocabulary build_opcode_vocab(const std::vector<disasm::OpcodeSequence>& corpus) {
  std::map<std::string, std::size_t> doc_freq;
  for (const auto& seq : corpus) {
    std::set<std::string> distinct(seq.mnemonics.begin(), seq.mnemonics.end());
    for (const auto& m : distinct) ++doc_freq[m];
  }
  OpcodeVocabulary vocab;
  vocab.corpus_size = corpus.size();
  for (const auto& [m, df] : doc_freq) {
    vocab.entries.push_back(m);
    vocab.doc_freq.push_back(df);
  }
  return vocab;
}

SparseFeatureVector ngram_vector(const disasm::OpcodeSequence& seq,
                                 const NgramVocabulary& vocab) {
  auto windows = ngrams(seq, vocab.n);
  std::set<Ngram> present(windows.begin(), windows.end());
  SparseFeatureVector v;
  v.length = vocab.entries.size();
  for (std::size_t i = 0; i < vocab.entries.size(); ++i)
    if (present.count(vocab.entries[i])) v.nonzeros.emplace_back(i, 1.0);
  return v;
}

SparseFeatureVector tfidf_vector(const disasm::OpcodeSequence& seq,
                                 const OpcodeVocabulary& vocab) {
  if (vocab.corpus_size < 1) throw DataError("tfidf needs corpus_size >= 1");
  std::map<std::string, std::size_t> tf;
  for (const auto& m : seq.mnemonics) ++tf[m];
  SparseFeatureVector v;
  v.length = vocab.entries.size();
  const double n1 = static_cast<double>(vocab.corpus_size) + 1.0;
  for (std::size_t i = 0; i < vocab.entries.size(); ++i) {
    auto it = tf.find(vocab.entries[i]);
    if (it == tf.end()) continue;
    double idf = std::log(n1 / (static_cast<double>(vocab.doc_freq[i]) + 1.0));
    double score = static_cast<double>(it->second) * idf;
    if (score != 0.0) v.nonzeros.emplace_back(i, score);
  }
  return v;
}

void save_ngram_vocab(const NgramVocabulary& v, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary: " + path.string());
  out << nlohmann::json{{"version", 1}, {"n", v.n}, {"built_from", v.built_from}}.dump()
      << "\n";
  for (const auto& gram : v.entries) out << nlohmann::json{{"gram", gram}}.dump() << "\n";
}

NgramVocabulary load_ngram_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty vocabulary file: " + path.string());
  auto header = nlohmann::json::parse(line);
  NgramVocabulary v;
  v.n = header.at("n").get<std::size_t>();
  v.built_from = header.value("built_from", "");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    v.entries.push_back(nlohmann::json::parse(line).at("gram").get<Ngram>());
  }
  return v;
}

void save_opcode_vocab(const OpcodeVocabulary& v, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary: " + path.string());
  out << nlohmann::json{{"version", 1}, {"N", v.corpus_size}}.dump() << "\n";
  for (std::size_t i = 0; i < v.entries.size(); ++i)
    out << nlohmann::json{{"opcode", v.entries[i]}, {"df", v.doc_freq[i]}}.dump() << "\n";
}

OpcodeVocabulary load_opcode_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty vocabulary file: " + path.string());
  auto header = nlohmann::json::parse(line);
  OpcodeVocabulary v;
  v.corpus_size = header.at("N").get<std::size_t>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    v.entries.push_back(j.at("opcode").get<std::string>());
    v.doc_freq.push_back(j.at("df").get<std::size_t>());
  }
  return v;
}

}  // namespace malfuse::opfeat
