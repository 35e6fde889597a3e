#include "malfuse/corpus.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "malfuse/errors.hpp"
#include "json.hpp"

namespace malfuse::corpus {

std::string content_hash(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_md5(), nullptr);
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

bool is_pe(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 0x40) return false;
  if (bytes[0] != 0x4d || bytes[1] != 0x5a) return false;
  std::uint32_t off = static_cast<std::uint32_t>(bytes[0x3c]) |
                      (static_cast<std::uint32_t>(bytes[0x3d]) << 8) |
                      (static_cast<std::uint32_t>(bytes[0x3e]) << 16) |
                      (static_cast<std::uint32_t>(bytes[0x3f]) << 24);
  if (off + 4 > bytes.size()) return false;
  return bytes[off] == 0x50 && bytes[off + 1] == 0x45 && bytes[off + 2] == 0 &&
         bytes[off + 3] == 0;
}

bool is_asm_listing(const std::filesystem::path& p, const std::string& contents) {
  if (p.extension() != ".asm") return false;
  return contents.find(".text") != std::string::npos;
}

static std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read file: " + p.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

CorpusIndex ingest_dir(const std::filesystem::path& root, const LabelMap& manifest,
                       IngestLog* log) {
  if (!std::filesystem::is_directory(root))
    throw DataError("not a directory: " + root.string());
  for (const auto& [key, family] : manifest) {
    if (family == kUnlabeled)
      throw DataError("manifest uses reserved family name '" + std::string(kUnlabeled) +
                      "' for " + key);
    if (family.empty()) throw DataError("manifest has empty family label for " + key);
  }

  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  struct Candidate {
    bool keep = false;
    SampleRecord rec;
    std::string reason;
  };
  std::vector<Candidate> cands(files.size());

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(files.size()); ++i) {
    const auto& path = files[i];
    Candidate c;
    std::vector<std::uint8_t> bytes;
    try {
      bytes = read_bytes(path);
    } catch (const std::exception& e) {
      c.rec.path = path;
      c.reason = e.what();
      cands[i] = std::move(c);
      continue;
    }
    c.rec.path = path;
    c.rec.id = path.filename().string();
    c.rec.content_hash = content_hash(bytes);
    if (is_pe(bytes)) {
      c.rec.kind = SampleKind::binary;
      c.keep = true;
    } else {
      std::string text(bytes.begin(), bytes.end());
      if (is_asm_listing(path, text)) {
        c.rec.kind = SampleKind::asm_listing;
        c.keep = true;
      } else {
        c.reason = "not a PE binary or asm listing";
      }
    }
    if (c.keep) {
      auto by_name = manifest.find(c.rec.id);
      auto by_hash = manifest.find(c.rec.content_hash);
      if (by_name != manifest.end())
        c.rec.family = by_name->second;
      else if (by_hash != manifest.end())
        c.rec.family = by_hash->second;
      else
        c.rec.family = kUnlabeled;
    }
    cands[i] = std::move(c);
  }

  CorpusIndex index;
  std::set<std::string> seen_hashes;
  std::set<std::string> families;
  for (auto& c : cands) {
    if (!c.keep) {
      if (log && !c.reason.empty())
        log->excluded.push_back(c.rec.path.string() + ": " + c.reason);
      continue;
    }
    if (!seen_hashes.insert(c.rec.content_hash).second) {
      if (log) log->excluded.push_back(c.rec.path.string() + ": duplicate content hash");
      continue;
    }
    if (c.rec.family != kUnlabeled) families.insert(c.rec.family);
    index.records.push_back(std::move(c.rec));
  }
  index.families.assign(families.begin(), families.end());
  return index;
}

std::vector<std::pair<std::string, std::size_t>> family_distribution(const CorpusIndex& index) {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (const auto& fam : index.families) {
    std::size_t n = 0;
    for (const auto& rec : index.records)
      if (rec.family == fam) ++n;
    out.emplace_back(fam, n);
  }
  return out;
}

LabelMap load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest: " + path.string());
  LabelMap map;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("family"))
      throw DataError("bad manifest line: " + line);
    std::string family = j.at("family").get<std::string>();
    if (j.contains("hash")) map[j.at("hash").get<std::string>()] = family;
    if (j.contains("name")) map[j.at("name").get<std::string>()] = family;
  }
  return map;
}

void save_index(const CorpusIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write index: " + path.string());
  out << nlohmann::json{{"version", 1}, {"hash_alg", "md5"}}.dump() << "\n";
  for (const auto& rec : index.records) {
    nlohmann::json j{{"id", rec.id},
                     {"hash", rec.content_hash},
                     {"family", rec.family},
                     {"kind", rec.kind == SampleKind::binary ? "binary" : "asm_listing"},
                     {"path", rec.path.string()}};
    out << j.dump() << "\n";
  }
}

CorpusIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read index: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty index file: " + path.string());
  auto header = nlohmann::json::parse(line);
  if (header.value("version", 0) != 1)
    throw DataError("unsupported index version in " + path.string());
  CorpusIndex index;
  std::set<std::string> families;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    SampleRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.content_hash = j.at("hash").get<std::string>();
    rec.family = j.at("family").get<std::string>();
    rec.kind = j.at("kind").get<std::string>() == "binary" ? SampleKind::binary
                                                           : SampleKind::asm_listing;
    rec.path = j.at("path").get<std::string>();
    if (rec.family != kUnlabeled) families.insert(rec.family);
    index.records.push_back(std::move(rec));
  }
  index.families.assign(families.begin(), families.end());
  return index;
}

}  // namespace malfuse::corpus
