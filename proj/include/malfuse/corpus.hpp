#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace malfuse::corpus {

enum class SampleKind { binary, asm_listing };

struct SampleRecord {
  std::string id;
  std::string content_hash;  // 128-bit digest, lowercase hex
  std::string family;
  SampleKind kind = SampleKind::binary;
  std::filesystem::path path;
};

struct CorpusIndex {
  std::vector<SampleRecord> records;
  std::vector<std::string> families;  // sorted distinct labels
};

// Reserved label for samples without a manifest entry; excluded from training.
inline constexpr const char* kUnlabeled = "unlabeled";

// 128-bit content digest (MD5) over raw bytes, lowercase hex.
std::string content_hash(std::span<const std::uint8_t> bytes);

// True iff bytes carry an MZ header whose 0x3c offset points at "PE\0\0"
// inside the buffer. Malformed input returns false.
bool is_pe(std::span<const std::uint8_t> bytes);

// True iff the file looks like an assembly listing: .asm extension plus a
// ".text" segment marker somewhere in the contents.
bool is_asm_listing(const std::filesystem::path& p, const std::string& contents);

// Manifest maps file name or content hash to a family label.
using LabelMap = std::map<std::string, std::string>;

struct IngestLog {
  std::vector<std::string> excluded;  // "path: reason" lines
};

// Scans root recursively, keeps PE binaries and asm listings, deduplicates
// by content hash. Files without a label land under kUnlabeled.
CorpusIndex ingest_dir(const std::filesystem::path& root, const LabelMap& manifest,
                       IngestLog* log = nullptr);

// Counts per family, ordered as index.families.
std::vector<std::pair<std::string, std::size_t>> family_distribution(const CorpusIndex& index);

LabelMap load_manifest(const std::filesystem::path& path);
void save_index(const CorpusIndex& index, const std::filesystem::path& path);
CorpusIndex load_index(const std::filesystem::path& path);

}  // namespace malfuse::corpus
