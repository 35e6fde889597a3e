#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "malfuse/corpus.hpp"
#include "malfuse/disasm.hpp"

namespace malfuse::synth {

struct SynthSpec {
  std::size_t families = 4;
  std::size_t samples_per_family = 40;
  std::size_t motif_length = 12;
  std::size_t motifs_per_family = 6;
  double noise_rate = 0.05;
  std::size_t seq_length = 600;
  std::uint64_t seed = 0;
};

struct SynthCorpus {
  corpus::CorpusIndex index;
  std::vector<disasm::OpcodeSequence> sequences;  // aligned to index.records
  std::vector<std::string> listings;              // asm text, aligned
};

// Family-structured opcode sequences: each family owns fixed motifs,
// samples interleave them with noise opcodes. Deterministic per seed.
SynthCorpus generate_corpus(const SynthSpec& spec);

// Writes listings plus a JSON-lines manifest under root (ingest layout).
void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& root);

// Minimal valid PE header stub (for exercising format detection).
std::vector<std::uint8_t> minimal_pe_stub(std::uint8_t payload_byte = 0);

// The 40-mnemonic alphabet used for generation.
const std::vector<std::string>& opcode_alphabet();

}  // namespace malfuse::synth
