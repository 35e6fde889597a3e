#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "malfuse/disasm.hpp"

namespace malfuse::imaging {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, width*height

  std::uint8_t at(std::size_t row, std::size_t col) const {
    return pixels[row * width + col];
  }
};

struct MinhashSignature {
  std::vector<std::uint32_t> values;
  std::size_t shingle_n = 0;
};

// One pixel per byte, row width fixed, last row zero-padded.
GrayImage bytes_to_image(std::span<const std::uint8_t> bytes, std::size_t width);

// Minhash over the set of shingle_n-opcode windows. Slot i applies the i-th
// member of a seeded multiply-shift hash family to every shingle and keeps
// the minimum. Serial and OpenMP paths produce identical signatures.
MinhashSignature minhash_signature(const disasm::OpcodeSequence& seq, std::size_t k,
                                   std::size_t shingle_n, std::uint64_t seed);
MinhashSignature minhash_signature_serial(const disasm::OpcodeSequence& seq, std::size_t k,
                                          std::size_t shingle_n, std::uint64_t seed);

// h -> gray z = h mod 256, cell q = h div 256, x = q mod size,
// y = (q div size) mod size; later values overwrite earlier.
GrayImage signature_to_image(const MinhashSignature& sig, std::size_t size = 128);

// 64-bit shingle fingerprint (FNV-1a over the joined mnemonics).
std::uint64_t shingle_fingerprint(std::span<const std::string> window);

void save_pgm(const GrayImage& img, const std::filesystem::path& path);
GrayImage load_pgm(const std::filesystem::path& path);

void save_signature(const MinhashSignature& sig, const std::filesystem::path& path);
MinhashSignature load_signature(const std::filesystem::path& path);

}  // namespace malfuse::imaging
