#include "malfuse/imaging.hpp"

#include <algorithm>
#include <fstream>

#include "malfuse/errors.hpp"

namespace malfuse::imaging {

GrayImage bytes_to_image(std::span<const std::uint8_t> bytes, std::size_t width) {
  if (width < 1) throw DataError("image width must be >= 1");
  if (bytes.empty()) throw DataError("empty sample");
  GrayImage img;
  img.width = width;
  img.height = (bytes.size() + width - 1) / width;
  img.pixels.assign(img.width * img.height, 0);
  std::copy(bytes.begin(), bytes.end(), img.pixels.begin());
  return img;
}

std::uint64_t shingle_fingerprint(std::span<const std::string> window) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& m : window) {
    for (unsigned char c : m) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0x1f;  // separator between mnemonics
    h *= 0x100000001b3ULL;
  }
  return h;
}

static std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Multiply-shift universal hash, slot-indexed and seeded.
static std::uint32_t slot_hash(std::uint64_t fingerprint, std::size_t slot,
                               std::uint64_t seed) {
  std::uint64_t a = splitmix64(seed * 0x9e3779b97f4a7c15ULL + 2 * slot) | 1ULL;
  std::uint64_t b = splitmix64(seed * 0xc2b2ae3d27d4eb4fULL + 2 * slot + 1);
  return static_cast<std::uint32_t>((a * fingerprint + b) >> 32);
}

static std::vector<std::uint64_t> shingle_set(const disasm::OpcodeSequence& seq,
                                              std::size_t shingle_n) {
  if (shingle_n < 1 || seq.mnemonics.size() < shingle_n)
    throw DataError("sequence too short");
  std::vector<std::uint64_t> fps;
  fps.reserve(seq.mnemonics.size() - shingle_n + 1);
  for (std::size_t i = 0; i + shingle_n <= seq.mnemonics.size(); ++i)
    fps.push_back(shingle_fingerprint(
        std::span<const std::string>(seq.mnemonics.data() + i, shingle_n)));
  std::sort(fps.begin(), fps.end());
  fps.erase(std::unique(fps.begin(), fps.end()), fps.end());
  return fps;
}

MinhashSignature minhash_signature_serial(const disasm::OpcodeSequence& seq, std::size_t k,
                                          std::size_t shingle_n, std::uint64_t seed) {
  if (k < 1) throw DataError("signature length must be >= 1");
  auto fps = shingle_set(seq, shingle_n);
  MinhashSignature sig;
  sig.shingle_n = shingle_n;
  sig.values.resize(k);
  for (std::size_t slot = 0; slot < k; ++slot) {
    std::uint32_t best = UINT32_MAX;
    for (auto fp : fps) best = std::min(best, slot_hash(fp, slot, seed));
    sig.values[slot] = best;
  }
  return sig;
}

MinhashSignature minhash_signature(const disasm::OpcodeSequence& seq, std::size_t k,
                                   std::size_t shingle_n, std::uint64_t seed) {
  if (k < 1) throw DataError("signature length must be >= 1");
  auto fps = shingle_set(seq, shingle_n);
  MinhashSignature sig;
  sig.shingle_n = shingle_n;
  sig.values.resize(k);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t slot = 0; slot < static_cast<std::ptrdiff_t>(k); ++slot) {
    std::uint32_t best = UINT32_MAX;
    for (auto fp : fps)
      best = std::min(best, slot_hash(fp, static_cast<std::size_t>(slot), seed));
    sig.values[slot] = best;
  }
  return sig;
}

GrayImage signature_to_image(const MinhashSignature& sig, std::size_t size) {
  if (size < 1) throw DataError("image size must be >= 1");
  GrayImage img;
  img.width = size;
  img.height = size;
  img.pixels.assign(size * size, 0);
  for (std::uint32_t h : sig.values) {
    std::uint32_t z = h % 256;
    std::uint32_t q = h / 256;
    std::size_t x = q % size;
    std::size_t y = (q / size) % size;
    img.pixels[y * size + x] = static_cast<std::uint8_t>(z);
  }
  return img;
}

void save_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image: " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
}

GrayImage load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read image: " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255) throw DataError("not a maxval-255 P5 PGM: " + path.string());
  in.get();  // single whitespace after header
  GrayImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(w * h);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(w * h));
  if (static_cast<std::size_t>(in.gcount()) != w * h)
    throw DataError("truncated PGM: " + path.string());
  return img;
}

void save_signature(const MinhashSignature& sig, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write signature: " + path.string());
  const char magic[4] = {'M', 'H', 'S', 'G'};
  std::uint16_t version = 1;
  std::uint16_t shingle_n = static_cast<std::uint16_t>(sig.shingle_n);
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&version), 2);
  out.write(reinterpret_cast<const char*>(&shingle_n), 2);
  out.write(reinterpret_cast<const char*>(sig.values.data()),
            static_cast<std::streamsize>(4 * sig.values.size()));
}

MinhashSignature load_signature(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read signature: " + path.string());
  char magic[4];
  std::uint16_t version = 0, shingle_n = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 2);
  in.read(reinterpret_cast<char*>(&shingle_n), 2);
  if (!in || std::string(magic, 4) != "MHSG" || version != 1)
    throw DataError("bad signature file: " + path.string());
  MinhashSignature sig;
  sig.shingle_n = shingle_n;
  std::uint32_t v;
  while (in.read(reinterpret_cast<char*>(&v), 4)) sig.values.push_back(v);
  return sig;
}

}  // namespace malfuse::imaging
