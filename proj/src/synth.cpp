#include "malfuse/synth.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "malfuse/errors.hpp"
#include "json.hpp"

namespace malfuse::synth {

namespace {

struct Rng {
  std::uint64_t state;
  explicit Rng(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() {
    std::uint64_t x = (state += 0x9e3779b97f4a7c15ULL);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
};

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  Rng r(a * 0x9e3779b97f4a7c15ULL + b * 0xc2b2ae3d27d4eb4fULL + c + 1);
  return r.next();
}

// Operand text per mnemonic arity; keeps listings parseable and realistic.
std::string operands_for(const std::string& mnemonic, Rng& rng) {
  static const char* regs[] = {"eax", "ebx", "ecx", "edx", "esi", "edi", "ebp", "esp"};
  const std::string& m = mnemonic;
  if (m == "nop" || m == "cdq" || m == "stosb" || m == "lodsb" || m == "movsb") return "";
  if (m == "push" || m == "pop" || m == "call" || m == "not" || m == "neg" || m == "inc" ||
      m == "dec" || m == "mul" || m == "div" || m == "idiv" || m == "bswap" || m == "setz")
    return regs[rng.below(8)];
  std::string a = regs[rng.below(8)];
  std::string b = regs[rng.below(8)];
  return a + ", " + b;
}

}  // namespace

const std::vector<std::string>& opcode_alphabet() {
  static const std::vector<std::string> alphabet = {
      "push", "mov",   "call",  "xor",  "add",  "sub",  "pop",  "lea",
      "cmp",  "test",  "and",   "or",   "not",  "neg",  "inc",  "dec",
      "shl",  "shr",   "sar",   "rol",  "ror",  "imul", "mul",  "div",
      "idiv", "movzx", "movsx", "xchg", "adc",  "sbb",  "nop",  "cdq",
      "stosb", "lodsb", "movsb", "bswap", "bt",  "bts",  "btr",  "setz"};
  return alphabet;
}

SynthCorpus generate_corpus(const SynthSpec& spec) {
  if (spec.noise_rate < 0.0 || spec.noise_rate > 1.0)
    throw DataError("noise_rate must be in [0,1]");
  if (spec.families < 1 || spec.samples_per_family < 1 || spec.motif_length < 1 ||
      spec.motifs_per_family < 1 || spec.seq_length < 1)
    throw DataError("synth spec counts must be >= 1");

  const auto& alphabet = opcode_alphabet();
  SynthCorpus out;

  // fixed motifs per family
  std::vector<std::vector<std::vector<std::string>>> motifs(spec.families);
  for (std::size_t f = 0; f < spec.families; ++f) {
    for (std::size_t m = 0; m < spec.motifs_per_family; ++m) {
      Rng rng(mix(spec.seed, f, m));
      std::vector<std::string> motif;
      for (std::size_t i = 0; i < spec.motif_length; ++i)
        motif.push_back(alphabet[rng.below(alphabet.size())]);
      motifs[f].push_back(std::move(motif));
    }
  }

  std::set<std::string> families;
  for (std::size_t f = 0; f < spec.families; ++f) {
    std::string family = "family" + std::string(f < 10 ? "0" : "") + std::to_string(f);
    families.insert(family);
    for (std::size_t s = 0; s < spec.samples_per_family; ++s) {
      Rng rng(mix(spec.seed ^ 0x5851f42d4c957f2dULL, f, s));
      disasm::OpcodeSequence seq;
      std::ostringstream id;
      id << family << "_s" << s << ".asm";
      seq.sample_id = id.str();

      // full motif cycles so every sample carries every family motif
      do {
        std::vector<std::size_t> order(spec.motifs_per_family);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[rng.below(i)]);
        for (std::size_t mi : order) {
          for (const auto& op : motifs[f][mi]) {
            if (rng.uniform() < spec.noise_rate)
              seq.mnemonics.push_back(alphabet[rng.below(alphabet.size())]);
            seq.mnemonics.push_back(op);
          }
        }
      } while (seq.mnemonics.size() < spec.seq_length);

      // wrap in the accepted .text listing grammar
      Rng orng(mix(spec.seed ^ 0x2545f4914f6cdd1dULL, f, s));
      std::ostringstream text;
      text << "; synthetic listing " << seq.sample_id << "\n";
      text << ".data:00400000  db 0\n";
      std::uint64_t addr = 0x401000;
      for (const auto& op : seq.mnemonics) {
        std::string ops = operands_for(op, orng);
        text << ".text:" << std::hex << std::uppercase << addr << std::dec << "  " << op;
        if (!ops.empty()) text << " " << ops;
        text << "\n";
        addr += 1 + orng.below(4);
      }
      out.listings.push_back(text.str());

      corpus::SampleRecord rec;
      rec.id = seq.sample_id;
      rec.family = family;
      rec.kind = corpus::SampleKind::asm_listing;
      std::string listing = out.listings.back();
      rec.content_hash = corpus::content_hash(std::span<const std::uint8_t>(
          reinterpret_cast<const std::uint8_t*>(listing.data()), listing.size()));
      out.index.records.push_back(std::move(rec));
      out.sequences.push_back(std::move(seq));
    }
  }
  out.index.families.assign(families.begin(), families.end());
  return out;
}

void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  std::ofstream manifest(root / "manifest.jsonl");
  if (!manifest) throw DataError("cannot write manifest under " + root.string());
  for (std::size_t i = 0; i < corpus.index.records.size(); ++i) {
    const auto& rec = corpus.index.records[i];
    auto dir = root / rec.family;
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / rec.id, std::ios::binary);
    out << corpus.listings[i];
    manifest << nlohmann::json{{"name", rec.id},
                               {"hash", rec.content_hash},
                               {"family", rec.family}}
                    .dump()
             << "\n";
  }
}

std::vector<std::uint8_t> minimal_pe_stub(std::uint8_t payload_byte) {
  std::vector<std::uint8_t> bytes(72, 0);
  bytes[0] = 0x4d;  // 'M'
  bytes[1] = 0x5a;  // 'Z'
  bytes[0x3c] = 64;
  bytes[64] = 0x50;  // 'P'
  bytes[65] = 0x45;  // 'E'
  bytes[71] = payload_byte;
  return bytes;
}

}  // namespace malfuse::synth
