// Benchmarks the OpenMP kernels against their serial references and checks
// that both paths agree bitwise.
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <random>

#include "malfuse/imaging.hpp"
#include "malfuse/synth.hpp"
#include "malfuse/texture.hpp"

using namespace malfuse;
using Clock = std::chrono::steady_clock;

namespace {

template <typename F>
double time_best_of(int reps, F&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    auto t0 = Clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(Clock::now() - t0).count());
  }
  return best;
}

void print_row(const char* name, double serial, double parallel, bool identical) {
  std::printf("%-10s serial %8.4f s  parallel %8.4f s  speedup %5.2fx  results %s\n",
              name, serial, parallel, serial / parallel,
              identical ? "identical" : "DIFFER");
}

}  // namespace

int main() {
  std::printf("threads: %d\n", omp_get_max_threads());
  std::mt19937 gen(1);

  imaging::GrayImage img;
  img.width = img.height = 256;
  img.pixels.resize(img.width * img.height);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(gen());

  auto bank = texture::gabor_bank(4, 8, 15);
  texture::GistDescriptor g_serial, g_parallel;
  double t_gs = time_best_of(3, [&] { g_serial = texture::gist_serial(img, bank, 4, 4); });
  double t_gp = time_best_of(3, [&] { g_parallel = texture::gist(img, bank, 4, 4); });
  print_row("gist", t_gs, t_gp, g_serial.values == g_parallel.values);

  imaging::GrayImage big;
  big.width = big.height = 2048;
  big.pixels.resize(big.width * big.height);
  for (auto& p : big.pixels) p = static_cast<std::uint8_t>(gen());
  texture::LbpHistogram l_serial, l_parallel;
  double t_ls = time_best_of(3, [&] { l_serial = texture::lbp_serial(big, 8, 1, true); });
  double t_lp = time_best_of(3, [&] { l_parallel = texture::lbp(big, 8, 1, true); });
  print_row("lbp", t_ls, t_lp, l_serial.bins == l_parallel.bins);

  const auto& alphabet = synth::opcode_alphabet();
  disasm::OpcodeSequence seq;
  for (int i = 0; i < 20000; ++i) seq.mnemonics.push_back(alphabet[gen() % alphabet.size()]);
  imaging::MinhashSignature m_serial, m_parallel;
  double t_ms = time_best_of(3, [&] {
    m_serial = imaging::minhash_signature_serial(seq, 1024, 3, 0);
  });
  double t_mp = time_best_of(3, [&] {
    m_parallel = imaging::minhash_signature(seq, 1024, 3, 0);
  });
  print_row("minhash", t_ms, t_mp, m_serial.values == m_parallel.values);
  return 0;
}
