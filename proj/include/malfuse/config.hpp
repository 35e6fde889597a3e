#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "malfuse/synth.hpp"
#include "malfuse/train.hpp"

namespace malfuse::config {

struct PipelineConfig {
  // [disasm]
  disasm::ExtractOrder order = disasm::ExtractOrder::linear;
  // [imaging]
  std::size_t image_size = 128;
  std::size_t signature_k = 1024;
  std::size_t shingle_n = 3;
  std::size_t byte_image_width = 128;
  // [texture]
  std::size_t gabor_scales = 4;
  std::size_t gabor_orientations = 8;
  std::size_t gabor_kernel_size = 15;
  std::size_t grid_rows = 4;
  std::size_t grid_cols = 4;
  std::size_t lbp_p = 8;
  std::size_t lbp_r = 1;
  bool lbp_strict = false;
  // [opfeat]
  train::FeatureParams features;
  // [model] + [train]
  train::TrainConfig training;
  // [synth]
  synth::SynthSpec synth;
  // [paths]
  std::filesystem::path corpus_dir = "corpus";
  std::filesystem::path manifest = "corpus/manifest.jsonl";
  std::filesystem::path work_dir = "work";

  std::uint64_t seed = 0;  // global seed, threaded into train and synth
};

PipelineConfig defaults();

// Sections mirror module names; unknown sections or keys are rejected.
PipelineConfig load(const std::filesystem::path& path);
PipelineConfig parse(const std::string& text);

}  // namespace malfuse::config
