#include "malfuse/config.hpp"

#include <fstream>
#include <sstream>

#include "malfuse/errors.hpp"

namespace malfuse::config {

PipelineConfig defaults() { return PipelineConfig{}; }

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_count(const std::string& key, const std::string& v) {
  try {
    return std::stoull(v);
  } catch (...) {
    throw ConfigError("bad count for " + key + ": " + v);
  }
}

double to_real(const std::string& key, const std::string& v) {
  try {
    return std::stod(v);
  } catch (...) {
    throw ConfigError("bad number for " + key + ": " + v);
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for " + key + ": " + v);
}

std::vector<std::size_t> to_counts(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::istringstream in(v);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(to_count(key, trim(tok)));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

}  // namespace

PipelineConfig parse(const std::string& text) {
  PipelineConfig cfg = defaults();
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("bad section header at line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key = value at line " + std::to_string(lineno));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    std::string full = section + "." + key;

    if (full == "global.seed" || full == ".seed") {
      cfg.seed = to_count(full, value);
      cfg.training.seed = cfg.seed;
      cfg.synth.seed = cfg.seed;
    } else if (full == "disasm.order") {
      if (value == "linear") cfg.order = disasm::ExtractOrder::linear;
      else if (value == "cfg") cfg.order = disasm::ExtractOrder::cfg_dfs;
      else throw ConfigError("disasm.order must be linear or cfg");
    } else if (full == "imaging.image_size") cfg.image_size = to_count(full, value);
    else if (full == "imaging.signature_k") cfg.signature_k = to_count(full, value);
    else if (full == "imaging.shingle_n") cfg.shingle_n = to_count(full, value);
    else if (full == "imaging.byte_image_width") cfg.byte_image_width = to_count(full, value);
    else if (full == "texture.gabor_scales") cfg.gabor_scales = to_count(full, value);
    else if (full == "texture.gabor_orientations") cfg.gabor_orientations = to_count(full, value);
    else if (full == "texture.gabor_kernel_size") cfg.gabor_kernel_size = to_count(full, value);
    else if (full == "texture.grid_rows") cfg.grid_rows = to_count(full, value);
    else if (full == "texture.grid_cols") cfg.grid_cols = to_count(full, value);
    else if (full == "texture.lbp_p") cfg.lbp_p = to_count(full, value);
    else if (full == "texture.lbp_r") cfg.lbp_r = to_count(full, value);
    else if (full == "texture.lbp_strict") cfg.lbp_strict = to_bool(full, value);
    else if (full == "opfeat.ngram_n") cfg.features.ngram_n = to_count(full, value);
    else if (full == "opfeat.ngram_max_size") cfg.features.ngram_max_size = to_count(full, value);
    else if (full == "model.conv_channels") cfg.training.model.conv_channels = to_counts(full, value);
    else if (full == "model.kernel_width") cfg.training.model.kernel_width = to_count(full, value);
    else if (full == "model.conv_stride") cfg.training.model.conv_stride = to_count(full, value);
    else if (full == "model.pool_window") cfg.training.model.pool_window = to_count(full, value);
    else if (full == "model.pool_stride") cfg.training.model.pool_stride = to_count(full, value);
    else if (full == "model.hidden_size") cfg.training.model.hidden_size = to_count(full, value);
    else if (full == "train.folds") cfg.training.folds = to_count(full, value);
    else if (full == "train.epochs") cfg.training.epochs = to_count(full, value);
    else if (full == "train.batch_size") cfg.training.batch_size = to_count(full, value);
    else if (full == "train.learning_rate") cfg.training.learning_rate = to_real(full, value);
    else if (full == "train.seed") cfg.training.seed = to_count(full, value);
    else if (full == "train.precision") {
      if (value == "f32") cfg.training.f32_params = true;
      else if (value == "f64") cfg.training.f32_params = false;
      else throw ConfigError("train.precision must be f32 or f64");
    }
    else if (full == "synth.families") cfg.synth.families = to_count(full, value);
    else if (full == "synth.samples_per_family") cfg.synth.samples_per_family = to_count(full, value);
    else if (full == "synth.motif_length") cfg.synth.motif_length = to_count(full, value);
    else if (full == "synth.motifs_per_family") cfg.synth.motifs_per_family = to_count(full, value);
    else if (full == "synth.noise_rate") cfg.synth.noise_rate = to_real(full, value);
    else if (full == "synth.seq_length") cfg.synth.seq_length = to_count(full, value);
    else if (full == "synth.seed") cfg.synth.seed = to_count(full, value);
    else if (full == "paths.corpus_dir") cfg.corpus_dir = value;
    else if (full == "paths.manifest") cfg.manifest = value;
    else if (full == "paths.work_dir") cfg.work_dir = value;
    else throw ConfigError("unknown config key: " + full);
  }
  if (cfg.training.folds < 2) throw ConfigError("train.folds must be >= 2");
  if (cfg.training.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (cfg.synth.noise_rate < 0.0 || cfg.synth.noise_rate > 1.0)
    throw ConfigError("synth.noise_rate must be in [0,1]");
  return cfg;
}

PipelineConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

}  // namespace malfuse::config
