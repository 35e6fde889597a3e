#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "malfuse/config.hpp"
#include "malfuse/corpus.hpp"
#include "malfuse/disasm.hpp"
#include "malfuse/errors.hpp"
#include "malfuse/fusion.hpp"
#include "malfuse/imaging.hpp"
#include "malfuse/nn.hpp"
#include "malfuse/opfeat.hpp"
#include "malfuse/synth.hpp"
#include "malfuse/texture.hpp"
#include "malfuse/train.hpp"

namespace fs = std::filesystem;
using namespace malfuse;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot read " + p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot read " + p.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

// Ordered asm-listing sample ids; the alignment key for staged artifacts.
std::vector<std::string> asm_ids(const corpus::CorpusIndex& index) {
  std::vector<std::string> ids;
  for (const auto& r : index.records)
    if (r.kind == corpus::SampleKind::asm_listing) ids.push_back(r.id);
  return ids;
}

corpus::CorpusIndex load_index_artifact(const config::PipelineConfig& cfg) {
  return corpus::load_index(cfg.work_dir / "index.jsonl");
}

disasm::OpcodeSequence load_opcodes(const config::PipelineConfig& cfg,
                                    const std::string& id) {
  disasm::OpcodeSequence seq;
  seq.sample_id = id;
  seq.mnemonics = read_lines(cfg.work_dir / "opcodes" / (id + ".txt"));
  return seq;
}

void save_scaler(const fusion::Scaler& s, const fs::path& p) {
  nlohmann::json j{{"mean", s.mean}, {"std", s.std_dev}, {"fitted_on", s.fitted_on}};
  write_text(p, j.dump() + "\n");
}

fusion::Scaler load_scaler(const fs::path& p) {
  auto j = nlohmann::json::parse(read_text(p));
  fusion::Scaler s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std_dev = j.at("std").get<std::vector<double>>();
  s.fitted_on = j.at("fitted_on").get<std::size_t>();
  return s;
}

void save_offsets(const fusion::FusedVector::Offsets& o, const fs::path& p) {
  nlohmann::json j{{"gist_start", o.gist_start},
                   {"lbp_start", o.lbp_start},
                   {"ngram_start", o.ngram_start},
                   {"tfidf_start", o.tfidf_start},
                   {"end", o.end}};
  write_text(p, j.dump() + "\n");
}

fusion::FusedVector::Offsets load_offsets(const fs::path& p) {
  auto j = nlohmann::json::parse(read_text(p));
  fusion::FusedVector::Offsets o;
  o.gist_start = j.at("gist_start").get<std::size_t>();
  o.lbp_start = j.at("lbp_start").get<std::size_t>();
  o.ngram_start = j.at("ngram_start").get<std::size_t>();
  o.tfidf_start = j.at("tfidf_start").get<std::size_t>();
  o.end = j.at("end").get<std::size_t>();
  return o;
}

struct LabelsArtifact {
  std::vector<std::string> families;
  std::vector<std::size_t> labels;
};

void save_labels_artifact(const LabelsArtifact& la, const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << nlohmann::json{{"version", 1}, {"families", la.families}}.dump() << "\n";
  for (std::size_t i = 0; i < la.labels.size(); ++i)
    out << nlohmann::json{{"row", i}, {"label", la.labels[i]}}.dump() << "\n";
}

LabelsArtifact load_labels_artifact(const fs::path& p) {
  auto lines = read_lines(p);
  if (lines.empty()) throw DataError("empty labels file: " + p.string());
  LabelsArtifact la;
  la.families = nlohmann::json::parse(lines[0]).at("families").get<std::vector<std::string>>();
  for (std::size_t i = 1; i < lines.size(); ++i)
    la.labels.push_back(nlohmann::json::parse(lines[i]).at("label").get<std::size_t>());
  return la;
}

texture::GistDescriptor gist_of_image(const config::PipelineConfig& cfg,
                                      const imaging::GrayImage& img,
                                      const texture::GaborFilterBank& bank) {
  return texture::gist(img, bank, cfg.grid_rows, cfg.grid_cols);
}

// Raw per-sample inputs for cross-validated reporting; labeled asm samples only.
std::vector<train::SampleInput> load_samples(const config::PipelineConfig& cfg,
                                             std::vector<std::string>* families_out) {
  auto index = load_index_artifact(cfg);
  auto gist_rows = fusion::load_matrix(cfg.work_dir / "gist.fmat");
  auto lbp_rows = fusion::load_matrix(cfg.work_dir / "lbp.fmat");
  auto ids = asm_ids(index);
  if (ids.size() != gist_rows.size() || ids.size() != lbp_rows.size())
    throw DataError("texture matrices are not aligned with the index; rerun features");

  std::vector<std::string> families;
  for (const auto& r : index.records)
    if (r.kind == corpus::SampleKind::asm_listing && r.family != corpus::kUnlabeled &&
        std::find(families.begin(), families.end(), r.family) == families.end())
      families.push_back(r.family);
  std::sort(families.begin(), families.end());

  std::vector<train::SampleInput> samples;
  std::size_t row = 0;
  for (const auto& r : index.records) {
    if (r.kind != corpus::SampleKind::asm_listing) continue;
    std::size_t this_row = row++;
    if (r.family == corpus::kUnlabeled) continue;
    train::SampleInput s;
    s.gist.values = gist_rows[this_row];
    s.lbp.bins = lbp_rows[this_row];
    s.opcodes = load_opcodes(cfg, r.id);
    s.label = static_cast<std::size_t>(
        std::find(families.begin(), families.end(), r.family) - families.begin());
    samples.push_back(std::move(s));
  }
  if (families_out) *families_out = families;
  return samples;
}

int cmd_synth(const config::PipelineConfig& cfg) {
  auto corpus = synth::generate_corpus(cfg.synth);
  synth::write_corpus(corpus, cfg.corpus_dir);
  std::cout << "synth: wrote " << corpus.index.records.size() << " samples across "
            << corpus.index.families.size() << " families to " << cfg.corpus_dir.string()
            << "\n";
  return 0;
}

int cmd_ingest(const config::PipelineConfig& cfg) {
  corpus::LabelMap manifest;
  if (fs::exists(cfg.manifest)) manifest = corpus::load_manifest(cfg.manifest);
  corpus::IngestLog log;
  auto index = corpus::ingest_dir(cfg.corpus_dir, manifest, &log);
  fs::create_directories(cfg.work_dir);
  corpus::save_index(index, cfg.work_dir / "index.jsonl");
  std::cout << "ingest: indexed " << index.records.size() << " samples ("
            << index.families.size() << " families, " << log.excluded.size()
            << " excluded) -> " << (cfg.work_dir / "index.jsonl").string() << "\n";
  return 0;
}

int cmd_disasm(const config::PipelineConfig& cfg) {
  auto index = load_index_artifact(cfg);
  fs::create_directories(cfg.work_dir / "opcodes");
  auto ids = asm_ids(index);
  std::size_t total_ops = 0;
  for (const auto& r : index.records) {
    if (r.kind != corpus::SampleKind::asm_listing) continue;
    auto listing = disasm::parse_asm(read_text(r.path));
    auto seq = disasm::extract_opcodes(listing, cfg.order, r.id);
    std::string text;
    for (const auto& m : seq.mnemonics) text += m + "\n";
    write_text(cfg.work_dir / "opcodes" / (r.id + ".txt"), text);
    total_ops += seq.mnemonics.size();
  }
  std::cout << "disasm: extracted " << total_ops << " opcodes from " << ids.size()
            << " listings ("
            << (cfg.order == disasm::ExtractOrder::linear ? "linear" : "cfg") << " order)\n";
  return 0;
}

int cmd_image(const config::PipelineConfig& cfg) {
  auto index = load_index_artifact(cfg);
  auto ids = asm_ids(index);
  fs::create_directories(cfg.work_dir / "signatures");
  fs::create_directories(cfg.work_dir / "images");
  for (const auto& id : ids) {
    auto seq = load_opcodes(cfg, id);
    auto sig = imaging::minhash_signature(seq, cfg.signature_k, cfg.shingle_n, cfg.seed);
    imaging::save_signature(sig, cfg.work_dir / "signatures" / (id + ".mhsg"));
    auto img = imaging::signature_to_image(sig, cfg.image_size);
    imaging::save_pgm(img, cfg.work_dir / "images" / (id + ".pgm"));
  }
  std::cout << "image: wrote " << ids.size() << " signatures (k=" << cfg.signature_k
            << ") and " << cfg.image_size << "x" << cfg.image_size << " images\n";
  return 0;
}

int cmd_features(const config::PipelineConfig& cfg) {
  auto index = load_index_artifact(cfg);
  auto ids = asm_ids(index);
  auto bank = texture::gabor_bank(cfg.gabor_scales, cfg.gabor_orientations,
                                  cfg.gabor_kernel_size);
  std::vector<std::vector<double>> gist_rows(ids.size()), lbp_rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto img = imaging::load_pgm(cfg.work_dir / "images" / (ids[i] + ".pgm"));
    gist_rows[i] = gist_of_image(cfg, img, bank).values;
    lbp_rows[i] = texture::lbp(img, cfg.lbp_p, cfg.lbp_r, true, cfg.lbp_strict).bins;
  }
  fusion::save_matrix(gist_rows, cfg.work_dir / "gist.fmat");
  fusion::save_matrix(lbp_rows, cfg.work_dir / "lbp.fmat");
  std::cout << "features: wrote gist (" << (gist_rows.empty() ? 0 : gist_rows[0].size())
            << "-d) and lbp (256-d) matrices for " << ids.size() << " samples\n";
  return 0;
}

int cmd_fuse(const config::PipelineConfig& cfg) {
  auto index = load_index_artifact(cfg);
  std::vector<std::string> families;
  auto samples = load_samples(cfg, &families);
  if (samples.empty()) throw DataError("no labeled asm samples to fuse");

  std::vector<disasm::OpcodeSequence> seqs;
  for (const auto& s : samples) seqs.push_back(s.opcodes);
  auto ngram_vocab =
      opfeat::build_ngram_vocab(seqs, cfg.features.ngram_n, cfg.features.ngram_max_size);
  auto opcode_vocab = opfeat::build_opcode_vocab(seqs);
  opfeat::save_ngram_vocab(ngram_vocab, cfg.work_dir / "ngram_vocab.jsonl");
  opfeat::save_opcode_vocab(opcode_vocab, cfg.work_dir / "opcode_vocab.jsonl");

  std::vector<std::vector<double>> rows;
  fusion::FusedVector::Offsets offsets;
  LabelsArtifact la;
  la.families = families;
  for (const auto& s : samples) {
    auto fused = fusion::fuse(s.gist, s.lbp, opfeat::ngram_vector(s.opcodes, ngram_vocab),
                              opfeat::tfidf_vector(s.opcodes, opcode_vocab));
    offsets = fused.offsets;
    rows.push_back(std::move(fused.values));
    la.labels.push_back(s.label);
  }
  fusion::save_matrix(rows, cfg.work_dir / "features.fmat");
  save_labels_artifact(la, cfg.work_dir / "labels.jsonl");
  save_offsets(offsets, cfg.work_dir / "offsets.json");
  std::cout << "fuse: wrote " << rows.size() << "x" << offsets.end
            << " feature matrix (" << families.size() << " families)\n";
  return 0;
}

int cmd_train(const config::PipelineConfig& cfg) {
  auto rows = fusion::load_matrix(cfg.work_dir / "features.fmat");
  auto la = load_labels_artifact(cfg.work_dir / "labels.jsonl");
  if (rows.size() != la.labels.size()) throw DataError("features/labels row mismatch");
  auto tr = train::train_model(rows, la.labels, la.families.size(), cfg.training);
  nn::save_checkpoint(tr.model, cfg.work_dir / "model.cblm");
  save_scaler(tr.scaler, cfg.work_dir / "scaler.json");
  std::ostringstream losses;
  for (double l : tr.loss_history) losses << " " << l;
  write_text(cfg.work_dir / "train_report.txt", "loss_history" + losses.str() + "\n");
  std::cout << "train: " << cfg.training.epochs << " epochs on " << rows.size()
            << " samples, final loss " << tr.loss_history.back() << " -> "
            << (cfg.work_dir / "model.cblm").string() << "\n";
  return 0;
}

int cmd_eval(const config::PipelineConfig& cfg) {
  auto rows = fusion::load_matrix(cfg.work_dir / "features.fmat");
  auto la = load_labels_artifact(cfg.work_dir / "labels.jsonl");
  auto model = nn::load_checkpoint(cfg.work_dir / "model.cblm");
  auto scaler = load_scaler(cfg.work_dir / "scaler.json");
  auto m = train::evaluate(model, scaler, rows, la.labels, la.families.size());
  nlohmann::json j{{"accuracy", m.accuracy},
                   {"macro_precision", m.macro_precision},
                   {"macro_recall", m.macro_recall},
                   {"macro_f1", m.macro_f1},
                   {"confusion", m.confusion},
                   {"families", la.families}};
  write_text(cfg.work_dir / "eval.json", j.dump(2) + "\n");
  std::cout << "eval: accuracy " << m.accuracy << ", macro-f1 " << m.macro_f1 << " on "
            << rows.size() << " samples -> " << (cfg.work_dir / "eval.json").string()
            << "\n";
  return 0;
}

int cmd_predict(const config::PipelineConfig& cfg, const fs::path& sample) {
  auto listing = disasm::parse_asm(read_text(sample));
  auto seq = disasm::extract_opcodes(listing, cfg.order, sample.stem().string());
  auto sig = imaging::minhash_signature(seq, cfg.signature_k, cfg.shingle_n, cfg.seed);
  auto img = imaging::signature_to_image(sig, cfg.image_size);
  auto bank = texture::gabor_bank(cfg.gabor_scales, cfg.gabor_orientations,
                                  cfg.gabor_kernel_size);
  auto g = gist_of_image(cfg, img, bank);
  auto l = texture::lbp(img, cfg.lbp_p, cfg.lbp_r, true, cfg.lbp_strict);

  auto ngram_vocab = opfeat::load_ngram_vocab(cfg.work_dir / "ngram_vocab.jsonl");
  auto opcode_vocab = opfeat::load_opcode_vocab(cfg.work_dir / "opcode_vocab.jsonl");
  auto fused = fusion::fuse(g, l, opfeat::ngram_vector(seq, ngram_vocab),
                            opfeat::tfidf_vector(seq, opcode_vocab));

  auto scaler = load_scaler(cfg.work_dir / "scaler.json");
  auto model = nn::load_checkpoint(cfg.work_dir / "model.cblm");
  auto la = load_labels_artifact(cfg.work_dir / "labels.jsonl");
  auto probs = nn::model_forward(fusion::zscore_apply(fused.values, scaler), model);
  std::size_t best = 0;
  for (std::size_t c = 1; c < probs.size(); ++c)
    if (probs[c] > probs[best]) best = c;

  std::ostringstream pv;
  for (std::size_t c = 0; c < probs.size(); ++c)
    pv << (c ? " " : "") << la.families[c] << "=" << probs[c];
  std::cout << "predict: " << sample.string() << " -> " << la.families[best] << " (p="
            << probs[best] << ") [" << pv.str() << "]\n";
  return 0;
}

std::pair<std::size_t, std::size_t> parse_ablate(const std::string& spec) {
  std::smatch m;
  if (!std::regex_match(spec, m, std::regex(R"(n=(\d+)\.\.(\d+))")))
    throw ConfigError("bad --ablate spec, expected n=<lo>..<hi>: " + spec);
  std::size_t lo = std::stoull(m[1]), hi = std::stoull(m[2]);
  if (lo < 1 || hi < lo) throw ConfigError("bad --ablate range: " + spec);
  return {lo, hi};
}

int cmd_report(const config::PipelineConfig& cfg, const std::string& ablate) {
  std::vector<std::string> families;
  auto samples = load_samples(cfg, &families);
  if (samples.empty()) throw DataError("no labeled asm samples to report on");

  std::ostringstream table;
  if (!ablate.empty()) {
    auto [lo, hi] = parse_ablate(ablate);
    table << "n\tmean_accuracy\tstd_accuracy\tmean_macro_f1\n";
    for (std::size_t n = lo; n <= hi; ++n) {
      auto fp = cfg.features;
      fp.ngram_n = n;
      auto exp = train::run_experiment(samples, families.size(), fp, cfg.training,
                                       {train::Channel::fused});
      const auto& ch = exp.channels[0];
      table << n << "\t" << ch.mean_accuracy << "\t" << ch.std_accuracy << "\t"
            << ch.mean_macro_f1 << "\n";
    }
  } else {
    std::vector<train::Channel> channels = {train::Channel::gist,  train::Channel::lbp,
                                            train::Channel::texture, train::Channel::ngram,
                                            train::Channel::tfidf, train::Channel::fused};
    auto exp = train::run_experiment(samples, families.size(), cfg.features, cfg.training,
                                     channels);
    table << "channel\tmean_accuracy\tstd_accuracy\tmean_macro_f1\n";
    for (const auto& ch : exp.channels)
      table << train::channel_name(ch.channel) << "\t" << ch.mean_accuracy << "\t"
            << ch.std_accuracy << "\t" << ch.mean_macro_f1 << "\n";
  }
  write_text(cfg.work_dir / "report.txt", table.str());
  std::cout << "report: " << cfg.training.folds << "-fold cross-validation on "
            << samples.size() << " samples -> " << (cfg.work_dir / "report.txt").string()
            << "\n";
  std::cout << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"malfuse: static malware family detection via fused texture and opcode features"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string precision, order, ablate;
  app.add_option("--config", config_path, "pipeline config file");
  app.add_option("--seed", seed, "override the global seed");
  app.add_option("--threads", threads, "worker thread count (fallback: MALFUSE_THREADS)");
  app.add_option("--precision", precision, "parameter precision: f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--order", order, "opcode extraction order: linear or cfg")
      ->check(CLI::IsMember({"linear", "cfg"}));

  auto* c_synth = app.add_subcommand("synth", "generate a synthetic corpus");
  auto* c_ingest = app.add_subcommand("ingest", "index a corpus directory");
  auto* c_disasm = app.add_subcommand("disasm", "extract opcode sequences");
  auto* c_image = app.add_subcommand("image", "build minhash signatures and images");
  auto* c_features = app.add_subcommand("features", "compute gist and lbp descriptors");
  auto* c_fuse = app.add_subcommand("fuse", "vectorize opcodes and fuse all channels");
  auto* c_train = app.add_subcommand("train", "train the classifier on fused features");
  auto* c_eval = app.add_subcommand("eval", "evaluate the trained model");
  auto* c_predict = app.add_subcommand("predict", "classify one sample file");
  auto* c_report = app.add_subcommand("report", "cross-validated ablation report");

  std::string predict_file;
  c_predict->add_option("sample", predict_file, "asm listing to classify")->required();
  c_report->add_option("--ablate", ablate, "ablation spec, e.g. n=1..5");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    auto cfg = config_path.empty() ? config::defaults() : config::load(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.training.seed = *seed;
      cfg.synth.seed = *seed;
    }
    if (precision == "f32") cfg.training.f32_params = true;
    if (precision == "f64") cfg.training.f32_params = false;
    if (order == "linear") cfg.order = disasm::ExtractOrder::linear;
    if (order == "cfg") cfg.order = disasm::ExtractOrder::cfg_dfs;

    int thread_count = 0;
    if (threads) thread_count = *threads;
    else if (const char* env = std::getenv("MALFUSE_THREADS")) thread_count = std::atoi(env);
    if (thread_count > 0) omp_set_num_threads(thread_count);

    fs::create_directories(cfg.work_dir);
    if (*c_synth) return cmd_synth(cfg);
    if (*c_ingest) return cmd_ingest(cfg);
    if (*c_disasm) return cmd_disasm(cfg);
    if (*c_image) return cmd_image(cfg);
    if (*c_features) return cmd_features(cfg);
    if (*c_fuse) return cmd_fuse(cfg);
    if (*c_train) return cmd_train(cfg);
    if (*c_eval) return cmd_eval(cfg);
    if (*c_predict) return cmd_predict(cfg, predict_file);
    if (*c_report) return cmd_report(cfg, ablate);
    throw InternalError("no subcommand dispatched");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const InternalError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
