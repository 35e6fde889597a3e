#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "malfuse/corpus.hpp"
#include "malfuse/opfeat.hpp"
#include "malfuse/texture.hpp"

namespace malfuse::fusion {

struct FusedVector {
  std::vector<double> values;
  struct Offsets {
    std::size_t gist_start = 0;
    std::size_t lbp_start = 0;
    std::size_t ngram_start = 0;
    std::size_t tfidf_start = 0;
    std::size_t end = 0;
  } offsets;
};

struct Scaler {
  std::vector<double> mean;
  std::vector<double> std_dev;  // population form, >= 0
  std::size_t fitted_on = 0;
};

struct LabeledDataset {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels;  // indices into families
  std::vector<std::string> families;
  FusedVector::Offsets offsets;     // shared layout of every row
};

FusedVector fuse(const texture::GistDescriptor& g, const texture::LbpHistogram& l,
                 const opfeat::SparseFeatureVector& q, const opfeat::SparseFeatureVector& v);

Scaler zscore_fit(const std::vector<std::vector<double>>& train_rows);
std::vector<double> zscore_apply(const std::vector<double>& row, const Scaler& s);

// Aligns per-sample fused vectors to index records; unlabeled samples are
// dropped. Keys of `features` are sample ids.
LabeledDataset assemble_dataset(
    const std::vector<std::pair<std::string, FusedVector>>& features,
    const corpus::CorpusIndex& index);

// Feature matrix file: "FMAT" magic, u32 version, u32 rows, u32 cols, then
// row-major little-endian f32.
void save_matrix(const std::vector<std::vector<double>>& rows,
                 const std::filesystem::path& path);
std::vector<std::vector<double>> load_matrix(const std::filesystem::path& path);

void save_labels(const LabeledDataset& ds, const std::filesystem::path& path);

}  // namespace malfuse::fusion
