#include "malfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "malfuse/errors.hpp"
#include "json.hpp"

namespace malfuse::fusion {

FusedVector fuse(const texture::GistDescriptor& g, const texture::LbpHistogram& l,
                 const opfeat::SparseFeatureVector& q, const opfeat::SparseFeatureVector& v) {
  FusedVector out;
  out.offsets.gist_start = 0;
  out.values.insert(out.values.end(), g.values.begin(), g.values.end());
  out.offsets.lbp_start = out.values.size();
  out.values.insert(out.values.end(), l.bins.begin(), l.bins.end());
  out.offsets.ngram_start = out.values.size();
  auto qd = q.dense();
  out.values.insert(out.values.end(), qd.begin(), qd.end());
  out.offsets.tfidf_start = out.values.size();
  auto vd = v.dense();
  out.values.insert(out.values.end(), vd.begin(), vd.end());
  out.offsets.end = out.values.size();
  return out;
}

Scaler zscore_fit(const std::vector<std::vector<double>>& train_rows) {
  if (train_rows.empty()) throw DataError("zscore_fit needs at least one row");
  const std::size_t dim = train_rows.front().size();
  for (const auto& row : train_rows)
    if (row.size() != dim) throw DataError("zscore_fit rows have inconsistent dimensions");

  Scaler s;
  s.fitted_on = train_rows.size();
  s.mean.assign(dim, 0.0);
  s.std_dev.assign(dim, 0.0);
  const double n = static_cast<double>(train_rows.size());
  for (const auto& row : train_rows)
    for (std::size_t i = 0; i < dim; ++i) s.mean[i] += row[i];
  for (std::size_t i = 0; i < dim; ++i) s.mean[i] /= n;
  for (const auto& row : train_rows)
    for (std::size_t i = 0; i < dim; ++i) {
      double d = row[i] - s.mean[i];
      s.std_dev[i] += d * d;
    }
  for (std::size_t i = 0; i < dim; ++i) s.std_dev[i] = std::sqrt(s.std_dev[i] / n);
  return s;
}

std::vector<double> zscore_apply(const std::vector<double>& row, const Scaler& s) {
  if (row.size() != s.mean.size())
    throw DataError("zscore_apply dimension mismatch: row " + std::to_string(row.size()) +
                    " vs scaler " + std::to_string(s.mean.size()));
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i)
    out[i] = s.std_dev[i] > 0.0 ? (row[i] - s.mean[i]) / s.std_dev[i] : 0.0;
  return out;
}

LabeledDataset assemble_dataset(
    const std::vector<std::pair<std::string, FusedVector>>& features,
    const corpus::CorpusIndex& index) {
  std::map<std::string, const FusedVector*> by_id;
  for (const auto& [id, fv] : features) by_id[id] = &fv;

  std::vector<std::string> missing;
  std::set<std::string> families;
  for (const auto& rec : index.records) {
    if (rec.family == corpus::kUnlabeled) continue;
    if (!by_id.count(rec.id)) missing.push_back(rec.id);
    else families.insert(rec.family);
  }
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "missing features for samples:";
    for (const auto& id : missing) msg << " " << id;
    throw DataError(msg.str());
  }

  LabeledDataset ds;
  ds.families.assign(families.begin(), families.end());
  for (const auto& rec : index.records) {
    if (rec.family == corpus::kUnlabeled) continue;
    const FusedVector* fv = by_id.at(rec.id);
    ds.rows.push_back(fv->values);
    ds.labels.push_back(static_cast<std::size_t>(
        std::lower_bound(ds.families.begin(), ds.families.end(), rec.family) -
        ds.families.begin()));
    ds.offsets = fv->offsets;
  }
  return ds;
}

void save_matrix(const std::vector<std::vector<double>>& rows,
                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write matrix: " + path.string());
  const char magic[4] = {'F', 'M', 'A', 'T'};
  std::uint32_t version = 1;
  std::uint32_t r = static_cast<std::uint32_t>(rows.size());
  std::uint32_t c = rows.empty() ? 0 : static_cast<std::uint32_t>(rows.front().size());
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&r), 4);
  out.write(reinterpret_cast<const char*>(&c), 4);
  for (const auto& row : rows) {
    if (row.size() != c) throw DataError("ragged matrix rows");
    for (double v : row) {
      float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
}

std::vector<std::vector<double>> load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read matrix: " + path.string());
  char magic[4];
  std::uint32_t version = 0, r = 0, c = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&r), 4);
  in.read(reinterpret_cast<char*>(&c), 4);
  if (!in || std::string(magic, 4) != "FMAT" || version != 1)
    throw DataError("bad matrix file: " + path.string());
  std::vector<std::vector<double>> rows(r, std::vector<double>(c));
  for (auto& row : rows)
    for (auto& v : row) {
      float f;
      in.read(reinterpret_cast<char*>(&f), 4);
      v = f;
    }
  if (!in) throw DataError("truncated matrix file: " + path.string());
  return rows;
}

void save_labels(const LabeledDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write labels: " + path.string());
  out << nlohmann::json{{"version", 1}, {"families", ds.families}}.dump() << "\n";
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    out << nlohmann::json{{"row", i}, {"label", ds.labels[i]}}.dump() << "\n";
}

}  // namespace malfuse::fusion
