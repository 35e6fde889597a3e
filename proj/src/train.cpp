#include "malfuse/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "malfuse/errors.hpp"

namespace malfuse::train {

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
};

void shuffle_indices(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

std::vector<FoldSplit> kfold_split(const std::vector<std::size_t>& labels,
                                   std::size_t class_count, std::size_t K,
                                   std::uint64_t seed) {
  if (K < 2) throw DataError("kfold needs K >= 2");
  std::vector<std::vector<std::size_t>> by_class(class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_count) throw DataError("label index out of range");
    by_class[labels[i]].push_back(i);
  }
  for (std::size_t c = 0; c < class_count; ++c)
    if (by_class[c].size() < K)
      throw DataError("class " + std::to_string(c) + " has " +
                      std::to_string(by_class[c].size()) + " samples, fewer than K=" +
                      std::to_string(K));

  std::vector<std::vector<std::size_t>> fold_test(K);
  for (std::size_t c = 0; c < class_count; ++c) {
    Rng rng(seed * 0x9e3779b97f4a7c15ULL + c + 1);
    shuffle_indices(by_class[c], rng);
    for (std::size_t i = 0; i < by_class[c].size(); ++i)
      fold_test[i % K].push_back(by_class[c][i]);
  }

  std::vector<FoldSplit> splits(K);
  for (std::size_t k = 0; k < K; ++k) {
    std::sort(fold_test[k].begin(), fold_test[k].end());
    splits[k].test_indices = fold_test[k];
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (!std::binary_search(fold_test[k].begin(), fold_test[k].end(), i))
        splits[k].train_indices.push_back(i);
  }
  return splits;
}

Metrics metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion) {
  const std::size_t C = confusion.size();
  Metrics m;
  m.confusion = confusion;
  m.precision.assign(C, 0.0);
  m.recall.assign(C, 0.0);
  m.f1.assign(C, 0.0);
  std::size_t total = 0, correct = 0;
  for (std::size_t t = 0; t < C; ++t)
    for (std::size_t p = 0; p < C; ++p) {
      total += confusion[t][p];
      if (t == p) correct += confusion[t][p];
    }
  if (total == 0) throw DataError("empty confusion matrix");
  m.accuracy = static_cast<double>(correct) / static_cast<double>(total);

  for (std::size_t c = 0; c < C; ++c) {
    std::size_t tp = confusion[c][c];
    std::size_t predicted = 0, actual = 0;
    for (std::size_t t = 0; t < C; ++t) predicted += confusion[t][c];
    for (std::size_t p = 0; p < C; ++p) actual += confusion[c][p];
    m.precision[c] = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    m.recall[c] = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
    m.f1[c] = (m.precision[c] + m.recall[c]) > 0.0
                  ? 2.0 * m.precision[c] * m.recall[c] / (m.precision[c] + m.recall[c])
                  : 0.0;
  }
  m.macro_precision = mean_of(m.precision);
  m.macro_recall = mean_of(m.recall);
  m.macro_f1 = mean_of(m.f1);
  return m;
}

static std::size_t argmax_lowest(const std::vector<double>& probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

TrainResult train_model(const std::vector<std::vector<double>>& rows,
                        const std::vector<std::size_t>& labels, std::size_t class_count,
                        const TrainConfig& cfg) {
  if (rows.empty() || rows.size() != labels.size())
    throw DataError("train_model needs matching non-empty rows and labels");
  if (class_count < 2) throw DataError("train_model needs at least 2 classes");

  TrainResult result;
  result.scaler = fusion::zscore_fit(rows);
  std::vector<std::vector<double>> std_rows(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std_rows[i] = fusion::zscore_apply(rows[i], result.scaler);

  nn::ModelConfig mc = cfg.model;
  mc.input_dim = rows.front().size();
  mc.class_count = class_count;
  result.model = nn::init_model(mc, cfg.seed);

  nn::AdamState adam;
  adam.lr = cfg.learning_rate;
  Rng rng(cfg.seed ^ 0x6a09e667f3bcc908ULL);
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(start + cfg.batch_size, order.size());
      nn::Gradients batch_grads = nn::zeroed_like(result.model);
      for (std::size_t i = start; i < end; ++i) {
        auto back = nn::model_backward(std_rows[order[i]], labels[order[i]], result.model);
        epoch_loss += back.loss;
        std::size_t which = 0;
        std::vector<std::vector<double>*> acc;
        nn::for_each_tensor(batch_grads, [&](std::vector<double>& t) { acc.push_back(&t); });
        nn::for_each_tensor(back.grads, [&](std::vector<double>& t) {
          auto& dst = *acc[which++];
          for (std::size_t j = 0; j < t.size(); ++j) dst[j] += t[j];
        });
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      nn::for_each_tensor(batch_grads, [&](std::vector<double>& t) {
        for (auto& v : t) v *= inv;
      });
      nn::adam_step(result.model, batch_grads, adam);
      if (cfg.f32_params)
        nn::for_each_tensor(result.model, [](std::vector<double>& t) {
          for (auto& v : t) v = static_cast<double>(static_cast<float>(v));
        });
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(rows.size()));
  }
  return result;
}

Metrics evaluate(const nn::CnnBiLstmModel& model, const fusion::Scaler& scaler,
                 const std::vector<std::vector<double>>& rows,
                 const std::vector<std::size_t>& labels, std::size_t class_count) {
  if (rows.empty()) throw DataError("evaluate needs a non-empty test set");
  std::vector<std::vector<std::size_t>> confusion(class_count,
                                                  std::vector<std::size_t>(class_count, 0));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto probs = nn::model_forward(fusion::zscore_apply(rows[i], scaler), model);
    ++confusion[labels[i]][argmax_lowest(probs)];
  }
  return metrics_from_confusion(confusion);
}

std::string channel_name(Channel c) {
  switch (c) {
    case Channel::gist: return "gist";
    case Channel::lbp: return "lbp";
    case Channel::texture: return "texture";
    case Channel::ngram: return "ngram";
    case Channel::tfidf: return "tfidf";
    case Channel::fused: return "fused";
  }
  return "?";
}

std::optional<Channel> channel_from_name(const std::string& name) {
  for (Channel c : {Channel::gist, Channel::lbp, Channel::texture, Channel::ngram,
                    Channel::tfidf, Channel::fused})
    if (channel_name(c) == name) return c;
  return std::nullopt;
}

std::vector<double> slice_channel(const std::vector<double>& row,
                                  const fusion::FusedVector::Offsets& o, Channel c) {
  auto slice = [&](std::size_t b, std::size_t e) {
    return std::vector<double>(row.begin() + static_cast<std::ptrdiff_t>(b),
                               row.begin() + static_cast<std::ptrdiff_t>(e));
  };
  switch (c) {
    case Channel::gist: return slice(o.gist_start, o.lbp_start);
    case Channel::lbp: return slice(o.lbp_start, o.ngram_start);
    case Channel::texture: return slice(o.gist_start, o.ngram_start);
    case Channel::ngram: return slice(o.ngram_start, o.tfidf_start);
    case Channel::tfidf: return slice(o.tfidf_start, o.end);
    case Channel::fused: return row;
  }
  throw InternalError("unknown channel");
}

FoldFeatures build_fold_features(const std::vector<SampleInput>& samples,
                                 const std::vector<std::size_t>& train_indices,
                                 const FeatureParams& fp) {
  std::vector<disasm::OpcodeSequence> train_seqs;
  train_seqs.reserve(train_indices.size());
  for (std::size_t i : train_indices) train_seqs.push_back(samples[i].opcodes);
  auto ngram_vocab = opfeat::build_ngram_vocab(train_seqs, fp.ngram_n, fp.ngram_max_size);
  auto opcode_vocab = opfeat::build_opcode_vocab(train_seqs);

  FoldFeatures out;
  out.rows.resize(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(samples.size()); ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    auto fused = fusion::fuse(s.gist, s.lbp, opfeat::ngram_vector(s.opcodes, ngram_vocab),
                              opfeat::tfidf_vector(s.opcodes, opcode_vocab));
    out.rows[static_cast<std::size_t>(i)] = std::move(fused.values);
#pragma omp critical
    out.offsets = fused.offsets;
  }
  return out;
}

ExperimentReport run_experiment(const std::vector<SampleInput>& samples,
                                std::size_t class_count, const FeatureParams& fp,
                                const TrainConfig& cfg,
                                const std::vector<Channel>& channels) {
  if (samples.empty()) throw DataError("run_experiment needs samples");
  std::vector<std::size_t> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  auto splits = kfold_split(labels, class_count, cfg.folds, cfg.seed);

  // per-fold feature rebuild, shared across channels
  std::vector<FoldFeatures> fold_features(splits.size());
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(splits.size()); ++k) {
    try {
      fold_features[k] = build_fold_features(samples, splits[k].train_indices, fp);
    } catch (const std::exception& e) {
#pragma omp critical
      error = e.what();
    }
  }
  if (!error.empty()) throw DataError(error);

  ExperimentReport report;
  report.folds = splits.size();
  for (Channel channel : channels) {
    ChannelReport cr;
    cr.channel = channel;
    cr.folds.resize(splits.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(splits.size()); ++k) {
      try {
        const auto& split = splits[k];
        const auto& ff = fold_features[k];
        std::vector<std::vector<double>> train_rows, test_rows;
        std::vector<std::size_t> train_labels, test_labels;
        for (std::size_t i : split.train_indices) {
          train_rows.push_back(slice_channel(ff.rows[i], ff.offsets, channel));
          train_labels.push_back(labels[i]);
        }
        for (std::size_t i : split.test_indices) {
          test_rows.push_back(slice_channel(ff.rows[i], ff.offsets, channel));
          test_labels.push_back(labels[i]);
        }
        auto trained = train_model(train_rows, train_labels, class_count, cfg);
        cr.folds[k].metrics =
            evaluate(trained.model, trained.scaler, test_rows, test_labels, class_count);
        cr.folds[k].loss_history = std::move(trained.loss_history);
      } catch (const std::exception& e) {
#pragma omp critical
        error = e.what();
      }
    }
    if (!error.empty()) throw DataError(error);
    std::vector<double> accs, f1s;
    for (const auto& f : cr.folds) {
      accs.push_back(f.metrics.accuracy);
      f1s.push_back(f.metrics.macro_f1);
    }
    cr.mean_accuracy = mean_of(accs);
    cr.std_accuracy = std_of(accs);
    cr.mean_macro_f1 = mean_of(f1s);
    report.channels.push_back(std::move(cr));
  }
  return report;
}

Metrics baseline_logreg(const std::vector<std::vector<double>>& train_rows,
                        const std::vector<std::size_t>& train_labels,
                        const std::vector<std::vector<double>>& test_rows,
                        const std::vector<std::size_t>& test_labels,
                        std::size_t class_count, const TrainConfig& cfg) {
  if (train_rows.empty() || test_rows.empty())
    throw DataError("baseline_logreg needs train and test rows");
  const std::size_t dim = train_rows.front().size();
  nn::DenseParams dense;
  dense.in = dim;
  dense.out = class_count;
  dense.W.assign(class_count * dim, 0.0);
  dense.b.assign(class_count, 0.0);

  std::vector<double> m(dense.W.size() + dense.b.size(), 0.0), v(m.size(), 0.0);
  Rng rng(cfg.seed ^ 0xbb67ae8584caa73bULL);
  std::vector<std::size_t> order(train_rows.size());
  std::iota(order.begin(), order.end(), 0);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(start + cfg.batch_size, order.size());
      std::vector<double> gW(dense.W.size(), 0.0), gb(dense.b.size(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        const auto& x = train_rows[order[i]];
        auto probs = nn::dense_softmax(x, dense);
        probs[train_labels[order[i]]] -= 1.0;
        for (std::size_t c = 0; c < class_count; ++c) {
          gb[c] += probs[c];
          for (std::size_t j = 0; j < dim; ++j) gW[c * dim + j] += probs[c] * x[j];
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      ++step;
      const double b1t = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double b2t = 1.0 - std::pow(beta2, static_cast<double>(step));
      auto update = [&](double* params, const double* grads, std::size_t n, std::size_t off) {
        for (std::size_t i = 0; i < n; ++i) {
          double g = grads[i] * inv;
          m[off + i] = beta1 * m[off + i] + (1.0 - beta1) * g;
          v[off + i] = beta2 * v[off + i] + (1.0 - beta2) * g * g;
          params[i] -= cfg.learning_rate * (m[off + i] / b1t) /
                       (std::sqrt(v[off + i] / b2t) + eps);
        }
      };
      update(dense.W.data(), gW.data(), dense.W.size(), 0);
      update(dense.b.data(), gb.data(), dense.b.size(), dense.W.size());
    }
  }

  std::vector<std::vector<std::size_t>> confusion(class_count,
                                                  std::vector<std::size_t>(class_count, 0));
  for (std::size_t i = 0; i < test_rows.size(); ++i)
    ++confusion[test_labels[i]][argmax_lowest(nn::dense_softmax(test_rows[i], dense))];
  return metrics_from_confusion(confusion);
}

Metrics baseline_nb(const std::vector<std::vector<double>>& train_rows,
                    const std::vector<std::size_t>& train_labels,
                    const std::vector<std::vector<double>>& test_rows,
                    const std::vector<std::size_t>& test_labels, std::size_t class_count) {
  if (train_rows.empty() || test_rows.empty())
    throw DataError("baseline_nb needs train and test rows");
  const std::size_t dim = train_rows.front().size();
  std::vector<std::vector<double>> mean(class_count, std::vector<double>(dim, 0.0));
  std::vector<std::vector<double>> var(class_count, std::vector<double>(dim, 0.0));
  std::vector<double> prior(class_count, 0.0);
  std::vector<std::size_t> counts(class_count, 0);

  for (std::size_t i = 0; i < train_rows.size(); ++i) {
    ++counts[train_labels[i]];
    for (std::size_t j = 0; j < dim; ++j) mean[train_labels[i]][j] += train_rows[i][j];
  }
  for (std::size_t c = 0; c < class_count; ++c) {
    if (counts[c] == 0) throw DataError("baseline_nb: class " + std::to_string(c) + " empty");
    for (auto& x : mean[c]) x /= static_cast<double>(counts[c]);
    prior[c] = std::log(static_cast<double>(counts[c]) /
                        static_cast<double>(train_rows.size()));
  }
  for (std::size_t i = 0; i < train_rows.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j) {
      double d = train_rows[i][j] - mean[train_labels[i]][j];
      var[train_labels[i]][j] += d * d;
    }
  for (std::size_t c = 0; c < class_count; ++c)
    for (auto& x : var[c]) x = x / static_cast<double>(counts[c]) + 1e-6;

  std::vector<std::vector<std::size_t>> confusion(class_count,
                                                  std::vector<std::size_t>(class_count, 0));
  for (std::size_t i = 0; i < test_rows.size(); ++i) {
    std::vector<double> score(class_count);
    for (std::size_t c = 0; c < class_count; ++c) {
      double s = prior[c];
      for (std::size_t j = 0; j < dim; ++j) {
        double d = test_rows[i][j] - mean[c][j];
        s += -0.5 * std::log(2.0 * 3.14159265358979323846 * var[c][j]) -
             0.5 * d * d / var[c][j];
      }
      score[c] = s;
    }
    ++confusion[test_labels[i]][argmax_lowest(score)];
  }
  return metrics_from_confusion(confusion);
}

BaselineReport run_baseline_comparison(const std::vector<SampleInput>& samples,
                                       std::size_t class_count, const FeatureParams& fp,
                                       const TrainConfig& cfg) {
  std::vector<std::size_t> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  auto splits = kfold_split(labels, class_count, cfg.folds, cfg.seed);

  BaselineReport report;
  std::vector<double> cnn_accs(splits.size()), lr_accs(splits.size()), nb_accs(splits.size());
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(splits.size()); ++k) {
    try {
      const auto& split = splits[k];
      auto ff = build_fold_features(samples, split.train_indices, fp);
      std::vector<std::vector<double>> train_rows, test_rows;
      std::vector<std::size_t> train_labels, test_labels;
      for (std::size_t i : split.train_indices) {
        train_rows.push_back(ff.rows[i]);
        train_labels.push_back(labels[i]);
      }
      for (std::size_t i : split.test_indices) {
        test_rows.push_back(ff.rows[i]);
        test_labels.push_back(labels[i]);
      }
      auto trained = train_model(train_rows, train_labels, class_count, cfg);
      cnn_accs[k] =
          evaluate(trained.model, trained.scaler, test_rows, test_labels, class_count)
              .accuracy;
      // standardize with the train-fold scaler for both baselines
      std::vector<std::vector<double>> train_std, test_std;
      for (const auto& r : train_rows) train_std.push_back(fusion::zscore_apply(r, trained.scaler));
      for (const auto& r : test_rows) test_std.push_back(fusion::zscore_apply(r, trained.scaler));
      lr_accs[k] = baseline_logreg(train_std, train_labels, test_std, test_labels,
                                   class_count, cfg)
                       .accuracy;
      nb_accs[k] = baseline_nb(train_std, train_labels, test_std, test_labels, class_count)
                       .accuracy;
    } catch (const std::exception& e) {
#pragma omp critical
      error = e.what();
    }
  }
  if (!error.empty()) throw DataError(error);
  report.cnn_bilstm_mean_accuracy = mean_of(cnn_accs);
  report.logreg_mean_accuracy = mean_of(lr_accs);
  report.nb_mean_accuracy = mean_of(nb_accs);
  return report;
}

}  // namespace malfuse::train
