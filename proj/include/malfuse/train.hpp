#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "malfuse/disasm.hpp"
#include "malfuse/fusion.hpp"
#include "malfuse/nn.hpp"
#include "malfuse/opfeat.hpp"
#include "malfuse/texture.hpp"

namespace malfuse::train {

struct TrainConfig {
  std::size_t folds = 10;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  bool f32_params = false;  // round parameters to f32 after each optimizer step
  nn::ModelConfig model;    // input_dim/class_count are filled per dataset
};

struct Metrics {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<double> precision, recall, f1;  // per class
};

struct FoldSplit {
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

// Stratified: each class's indices are shuffled by seed and dealt
// round-robin into K folds. Errors if any class has fewer than K members.
std::vector<FoldSplit> kfold_split(const std::vector<std::size_t>& labels,
                                   std::size_t class_count, std::size_t K,
                                   std::uint64_t seed);

Metrics metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion);

struct TrainResult {
  nn::CnnBiLstmModel model;
  fusion::Scaler scaler;             // fitted on the training rows only
  std::vector<double> loss_history;  // per-epoch mean loss
};

// Fits a z-score scaler on the rows, then runs N epochs of mini-batch Adam.
TrainResult train_model(const std::vector<std::vector<double>>& rows,
                        const std::vector<std::size_t>& labels, std::size_t class_count,
                        const TrainConfig& cfg);

// Applies the training scaler to each test row; never fits.
Metrics evaluate(const nn::CnnBiLstmModel& model, const fusion::Scaler& scaler,
                 const std::vector<std::vector<double>>& rows,
                 const std::vector<std::size_t>& labels, std::size_t class_count);

// Feature channels selectable in ablation runs via the fused offsets.
enum class Channel { gist, lbp, texture, ngram, tfidf, fused };
std::string channel_name(Channel c);
std::optional<Channel> channel_from_name(const std::string& name);
std::vector<double> slice_channel(const std::vector<double>& row,
                                  const fusion::FusedVector::Offsets& offsets, Channel c);

// Raw per-sample inputs; opcode vectorization happens per fold so that
// vocabularies never see test-fold sequences.
struct SampleInput {
  texture::GistDescriptor gist;
  texture::LbpHistogram lbp;
  disasm::OpcodeSequence opcodes;
  std::size_t label = 0;
};

struct FeatureParams {
  std::size_t ngram_n = 4;
  std::size_t ngram_max_size = 1000;
};

struct FoldFeatures {
  std::vector<std::vector<double>> rows;  // fused, aligned to samples
  fusion::FusedVector::Offsets offsets;
};

// Vocabularies are built from train-fold sequences only.
FoldFeatures build_fold_features(const std::vector<SampleInput>& samples,
                                 const std::vector<std::size_t>& train_indices,
                                 const FeatureParams& fp);

struct FoldOutcome {
  Metrics metrics;
  std::vector<double> loss_history;
};

struct ChannelReport {
  Channel channel = Channel::fused;
  std::vector<FoldOutcome> folds;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_macro_f1 = 0.0;
};

struct ExperimentReport {
  std::size_t folds = 0;
  std::vector<ChannelReport> channels;
};

// K-fold cross-validation with per-fold vocabulary and scaler rebuild.
// All channels share identical fold splits.
ExperimentReport run_experiment(const std::vector<SampleInput>& samples,
                                std::size_t class_count, const FeatureParams& fp,
                                const TrainConfig& cfg,
                                const std::vector<Channel>& channels = {Channel::fused});

// Multinomial logistic regression trained by Adam on the same loss.
Metrics baseline_logreg(const std::vector<std::vector<double>>& train_rows,
                        const std::vector<std::size_t>& train_labels,
                        const std::vector<std::vector<double>>& test_rows,
                        const std::vector<std::size_t>& test_labels,
                        std::size_t class_count, const TrainConfig& cfg);

// Gaussian naive Bayes with a 1e-6 variance floor.
Metrics baseline_nb(const std::vector<std::vector<double>>& train_rows,
                    const std::vector<std::size_t>& train_labels,
                    const std::vector<std::vector<double>>& test_rows,
                    const std::vector<std::size_t>& test_labels, std::size_t class_count);

// Cross-validated baselines on the same per-fold features as run_experiment.
struct BaselineReport {
  double cnn_bilstm_mean_accuracy = 0.0;
  double logreg_mean_accuracy = 0.0;
  double nb_mean_accuracy = 0.0;
};
BaselineReport run_baseline_comparison(const std::vector<SampleInput>& samples,
                                       std::size_t class_count, const FeatureParams& fp,
                                       const TrainConfig& cfg);

}  // namespace malfuse::train
