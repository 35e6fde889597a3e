#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

namespace malfuse::nn {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    data.assign(n, 0.0);
  }
};

struct ConvLayerParams {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t width = 0;
  std::size_t stride = 1;
  std::vector<double> kernels;  // [out][in][width]
  std::vector<double> bias;     // [out]
};

struct LstmCellParams {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  // row-major [hidden][input] / [hidden][hidden]
  std::vector<double> W_xi, W_hi, W_xf, W_hf, W_xc, W_hc, W_xo, W_ho;
  std::vector<double> w_ci, w_cf, w_co;  // peephole vectors, length hidden
  std::vector<double> b_i, b_f, b_c, b_o;
};

struct DenseParams {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> W;  // [out][in]
  std::vector<double> b;  // [out]
};

struct ModelConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> conv_channels{16, 32};
  std::size_t kernel_width = 3;
  std::size_t conv_stride = 1;
  std::size_t pool_window = 2;
  std::size_t pool_stride = 2;
  std::size_t hidden_size = 64;
  std::size_t class_count = 2;
};

struct CnnBiLstmModel {
  ModelConfig config;
  std::vector<ConvLayerParams> conv_layers;
  LstmCellParams forward_cell;
  LstmCellParams backward_cell;
  DenseParams dense;
};

// Gradients mirror the model's parameter layout.
using Gradients = CnnBiLstmModel;

struct AdamState {
  std::size_t t = 0;
  std::vector<double> m, v;  // flat, over parameters in declared order
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Seeded init: uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)], forget bias +1.
CnnBiLstmModel init_model(const ModelConfig& cfg, std::uint64_t seed);
Gradients zeroed_like(const CnnBiLstmModel& model);

// Visits every parameter tensor of the model in declared (checkpoint) order.
void for_each_tensor(CnnBiLstmModel& model,
                     const std::function<void(std::vector<double>&)>& fn);
std::size_t parameter_count(const CnnBiLstmModel& model);

Tensor relu(const Tensor& x);

// Valid cross-correlation plus bias, then ReLU. Input/output are [channels, length].
Tensor conv1d_forward(const Tensor& input, const ConvLayerParams& p);

// Per-window maximum; argmax indices (into the input length axis) kept for backward.
std::pair<Tensor, std::vector<std::size_t>> maxpool1d(const Tensor& input,
                                                      std::size_t window,
                                                      std::size_t stride);

// Peephole LSTM cell; every gate reads c_prev.
std::pair<std::vector<double>, std::vector<double>> lstm_cell_forward(
    const std::vector<double>& x_t, const std::vector<double>& h_prev,
    const std::vector<double>& c_prev, const LstmCellParams& p);

// seq is [n, input_dim]; output is [n, 2*hidden], row t = [fwd h_t | bwd h_t].
Tensor bilstm_forward(const Tensor& seq, const LstmCellParams& fwd,
                      const LstmCellParams& bwd);

std::vector<double> dense_softmax(const std::vector<double>& h, const DenseParams& dense);

double cross_entropy(const std::vector<double>& probs, std::size_t label);

std::vector<double> model_forward(const std::vector<double>& x, const CnnBiLstmModel& model);

struct BackwardResult {
  double loss = 0.0;
  std::vector<double> probs;
  Gradients grads;
};
BackwardResult model_backward(const std::vector<double>& x, std::size_t label,
                              const CnnBiLstmModel& model);

void adam_step(CnnBiLstmModel& params, const Gradients& grads, AdamState& state);

// Checkpoint: "CBLM", u32 version, u32 config length, config JSON, then
// parameter tensors in declared order as little-endian f32.
void save_checkpoint(const CnnBiLstmModel& model, const std::filesystem::path& path);
CnnBiLstmModel load_checkpoint(const std::filesystem::path& path);

}  // namespace malfuse::nn
