#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <random>

#include "malfuse/nn.hpp"

using namespace malfuse;

namespace {

std::vector<double> flatten(const nn::CnnBiLstmModel& model) {
  auto copy = model;
  std::vector<double> out;
  nn::for_each_tensor(copy, [&](std::vector<double>& t) {
    out.insert(out.end(), t.begin(), t.end());
  });
  return out;
}

void unflatten(nn::CnnBiLstmModel& model, const std::vector<double>& flat) {
  std::size_t pos = 0;
  nn::for_each_tensor(model, [&](std::vector<double>& t) {
    for (auto& v : t) v = flat[pos++];
  });
}

double loss_at(const nn::CnnBiLstmModel& model, const std::vector<double>& x,
               std::size_t label) {
  return nn::cross_entropy(nn::model_forward(x, model), label);
}

nn::LstmCellParams zero_cell(std::size_t input, std::size_t hidden) {
  nn::LstmCellParams p;
  p.input_size = input;
  p.hidden_size = hidden;
  p.W_xi.assign(hidden * input, 0.0);
  p.W_xf = p.W_xc = p.W_xo = p.W_xi;
  p.W_hi.assign(hidden * hidden, 0.0);
  p.W_hf = p.W_hc = p.W_ho = p.W_hi;
  p.w_ci.assign(hidden, 0.0);
  p.w_cf = p.w_co = p.w_ci;
  p.b_i.assign(hidden, 0.0);
  p.b_f = p.b_c = p.b_o = p.b_i;
  return p;
}

}  // namespace

TEST_CASE("relu zeroes negatives and keeps positives") {
  nn::Tensor t({5});
  t.data = {-2.0, -0.5, 0.0, 0.5, 2.0};
  auto r = nn::relu(t);
  CHECK(r.data == std::vector<double>{0.0, 0.0, 0.0, 0.5, 2.0});
}

TEST_CASE("conv1d: [1,2,3] * [1,1] = [3,5]") {
  nn::Tensor x({1, 3});
  x.data = {1.0, 2.0, 3.0};
  nn::ConvLayerParams p;
  p.in_channels = 1;
  p.out_channels = 1;
  p.width = 2;
  p.kernels = {1.0, 1.0};
  p.bias = {0.0};
  auto y = nn::conv1d_forward(x, p);
  CHECK(y.shape == std::vector<std::size_t>{1, 2});
  CHECK(y.data == std::vector<double>{3.0, 5.0});
}

TEST_CASE("conv1d: identity kernel reproduces the input") {
  nn::Tensor x({1, 4});
  x.data = {1.0, 2.0, 0.5, 3.0};
  nn::ConvLayerParams p;
  p.in_channels = 1;
  p.out_channels = 1;
  p.width = 1;
  p.kernels = {1.0};
  p.bias = {0.0};
  auto y = nn::conv1d_forward(x, p);
  CHECK(y.data == x.data);
}

TEST_CASE("conv1d applies ReLU to negative preactivations") {
  nn::Tensor x({1, 3});
  x.data = {1.0, 2.0, 3.0};
  nn::ConvLayerParams p;
  p.in_channels = 1;
  p.out_channels = 1;
  p.width = 2;
  p.kernels = {1.0, -1.0};  // x[i] - x[i+1] < 0 on an increasing signal
  p.bias = {0.0};
  auto y = nn::conv1d_forward(x, p);
  CHECK(y.data == std::vector<double>{0.0, 0.0});
}

TEST_CASE("conv1d sums over input channels and adds bias") {
  nn::Tensor x({2, 2});
  x.data = {1.0, 2.0, 10.0, 20.0};  // channel 0 then channel 1
  nn::ConvLayerParams p;
  p.in_channels = 2;
  p.out_channels = 1;
  p.width = 1;
  p.kernels = {1.0, 1.0};
  p.bias = {0.5};
  auto y = nn::conv1d_forward(x, p);
  CHECK(y.data == std::vector<double>{11.5, 22.5});
}

TEST_CASE("maxpool1d: [1,3,2] window 2 stride 1 -> [3,3]") {
  nn::Tensor x({1, 3});
  x.data = {1.0, 3.0, 2.0};
  auto [y, argmax] = nn::maxpool1d(x, 2, 1);
  CHECK(y.data == std::vector<double>{3.0, 3.0});
  REQUIRE(argmax.size() == 2);
  CHECK(argmax[0] == 1);
  CHECK(argmax[1] == 1);
}

TEST_CASE("maxpool1d with stride 2 halves the length") {
  nn::Tensor x({1, 6});
  x.data = {5.0, 1.0, 2.0, 8.0, 3.0, 3.0};
  auto [y, argmax] = nn::maxpool1d(x, 2, 2);
  CHECK(y.data == std::vector<double>{5.0, 8.0, 3.0});
  CHECK(argmax[0] == 0);
  CHECK(argmax[1] == 3);
  CHECK(argmax[2] == 4);  // ties keep the first position
}

TEST_CASE("lstm cell with all-zero parameters") {
  auto p = zero_cell(2, 3);
  std::vector<double> x = {1.0, -1.0};
  std::vector<double> h0(3, 0.0), c0(3, 0.0);
  auto [h, c] = nn::lstm_cell_forward(x, h0, c0, p);
  for (double v : c) CHECK(v == 0.0);   // i*tanh(0) = 0
  for (double v : h) CHECK(v == 0.0);   // o*tanh(0) = 0
}

TEST_CASE("lstm cell zero-parameter recurrence halves the carried cell state") {
  auto p = zero_cell(1, 2);
  std::vector<double> x = {0.0};
  std::vector<double> h0(2, 0.0);
  std::vector<double> c0 = {1.0, -2.0};
  auto [h, c] = nn::lstm_cell_forward(x, h0, c0, p);
  // f = sigmoid(0) = 0.5, candidate contribution is zero
  CHECK(c[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(c[1] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(h[0] == doctest::Approx(0.5 * std::tanh(0.5)).epsilon(1e-12));
}

TEST_CASE("lstm cell peephole weights change the gates") {
  auto p = zero_cell(1, 1);
  std::vector<double> x = {0.0};
  std::vector<double> h0 = {0.0};
  std::vector<double> c0 = {1.0};
  auto [h_base, c_base] = nn::lstm_cell_forward(x, h0, c0, p);
  p.w_cf = {10.0};  // forget gate saturates toward 1 when c_prev > 0
  auto [h_peep, c_peep] = nn::lstm_cell_forward(x, h0, c0, p);
  CHECK(c_base[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(c_peep[0] > 0.99);
}

TEST_CASE("bilstm output shape is [n, 2*hidden]") {
  auto fwd = nn::init_model({.input_dim = 8, .conv_channels = {}, .hidden_size = 3},
                            1).forward_cell;
  nn::Tensor seq({4, fwd.input_size});
  std::mt19937 gen(9);
  for (auto& v : seq.data) v = (gen() % 100) / 50.0 - 1.0;
  auto bwd = fwd;
  auto out = nn::bilstm_forward(seq, fwd, bwd);
  CHECK(out.shape == std::vector<std::size_t>{4, 6});
}

TEST_CASE("bilstm on a palindrome with shared cells mirrors halves") {
  nn::ModelConfig cfg;
  cfg.input_dim = 8;
  cfg.conv_channels = {1};
  cfg.hidden_size = 3;
  auto cell = nn::init_model(cfg, 5).forward_cell;
  std::size_t d = cell.input_size;
  std::size_t n = 5;
  nn::Tensor seq({n, d});
  std::mt19937 gen(11);
  for (std::size_t t = 0; t < (n + 1) / 2; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      double v = (gen() % 100) / 50.0 - 1.0;
      seq.data[t * d + j] = v;
      seq.data[(n - 1 - t) * d + j] = v;
    }
  auto out = nn::bilstm_forward(seq, cell, cell);
  std::size_t H = cell.hidden_size;
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < H; ++j) {
      double fwd_t = out.data[t * 2 * H + j];
      double bwd_mirror = out.data[(n - 1 - t) * 2 * H + H + j];
      CHECK(fwd_t == doctest::Approx(bwd_mirror).epsilon(1e-12));
    }
}

TEST_CASE("dense_softmax is invariant to a constant bias shift") {
  nn::DenseParams d;
  d.in = 2;
  d.out = 3;
  d.W = {1.0, -1.0, 0.5, 2.0, -0.25, 0.0};
  d.b = {0.1, 0.2, 0.3};
  std::vector<double> h = {0.7, -1.3};
  auto p1 = nn::dense_softmax(h, d);
  for (auto& b : d.b) b += 1000.0;
  auto p2 = nn::dense_softmax(h, d);
  double sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-9));
    sum += p1[i];
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dense_softmax survives huge logits") {
  nn::DenseParams d;
  d.in = 1;
  d.out = 2;
  d.W = {1000.0, -1000.0};
  d.b = {0.0, 0.0};
  auto p = nn::dense_softmax({1.0}, d);
  CHECK(p[0] == doctest::Approx(1.0));
  CHECK(std::isfinite(p[1]));
}

TEST_CASE("cross entropy of the uniform distribution is ln C") {
  std::vector<double> probs(4, 0.25);
  CHECK(nn::cross_entropy(probs, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("cross entropy stays finite at probability zero") {
  CHECK(std::isfinite(nn::cross_entropy({1.0, 0.0}, 1)));
}

TEST_CASE("init_model is seed-deterministic and seeds differ") {
  nn::ModelConfig cfg;
  cfg.input_dim = 16;
  cfg.conv_channels = {2};
  cfg.hidden_size = 4;
  auto a = flatten(nn::init_model(cfg, 7));
  auto b = flatten(nn::init_model(cfg, 7));
  auto c = flatten(nn::init_model(cfg, 8));
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("init_model bounds and forget bias") {
  nn::ModelConfig cfg;
  cfg.input_dim = 16;
  cfg.conv_channels = {2};
  cfg.hidden_size = 4;
  auto m = nn::init_model(cfg, 3);
  for (double v : m.forward_cell.b_f) CHECK(v == 1.0);  // open forget gates
  double bound_x = 1.0 / std::sqrt(static_cast<double>(m.forward_cell.input_size));
  for (double v : m.forward_cell.W_xi) CHECK(std::abs(v) <= bound_x + 1e-12);
  double bound_h = 1.0 / std::sqrt(static_cast<double>(m.forward_cell.hidden_size));
  for (double v : m.forward_cell.W_hi) CHECK(std::abs(v) <= bound_h + 1e-12);
}

TEST_CASE("model_forward returns a probability vector") {
  nn::ModelConfig cfg;
  cfg.input_dim = 12;
  cfg.conv_channels = {2};
  cfg.hidden_size = 3;
  cfg.class_count = 3;
  auto m = nn::init_model(cfg, 21);
  std::vector<double> x(12);
  std::mt19937 gen(13);
  for (auto& v : x) v = (gen() % 100) / 50.0 - 1.0;
  auto p = nn::model_forward(x, m);
  REQUIRE(p.size() == 3);
  double sum = 0.0;
  for (double v : p) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dense bias gradient equals probs minus one-hot") {
  nn::ModelConfig cfg;
  cfg.input_dim = 12;
  cfg.conv_channels = {2};
  cfg.hidden_size = 3;
  cfg.class_count = 3;
  auto m = nn::init_model(cfg, 33);
  std::vector<double> x(12);
  std::mt19937 gen(15);
  for (auto& v : x) v = (gen() % 100) / 50.0 - 1.0;
  auto r = nn::model_backward(x, 1, m);
  for (std::size_t c = 0; c < 3; ++c) {
    double expected = r.probs[c] - (c == 1 ? 1.0 : 0.0);
    CHECK(r.grads.dense.b[c] == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("backward gradients match central finite differences") {
  std::vector<nn::ModelConfig> configs;
  {
    nn::ModelConfig c;
    c.input_dim = 10;
    c.conv_channels = {2};
    c.hidden_size = 3;
    c.class_count = 2;
    configs.push_back(c);
  }
  {
    nn::ModelConfig c;
    c.input_dim = 14;
    c.conv_channels = {2, 3};
    c.hidden_size = 2;
    c.class_count = 3;
    configs.push_back(c);
  }
  std::mt19937 gen(17);
  for (std::size_t ci = 0; ci < configs.size(); ++ci) {
    auto model = nn::init_model(configs[ci], 100 + ci);
    std::vector<double> x(configs[ci].input_dim);
    for (auto& v : x) v = (gen() % 200) / 50.0 - 2.0;
    std::size_t label = gen() % configs[ci].class_count;

    auto r = nn::model_backward(x, label, model);
    auto analytic = flatten(r.grads);
    auto theta = flatten(model);
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      auto plus = theta, minus = theta;
      plus[i] += h;
      minus[i] -= h;
      auto mp = model, mm = model;
      unflatten(mp, plus);
      unflatten(mm, minus);
      double numeric = (loss_at(mp, x, label) - loss_at(mm, x, label)) / (2 * h);
      double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("adam first step moves each parameter by about lr") {
  nn::ModelConfig cfg;
  cfg.input_dim = 10;
  cfg.conv_channels = {2};
  cfg.hidden_size = 2;
  auto model = nn::init_model(cfg, 55);
  auto before = flatten(model);
  auto grads = nn::zeroed_like(model);
  {
    std::size_t k = 0;
    nn::for_each_tensor(grads, [&](std::vector<double>& t) {
      for (auto& v : t) v = (k++ % 2 == 0) ? 0.5 : -0.5;
    });
  }
  nn::AdamState st;
  st.lr = 1e-3;
  nn::adam_step(model, grads, st);
  auto after = flatten(model);
  auto gflat = flatten(grads);
  for (std::size_t i = 0; i < before.size(); ++i) {
    double step = after[i] - before[i];
    CHECK(step == doctest::Approx(-st.lr * (gflat[i] > 0 ? 1.0 : -1.0)).epsilon(1e-4));
  }
  CHECK(st.t == 1);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  nn::ModelConfig cfg;
  cfg.input_dim = 10;
  cfg.conv_channels = {2};
  cfg.hidden_size = 2;
  auto model = nn::init_model(cfg, 56);
  auto before = flatten(model);
  auto grads = nn::zeroed_like(model);
  nn::AdamState st;
  nn::adam_step(model, grads, st);
  CHECK(flatten(model) == before);
}

TEST_CASE("repeated identical adam steps shrink the quadratic loss") {
  // single scalar parameter, loss (w-3)^2, gradient 2(w-3)
  nn::ModelConfig cfg;
  cfg.input_dim = 10;
  cfg.conv_channels = {2};
  cfg.hidden_size = 2;
  auto model = nn::init_model(cfg, 57);
  auto grads = nn::zeroed_like(model);
  nn::AdamState st;
  st.lr = 0.05;
  double w = 0.0;
  // drive only the first dense bias entry through the optimizer
  for (int iter = 0; iter < 400; ++iter) {
    grads.dense.b[0] = 2.0 * (w - 3.0);
    double before_b = model.dense.b[0];
    nn::adam_step(model, grads, st);
    w += model.dense.b[0] - before_b;
  }
  CHECK(std::abs(w - 3.0) < 0.1);
}

TEST_CASE("checkpoint round-trips and is byte-stable") {
  auto dir = std::filesystem::temp_directory_path() / "malfuse_test_nn";
  std::filesystem::create_directories(dir);
  nn::ModelConfig cfg;
  cfg.input_dim = 12;
  cfg.conv_channels = {2};
  cfg.hidden_size = 3;
  cfg.class_count = 2;
  auto model = nn::init_model(cfg, 77);
  nn::save_checkpoint(model, dir / "a.cblm");
  auto loaded = nn::load_checkpoint(dir / "a.cblm");
  CHECK(loaded.config.input_dim == 12);
  CHECK(loaded.config.hidden_size == 3);
  nn::save_checkpoint(loaded, dir / "b.cblm");
  std::ifstream fa(dir / "a.cblm", std::ios::binary), fb(dir / "b.cblm", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), {});
  std::string sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
  CHECK(sa.substr(0, 4) == "CBLM");

  std::vector<double> x(12, 0.25);
  auto p1 = nn::model_forward(x, model);
  auto p2 = nn::model_forward(x, loaded);
  for (std::size_t i = 0; i < p1.size(); ++i)
    CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-6));  // f32 storage
}

TEST_CASE("parameter_count matches the flattened size") {
  nn::ModelConfig cfg;
  cfg.input_dim = 10;
  cfg.conv_channels = {2, 3};
  cfg.hidden_size = 4;
  cfg.class_count = 3;
  auto model = nn::init_model(cfg, 91);
  CHECK(nn::parameter_count(model) == flatten(model).size());
}
