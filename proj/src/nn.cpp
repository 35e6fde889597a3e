#include "malfuse/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "malfuse/errors.hpp"
#include "json.hpp"

namespace malfuse::nn {

namespace {

// Deterministic across compilers, unlike <random> distributions.
struct Rng {
  std::uint64_t state;
  explicit Rng(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() {
    std::uint64_t x = (state += 0x9e3779b97f4a7c15ULL);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }
  double uniform() {  // [0, 1)
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }
  double symmetric(double bound) { return (2.0 * uniform() - 1.0) * bound; }
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void fill_uniform(std::vector<double>& v, std::size_t n, double bound, Rng& rng) {
  v.resize(n);
  for (auto& x : v) x = rng.symmetric(bound);
}

// y += W x, W row-major [rows][cols]
void matvec_add(const std::vector<double>& W, const std::vector<double>& x,
                std::size_t rows, std::size_t cols, std::vector<double>& y) {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* wr = W.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] += acc;
  }
}

// y += W^T d, W row-major [rows][cols], d length rows, y length cols
void matvec_t_add(const std::vector<double>& W, const std::vector<double>& d,
                  std::size_t rows, std::size_t cols, std::vector<double>& y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = W.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) y[c] += wr[c] * d[r];
  }
}

// W += d x^T (outer product accumulate)
void outer_add(std::vector<double>& W, const std::vector<double>& d,
               const std::vector<double>& x, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* wr = W.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) wr[c] += d[r] * x[c];
  }
}

}  // namespace

CnnBiLstmModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.class_count < 2) throw DataError("model needs class_count >= 2");
  if (cfg.input_dim < 1) throw DataError("model needs input_dim >= 1");
  CnnBiLstmModel model;
  model.config = cfg;
  Rng rng(seed ^ 0xcb1b5f4d9ce5a2c3ULL);

  std::size_t in_ch = 1;
  for (std::size_t out_ch : cfg.conv_channels) {
    ConvLayerParams p;
    p.in_channels = in_ch;
    p.out_channels = out_ch;
    p.width = cfg.kernel_width;
    p.stride = cfg.conv_stride;
    double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * cfg.kernel_width));
    fill_uniform(p.kernels, out_ch * in_ch * cfg.kernel_width, bound, rng);
    p.bias.assign(out_ch, 0.0);
    model.conv_layers.push_back(std::move(p));
    in_ch = out_ch;
  }

  auto init_cell = [&](LstmCellParams& cell) {
    cell.input_size = in_ch;
    cell.hidden_size = cfg.hidden_size;
    const std::size_t d = cfg.hidden_size;
    double bx = 1.0 / std::sqrt(static_cast<double>(in_ch));
    double bh = 1.0 / std::sqrt(static_cast<double>(d));
    fill_uniform(cell.W_xi, d * in_ch, bx, rng);
    fill_uniform(cell.W_hi, d * d, bh, rng);
    fill_uniform(cell.W_xf, d * in_ch, bx, rng);
    fill_uniform(cell.W_hf, d * d, bh, rng);
    fill_uniform(cell.W_xc, d * in_ch, bx, rng);
    fill_uniform(cell.W_hc, d * d, bh, rng);
    fill_uniform(cell.W_xo, d * in_ch, bx, rng);
    fill_uniform(cell.W_ho, d * d, bh, rng);
    fill_uniform(cell.w_ci, d, bh, rng);
    fill_uniform(cell.w_cf, d, bh, rng);
    fill_uniform(cell.w_co, d, bh, rng);
    cell.b_i.assign(d, 0.0);
    cell.b_f.assign(d, 1.0);  // open forget gates at init
    cell.b_c.assign(d, 0.0);
    cell.b_o.assign(d, 0.0);
  };
  init_cell(model.forward_cell);
  init_cell(model.backward_cell);

  model.dense.in = 2 * cfg.hidden_size;
  model.dense.out = cfg.class_count;
  double bd = 1.0 / std::sqrt(static_cast<double>(model.dense.in));
  fill_uniform(model.dense.W, model.dense.out * model.dense.in, bd, rng);
  model.dense.b.assign(model.dense.out, 0.0);
  return model;
}

Gradients zeroed_like(const CnnBiLstmModel& model) {
  Gradients g = model;
  for_each_tensor(g, [](std::vector<double>& t) { std::fill(t.begin(), t.end(), 0.0); });
  return g;
}

void for_each_tensor(CnnBiLstmModel& model,
                     const std::function<void(std::vector<double>&)>& fn) {
  for (auto& conv : model.conv_layers) {
    fn(conv.kernels);
    fn(conv.bias);
  }
  for (LstmCellParams* cell : {&model.forward_cell, &model.backward_cell}) {
    fn(cell->W_xi);
    fn(cell->W_hi);
    fn(cell->W_xf);
    fn(cell->W_hf);
    fn(cell->W_xc);
    fn(cell->W_hc);
    fn(cell->W_xo);
    fn(cell->W_ho);
    fn(cell->w_ci);
    fn(cell->w_cf);
    fn(cell->w_co);
    fn(cell->b_i);
    fn(cell->b_f);
    fn(cell->b_c);
    fn(cell->b_o);
  }
  fn(model.dense.W);
  fn(model.dense.b);
}

std::size_t parameter_count(const CnnBiLstmModel& model) {
  std::size_t n = 0;
  for_each_tensor(const_cast<CnnBiLstmModel&>(model),
                  [&](std::vector<double>& t) { n += t.size(); });
  return n;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data) v = std::max(0.0, v);
  return out;
}

static Tensor conv1d_preact(const Tensor& input, const ConvLayerParams& p) {
  if (input.shape.size() != 2 || input.shape[0] != p.in_channels)
    throw DataError("conv1d input shape mismatch");
  const std::size_t length = input.shape[1];
  if (length < p.width) throw DataError("conv1d input shorter than kernel");
  const std::size_t out_len = (length - p.width) / p.stride + 1;
  Tensor out({p.out_channels, out_len});
  for (std::size_t oc = 0; oc < p.out_channels; ++oc) {
    for (std::size_t t = 0; t < out_len; ++t) {
      double acc = p.bias[oc];
      for (std::size_t ic = 0; ic < p.in_channels; ++ic) {
        const double* k = p.kernels.data() + (oc * p.in_channels + ic) * p.width;
        const double* in = input.data.data() + ic * length + t * p.stride;
        for (std::size_t w = 0; w < p.width; ++w) acc += k[w] * in[w];
      }
      out.data[oc * out_len + t] = acc;
    }
  }
  return out;
}

Tensor conv1d_forward(const Tensor& input, const ConvLayerParams& p) {
  return relu(conv1d_preact(input, p));
}

std::pair<Tensor, std::vector<std::size_t>> maxpool1d(const Tensor& input,
                                                      std::size_t window,
                                                      std::size_t stride) {
  if (input.shape.size() != 2) throw DataError("maxpool1d expects [channels, length]");
  const std::size_t channels = input.shape[0];
  const std::size_t length = input.shape[1];
  if (window < 1 || window > length) throw DataError("maxpool window exceeds input length");
  const std::size_t out_len = (length - window) / stride + 1;
  Tensor out({channels, out_len});
  std::vector<std::size_t> argmax(channels * out_len);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < out_len; ++t) {
      std::size_t base = c * length + t * stride;
      std::size_t best = t * stride;
      double best_v = input.data[base];
      for (std::size_t w = 1; w < window; ++w) {
        if (input.data[base + w] > best_v) {
          best_v = input.data[base + w];
          best = t * stride + w;
        }
      }
      out.data[c * out_len + t] = best_v;
      argmax[c * out_len + t] = best;
    }
  }
  return {std::move(out), std::move(argmax)};
}

namespace {

struct GateActivations {
  std::vector<double> i, f, g, o, c, h;  // g = tanh candidate
};

GateActivations cell_step(const std::vector<double>& x, const std::vector<double>& h_prev,
                          const std::vector<double>& c_prev, const LstmCellParams& p) {
  const std::size_t d = p.hidden_size;
  if (x.size() != p.input_size || h_prev.size() != d || c_prev.size() != d)
    throw DataError("lstm cell shape mismatch");
  GateActivations a;
  a.i = p.b_i;
  a.f = p.b_f;
  a.g = p.b_c;
  a.o = p.b_o;
  matvec_add(p.W_xi, x, d, p.input_size, a.i);
  matvec_add(p.W_hi, h_prev, d, d, a.i);
  matvec_add(p.W_xf, x, d, p.input_size, a.f);
  matvec_add(p.W_hf, h_prev, d, d, a.f);
  matvec_add(p.W_xc, x, d, p.input_size, a.g);
  matvec_add(p.W_hc, h_prev, d, d, a.g);
  matvec_add(p.W_xo, x, d, p.input_size, a.o);
  matvec_add(p.W_ho, h_prev, d, d, a.o);
  a.c.resize(d);
  a.h.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    a.i[j] = sigmoid(a.i[j] + p.w_ci[j] * c_prev[j]);
    a.f[j] = sigmoid(a.f[j] + p.w_cf[j] * c_prev[j]);
    a.o[j] = sigmoid(a.o[j] + p.w_co[j] * c_prev[j]);
    a.g[j] = std::tanh(a.g[j]);
    a.c[j] = a.f[j] * c_prev[j] + a.i[j] * a.g[j];
    a.h[j] = a.o[j] * std::tanh(a.c[j]);
  }
  return a;
}

struct LstmTrace {
  std::vector<std::vector<double>> inputs;  // in processing order
  std::vector<GateActivations> steps;
};

LstmTrace run_direction(const Tensor& seq, const LstmCellParams& cell, bool reversed) {
  const std::size_t n = seq.shape[0];
  const std::size_t dim = seq.shape[1];
  LstmTrace trace;
  std::vector<double> h(cell.hidden_size, 0.0), c(cell.hidden_size, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t t = reversed ? n - 1 - s : s;
    std::vector<double> x(seq.data.begin() + static_cast<std::ptrdiff_t>(t * dim),
                          seq.data.begin() + static_cast<std::ptrdiff_t>((t + 1) * dim));
    auto a = cell_step(x, h, c, cell);
    h = a.h;
    c = a.c;
    trace.inputs.push_back(std::move(x));
    trace.steps.push_back(std::move(a));
  }
  return trace;
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> lstm_cell_forward(
    const std::vector<double>& x_t, const std::vector<double>& h_prev,
    const std::vector<double>& c_prev, const LstmCellParams& p) {
  auto a = cell_step(x_t, h_prev, c_prev, p);
  return {std::move(a.h), std::move(a.c)};
}

Tensor bilstm_forward(const Tensor& seq, const LstmCellParams& fwd,
                      const LstmCellParams& bwd) {
  if (seq.shape.size() != 2 || seq.shape[0] < 1) throw DataError("bilstm needs a non-empty sequence");
  const std::size_t n = seq.shape[0];
  const std::size_t d = fwd.hidden_size;
  auto ftrace = run_direction(seq, fwd, false);
  auto btrace = run_direction(seq, bwd, true);
  Tensor out({n, 2 * d});
  for (std::size_t t = 0; t < n; ++t) {
    const auto& hf = ftrace.steps[t].h;
    const auto& hb = btrace.steps[n - 1 - t].h;  // aligned to position t
    std::copy(hf.begin(), hf.end(), out.data.begin() + static_cast<std::ptrdiff_t>(t * 2 * d));
    std::copy(hb.begin(), hb.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(t * 2 * d + d));
  }
  return out;
}

std::vector<double> dense_softmax(const std::vector<double>& h, const DenseParams& dense) {
  if (h.size() != dense.in) throw DataError("dense input dimension mismatch");
  std::vector<double> logits = dense.b;
  matvec_add(dense.W, h, dense.out, dense.in, logits);
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (auto& p : probs) p /= sum;
  return probs;
}

double cross_entropy(const std::vector<double>& probs, std::size_t label) {
  if (label >= probs.size()) throw DataError("cross_entropy label out of range");
  return -std::log(probs[label] + 1e-12);
}

namespace {

struct ConvStage {
  Tensor input;
  Tensor pre;
  Tensor activated;
  Tensor pooled;
  std::vector<std::size_t> argmax;
};

struct ForwardTrace {
  std::vector<ConvStage> stages;
  Tensor seq;  // [n, channels]
  LstmTrace fwd, bwd;
  std::vector<double> summary;
  std::vector<double> probs;
};

ForwardTrace forward_trace(const std::vector<double>& x, const CnnBiLstmModel& model) {
  const auto& cfg = model.config;
  if (x.size() != cfg.input_dim)
    throw DataError("model input dimension mismatch: expected " +
                    std::to_string(cfg.input_dim) + ", got " + std::to_string(x.size()));
  ForwardTrace trace;
  Tensor cur({1, x.size()});
  cur.data = x;
  for (const auto& conv : model.conv_layers) {
    ConvStage stage;
    stage.input = cur;
    stage.pre = conv1d_preact(cur, conv);
    stage.activated = relu(stage.pre);
    auto [pooled, argmax] = maxpool1d(stage.activated, cfg.pool_window, cfg.pool_stride);
    stage.pooled = std::move(pooled);
    stage.argmax = std::move(argmax);
    cur = stage.pooled;
    trace.stages.push_back(std::move(stage));
  }

  // pooled [channels, length] becomes a length-long sequence of channel vectors
  const std::size_t channels = cur.shape[0];
  const std::size_t n = cur.shape[1];
  trace.seq = Tensor({n, channels});
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t c = 0; c < channels; ++c)
      trace.seq.data[t * channels + c] = cur.data[c * n + t];

  trace.fwd = run_direction(trace.seq, model.forward_cell, false);
  trace.bwd = run_direction(trace.seq, model.backward_cell, true);

  // final summary: forward state at t=n, backward state at t=1
  trace.summary = trace.fwd.steps.back().h;
  const auto& hb = trace.bwd.steps.back().h;
  trace.summary.insert(trace.summary.end(), hb.begin(), hb.end());
  trace.probs = dense_softmax(trace.summary, model.dense);
  return trace;
}

// BPTT through one direction. d_last is the gradient injected at the final
// processed step. Returns gradient w.r.t. the inputs in processing order.
std::vector<std::vector<double>> lstm_backward(const LstmTrace& trace,
                                               const LstmCellParams& p,
                                               const std::vector<double>& d_last,
                                               LstmCellParams& grads) {
  const std::size_t steps = trace.steps.size();
  const std::size_t d = p.hidden_size;
  const std::size_t in = p.input_size;
  std::vector<std::vector<double>> dx(steps, std::vector<double>(in, 0.0));
  std::vector<double> dh(d_last), dc(d, 0.0);

  for (std::size_t s = steps; s-- > 0;) {
    const auto& a = trace.steps[s];
    const std::vector<double>& h_prev =
        s > 0 ? trace.steps[s - 1].h : std::vector<double>(d, 0.0);
    const std::vector<double>& c_prev =
        s > 0 ? trace.steps[s - 1].c : std::vector<double>(d, 0.0);

    std::vector<double> da_i(d), da_f(d), da_g(d), da_o(d), dc_prev(d);
    for (std::size_t j = 0; j < d; ++j) {
      double tc = std::tanh(a.c[j]);
      double do_ = dh[j] * tc;
      double dcj = dc[j] + dh[j] * a.o[j] * (1.0 - tc * tc);
      double di = dcj * a.g[j];
      double df = dcj * c_prev[j];
      double dg = dcj * a.i[j];
      da_i[j] = di * a.i[j] * (1.0 - a.i[j]);
      da_f[j] = df * a.f[j] * (1.0 - a.f[j]);
      da_o[j] = do_ * a.o[j] * (1.0 - a.o[j]);
      da_g[j] = dg * (1.0 - a.g[j] * a.g[j]);
      // every peephole reads c_prev
      dc_prev[j] = dcj * a.f[j] + da_i[j] * p.w_ci[j] + da_f[j] * p.w_cf[j] +
                   da_o[j] * p.w_co[j];
      grads.w_ci[j] += da_i[j] * c_prev[j];
      grads.w_cf[j] += da_f[j] * c_prev[j];
      grads.w_co[j] += da_o[j] * c_prev[j];
      grads.b_i[j] += da_i[j];
      grads.b_f[j] += da_f[j];
      grads.b_c[j] += da_g[j];
      grads.b_o[j] += da_o[j];
    }
    const auto& x = trace.inputs[s];
    outer_add(grads.W_xi, da_i, x, d, in);
    outer_add(grads.W_xf, da_f, x, d, in);
    outer_add(grads.W_xc, da_g, x, d, in);
    outer_add(grads.W_xo, da_o, x, d, in);
    outer_add(grads.W_hi, da_i, h_prev, d, d);
    outer_add(grads.W_hf, da_f, h_prev, d, d);
    outer_add(grads.W_hc, da_g, h_prev, d, d);
    outer_add(grads.W_ho, da_o, h_prev, d, d);

    matvec_t_add(p.W_xi, da_i, d, in, dx[s]);
    matvec_t_add(p.W_xf, da_f, d, in, dx[s]);
    matvec_t_add(p.W_xc, da_g, d, in, dx[s]);
    matvec_t_add(p.W_xo, da_o, d, in, dx[s]);

    std::vector<double> dh_prev(d, 0.0);
    matvec_t_add(p.W_hi, da_i, d, d, dh_prev);
    matvec_t_add(p.W_hf, da_f, d, d, dh_prev);
    matvec_t_add(p.W_hc, da_g, d, d, dh_prev);
    matvec_t_add(p.W_ho, da_o, d, d, dh_prev);
    dh = std::move(dh_prev);
    dc = std::move(dc_prev);
  }
  return dx;
}

}  // namespace

std::vector<double> model_forward(const std::vector<double>& x, const CnnBiLstmModel& model) {
  return forward_trace(x, model).probs;
}

BackwardResult model_backward(const std::vector<double>& x, std::size_t label,
                              const CnnBiLstmModel& model) {
  auto trace = forward_trace(x, model);
  BackwardResult result;
  result.probs = trace.probs;
  result.loss = cross_entropy(trace.probs, label);
  result.grads = zeroed_like(model);

  const std::size_t d = model.config.hidden_size;
  // softmax + cross-entropy
  std::vector<double> dlogits = trace.probs;
  dlogits[label] -= 1.0;
  // exact gradient of -log(p + eps) is p/(p+eps) * (p - onehot); the epsilon
  // correction matters for the finite-difference check
  double scale = trace.probs[label] / (trace.probs[label] + 1e-12);
  for (auto& v : dlogits) v *= scale;

  outer_add(result.grads.dense.W, dlogits, trace.summary, model.dense.out, model.dense.in);
  for (std::size_t i = 0; i < model.dense.out; ++i) result.grads.dense.b[i] += dlogits[i];
  std::vector<double> dsummary(model.dense.in, 0.0);
  matvec_t_add(model.dense.W, dlogits, model.dense.out, model.dense.in, dsummary);

  std::vector<double> d_fwd_last(dsummary.begin(), dsummary.begin() + static_cast<std::ptrdiff_t>(d));
  std::vector<double> d_bwd_last(dsummary.begin() + static_cast<std::ptrdiff_t>(d), dsummary.end());

  auto dx_fwd = lstm_backward(trace.fwd, model.forward_cell, d_fwd_last,
                              result.grads.forward_cell);
  auto dx_bwd = lstm_backward(trace.bwd, model.backward_cell, d_bwd_last,
                              result.grads.backward_cell);

  const std::size_t n = trace.seq.shape[0];
  const std::size_t channels = trace.seq.shape[1];
  // dSeq[t] = dx from forward step t plus backward step n-1-t
  Tensor dpooled({channels, n});
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t c = 0; c < channels; ++c)
      dpooled.data[c * n + t] = dx_fwd[t][c] + dx_bwd[n - 1 - t][c];

  // back through conv stages in reverse
  for (std::size_t si = trace.stages.size(); si-- > 0;) {
    const auto& stage = trace.stages[si];
    const auto& conv = model.conv_layers[si];
    auto& gconv = result.grads.conv_layers[si];

    // pool backward: route to argmax
    const std::size_t act_len = stage.activated.shape[1];
    const std::size_t pool_len = stage.pooled.shape[1];
    Tensor dact({stage.activated.shape[0], act_len});
    for (std::size_t c = 0; c < stage.activated.shape[0]; ++c)
      for (std::size_t t = 0; t < pool_len; ++t)
        dact.data[c * act_len + stage.argmax[c * pool_len + t]] +=
            dpooled.data[c * pool_len + t];

    // relu backward
    for (std::size_t i = 0; i < dact.data.size(); ++i)
      if (stage.pre.data[i] <= 0.0) dact.data[i] = 0.0;

    // conv backward
    const std::size_t in_len = stage.input.shape[1];
    const std::size_t out_len = stage.pre.shape[1];
    Tensor dinput({conv.in_channels, in_len});
    for (std::size_t oc = 0; oc < conv.out_channels; ++oc) {
      for (std::size_t t = 0; t < out_len; ++t) {
        double g = dact.data[oc * out_len + t];
        if (g == 0.0) continue;
        gconv.bias[oc] += g;
        for (std::size_t ic = 0; ic < conv.in_channels; ++ic) {
          double* gk = gconv.kernels.data() + (oc * conv.in_channels + ic) * conv.width;
          const double* k = conv.kernels.data() + (oc * conv.in_channels + ic) * conv.width;
          const double* in = stage.input.data.data() + ic * in_len + t * conv.stride;
          double* din = dinput.data.data() + ic * in_len + t * conv.stride;
          for (std::size_t w = 0; w < conv.width; ++w) {
            gk[w] += g * in[w];
            din[w] += g * k[w];
          }
        }
      }
    }
    dpooled = std::move(dinput);
  }
  return result;
}

void adam_step(CnnBiLstmModel& params, const Gradients& grads, AdamState& state) {
  const std::size_t total = parameter_count(params);
  if (state.m.empty()) {
    state.m.assign(total, 0.0);
    state.v.assign(total, 0.0);
  }
  if (state.m.size() != total) throw InternalError("adam state size mismatch");

  // flatten gradients in the same visitation order
  std::vector<const std::vector<double>*> gtensors;
  for_each_tensor(const_cast<Gradients&>(grads),
                  [&](std::vector<double>& t) { gtensors.push_back(&t); });

  state.t += 1;
  const double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  std::size_t offset = 0;
  std::size_t which = 0;
  for_each_tensor(params, [&](std::vector<double>& t) {
    const auto& g = *gtensors[which++];
    if (g.size() != t.size()) throw InternalError("gradient tensor shape mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) {
      double gi = g[i];
      state.m[offset + i] = state.beta1 * state.m[offset + i] + (1.0 - state.beta1) * gi;
      state.v[offset + i] = state.beta2 * state.v[offset + i] + (1.0 - state.beta2) * gi * gi;
      double mhat = state.m[offset + i] / b1t;
      double vhat = state.v[offset + i] / b2t;
      t[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
    offset += t.size();
  });
}

void save_checkpoint(const CnnBiLstmModel& model, const std::filesystem::path& path) {
  nlohmann::json cfg{{"input_dim", model.config.input_dim},
                     {"conv_channels", model.config.conv_channels},
                     {"kernel_width", model.config.kernel_width},
                     {"conv_stride", model.config.conv_stride},
                     {"pool_window", model.config.pool_window},
                     {"pool_stride", model.config.pool_stride},
                     {"hidden_size", model.config.hidden_size},
                     {"class_count", model.config.class_count}};
  std::string blob = cfg.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  const char magic[4] = {'C', 'B', 'L', 'M'};
  std::uint32_t version = 1;
  std::uint32_t len = static_cast<std::uint32_t>(blob.size());
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  for_each_tensor(const_cast<CnnBiLstmModel&>(model), [&](std::vector<double>& t) {
    for (double v : t) {
      float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  });
}

CnnBiLstmModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint: " + path.string());
  char magic[4];
  std::uint32_t version = 0, len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&len), 4);
  if (!in || std::string(magic, 4) != "CBLM" || version != 1)
    throw DataError("bad checkpoint file: " + path.string());
  std::string blob(len, '\0');
  in.read(blob.data(), len);
  auto cfg_json = nlohmann::json::parse(blob);
  ModelConfig cfg;
  cfg.input_dim = cfg_json.at("input_dim").get<std::size_t>();
  cfg.conv_channels = cfg_json.at("conv_channels").get<std::vector<std::size_t>>();
  cfg.kernel_width = cfg_json.at("kernel_width").get<std::size_t>();
  cfg.conv_stride = cfg_json.at("conv_stride").get<std::size_t>();
  cfg.pool_window = cfg_json.at("pool_window").get<std::size_t>();
  cfg.pool_stride = cfg_json.at("pool_stride").get<std::size_t>();
  cfg.hidden_size = cfg_json.at("hidden_size").get<std::size_t>();
  cfg.class_count = cfg_json.at("class_count").get<std::size_t>();

  CnnBiLstmModel model = init_model(cfg, 0);
  for_each_tensor(model, [&](std::vector<double>& t) {
    for (auto& v : t) {
      float f;
      in.read(reinterpret_cast<char*>(&f), 4);
      v = f;
    }
  });
  if (!in) throw DataError("truncated checkpoint: " + path.string());
  return model;
}

}  // namespace malfuse::nn
