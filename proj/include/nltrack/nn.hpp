#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace nltrack::nn {

using Vec = std::vector<double>;

// Parameters live as float32 values held in doubles: all arithmetic runs in
// double, checkpoints store the values losslessly as 32-bit floats.
double as_f32(double v);
void quantize_f32(Vec& v);

struct ParamBlock {
  std::string name;
  std::vector<int> shape;
  Vec w;
  Vec g;

  ParamBlock() = default;
  ParamBlock(std::string n, std::vector<int> s);
  std::size_t size() const { return w.size(); }
  void zero_grad();
};

std::uint64_t block_hash(const ParamBlock& b);

struct Rng {
  std::mt19937_64 eng;
  explicit Rng(std::uint64_t seed) : eng(seed) {}
  double uniform(double lo, double hi);
  int uniform_int(int lo, int hi);  // inclusive bounds
};

// Fan-in scaled uniform init, quantized to f32 values.
void init_uniform(ParamBlock& p, double scale, Rng& rng);

double sigmoid(double x);
double smooth_l1(double x);
double smooth_l1_grad(double x);

// Per-parameter accumulated squared gradients, fixed base learning rate.
struct AdaGrad {
  double lr = 0.01;
  double eps = 1e-8;
  // Starting the accumulator above zero keeps the first updates proportional
  // to the gradients; with a zero start every parameter's first step is a
  // full-size +-lr sign step, which buries small consistent gradients under
  // churn on high-dimensional weakly-informative inputs.
  double accum_init = 0.1;
  std::vector<Vec> accum;

  void step(const std::vector<ParamBlock*>& params);
};

// 2-D convolution over channel-last (H x W x C) data, "same" padding k/2.
struct Conv2d {
  ParamBlock w;  // [out_ch, k, k, in_ch]
  ParamBlock b;  // [out_ch]
  int in_ch = 0, out_ch = 0, k = 3, stride = 1;

  Conv2d() = default;
  Conv2d(const std::string& name, int in_c, int out_c, int kernel, int s);

  int out_dim(int in) const { return (in + 2 * (k / 2) - k) / stride + 1; }
  void forward(const Vec& x, int h, int w_in, Vec& y) const;
  // Accumulates parameter grads; dx may be null when input grads are unneeded.
  void backward(const Vec& x, int h, int w_in, const Vec& dy, Vec* dx);
};

struct Linear {
  ParamBlock w;  // [out, in]
  ParamBlock b;  // [out]
  int in = 0, out = 0;

  Linear() = default;
  Linear(const std::string& name, int in_dim, int out_dim);

  void forward(const Vec& x, Vec& y) const;
  void backward(const Vec& x, const Vec& dy, Vec* dx);
};

// Standard LSTM cell, gate order (i, f, g, o). Forget-gate bias starts at 1.
struct LstmCell {
  ParamBlock wx;  // [4*hidden, in]
  ParamBlock wh;  // [4*hidden, hidden]
  ParamBlock b;   // [4*hidden]
  int in = 0, hidden = 0;

  LstmCell() = default;
  LstmCell(const std::string& name, int in_dim, int hidden_dim);
  void init(double scale, Rng& rng);

  struct Cache {
    Vec x, h_prev, c_prev;
    Vec gates;  // post-activation, 4*hidden
    Vec c, h, tanh_c;
  };

  void forward(const Vec& x, const Vec& h_prev, const Vec& c_prev,
               Cache& cache) const;
  // dh/dc are grads w.r.t. the step outputs; outputs for the previous step
  // are accumulated into dh_prev/dc_prev, input grads into dx (if non-null).
  void backward(const Cache& cache, const Vec& dh, const Vec& dc, Vec* dx,
                Vec& dh_prev, Vec& dc_prev);
};

}  // namespace nltrack::nn
