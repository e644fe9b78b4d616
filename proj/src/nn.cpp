#include "nltrack/nn.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace nltrack::nn {

double as_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void quantize_f32(Vec& v) {
  for (double& x : v) x = as_f32(x);
}

ParamBlock::ParamBlock(std::string n, std::vector<int> s)
    : name(std::move(n)), shape(std::move(s)) {
  std::size_t total = 1;
  for (int d : shape) total *= static_cast<std::size_t>(d);
  w.assign(total, 0.0);
  g.assign(total, 0.0);
}

void ParamBlock::zero_grad() { std::fill(g.begin(), g.end(), 0.0); }

std::uint64_t block_hash(const ParamBlock& b) {
  std::uint64_t h = 1469598103934665603ull;
  for (double v : b.w) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

double Rng::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(eng);
}

int Rng::uniform_int(int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(eng);
}

void init_uniform(ParamBlock& p, double scale, Rng& rng) {
  for (double& v : p.w) v = as_f32(rng.uniform(-scale, scale));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (x > 1.0) return 1.0;
  if (x < -1.0) return -1.0;
  return x;
}

void AdaGrad::step(const std::vector<ParamBlock*>& params) {
  if (accum.size() < params.size()) accum.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamBlock& p = *params[i];
    if (accum[i].size() != p.size()) accum[i].assign(p.size(), accum_init);
    for (std::size_t j = 0; j < p.size(); ++j) {
      accum[i][j] += p.g[j] * p.g[j];
      p.w[j] = as_f32(p.w[j] - lr * p.g[j] / (std::sqrt(accum[i][j]) + eps));
    }
  }
}

Conv2d::Conv2d(const std::string& name, int in_c, int out_c, int kernel, int s)
    : w(name + ".w", {out_c, kernel, kernel, in_c}),
      b(name + ".b", {out_c}),
      in_ch(in_c),
      out_ch(out_c),
      k(kernel),
      stride(s) {}

void Conv2d::forward(const Vec& x, int h, int w_in, Vec& y) const {
  const int pad = k / 2;
  const int oh = out_dim(h), ow = out_dim(w_in);
  y.assign(static_cast<std::size_t>(oh) * ow * out_ch, 0.0);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double* yp = &y[(static_cast<std::size_t>(oy) * ow + ox) * out_ch];
      for (int co = 0; co < out_ch; ++co) yp[co] = b.w[co];
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= w_in) continue;
          const double* xp = &x[(static_cast<std::size_t>(iy) * w_in + ix) * in_ch];
          for (int co = 0; co < out_ch; ++co) {
            const double* wp =
                &w.w[((static_cast<std::size_t>(co) * k + ky) * k + kx) * in_ch];
            double acc = 0.0;
            for (int ci = 0; ci < in_ch; ++ci) acc += wp[ci] * xp[ci];
            yp[co] += acc;
          }
        }
      }
    }
  }
}

void Conv2d::backward(const Vec& x, int h, int w_in, const Vec& dy, Vec* dx) {
  const int pad = k / 2;
  const int oh = out_dim(h), ow = out_dim(w_in);
  if (dx) dx->assign(x.size(), 0.0);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const double* dyp = &dy[(static_cast<std::size_t>(oy) * ow + ox) * out_ch];
      for (int co = 0; co < out_ch; ++co) b.g[co] += dyp[co];
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= w_in) continue;
          const std::size_t xoff =
              (static_cast<std::size_t>(iy) * w_in + ix) * in_ch;
          const double* xp = &x[xoff];
          for (int co = 0; co < out_ch; ++co) {
            const double d = dyp[co];
            if (d == 0.0) continue;
            const std::size_t woff =
                ((static_cast<std::size_t>(co) * k + ky) * k + kx) * in_ch;
            double* wg = &w.g[woff];
            for (int ci = 0; ci < in_ch; ++ci) wg[ci] += d * xp[ci];
            if (dx) {
              const double* wp = &w.w[woff];
              double* dxp = &(*dx)[xoff];
              for (int ci = 0; ci < in_ch; ++ci) dxp[ci] += d * wp[ci];
            }
          }
        }
      }
    }
  }
}

Linear::Linear(const std::string& name, int in_dim, int out_dim)
    : w(name + ".w", {out_dim, in_dim}),
      b(name + ".b", {out_dim}),
      in(in_dim),
      out(out_dim) {}

void Linear::forward(const Vec& x, Vec& y) const {
  if (static_cast<int>(x.size()) != in)
    throw std::invalid_argument("Linear::forward: dimension mismatch for " +
                                w.name);
  y.assign(out, 0.0);
  for (int o = 0; o < out; ++o) {
    const double* wp = &w.w[static_cast<std::size_t>(o) * in];
    double acc = b.w[o];
    for (int i = 0; i < in; ++i) acc += wp[i] * x[i];
    y[o] = acc;
  }
}

void Linear::backward(const Vec& x, const Vec& dy, Vec* dx) {
  if (dx) dx->assign(in, 0.0);
  for (int o = 0; o < out; ++o) {
    const double d = dy[o];
    b.g[o] += d;
    if (d == 0.0) continue;
    double* wg = &w.g[static_cast<std::size_t>(o) * in];
    for (int i = 0; i < in; ++i) wg[i] += d * x[i];
    if (dx) {
      const double* wp = &w.w[static_cast<std::size_t>(o) * in];
      for (int i = 0; i < in; ++i) (*dx)[i] += d * wp[i];
    }
  }
}

LstmCell::LstmCell(const std::string& name, int in_dim, int hidden_dim)
    : wx(name + ".wx", {4 * hidden_dim, in_dim}),
      wh(name + ".wh", {4 * hidden_dim, hidden_dim}),
      b(name + ".b", {4 * hidden_dim}),
      in(in_dim),
      hidden(hidden_dim) {}

void LstmCell::init(double scale, Rng& rng) {
  init_uniform(wx, scale, rng);
  init_uniform(wh, scale, rng);
  // Forget-gate bias at 1 so early training does not wipe the cell state.
  for (int i = hidden; i < 2 * hidden; ++i) b.w[i] = 1.0;
}

void LstmCell::forward(const Vec& x, const Vec& h_prev, const Vec& c_prev,
                       Cache& cache) const {
  if (static_cast<int>(x.size()) != in)
    throw std::invalid_argument("LstmCell::forward: input dimension mismatch");
  cache.x = x;
  cache.h_prev = h_prev;
  cache.c_prev = c_prev;
  Vec pre(4 * hidden, 0.0);
  for (int r = 0; r < 4 * hidden; ++r) {
    const double* wxp = &wx.w[static_cast<std::size_t>(r) * in];
    const double* whp = &wh.w[static_cast<std::size_t>(r) * hidden];
    double acc = b.w[r];
    for (int i = 0; i < in; ++i) acc += wxp[i] * x[i];
    for (int i = 0; i < hidden; ++i) acc += whp[i] * h_prev[i];
    pre[r] = acc;
  }
  cache.gates.assign(4 * hidden, 0.0);
  cache.c.assign(hidden, 0.0);
  cache.h.assign(hidden, 0.0);
  cache.tanh_c.assign(hidden, 0.0);
  for (int j = 0; j < hidden; ++j) {
    const double ig = sigmoid(pre[j]);
    const double fg = sigmoid(pre[hidden + j]);
    const double gg = std::tanh(pre[2 * hidden + j]);
    const double og = sigmoid(pre[3 * hidden + j]);
    cache.gates[j] = ig;
    cache.gates[hidden + j] = fg;
    cache.gates[2 * hidden + j] = gg;
    cache.gates[3 * hidden + j] = og;
    cache.c[j] = fg * c_prev[j] + ig * gg;
    cache.tanh_c[j] = std::tanh(cache.c[j]);
    cache.h[j] = og * cache.tanh_c[j];
  }
}

void LstmCell::backward(const Cache& cache, const Vec& dh, const Vec& dc,
                        Vec* dx, Vec& dh_prev, Vec& dc_prev) {
  Vec dpre(4 * hidden, 0.0);
  dh_prev.assign(hidden, 0.0);
  dc_prev.assign(hidden, 0.0);
  if (dx) dx->assign(in, 0.0);
  for (int j = 0; j < hidden; ++j) {
    const double ig = cache.gates[j];
    const double fg = cache.gates[hidden + j];
    const double gg = cache.gates[2 * hidden + j];
    const double og = cache.gates[3 * hidden + j];
    const double tc = cache.tanh_c[j];
    const double dhj = dh[j];
    double dcj = dc[j] + dhj * og * (1.0 - tc * tc);
    dpre[3 * hidden + j] = dhj * tc * og * (1.0 - og);
    dpre[j] = dcj * gg * ig * (1.0 - ig);
    dpre[hidden + j] = dcj * cache.c_prev[j] * fg * (1.0 - fg);
    dpre[2 * hidden + j] = dcj * ig * (1.0 - gg * gg);
    dc_prev[j] = dcj * fg;
  }
  for (int r = 0; r < 4 * hidden; ++r) {
    const double d = dpre[r];
    b.g[r] += d;
    if (d == 0.0) continue;
    double* wxg = &wx.g[static_cast<std::size_t>(r) * in];
    double* whg = &wh.g[static_cast<std::size_t>(r) * hidden];
    const double* wxp = &wx.w[static_cast<std::size_t>(r) * in];
    const double* whp = &wh.w[static_cast<std::size_t>(r) * hidden];
    for (int i = 0; i < in; ++i) {
      wxg[i] += d * cache.x[i];
      if (dx) (*dx)[i] += d * wxp[i];
    }
    for (int i = 0; i < hidden; ++i) {
      whg[i] += d * cache.h_prev[i];
      dh_prev[i] += d * whp[i];
    }
  }
}

}  // namespace nltrack::nn
