#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

// Naive reference implementations used as independent oracles. These are
// deliberately written as direct loops / literal formula transcriptions and
// must stay decoupled from the library code paths they check.
namespace testsupport {

// direct nested-loop convolution, zero or edge-replicate padding
inline Eigen::VectorXd conv2d_ref(const Eigen::VectorXd& x, long Ci, long H, long W,
                                  const Eigen::VectorXd& k, long Co, long kh, long kw,
                                  long stride, long pad, bool replicate) {
  const long Ho = (H + 2 * pad - kh) / stride + 1;
  const long Wo = (W + 2 * pad - kw) / stride + 1;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(Co * Ho * Wo);
  auto clampi = [](long v, long n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };
  for (long co = 0; co < Co; ++co)
    for (long oy = 0; oy < Ho; ++oy)
      for (long ox = 0; ox < Wo; ++ox) {
        double acc = 0.0;
        for (long ci = 0; ci < Ci; ++ci)
          for (long dy = 0; dy < kh; ++dy)
            for (long dx = 0; dx < kw; ++dx) {
              const long iy = oy * stride + dy - pad;
              const long ix = ox * stride + dx - pad;
              double v = 0.0;
              if (replicate) {
                v = x[ci * H * W + clampi(iy, H) * W + clampi(ix, W)];
              } else if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
                v = x[ci * H * W + iy * W + ix];
              }
              acc += k[((co * Ci + ci) * kh + dy) * kw + dx] * v;
            }
        out[(co * Ho + oy) * Wo + ox] = acc;
      }
  return out;
}

// direct per-window mean
inline Eigen::VectorXd avg_pool2d_ref(const Eigen::VectorXd& x, long C, long H, long W,
                                      long window, long stride) {
  const long Ho = (H - window) / stride + 1;
  const long Wo = (W - window) / stride + 1;
  Eigen::VectorXd out(C * Ho * Wo);
  for (long c = 0; c < C; ++c)
    for (long oy = 0; oy < Ho; ++oy)
      for (long ox = 0; ox < Wo; ++ox) {
        double acc = 0.0;
        for (long dy = 0; dy < window; ++dy)
          for (long dx = 0; dx < window; ++dx)
            acc += x[c * H * W + (oy * stride + dy) * W + (ox * stride + dx)];
        out[(c * Ho + oy) * Wo + ox] = acc / double(window * window);
      }
  return out;
}

// index-map nearest upsampling
inline Eigen::VectorXd upsample2x_ref(const Eigen::VectorXd& x, long C, long H, long W) {
  Eigen::VectorXd out(C * 4 * H * W);
  for (long c = 0; c < C; ++c)
    for (long y = 0; y < 2 * H; ++y)
      for (long xx = 0; xx < 2 * W; ++xx)
        out[c * 4 * H * W + y * 2 * W + xx] = x[c * H * W + (y / 2) * W + xx / 2];
  return out;
}

// explicit dot products
inline Eigen::VectorXd linear_ref(const Eigen::VectorXd& x, const Eigen::VectorXd& w, long m,
                                  long n, const Eigen::VectorXd& b) {
  Eigen::VectorXd out(m);
  for (long i = 0; i < m; ++i) {
    double acc = b[i];
    for (long j = 0; j < n; ++j) acc += w[i * n + j] * x[j];
    out[i] = acc;
  }
  return out;
}

// literal contrastive loss: -log( sim(q,k) / (sim(q,k) + sum sim(q,g_i)) )
// in naive arithmetic
inline double info_nce_ref(const Eigen::VectorXd& q, const Eigen::VectorXd& k,
                           const std::vector<Eigen::VectorXd>& gallery, double temperature) {
  auto sim = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return std::exp(a.dot(b) / temperature);
  };
  double denom = sim(q, k);
  for (const auto& g : gallery) denom += sim(q, g);
  return -std::log(sim(q, k) / denom);
}

// reference FIFO over a plainly-grown list: keeps the most recent `capacity`
// rows in insertion order
class RingBufferRef {
 public:
  explicit RingBufferRef(std::size_t capacity) : capacity_(capacity) {}
  void push(const Eigen::VectorXd& row) {
    rows_.push_back(row);
    if (rows_.size() > capacity_) rows_.erase(rows_.begin(), rows_.begin() + (rows_.size() - capacity_));
  }
  const std::vector<Eigen::VectorXd>& rows() const { return rows_; }

 private:
  std::size_t capacity_;
  std::vector<Eigen::VectorXd> rows_;
};

}  // namespace testsupport
