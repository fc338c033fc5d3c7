#pragma once

#include <functional>
#include <string>
#include <vector>

#include "finite_diff.hpp"
#include "hcl/ops.hpp"
#include "hcl/rng.hpp"

// Finite-difference sweeps over every differentiable primitive, shared by the
// unit tests and the acceptance suite.
namespace testsupport {

using hcl::Tensor;
using D = double;

inline Tensor<D> random_tensor(hcl::Shape shape, hcl::Rng& rng, bool requires_grad,
                               double scale = 1.0) {
  Tensor<D> t = Tensor<D>::zeros(std::move(shape), requires_grad);
  for (hcl::Index i = 0; i < t.numel(); ++i) t.values()[i] = rng.normal() * scale;
  return t;
}

// A gradient-check instance: probed tensors plus a scalar objective that can
// be evaluated plain (for finite differences) or with backprop (for the
// analytic gradients).
struct GradInstance {
  std::vector<Tensor<D>> params;
  std::function<double(bool backprop)> run;

  double eval() const { return run(false); }
  void backprop() {
    for (auto& p : params) p.zero_grad();
    run(true);
  }
};

using GradCaseMaker = std::function<GradInstance(hcl::Rng&)>;

struct OpGradCase {
  std::string name;
  GradCaseMaker make;
};

// weighted readout against a fixed random vector, so per-element gradients differ
inline Tensor<D> weighted_readout(hcl::Tape<D>& tape, const Tensor<D>& x,
                                  const Tensor<D>& weights) {
  auto flat = hcl::ops::reshape(tape, x, {x.numel()});
  return hcl::ops::dot(tape, flat, weights);
}

inline std::vector<OpGradCase> op_grad_cases() {
  using namespace hcl;
  std::vector<OpGradCase> cases;

  cases.push_back({"conv2d", [](Rng& rng) {
    GradInstance gi;
    const int Ci = int(rng.uniform_int(1, 3)), Co = int(rng.uniform_int(1, 3));
    const int H = int(rng.uniform_int(3, 6)), W = int(rng.uniform_int(3, 6));
    const int kh = int(rng.uniform_int(1, 3)), kw = int(rng.uniform_int(1, 3));
    const int stride = int(rng.uniform_int(1, 2)), pad = int(rng.uniform_int(0, 1));
    const auto mode = rng.bernoulli() ? ops::PadMode::Zero : ops::PadMode::Replicate;
    const bool with_bias = rng.bernoulli();
    auto x = random_tensor({Ci, H, W}, rng, true);
    auto k = random_tensor({Co, Ci, kh, kw}, rng, true);
    auto b = with_bias ? random_tensor({Co}, rng, true) : Tensor<D>();
    const Index Ho = (H + 2 * pad - kh) / stride + 1;
    const Index Wo = (W + 2 * pad - kw) / stride + 1;
    auto r = random_tensor({Co * Ho * Wo}, rng, false);
    gi.params = {x, k};
    if (with_bias) gi.params.push_back(b);
    gi.run = [=](bool bp) {
      Tape<D> t;
      auto out = ops::conv2d(t, x, k, b, stride, pad, mode);
      auto obj = weighted_readout(t, out, r);
      if (bp) t.backward(obj);
      return obj.value();
    };
    return gi;
  }});

  cases.push_back({"avg_pool2d", [](Rng& rng) {
    GradInstance gi;
    const int H = int(rng.uniform_int(3, 7)), W = int(rng.uniform_int(3, 7));
    const int C = int(rng.uniform_int(1, 3));
    const int window = int(rng.uniform_int(1, std::min(H, W)));
    const int stride = int(rng.uniform_int(1, 2));
    auto x = random_tensor({C, H, W}, rng, true);
    const hcl::Index Ho = (H - window) / stride + 1, Wo = (W - window) / stride + 1;
    auto r = random_tensor({C * Ho * Wo}, rng, false);
    gi.params = {x};
    gi.run = [=](bool bp) {
      Tape<D> t;
      auto out = ops::avg_pool2d(t, x, window, stride);
      auto obj = weighted_readout(t, out, r);
      if (bp) t.backward(obj);
      return obj.value();
    };
    return gi;
  }});

  cases.push_back({"upsample_nearest2x", [](Rng& rng) {
    GradInstance gi;
    const int H = int(rng.uniform_int(1, 4)), W = int(rng.uniform_int(1, 4));
    const int C = int(rng.uniform_int(1, 3));
    auto x = random_tensor({C, H, W}, rng, true);
    auto r = random_tensor({C * 4 * H * W}, rng, false);
    gi.params = {x};
    gi.run = [=](bool bp) {
      Tape<D> t;
      auto out = ops::upsample_nearest2x(t, x);
      auto obj = weighted_readout(t, out, r);
      if (bp) t.backward(obj);
      return obj.value();
    };
    return gi;
  }});

  cases.push_back({"linear", [](Rng& rng) {
    GradInstance gi;
    const int n = int(rng.uniform_int(1, 6)), m = int(rng.uniform_int(1, 6));
    auto x = random_tensor({n}, rng, true);
    auto w = random_tensor({m, n}, rng, true);
    auto b = random_tensor({m}, rng, true);
    auto r = random_tensor({m}, rng, false);
    gi.params = {x, w, b};
    gi.run = [=](bool bp) {
      Tape<D> t;
      auto out = ops::linear(t, x, w, b);
      auto obj = weighted_readout(t, out, r);
      if (bp) t.backward(obj);
      return obj.value();
    };
    return gi;
  }});

  cases.push_back({"group_norm", [](Rng& rng) {
    GradInstance gi;
    const int groups = int(rng.uniform_int(1, 3));
    const int C = groups * int(rng.uniform_int(1, 3));
    const int H = int(rng.uniform_int(2, 4)), W = int(rng.uniform_int(2, 4));
    auto x = random_tensor({C, H, W}, rng, true);
    auto gamma = random_tensor({C}, rng, true);
    auto beta = random_tensor({C}, rng, true);
    auto r = random_tensor({C * H * W}, rng, false);
    gi.params = {x, gamma, beta};
    gi.run = [=](bool bp) {
      Tape<D> t;
      auto out = ops::group_norm(t, x, groups, gamma, beta, 1e-5);
      auto obj = weighted_readout(t, out, r);
      if (bp) t.backward(obj);
      return obj.value();
    };
    return gi;
  }});

  cases.push_back({"l2_normalize", [](Rng& rng) {
    GradInstance gi;
    const int n = int(rng.uniform_int(2, 8));
    auto v = random_tensor({n}, rng, true);
    if (v.values().norm() < 0.5) v.values()[0] += 1.0;  // keep away from the eps kink
    auto r = random_tensor({n}, rng, false);
    gi.params = {v};
    gi.run = [=](bool bp) {
      Tape<D> t;
      auto out = ops::l2_normalize(t, v, 1e-12);
      auto obj = weighted_readout(t, out, r);
      if (bp) t.backward(obj);
      return obj.value();
    };
    return gi;
  }});

  cases.push_back({"relu", [](Rng& rng) {
    GradInstance gi;
    const int n = int(rng.uniform_int(2, 12));
    auto x = random_tensor({n}, rng, true);
    for (hcl::Index i = 0; i < x.numel(); ++i)  // keep probes away from the hinge
      if (std::abs(x.values()[i]) < 1e-3) x.values()[i] = 0.25;
    auto r = random_tensor({n}, rng, false);
    gi.params = {x};
    gi.run = [=](bool bp) {
      Tape<D> t;
      auto out = ops::relu(t, x);
      auto obj = weighted_readout(t, out, r);
      if (bp) t.backward(obj);
      return obj.value();
    };
    return gi;
  }});

  cases.push_back({"add_concat_scale_sum_dot", [](Rng& rng) {
    GradInstance gi;
    const int n = int(rng.uniform_int(2, 6));
    auto a = random_tensor({n}, rng, true);
    auto b = random_tensor({n}, rng, true);
    auto c = random_tensor({n + 1}, rng, true);
    auto r = random_tensor({2 * n + 1}, rng, false);
    const double s = rng.uniform(0.5, 2.0);
    gi.params = {a, b, c};
    gi.run = [=](bool bp) {
      Tape<D> t;
      auto sum_ab = ops::add(t, a, b);
      auto scaled = ops::scale(t, sum_ab, s);
      auto cat = ops::concat(t, scaled, c);
      auto d1 = ops::dot(t, cat, r);
      auto d2 = ops::sum(t, cat);
      auto obj = ops::add(t, d1, d2);
      if (bp) t.backward(obj);
      return obj.value();
    };
    return gi;
  }});

  return cases;
}

struct SuiteResult {
  double max_rel_err = 0.0;
  long coords = 0;
  bool ok(double rtol) const { return max_rel_err < rtol; }
};

inline void check_instance(GradInstance& gi, std::uint64_t probe_seed, const FdOptions& opt,
                           SuiteResult& res) {
  gi.backprop();
  hcl::Rng probe_rng(probe_seed);
  auto rep = check_gradients(gi.params, [&gi]() { return gi.eval(); }, opt, probe_rng);
  res.max_rel_err = std::max(res.max_rel_err, rep.max_rel_err);
  res.coords += rep.coords_checked;
}

// `instances` random instances of every primitive op.
inline SuiteResult run_op_grad_suite(int instances, std::uint64_t seed, double rtol = 1e-4) {
  SuiteResult res;
  hcl::Rng rng(seed);
  FdOptions opt;
  opt.rtol = rtol;
  for (auto& c : op_grad_cases()) {
    for (int i = 0; i < instances; ++i) {
      auto gi = c.make(rng);
      check_instance(gi, hcl::mix_seed(seed, 0x517 + std::uint64_t(i)), opt, res);
    }
  }
  return res;
}

}  // namespace testsupport
