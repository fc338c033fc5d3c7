#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "hcl/rng.hpp"
#include "hcl/tensor.hpp"

// Central finite-difference gradient checking, independent of the tape: the
// loss closure re-runs the forward pass from scratch for each probe.
namespace testsupport {

struct FdOptions {
  double step = 1e-5;
  double rtol = 1e-4;
  // probe at most this many coordinates per tensor (0 = all)
  int max_coords = 0;
};

struct FdReport {
  double max_rel_err = 0.0;
  long coords_checked = 0;
};

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

// `loss` must evaluate the scalar objective from current tensor values.
// `grads` must already hold the analytic gradient for each tensor in `params`.
inline FdReport check_gradients(std::vector<hcl::Tensor<double>> params,
                                const std::function<double()>& loss, const FdOptions& opt,
                                hcl::Rng& rng) {
  FdReport rep;
  for (auto& p : params) {
    const hcl::Index n = p.numel();
    std::vector<hcl::Index> coords;
    if (opt.max_coords <= 0 || n <= opt.max_coords) {
      coords.resize(static_cast<std::size_t>(n));
      for (hcl::Index i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      for (int i = 0; i < opt.max_coords; ++i)
        coords.push_back(rng.uniform_int(0, n - 1));
    }
    for (hcl::Index idx : coords) {
      const double orig = p.values()[idx];
      p.values()[idx] = orig + opt.step;
      const double fp = loss();
      p.values()[idx] = orig - opt.step;
      const double fm = loss();
      p.values()[idx] = orig;
      const double fd = (fp - fm) / (2.0 * opt.step);
      const double an = p.grad()[idx];
      rep.max_rel_err = std::max(rep.max_rel_err, rel_err(an, fd));
      ++rep.coords_checked;
    }
  }
  return rep;
}

}  // namespace testsupport
