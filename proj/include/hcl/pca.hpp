#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "hcl/tensor.hpp"

namespace hcl::eval {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Stops when the
// largest off-diagonal magnitude falls below off_tol relative to the input
// scale, or after max_sweeps sweeps. Dimensions here are at most a few
// hundred, where Jacobi is simple and accurate to machine precision.
inline void jacobi_eigen_symmetric(Eigen::MatrixXd a, Eigen::VectorXd& eigenvalues,
                                   Eigen::MatrixXd& eigenvectors, double off_tol = 1e-10,
                                   int max_sweeps = 100) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw ShapeError("jacobi: matrix must be square");
  eigenvectors = Eigen::MatrixXd::Identity(n, n);
  if (n == 1) {
    eigenvalues = a.diagonal();
    return;
  }
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double tol = off_tol * scale;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off_max = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off_max = std::max(off_max, std::abs(a(p, q)));
    if (off_max <= tol) break;

    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // two-sided rotation on (p, q)
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = eigenvectors(k, p), vkq = eigenvectors(k, q);
          eigenvectors(k, p) = c * vkp - s * vkq;
          eigenvectors(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  eigenvalues = a.diagonal();
}

// Per-branch compression model: mean, orthonormal components (rows), and the
// matching eigenvalues in non-increasing order.
struct PCAProjector {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;          // d_out x d
  Eigen::VectorXd explained_variance;  // d_out, non-increasing

  Eigen::Index in_dim() const { return mean.size(); }
  Eigen::Index out_dim() const { return components.rows(); }
};

// Mean-centered sample-covariance eigendecomposition; components are the top
// d_out eigenvectors by eigenvalue. Eigenvector signs are canonicalized so
// the largest-magnitude entry is positive.
inline PCAProjector fit_pca(const Eigen::MatrixXd& rows, int d_out) {
  const Eigen::Index n = rows.rows(), d = rows.cols();
  if (n < 2) throw ShapeError("fit_pca: need at least 2 samples");
  if (d_out < 1 || d_out > std::min(n, d))
    throw ShapeError("fit_pca: d_out " + std::to_string(d_out) + " not in [1, min(n,d)] = [1, " +
                     std::to_string(std::min(n, d)) + "]");
  PCAProjector proj;
  proj.mean = rows.colwise().mean();
  Eigen::MatrixXd centered = rows.rowwise() - proj.mean.transpose();
  Eigen::MatrixXd cov = (centered.adjoint() * centered) / double(n - 1);

  Eigen::VectorXd evals;
  Eigen::MatrixXd evecs;
  jacobi_eigen_symmetric(cov, evals, evecs);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return evals[i] > evals[j]; });

  proj.components.resize(d_out, d);
  proj.explained_variance.resize(d_out);
  for (int r = 0; r < d_out; ++r) {
    Eigen::VectorXd v = evecs.col(order[static_cast<std::size_t>(r)]);
    Eigen::Index peak;
    v.cwiseAbs().maxCoeff(&peak);
    if (v[peak] < 0) v = -v;
    proj.components.row(r) = v.transpose();
    proj.explained_variance[r] = evals[order[static_cast<std::size_t>(r)]];
  }
  return proj;
}

inline Eigen::VectorXd project(const PCAProjector& proj, const Eigen::VectorXd& v,
                               bool renormalize) {
  if (v.size() != proj.in_dim())
    throw ShapeError("project: vector dim " + std::to_string(v.size()) + " != projector dim " +
                     std::to_string(proj.in_dim()));
  Eigen::VectorXd out = proj.components * (v - proj.mean);
  if (renormalize) {
    const double norm = out.norm();
    out /= std::max(norm, 1e-12);
  }
  return out;
}

inline Eigen::VectorXd reconstruct(const PCAProjector& proj, const Eigen::VectorXd& coords) {
  if (coords.size() != proj.out_dim()) throw ShapeError("reconstruct: coordinate dim mismatch");
  return proj.mean + proj.components.transpose() * coords;
}

}  // namespace hcl::eval
