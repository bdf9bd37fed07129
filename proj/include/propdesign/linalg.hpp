#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace propdesign {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

namespace linalg {

/// Moore-Penrose inverse of a symmetric matrix. Eigenvalues at or below
/// rel_cutoff * (largest |eigenvalue|) are treated as zero.
inline Mat pseudo_inverse_sym(const Mat& a, double rel_cutoff = 1e-10) {
  const Eigen::Index n = a.rows();
  if (n == 0) return Mat(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()));
  const Vec& ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  Vec inv = Vec::Zero(n);
  if (top > 0.0) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::abs(ev(i)) > rel_cutoff * top) inv(i) = 1.0 / ev(i);
  }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

/// Smallest eigenvalue <= rel_tol * largest, or largest <= abs_tol.
inline bool is_singular_psd(const Mat& a, double rel_tol = 1e-10, double abs_tol = 1e-14) {
  if (a.rows() == 0) return true;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  return hi <= abs_tol || lo <= rel_tol * hi;
}

inline Vec sym_eigenvalues(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

/// Entrywise comparison relative to the largest magnitude in either matrix.
inline bool approx_equal_rel(const Mat& a, const Mat& b, double tol) {
  const double scale = std::max({1.0, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
  return (a - b).cwiseAbs().maxCoeff() <= tol * scale;
}

}  // namespace linalg
}  // namespace propdesign
