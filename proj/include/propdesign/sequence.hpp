#pragma once

// Treatment sequences, within-block covariance and per-sequence moment matrices.

#include "propdesign/errors.hpp"
#include "propdesign/linalg.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace propdesign {

/// Within-block covariance: either the circulant neighbor form built from rho
/// or an explicit k x k matrix.
struct CovarianceSpec {
  int k = 0;
  double rho = 0.0;
  std::optional<Mat> explicit_sigma;
};

/// Checks symmetry and positive definiteness. Throws NotPositiveDefinite.
inline void validate_sigma(const Mat& sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() < 2)
    throw NotPositiveDefinite("covariance must be square with order >= 2");
  if (!linalg::approx_equal_rel(sigma, sigma.transpose(), 1e-12))
    throw NotPositiveDefinite("covariance is not symmetric");
  const Vec ev = linalg::sym_eigenvalues(sigma);
  const double hi = ev.maxCoeff();
  if (hi <= 0.0 || ev.minCoeff() <= 1e-12 * hi) {
    std::ostringstream os;
    os << "covariance is not positive definite (min eigenvalue " << ev.minCoeff() << ")";
    throw NotPositiveDefinite(os.str());
  }
}

inline Mat build_sigma(const CovarianceSpec& spec) {
  if (spec.k < 2) throw InvalidConfig("block size k must be >= 2");
  Mat sigma;
  if (spec.explicit_sigma) {
    sigma = *spec.explicit_sigma;
    if (sigma.rows() != spec.k || sigma.cols() != spec.k)
      throw NotPositiveDefinite("explicit covariance does not match block size k");
  } else {
    const int k = spec.k;
    sigma = Mat::Identity(k, k);
    for (int i = 0; i < k; ++i) {
      sigma(i, (i + 1) % k) = spec.rho;
      sigma(i, (i + k - 1) % k) = spec.rho;
    }
  }
  validate_sigma(sigma);
  return sigma;
}

/// Sigma^-1 - Sigma^-1 1 1' Sigma^-1 / (1' Sigma^-1 1).
inline Mat b_tilde(const Mat& sigma) {
  validate_sigma(sigma);
  const Eigen::Index k = sigma.rows();
  const Mat inv = sigma.ldlt().solve(Mat::Identity(k, k));
  const Vec w = inv * Vec::Ones(k);
  const Mat b = inv - (w * w.transpose()) / w.sum();
  return 0.5 * (b + b.transpose());
}

/// Sigma = scale * (I + eta 1' + 1 eta'). Under this structure B~ = B_k / scale.
struct TypeH {
  double scale = 1.0;
  Vec eta;
};

inline std::optional<TypeH> detect_type_h(const Mat& sigma, double tol = 1e-10) {
  const Eigen::Index k = sigma.rows();
  if (k < 2) return std::nullopt;
  // Off-diagonal entries must satisfy s_ij = (s_ii + s_jj)/2 - a for one common a > 0.
  const double a = 0.5 * (sigma(0, 0) + sigma(1, 1)) - sigma(0, 1);
  const double mag = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if (a <= tol * mag) return std::nullopt;
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j)
      if (std::abs(0.5 * (sigma(i, i) + sigma(j, j)) - sigma(i, j) - a) > tol * mag) return std::nullopt;
  TypeH h;
  h.scale = a;
  h.eta = (sigma.diagonal().array() - a) / (2.0 * a);
  return h;
}

/// A block sequence of treatment labels 1..t, read circularly.
class Sequence {
 public:
  Sequence() = default;
  explicit Sequence(std::vector<int> labels) : labels_(std::move(labels)) {
    for (int v : labels_)
      if (v < 1) throw ValidationError("treatment labels must be >= 1");
  }

  /// Accepts "11223" (single digits) or "1.10.2" (dot separated).
  static Sequence parse(std::string_view text) {
    std::vector<int> out;
    if (text.find('.') != std::string_view::npos) {
      std::string token;
      std::istringstream is{std::string(text)};
      while (std::getline(is, token, '.')) {
        if (token.empty() || token.find_first_not_of("0123456789") != std::string::npos)
          throw ValidationError("bad sequence: " + std::string(text));
        out.push_back(std::stoi(token));
      }
    } else {
      for (char c : text) {
        if (c < '1' || c > '9') throw ValidationError("bad sequence: " + std::string(text));
        out.push_back(c - '0');
      }
    }
    if (out.empty()) throw ValidationError("empty sequence");
    return Sequence(std::move(out));
  }

  int k() const { return static_cast<int>(labels_.size()); }
  const std::vector<int>& labels() const { return labels_; }
  int operator[](int i) const { return labels_[static_cast<std::size_t>(i)]; }
  /// Circular access: at(-1) is the last plot, at(k) the first.
  int at(int i) const {
    const int n = k();
    return labels_[static_cast<std::size_t>(((i % n) + n) % n)];
  }
  int max_label() const { return labels_.empty() ? 0 : *std::max_element(labels_.begin(), labels_.end()); }
  int distinct() const { return static_cast<int>(std::set<int>(labels_.begin(), labels_.end()).size()); }
  bool is_constant() const { return distinct() <= 1; }

  std::string str() const {
    std::string s;
    const bool digits = max_label() <= 9;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (!digits && i > 0) s += '.';
      s += std::to_string(labels_[i]);
    }
    return s;
  }

  /// Relabel so first occurrences appear as 1, 2, 3, ... (restricted growth form).
  Sequence canonical() const {
    std::vector<int> map(static_cast<std::size_t>(max_label()) + 1, 0);
    int next = 1;
    std::vector<int> out;
    out.reserve(labels_.size());
    for (int v : labels_) {
      auto& m = map[static_cast<std::size_t>(v)];
      if (m == 0) m = next++;
      out.push_back(m);
    }
    return Sequence(std::move(out));
  }

  /// perm[label - 1] is the new label.
  Sequence relabeled(const std::vector<int>& perm) const {
    std::vector<int> out;
    out.reserve(labels_.size());
    for (int v : labels_) out.push_back(perm.at(static_cast<std::size_t>(v - 1)));
    return Sequence(std::move(out));
  }

  Sequence rotated(int by) const {
    std::vector<int> out;
    out.reserve(labels_.size());
    for (int i = 0; i < k(); ++i) out.push_back(at(i + by));
    return Sequence(std::move(out));
  }

  Sequence reversed() const { return Sequence(std::vector<int>(labels_.rbegin(), labels_.rend())); }

  friend bool operator==(const Sequence&, const Sequence&) = default;
  friend auto operator<=>(const Sequence& a, const Sequence& b) { return a.labels_ <=> b.labels_; }

 private:
  std::vector<int> labels_;
};

/// Frequency and circular-adjacency counts of a sequence.
struct SequenceCounts {
  double m = 0.0;   // k^-1 sum_i k_i^2
  int f = 0;        // plots equal to their left neighbor
  int g_count = 0;  // plots equal to their right neighbor
  int h = 0;        // plots whose two neighbors coincide
};

inline SequenceCounts sequence_counts(const Sequence& s) {
  SequenceCounts c;
  const int k = s.k();
  std::vector<int> freq(static_cast<std::size_t>(s.max_label()) + 1, 0);
  for (int i = 0; i < k; ++i) {
    ++freq[static_cast<std::size_t>(s[i])];
    if (s.at(i) == s.at(i - 1)) ++c.f;
    if (s.at(i) == s.at(i + 1)) ++c.g_count;
    if (s.at(i - 1) == s.at(i + 1)) ++c.h;
  }
  double sq = 0.0;
  for (int v : freq) sq += static_cast<double>(v) * v;
  c.m = sq / k;
  return c;
}

/// V = (c_ij), c_ij = trace(G_i' B~ G_j) with G_0 the incidence matrix of the
/// sequence, G_1 its left-neighbor and G_2 its right-neighbor version.
struct SequenceMoments {
  Mat3 V = Mat3::Zero();
  double m = 0.0;
  int f = 0;
  int g_count = 0;
  int h = 0;
};

/// Incidence matrix (k x u) of the treatment in plot i + offset.
inline Mat shifted_incidence(const Sequence& s, int offset, int columns) {
  Mat g = Mat::Zero(s.k(), columns);
  for (int i = 0; i < s.k(); ++i) g(i, s.at(i + offset) - 1) = 1.0;
  return g;
}

/// Computes SequenceMoments for a fixed covariance. Uses the closed form when
/// the covariance is (a multiple of) type-H, the trace formula otherwise.
class MomentEngine {
 public:
  explicit MomentEngine(const Mat& sigma)
      : sigma_(sigma), btilde_(b_tilde(sigma)), type_h_(detect_type_h(sigma)) {}

  int k() const { return static_cast<int>(sigma_.rows()); }
  const Mat& sigma() const { return sigma_; }
  const Mat& btilde() const { return btilde_; }
  const std::optional<TypeH>& type_h() const { return type_h_; }

  SequenceMoments operator()(const Sequence& s) const {
    return type_h_ ? closed_form(s, type_h_->scale) : trace_path(s);
  }

  SequenceMoments trace_path(const Sequence& s) const {
    check_length(s);
    const int u = s.max_label();
    const Mat g[3] = {shifted_incidence(s, 0, u), shifted_incidence(s, -1, u), shifted_incidence(s, +1, u)};
    SequenceMoments out;
    fill_counts(s, out);
    for (int i = 0; i < 3; ++i) {
      const Mat bg = btilde_ * g[i];
      for (int j = i; j < 3; ++j) {
        // trace(G_j' B G_i)
        const double c = (g[j].transpose() * bg).trace();
        out.V(i, j) = c;
        out.V(j, i) = c;
      }
    }
    return out;
  }

  SequenceMoments closed_form(const Sequence& s, double scale = 1.0) const {
    check_length(s);
    SequenceMoments out;
    fill_counts(s, out);
    const double k = s.k();
    const double d = k - out.m;
    const double e = out.f - out.m;
    const double x = out.h - out.m;
    out.V << d, e, e, e, d, x, e, x, d;
    out.V /= scale;
    return out;
  }

 private:
  void check_length(const Sequence& s) const {
    if (s.k() != k()) throw ValidationError("sequence length does not match block size");
  }
  static void fill_counts(const Sequence& s, SequenceMoments& out) {
    const SequenceCounts c = sequence_counts(s);
    out.m = c.m;
    out.f = c.f;
    out.g_count = c.g_count;
    out.h = c.h;
  }

  Mat sigma_;
  Mat btilde_;
  std::optional<TypeH> type_h_;
};

inline SequenceMoments moments(const Sequence& s, const Mat& sigma) { return MomentEngine(sigma)(s); }

}  // namespace propdesign
