#pragma once

// Measures over block classes and the closed-form spectrum of their
// information matrices.

#include "propdesign/blocks.hpp"
#include "propdesign/errors.hpp"
#include "propdesign/linalg.hpp"

#include <cmath>
#include <map>
#include <string>
#include <string_view>

namespace propdesign {

enum class Model { directional, undirectional };
enum class Target { direct, total };
enum class Criterion { A, D, E, T };
enum class Branch { q_singular, q_regular };

inline std::string to_string(Model m) { return m == Model::directional ? "directional" : "undirectional"; }
inline std::string to_string(Target t) { return t == Target::direct ? "direct" : "total"; }
inline std::string to_string(Criterion c) {
  switch (c) {
    case Criterion::A: return "A";
    case Criterion::D: return "D";
    case Criterion::E: return "E";
    case Criterion::T: return "T";
  }
  return "?";
}
inline std::string to_string(Branch b) { return b == Branch::q_singular ? "Qsingular" : "Qregular"; }

inline Model parse_model(std::string_view s) {
  if (s == "directional") return Model::directional;
  if (s == "undirectional") return Model::undirectional;
  throw InvalidConfig("unknown model '" + std::string(s) + "'");
}
inline Target parse_target(std::string_view s) {
  if (s == "direct" || s == "tau") return Target::direct;
  if (s == "total" || s == "theta") return Target::total;
  throw InvalidConfig("unknown target '" + std::string(s) + "'");
}
inline Criterion parse_criterion(std::string_view s) {
  if (s == "A" || s == "a") return Criterion::A;
  if (s == "D" || s == "d") return Criterion::D;
  if (s == "E" || s == "e") return Criterion::E;
  if (s == "T" || s == "t") return Criterion::T;
  throw InvalidConfig("unknown criterion '" + std::string(s) + "'");
}

/// Proportionality constants, estimation target and optimality criterion.
class ModelConfig {
 public:
  static constexpr double kDegenerateTotal = 1e-8;

  ModelConfig(double lambda1, double lambda2, Model model, Target target, Criterion criterion, int t)
      : lambda1_(lambda1), lambda2_(lambda2), model_(model), target_(target), criterion_(criterion), t_(t) {
    if (t < 2) throw InvalidConfig("number of treatments t must be >= 2");
    if (!std::isfinite(lambda1) || !std::isfinite(lambda2)) throw InvalidConfig("lambda must be finite");
    if (model == Model::undirectional && lambda1 != lambda2)
      throw InvalidConfig("undirectional model requires lambda1 == lambda2");
    if (target == Target::total && std::abs(1.0 + lambda1 + lambda2) < kDegenerateTotal)
      throw DegenerateTotalEffect("total effect is degenerate: 1 + lambda1 + lambda2 = 0");
  }

  static ModelConfig directional(double l1, double l2, Target target, Criterion c, int t) {
    return ModelConfig(l1, l2, Model::directional, target, c, t);
  }
  static ModelConfig undirectional(double lambda, Target target, Criterion c, int t) {
    return ModelConfig(lambda, lambda, Model::undirectional, target, c, t);
  }

  double lambda1() const { return lambda1_; }
  double lambda2() const { return lambda2_; }
  Model model() const { return model_; }
  Target target() const { return target_; }
  Criterion criterion() const { return criterion_; }
  int t() const { return t_; }

  ModelConfig with_criterion(Criterion c) const { return ModelConfig(lambda1_, lambda2_, model_, target_, c, t_); }
  ModelConfig with_target(Target tg) const { return ModelConfig(lambda1_, lambda2_, model_, tg, criterion_, t_); }
  ModelConfig with_t(int t) const { return ModelConfig(lambda1_, lambda2_, model_, target_, criterion_, t); }

  /// (1, lambda1, lambda2)
  Vec3 ell() const { return Vec3(1.0, lambda1_, lambda2_); }
  Vec3 ell0() const { return Vec3(-1.0, 1.0 + lambda2_, -lambda2_); }
  Vec3 ell1() const { return Vec3(-1.0, -lambda1_, 1.0 + lambda1_); }
  static Vec3 ell2() { return Vec3(0.0, 1.0, 1.0); }
  static Vec3 ell3() { return Vec3(2.0, -1.0, -1.0); }

  static Mat3 gamma() {
    Mat3 g;
    g << 1, -1, -1, 0, 1, 0, 0, 0, 1;
    return g;
  }

  /// 1 + lambda1 + lambda2 (equals 1 + 2 lambda in the undirectional model).
  double total_factor() const { return 1.0 + lambda1_ + lambda2_; }

  /// Eigenvalue scale: 1 for the direct effect, total_factor^-2 for the total effect.
  double scale() const { return target_ == Target::direct ? 1.0 : 1.0 / (total_factor() * total_factor()); }

  /// Columns (ell, nuisance directions...) in which the equivalence conditions are stated.
  Mat frame() const {
    if (model_ == Model::directional) {
      if (target_ == Target::direct) return Mat::Identity(3, 3);
      Mat l(3, 3);
      l << ell(), ell0(), ell1();
      return l;
    }
    Mat l(3, 2);
    l << ell(), (target_ == Target::direct ? ell2() : ell3());
    return l;
  }

 private:
  double lambda1_;
  double lambda2_;
  Model model_;
  Target target_;
  Criterion criterion_;
  int t_;
};

/// Proportions over block classes, keyed by representative sequence string.
class Measure {
 public:
  Measure() = default;
  explicit Measure(std::map<std::string, double> weights) : weights_(std::move(weights)) {}

  static Measure from_vector(const BlockSet& blocks, const Vec& p) {
    std::map<std::string, double> w;
    for (std::size_t i = 0; i < blocks.size(); ++i)
      if (p(static_cast<Eigen::Index>(i)) > 0.0) w[blocks[i].name()] = p(static_cast<Eigen::Index>(i));
    return Measure(std::move(w));
  }

  /// Proportions aligned with blocks; members of a merged class pool their weight.
  Vec to_vector(const BlockSet& blocks, double sum_tol = 1e-12) const {
    Vec p = Vec::Zero(static_cast<Eigen::Index>(blocks.size()));
    double total = 0.0;
    for (const auto& [rep, w] : weights_) {
      const Sequence s = Sequence::parse(rep);
      if (w < 0.0 || !std::isfinite(w)) throw ValidationError("negative or non-finite proportion for " + rep);
      if (s.is_constant()) {
        if (w > 0.0) throw ValidationError("constant sequence " + rep + " cannot carry weight");
        continue;
      }
      p(static_cast<Eigen::Index>(blocks.index_of(rep))) += w;
      total += w;
    }
    if (std::abs(total - 1.0) > sum_tol)
      throw ValidationError("proportions sum to " + std::to_string(total) + ", expected 1");
    return p;
  }

  const std::map<std::string, double>& weights() const { return weights_; }
  double operator[](const std::string& rep) const {
    auto it = weights_.find(rep);
    return it == weights_.end() ? 0.0 : it->second;
  }

 private:
  std::map<std::string, double> weights_;
};

/// sum_s p_s V_s
inline Mat3 v_xi(const BlockSet& blocks, const Vec& p) {
  Mat3 v = Mat3::Zero();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const double w = p(static_cast<Eigen::Index>(i));
    if (w != 0.0) v += w * blocks[i].V();
  }
  return v;
}

inline Mat3 v_xi(const BlockSet& blocks, const Measure& measure) { return v_xi(blocks, measure.to_vector(blocks)); }

/// Minimum of (anchor + N w)' W (anchor + N w) over w.
struct SchurMin {
  double value = 0.0;
  Vec minimizer;  // w
  Mat hessian;    // N' W N
  bool singular = false;
};

inline SchurMin schur_min(const Mat& w, const Vec& anchor, const Mat& nuisance) {
  SchurMin r;
  const double a = anchor.dot(w * anchor);
  const Vec b = nuisance.transpose() * w * anchor;
  r.hessian = nuisance.transpose() * w * nuisance;
  r.hessian = 0.5 * (r.hessian + r.hessian.transpose());
  r.minimizer = -linalg::pseudo_inverse_sym(r.hessian) * b;
  r.value = std::max(0.0, a + b.dot(r.minimizer));
  if (r.hessian.rows() == 1) {
    // A scalar is "singular" relative to the size of the whole quadratic.
    r.singular = r.hessian(0, 0) <= 1e-10 * std::max(w.trace(), 1e-300);
  } else {
    r.singular = linalg::is_singular_psd(r.hessian);
  }
  return r;
}

/// Closed-form spectrum of the information matrix of a pseudo symmetric measure:
/// eigenvalues 0, eig_small (multiplicity 1) and eig_large (multiplicity t - 2).
struct SpectrumSummary {
  double q_star = 0.0;     // Schur quantity for the configured target/model
  double ell_v_ell = 0.0;  // ell' V ell
  double scale = 1.0;
  double eig_small = 0.0;
  double eig_large = 0.0;
  int t = 2;
  Mat3 V = Mat3::Zero();
  Branch branch = Branch::q_regular;
  Vec2 minimizer = Vec2::Zero();  // (x, y); x == y in the undirectional model
};

inline SpectrumSummary schur_quantities(const Mat3& V, const ModelConfig& cfg) {
  if (V.cwiseAbs().maxCoeff() == 0.0) throw DegenerateMeasure("V_xi is zero: all support on constant sequences");
  SpectrumSummary s;
  s.V = V;
  s.t = cfg.t();
  s.scale = cfg.scale();
  const Vec3 ell = cfg.ell();
  s.ell_v_ell = std::max(0.0, ell.dot(V * ell));

  const Mat3 w = cfg.target() == Target::direct ? V : Mat3(ModelConfig::gamma().transpose() * V * ModelConfig::gamma());
  Mat nuisance;
  if (cfg.model() == Model::directional) {
    nuisance = Mat::Zero(3, 2);
    nuisance(1, 0) = 1.0;
    nuisance(2, 1) = 1.0;
  } else {
    nuisance = ModelConfig::ell2();
  }
  const SchurMin m = schur_min(w, Vec3(1.0, 0.0, 0.0), nuisance);
  const double factor = cfg.target() == Target::direct ? 1.0 : cfg.total_factor() * cfg.total_factor();
  s.q_star = factor * m.value;
  s.branch = m.singular ? Branch::q_singular : Branch::q_regular;
  if (cfg.model() == Model::directional)
    s.minimizer = Vec2(m.minimizer(0), m.minimizer(1));
  else
    s.minimizer = Vec2(m.minimizer(0), m.minimizer(0));
  return s;
}

inline SpectrumSummary spectrum(const Mat3& V, const ModelConfig& cfg) {
  SpectrumSummary s = schur_quantities(V, cfg);
  const double tm1 = cfg.t() - 1;
  s.eig_small = s.scale * s.q_star / tm1;
  s.eig_large = s.scale * s.ell_v_ell / tm1;
  return s;
}

/// Phi_A, Phi_D, Phi_E, Phi_T of the nonzero eigenvalues {eig_small, eig_large x (t-2)}.
inline double criterion_value(double eig_small, double eig_large, int t, Criterion c) {
  const double a1 = std::max(0.0, eig_small);
  const double a2 = std::max(0.0, eig_large);
  const double tm1 = t - 1;
  const double rest = t - 2;
  switch (c) {
    case Criterion::A:
      if (a1 <= 0.0 || (rest > 0 && a2 <= 0.0)) return 0.0;
      return tm1 / (1.0 / a1 + (rest > 0 ? rest / a2 : 0.0));
    case Criterion::D:
      if (a1 <= 0.0 || (rest > 0 && a2 <= 0.0)) return 0.0;
      return std::exp((std::log(a1) + (rest > 0 ? rest * std::log(a2) : 0.0)) / tm1);
    case Criterion::E:
      return rest > 0 ? std::min(a1, a2) : a1;
    case Criterion::T:
      return (a1 + rest * a2) / tm1;
  }
  return 0.0;
}

inline double criterion_value(const SpectrumSummary& s, Criterion c) {
  return criterion_value(s.eig_small, s.eig_large, s.t, c);
}

inline double criterion_value(const BlockSet& blocks, const Vec& p, const ModelConfig& cfg) {
  return criterion_value(spectrum(v_xi(blocks, p), cfg), cfg.criterion());
}

}  // namespace propdesign
