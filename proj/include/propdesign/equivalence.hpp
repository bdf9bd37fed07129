#pragma once

// Equivalence-theorem scores: for a candidate measure, each block class gets
// the normalized directional derivative of the criterion towards that class.
// A measure is optimal iff the largest score is 1 and every supporting class
// attains it.

#include "propdesign/blocks.hpp"
#include "propdesign/errors.hpp"
#include "propdesign/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace propdesign {

enum class Verdict { optimal, not_optimal, not_estimable };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::optimal: return "optimal";
    case Verdict::not_optimal: return "not_optimal";
    case Verdict::not_estimable: return "not_estimable";
  }
  return "?";
}

/// Everything about V_xi that the score expressions need.
///
/// The conditions are stated in a frame L whose first column is ell (or e0
/// for the direct effect in the directional model) and whose remaining columns
/// span the nuisance directions: (ell, ell0, ell1) for the total effect,
/// (ell, ell2) and (ell, ell3) for the undirectional model. V_F = L' V L and
/// Q_F is its lower-right block.
struct MeasureState {
  Criterion criterion = Criterion::D;
  int t = 2;
  Mat frame;
  Mat3 V = Mat3::Zero();
  Mat VF;
  Mat QF;
  double q_star = 0.0;     // Schur complement of Q_F in V_F
  double ell_v_ell = 0.0;  // ell' V ell
  Vec3 ell = Vec3::Zero();
  Branch branch = Branch::q_regular;
  bool estimable = true;
  bool universal = false;  // undirectional model with Q_F = 0
  bool excluded = false;   // total effect, directional model, ell0' V ell0 = 0
  Vec frame_point;         // (1, w*) minimizing z' V_F z with z_0 = 1

  std::optional<double> x_frame;  // Qsingular: minimizer of q_F(x) = c00 + 2 c01 x + c11 x^2
  std::optional<double> q_at_x;   // q_F(x_frame)
  std::optional<Mat> VF_inv;      // Qregular
  std::optional<Mat> QF_inv;      // Qregular

  // Qsingular evaluation point. The Schur quadratic is minimized on a whole
  // line point + c * line_dir; any point of it gives a supergradient.
  // literal marks the default choice (y = 0, or c_s00 / c_xi00 when Q_F = 0).
  Vec point;
  Vec line_dir;
  bool literal = true;

  bool refinable() const { return estimable && branch == Branch::q_singular && line_dir.size() > 0; }
};

inline MeasureState prepare_state(const Mat3& V, const ModelConfig& cfg) {
  MeasureState st;
  st.criterion = cfg.criterion();
  st.t = cfg.t();
  st.V = V;
  st.frame = cfg.frame();
  st.ell = cfg.ell();
  st.ell_v_ell = std::max(0.0, st.ell.dot(V * st.ell));
  st.VF = st.frame.transpose() * V * st.frame;
  st.VF = 0.5 * (st.VF + st.VF.transpose());
  const Eigen::Index r = st.VF.rows() - 1;
  st.QF = st.VF.bottomRightCorner(r, r);

  Vec anchor = Vec::Zero(r + 1);
  anchor(0) = 1.0;
  Mat nuisance = Mat::Zero(r + 1, r);
  nuisance.bottomRows(r) = Mat::Identity(r, r);
  const SchurMin sm = schur_min(st.VF, anchor, nuisance);
  st.q_star = sm.value;
  st.frame_point = anchor + nuisance * sm.minimizer;
  st.branch = sm.singular ? Branch::q_singular : Branch::q_regular;

  const double ref = std::max(st.ell_v_ell, st.VF.trace() * 1e-6);
  st.estimable = ref > 0.0 && st.q_star > 1e-10 * ref;

  if (cfg.model() == Model::directional && cfg.target() == Target::total)
    st.excluded = st.VF(1, 1) <= 1e-12 * std::max(V.trace(), 1e-300);

  if (r == 1 && st.branch == Branch::q_singular) st.universal = true;

  if (st.branch == Branch::q_singular && r == 2 && st.VF(1, 1) > 0.0) {
    const double x = -st.VF(0, 1) / st.VF(1, 1);
    st.x_frame = x;
    st.q_at_x = st.VF(0, 0) + 2.0 * st.VF(0, 1) * x + st.VF(1, 1) * x * x;
    st.point = Vec::Zero(3);
    st.point << 1.0, x, 0.0;
    Eigen::SelfAdjointEigenSolver<Mat> es(st.QF);
    st.line_dir = Vec::Zero(3);
    st.line_dir.tail(2) = es.eigenvectors().col(0);
  } else if (st.universal) {
    // ell + c ell2 = e0 at c = -lambda; ell + c ell3 is proportional to e0 at c = lambda
    st.point = Vec::Zero(2);
    st.point << 1.0, cfg.target() == Target::direct ? -cfg.lambda1() : cfg.lambda1();
    st.line_dir = Vec::Zero(2);
    st.line_dir(1) = 1.0;
  }
  if (st.branch == Branch::q_regular && st.estimable) {
    st.VF_inv = st.VF.inverse();
    st.QF_inv = st.QF.inverse();
  }
  return st;
}

inline MeasureState prepare_state(const BlockSet& blocks, const Vec& p, const ModelConfig& cfg) {
  return prepare_state(v_xi(blocks, p), cfg);
}

namespace detail {

/// Criterion-specific combination of u (Schur part) and w (ell part).
inline double combine_score(double u, double uq, double w, const MeasureState& st) {
  const double q = st.q_star;
  const double lvl = st.ell_v_ell;
  const double rest = st.t - 2;
  const double tm1 = st.t - 1;
  switch (st.criterion) {
    case Criterion::A:
      return (u / q + rest * w / lvl) / (1.0 / q + rest / lvl);
    case Criterion::D:
      return u / tm1 + rest / tm1 * w;
    case Criterion::E:
      return u;
    case Criterion::T:
      return (uq + rest * w * lvl) / (q + rest * lvl);
  }
  return 0.0;
}

inline double point_score(const Mat& VsF, double w, const Vec& z, const MeasureState& st) {
  const double qz = z.dot(st.VF * z);
  const double qs = z.dot(VsF * z);
  const double u = qs / qz;
  return combine_score(u, u * st.q_star, w, st);
}

}  // namespace detail

/// Score of one block class (given by its V_s) against the measure state.
inline double sequence_score(const Mat3& Vs, const MeasureState& st) {
  if (st.universal && st.literal) return Vs(0, 0) / st.V(0, 0);

  const Mat VsF = st.frame.transpose() * Vs * st.frame;
  const Eigen::Index r = VsF.rows() - 1;
  const double w = st.ell.dot(Vs * st.ell) / st.ell_v_ell;

  if (!st.estimable) {
    if (st.criterion != Criterion::T) throw BranchMismatch("measure is not estimable; no score for this criterion");
    return detail::combine_score(0.0, st.frame_point.dot(VsF * st.frame_point), w, st);
  }
  if (st.branch == Branch::q_singular) {
    if (st.point.size() != r + 1) throw BranchMismatch("Qsingular state lacks the minimizer x");
    return detail::point_score(VsF, w, st.point, st);
  }
  if (!st.VF_inv || !st.QF_inv) throw BranchMismatch("Qregular state lacks V_F^-1 / Q_F^-1");
  const Mat QsF = VsF.bottomRightCorner(r, r);
  const double rs = (VsF * *st.VF_inv).trace() - (QsF * *st.QF_inv).trace();
  return detail::combine_score(rs, rs * st.q_star, w, st);
}

inline Vec all_scores(const BlockSet& blocks, const MeasureState& st) {
  Vec s(static_cast<Eigen::Index>(blocks.size()));
  for (std::size_t i = 0; i < blocks.size(); ++i) s(static_cast<Eigen::Index>(i)) = sequence_score(blocks[i].V(), st);
  return s;
}

/// Moves a Qsingular state's evaluation point along the argmin line to the
/// place where the largest score is smallest. max_s score_s(c) is convex in c
/// and lies between the smallest and largest per-class minimizers.
inline void refine_point(const BlockSet& blocks, MeasureState& st) {
  if (!st.refinable()) return;
  struct Quad {
    Mat VsF;
    double w;
  };
  std::vector<Quad> qs;
  qs.reserve(blocks.size());
  double lo = 0.0;
  double hi = 0.0;
  const Vec& b = st.point;
  const Vec& d = st.line_dir;
  for (const auto& cls : blocks) {
    Quad q{st.frame.transpose() * cls.V() * st.frame, st.ell.dot(cls.V() * st.ell) / st.ell_v_ell};
    const double dd = d.dot(q.VsF * d);
    if (dd > 1e-14 * std::max(1.0, q.VsF.trace())) {
      const double c = -d.dot(q.VsF * b) / dd;
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
    qs.push_back(std::move(q));
  }
  auto worst = [&](double c) {
    const Vec z = b + c * d;
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& q : qs) m = std::max(m, detail::point_score(q.VsF, q.w, z, st));
    return m;
  };
  lo -= 1.0;
  hi += 1.0;
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - g * (hi - lo);
  double x2 = lo + g * (hi - lo);
  double f1 = worst(x1);
  double f2 = worst(x2);
  for (int it = 0; it < 300 && hi - lo > 1e-13 * std::max(1.0, std::abs(lo) + std::abs(hi)); ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - g * (hi - lo);
      f1 = worst(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + g * (hi - lo);
      f2 = worst(x2);
    }
  }
  const double c = 0.5 * (lo + hi);
  MeasureState cand = st;
  cand.point = b + c * d;
  cand.literal = false;
  // keep the literal point when it already does at least as well
  const double lit = all_scores(blocks, st).maxCoeff();
  if (worst(c) < lit) st = std::move(cand);
}

/// Prepares the state and, on the Qsingular branch, refines the evaluation
/// point when the literal one does not certify within tol.
inline MeasureState certified_state(const BlockSet& blocks, const Vec& p, const ModelConfig& cfg, double tol) {
  MeasureState st = prepare_state(blocks, p, cfg);
  if (st.refinable() && all_scores(blocks, st).maxCoeff() > 1.0 + tol) refine_point(blocks, st);
  return st;
}

struct VerifyOptions {
  double gap_tol = 1e-8;
  double support_tol = 1e-6;
};

struct OptimalityReport {
  std::vector<std::pair<std::string, double>> scores;
  double max_score = 0.0;
  std::vector<std::string> argmax_blocks;
  double gap = 0.0;  // max_score - 1
  Verdict verdict = Verdict::not_optimal;
  Branch branch = Branch::q_regular;
  bool support_ok = true;
  std::string note;
};

inline OptimalityReport verify(const BlockSet& blocks, const Vec& p, const ModelConfig& cfg,
                               const VerifyOptions& opts = {}) {
  OptimalityReport rep;
  const Mat3 V = v_xi(blocks, p);
  if (V.cwiseAbs().maxCoeff() == 0.0) {
    rep.verdict = Verdict::not_estimable;
    rep.note = "all support on constant sequences";
    return rep;
  }
  const MeasureState st = certified_state(blocks, p, cfg, opts.gap_tol);
  rep.branch = st.branch;
  if (!st.estimable && cfg.criterion() != Criterion::T) {
    rep.verdict = Verdict::not_estimable;
    rep.note = "smallest nonzero-slot eigenvalue vanishes (q* = 0)";
    return rep;
  }
  if (st.excluded) {
    rep.verdict = Verdict::not_optimal;
    rep.note = "ell0' V ell0 = 0: conditions for this case are not implemented";
    return rep;
  }
  if (cfg.model() == Model::undirectional && !st.universal && !st.estimable) {
    rep.verdict = Verdict::not_optimal;
    rep.note = "Q_F nonzero but det(V_F) = 0";
    return rep;
  }

  if (!st.literal) rep.note = "certificate taken along the argmin line";
  const Vec s = all_scores(blocks, st);
  rep.max_score = s.maxCoeff();
  rep.gap = rep.max_score - 1.0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    rep.scores.emplace_back(blocks[i].name(), s(ii));
    if (s(ii) >= rep.max_score - opts.gap_tol) rep.argmax_blocks.push_back(blocks[i].name());
    if (p(ii) > opts.support_tol && s(ii) < rep.max_score - opts.gap_tol) {
      rep.support_ok = false;
      if (!rep.note.empty()) rep.note += "; ";
      rep.note += "support condition fails at " + blocks[i].name();
    }
  }
  rep.verdict = (rep.gap <= opts.gap_tol && rep.support_ok) ? Verdict::optimal : Verdict::not_optimal;
  if (rep.gap > opts.gap_tol) {
    if (!rep.note.empty()) rep.note += "; ";
    rep.note += "max score exceeds 1";
  }
  return rep;
}

inline OptimalityReport verify(const BlockSet& blocks, const Measure& m, const ModelConfig& cfg,
                               const VerifyOptions& opts = {}) {
  return verify(blocks, m.to_vector(blocks), cfg, opts);
}

}  // namespace propdesign
