#pragma once

// Maximizes the configured criterion over proportions of block classes.
//
// Frank-Wolfe with away steps. The equivalence scores are the gradient of the
// criterion normalized so that sum_s p_s score_s = 1, hence the Frank-Wolfe
// gap is max_s score_s - 1 and the stopping rule doubles as the optimality
// certificate.

#include "propdesign/blocks.hpp"
#include "propdesign/equivalence.hpp"
#include "propdesign/errors.hpp"
#include "propdesign/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace propdesign {

struct SolveOptions {
  double gap_tol = 1e-8;
  int max_iters = 200000;
  int restarts = 5;
  double line_search_tol = 1e-12;
  double prune_tol = 1e-9;
  double support_tol = 1e-6;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(gap_tol > 0) || max_iters <= 0 || restarts <= 0 || !(line_search_tol > 0) || !(prune_tol > 0) ||
        !(support_tol > 0))
      throw InvalidConfig("solver options must be positive");
  }
};

struct SolveResult {
  Measure measure;
  Vec weights;  // aligned with the BlockSet
  double value = 0.0;
  OptimalityReport report;
  int iterations = 0;
  bool converged = false;
  std::vector<double> restart_values;
};

class NoConvergence : public Error {
 public:
  NoConvergence(const std::string& what, SolveResult best) : Error(what), best_(std::move(best)) {}
  const SolveResult& best() const { return best_; }
  double gap() const { return best_.report.gap; }

 private:
  SolveResult best_;
};

namespace detail {

/// Criterion value; measures with q* = 0 score 0 under A, D and E.
inline double objective(const BlockSet& blocks, const Vec& p, const ModelConfig& cfg) {
  const Mat3 V = v_xi(blocks, p);
  if (V.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  return criterion_value(spectrum(V, cfg), cfg.criterion());
}

inline void clean(Vec& p) {
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) < 0.0) p(i) = 0.0;
  p /= p.sum();
}

/// Sign-carrying directional derivative of the criterion along d at p:
/// sum_i d_i score_i(p). Returns -inf when p is not estimable under A/D/E.
inline double slope(const BlockSet& blocks, const Vec& p, const Vec& d, const ModelConfig& cfg) {
  const MeasureState st = certified_state(blocks, p, cfg, 0.0);
  if (!st.estimable && cfg.criterion() != Criterion::T) return -std::numeric_limits<double>::infinity();
  double g = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i)
    if (d(i) != 0.0) g += d(i) * sequence_score(blocks[static_cast<std::size_t>(i)].V(), st);
  return g;
}

/// Step length maximizing the concave criterion along p + gamma d on
/// [0, gamma_max], located by bisection on the slope.
inline double line_search(const BlockSet& blocks, const Vec& p, const Vec& d, double gamma_max,
                          const ModelConfig& cfg, double tol) {
  if (slope(blocks, p + gamma_max * d, d, cfg) >= 0.0) return gamma_max;
  double lo = 0.0;
  double hi = gamma_max;
  for (int it = 0; it < 200 && hi - lo > tol * std::max(1.0, gamma_max); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (slope(blocks, p + mid * d, d, cfg) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

struct RunOutcome {
  Vec p;
  double value = 0.0;
  int iterations = 0;
  std::vector<double> trace;  // criterion value after each accepted step
};

inline RunOutcome run_frank_wolfe(const BlockSet& blocks, Vec p, const ModelConfig& cfg, const SolveOptions& opts) {
  RunOutcome out;
  const auto n = static_cast<Eigen::Index>(blocks.size());
  double value = objective(blocks, p, cfg);
  int it = 0;
  int stalls = 0;
  for (; it < opts.max_iters; ++it) {
    const MeasureState st = certified_state(blocks, p, cfg, opts.gap_tol);
    const Vec s = all_scores(blocks, st);
    const double avg = p.dot(s);
    Eigen::Index j = 0;
    s.maxCoeff(&j);
    Eigen::Index a = -1;
    for (Eigen::Index i = 0; i < n; ++i)
      if (p(i) > 0.0 && (a < 0 || s(i) < s(a))) a = i;
    const double fw_gap = s(j) - avg;
    const double away_gap = avg - s(a);
    if (fw_gap <= opts.gap_tol && away_gap <= opts.gap_tol) break;

    Vec d;
    double gamma_max = 1.0;
    const bool use_fw = fw_gap >= away_gap || p(a) >= 1.0;
    if (use_fw) {
      d = -p;
      d(j) += 1.0;
    } else {
      d = p;
      d(a) -= 1.0;
      gamma_max = p(a) / (1.0 - p(a));
    }
    const double gamma = line_search(blocks, p, d, gamma_max, cfg, opts.line_search_tol);
    Vec next = p + gamma * d;
    if (!use_fw && gamma == gamma_max) next(a) = 0.0;  // drop step
    clean(next);
    const double next_value = objective(blocks, next, cfg);
    if (next_value < value - 1e-14 * std::abs(value) || gamma <= 0.0) {
      if (++stalls > 3) break;
      continue;
    }
    stalls = 0;
    p = std::move(next);
    value = std::max(value, next_value);
    out.trace.push_back(next_value);
  }
  out.p = std::move(p);
  out.value = objective(blocks, out.p, cfg);
  out.iterations = it;
  return out;
}

inline Vec dirichlet(std::size_t n, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(1.0, 1.0);
  Vec p(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = g(rng);
  return p / p.sum();
}

/// Restriction of a block set to the given class indices.
inline BlockSet subset(const BlockSet& blocks, const std::vector<Eigen::Index>& idx) {
  std::vector<BlockClass> cls;
  cls.reserve(idx.size());
  for (auto i : idx) cls.push_back(blocks[static_cast<std::size_t>(i)]);
  return BlockSet(blocks.k(), blocks.t(), blocks.sigma(), std::move(cls));
}

inline Vec vech1(const Mat3& V, double scale) {
  Vec a(7);
  a << V(0, 0), V(1, 1), V(2, 2), V(0, 1), V(0, 2), V(1, 2), 0.0;
  a /= scale;
  a(6) = 1.0;
  return a;
}

/// The criterion sees p only through V_xi, and distinct p often share it.
/// Re-expresses the optimum over argmax-score classes, preferring the
/// representation with the largest sum p_s^2 (sparse, concentrated). Returns
/// p unchanged when no alternative re-certifies.
inline Vec canonical_representation(const BlockSet& blocks, const Vec& p, const ModelConfig& cfg,
                                    const SolveOptions& opts) {
  const MeasureState st = certified_state(blocks, p, cfg, opts.gap_tol);
  if (!st.estimable) return p;
  const Vec sc = all_scores(blocks, st);
  const double top = sc.maxCoeff();
  std::vector<Eigen::Index> cand;
  for (Eigen::Index i = 0; i < sc.size(); ++i)
    if (sc(i) >= top - 1e-7 || p(i) > 0.0) cand.push_back(i);
  if (cand.size() > 16 || cand.size() < 2) return p;

  const Mat3 Vstar = v_xi(blocks, p);
  const double scale = std::max(1e-300, Vstar.cwiseAbs().maxCoeff());
  const Vec b = vech1(Vstar, scale);
  struct Option {
    double norm2;
    std::vector<Eigen::Index> support;
  };
  std::vector<Option> options;
  const auto m = static_cast<unsigned>(cand.size());
  for (unsigned mask = 1; mask < (1u << m); ++mask) {
    const int size = std::popcount(mask);
    if (size > 7) continue;
    std::vector<Eigen::Index> sup;
    Mat A(7, size);
    for (unsigned j = 0; j < m; ++j)
      if (mask & (1u << j)) {
        A.col(static_cast<Eigen::Index>(sup.size())) = vech1(blocks[static_cast<std::size_t>(cand[j])].V(), scale);
        sup.push_back(cand[j]);
      }
    Eigen::ColPivHouseholderQR<Mat> qr(A);
    if (qr.rank() < size) continue;
    const Vec x = qr.solve(b);
    if ((A * x - b).norm() > 1e-3 || x.minCoeff() < 1e-6) continue;
    options.push_back({x.squaredNorm(), std::move(sup)});
  }
  // single active vertices are checked by value below, not by V
  for (Eigen::Index i : cand)
    if (sc(i) >= top - 1e-7) options.push_back({1.0, {i}});
  // ties go to blocks using more distinct treatments
  auto spread = [&](const std::vector<Eigen::Index>& sup) {
    double s = 0.0;
    for (Eigen::Index i : sup) s += blocks[static_cast<std::size_t>(i)].members.front().rep.distinct();
    return s / static_cast<double>(sup.size());
  };
  auto better = [](double n1, double s1, double n2, double s2) {
    return n1 > n2 + 1e-9 || (n1 > n2 - 1e-9 && s1 > s2);
  };
  std::stable_sort(options.begin(), options.end(), [&](const Option& a, const Option& b) {
    return better(a.norm2, spread(a.support), b.norm2, spread(b.support));
  });

  const double base = objective(blocks, p, cfg);
  std::vector<Eigen::Index> psup;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) > 0.0) psup.push_back(i);
  const double pnorm = p.squaredNorm();
  const double pspread = spread(psup);
  for (const auto& o : options) {
    if (!better(o.norm2, spread(o.support), pnorm, pspread)) break;
    const BlockSet sub = subset(blocks, o.support);
    SolveOptions so = opts;
    so.max_iters = std::min(opts.max_iters, 20000);
    const Vec start = Vec::Constant(static_cast<Eigen::Index>(o.support.size()), 1.0 / o.support.size());
    Vec q = Vec::Zero(p.size());
    try {
      const RunOutcome run = run_frank_wolfe(sub, start, cfg, so);
      for (std::size_t j = 0; j < o.support.size(); ++j) q(o.support[j]) = run.p(static_cast<Eigen::Index>(j));
      for (Eigen::Index i = 0; i < q.size(); ++i)
        if (q(i) < opts.prune_tol) q(i) = 0.0;
      q /= q.sum();
      if (objective(blocks, q, cfg) < base - 1e-10 * std::abs(base)) continue;
    } catch (const Error&) {
      continue;  // the subset alone does not estimate
    }
    if (verify(blocks, q, cfg, VerifyOptions{opts.gap_tol, opts.support_tol}).verdict != Verdict::optimal) continue;
    return q;
  }
  return p;
}

}  // namespace detail

/// True if some measure over the classes gives a positive smallest eigenvalue.
inline bool any_estimable(const BlockSet& blocks, const ModelConfig& cfg, std::uint64_t seed = 7) {
  const ModelConfig e = cfg.with_criterion(Criterion::E);
  const auto n = blocks.size();
  auto ok = [&](const Vec& p) {
    const Mat3 V = v_xi(blocks, p);
    return V.cwiseAbs().maxCoeff() > 0.0 && prepare_state(V, e).estimable;
  };
  if (ok(Vec::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n)))) return true;
  for (std::size_t i = 0; i < n; ++i) {
    Vec p = Vec::Zero(static_cast<Eigen::Index>(n));
    p(static_cast<Eigen::Index>(i)) = 1.0;
    if (ok(p)) return true;
  }
  std::mt19937_64 rng(seed);
  for (int r = 0; r < 1000; ++r)
    if (ok(detail::dirichlet(n, rng))) return true;
  return false;
}

/// Zeroes weights below tol and renormalizes.
inline Vec prune(Vec p, double tol) {
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) < tol) p(i) = 0.0;
  return p / p.sum();
}

inline SolveResult solve(const BlockSet& blocks, const ModelConfig& cfg, const SolveOptions& opts = {}) {
  opts.validate();
  if (blocks.t() != cfg.t()) throw InvalidConfig("block set and model disagree on t");
  if (blocks.empty() || !any_estimable(blocks, cfg, opts.seed))
    throw NotEstimable("not estimable: the smallest nonzero-slot eigenvalue vanishes for every measure");

  const auto n = blocks.size();
  std::mt19937_64 rng(opts.seed);
  SolveResult best;
  best.value = -1.0;
  int total_iters = 0;
  for (int r = 0; r < opts.restarts; ++r) {
    Vec p0 = r == 0 ? Vec::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n))
                    : detail::dirichlet(n, rng);
    detail::RunOutcome run = detail::run_frank_wolfe(blocks, std::move(p0), cfg, opts);
    total_iters += run.iterations;
    Vec p = prune(run.p, opts.prune_tol);
    const double value = detail::objective(blocks, p, cfg);
    best.restart_values.push_back(value);
    if (value > best.value) {
      best.value = value;
      best.weights = p;
    }
  }
  best.iterations = total_iters;
  best.weights = detail::canonical_representation(blocks, best.weights, cfg, opts);
  best.value = detail::objective(blocks, best.weights, cfg);
  best.measure = Measure::from_vector(blocks, best.weights);
  best.report = verify(blocks, best.weights, cfg, VerifyOptions{opts.gap_tol, opts.support_tol});
  best.converged = best.report.verdict == Verdict::optimal;
  if (!best.converged)
  {
    std::ostringstream msg;
    msg << "solver did not reach gap " << opts.gap_tol << " (gap " << best.report.gap << ")";
    throw NoConvergence(msg.str(), best);
  }
  return best;
}

inline SolveResult solve(int k, int t, const Mat& sigma, const ModelConfig& cfg, const SolveOptions& opts = {}) {
  return solve(enumerate_blocks(k, t, sigma), cfg, opts);
}

/// Criterion value of p relative to the optimum in reference.
inline double efficiency(const BlockSet& blocks, const Vec& p, const ModelConfig& cfg, const SolveResult& reference) {
  if (!(reference.value > 0.0)) throw InvalidConfig("reference value must be positive");
  return detail::objective(blocks, p, cfg) / reference.value;
}

inline double efficiency(const BlockSet& blocks, const Measure& m, const ModelConfig& cfg,
                         const SolveResult& reference) {
  return efficiency(blocks, m.to_vector(blocks), cfg, reference);
}

struct ExactDesign {
  std::vector<std::pair<std::string, int>> counts;  // supported classes, lexicographic
  Vec proportions;                                  // counts / n, aligned with the BlockSet
  std::vector<Sequence> rows;                       // one row per block of the design
  double efficiency = 0.0;
};

/// Largest-remainder apportionment of n blocks; ties go to the
/// lexicographically smaller representative.
inline std::vector<int> apportion(const Vec& p, int n) {
  if (n < 1) throw InvalidConfig("number of blocks n must be >= 1");
  const auto m = p.size();
  std::vector<int> counts(static_cast<std::size_t>(m), 0);
  std::vector<std::pair<double, Eigen::Index>> rem;
  int used = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double x = n * p(i);
    const int fl = static_cast<int>(std::floor(x + 1e-12));
    counts[static_cast<std::size_t>(i)] = fl;
    used += fl;
    if (p(i) > 0.0) rem.emplace_back(x - fl, i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first + 1e-12; });
  for (std::size_t i = 0; used < n && i < rem.size(); ++i, ++used) ++counts[static_cast<std::size_t>(rem[i].second)];
  return counts;
}

inline ExactDesign round_to_exact(const BlockSet& blocks, const Vec& p, int n, const ModelConfig& cfg,
                                  double reference_value) {
  ExactDesign out;
  const std::vector<int> counts = apportion(p, n);
  out.proportions = Vec::Zero(p.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (p(ii) > 0.0 || counts[i] > 0) out.counts.emplace_back(blocks[i].name(), counts[i]);
    out.proportions(ii) = static_cast<double>(counts[i]) / n;
    for (int c = 0; c < counts[i]; ++c) out.rows.push_back(blocks[i].rep());
  }
  out.efficiency = reference_value > 0.0 ? detail::objective(blocks, out.proportions, cfg) / reference_value : 0.0;
  return out;
}

}  // namespace propdesign
