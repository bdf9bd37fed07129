#pragma once

#include "oracle/dense_oracle.hpp"
#include "propdesign/propdesign.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace testsupport {

using namespace propdesign;

/// Dirichlet(alpha) weights over the classes, a few of them zeroed.
inline Vec random_measure(std::size_t n, std::mt19937_64& rng, double sparsity = 0.3) {
  std::gamma_distribution<double> g(1.0, 1.0);
  std::bernoulli_distribution drop(sparsity);
  Vec p(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = drop(rng) ? 0.0 : g(rng);
  if (p.sum() <= 0.0) p(0) = 1.0;
  return p / p.sum();
}

inline std::vector<std::pair<std::string, double>> as_pairs(const BlockSet& blocks, const Vec& p) {
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (p(static_cast<Eigen::Index>(i)) > 0.0) out.emplace_back(blocks[i].name(), p(static_cast<Eigen::Index>(i)));
  return out;
}

/// Nonzero part of the dense information matrix spectrum for (blocks, p, cfg).
inline oracle::Vec dense_spectrum(const BlockSet& blocks, const Vec& p, const ModelConfig& cfg, std::mt19937_64& rng) {
  const oracle::Vec tau = oracle::random_contrast(cfg.t(), rng);
  const auto inst = oracle::symmetric_instance(as_pairs(blocks, p), cfg.t(), blocks.sigma(), cfg.lambda1(),
                                               cfg.lambda2(), tau);
  oracle::Mat C;
  if (cfg.model() == Model::directional)
    C = cfg.target() == Target::direct ? oracle::dense_info_direct(inst) : oracle::dense_info_total(inst);
  else
    C = oracle::dense_info_undirectional(inst, cfg.target() == Target::total);
  return oracle::sorted_eigenvalues(C);
}

/// {0, eig_small, eig_large x (t-2)} sorted ascending.
inline oracle::Vec closed_spectrum(const SpectrumSummary& s) {
  oracle::Vec e(s.t);
  e(0) = 0.0;
  e(1) = s.eig_small;
  for (int i = 2; i < s.t; ++i) e(i) = s.eig_large;
  std::sort(e.data(), e.data() + e.size());
  return e;
}

}  // namespace testsupport
