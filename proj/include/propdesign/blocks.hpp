#pragma once

// Symmetric blocks (treatment-relabeling orbits) and their merge into classes
// with identical moment matrices.

#include "propdesign/errors.hpp"
#include "propdesign/parallel.hpp"
#include "propdesign/sequence.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace propdesign {

/// Maximum number of restricted-growth strings enumerate_blocks will visit.
inline constexpr std::uint64_t kMaxEnumeration = 10'000'000;

struct SymmetricBlock {
  Sequence rep;  // restricted growth string
  std::int64_t orbit_size = 0;
  SequenceMoments moments;
};

/// Relabeling orbits sharing one V matrix. members are in lexicographic order,
/// members.front() is the class representative.
struct BlockClass {
  std::vector<SymmetricBlock> members;

  const Sequence& rep() const { return members.front().rep; }
  std::string name() const { return rep().str(); }
  const Mat3& V() const { return members.front().moments.V; }
  std::int64_t sequence_count() const {
    std::int64_t n = 0;
    for (const auto& m : members) n += m.orbit_size;
    return n;
  }
};

inline std::uint64_t stirling2(int n, int k) {
  if (n < 0 || k < 0) return 0;
  std::vector<std::vector<std::uint64_t>> s(static_cast<std::size_t>(n) + 1,
                                            std::vector<std::uint64_t>(static_cast<std::size_t>(k) + 1, 0));
  s[0][0] = 1;
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= std::min(i, k); ++j)
      s[i][j] = static_cast<std::uint64_t>(j) * s[i - 1][j] + s[i - 1][j - 1];
  return s[n][k];
}

/// t (t-1) ... (t-u+1)
inline std::int64_t falling_factorial(int t, int u) {
  std::int64_t r = 1;
  for (int i = 0; i < u; ++i) r *= (t - i);
  return r;
}

/// All restricted growth strings of length k using at most max_labels labels,
/// in lexicographic order.
inline std::vector<Sequence> restricted_growth_strings(int k, int max_labels) {
  std::uint64_t total = 0;
  for (int j = 1; j <= std::min(k, max_labels); ++j) total += stirling2(k, j);
  if (total > kMaxEnumeration)
    throw EnumerationTooLarge("too many symmetric blocks to enumerate (" + std::to_string(total) + ")");

  std::vector<Sequence> out;
  out.reserve(total);
  std::vector<int> cur(static_cast<std::size_t>(k), 1);
  // Recursive fill: position i may take labels 1..(max so far + 1), capped.
  auto rec = [&](auto&& self, int i, int used) -> void {
    if (i == k) {
      out.emplace_back(cur);
      return;
    }
    for (int v = 1; v <= std::min(used + 1, max_labels); ++v) {
      cur[static_cast<std::size_t>(i)] = v;
      self(self, i + 1, std::max(used, v));
    }
  };
  cur[0] = 1;
  rec(rec, 1, 1);
  return out;
}

/// Enumerated block classes for given (k, t, Sigma).
class BlockSet {
 public:
  BlockSet(int k, int t, Mat sigma, std::vector<BlockClass> classes)
      : k_(k), t_(t), sigma_(std::move(sigma)), classes_(std::move(classes)) {
    for (std::size_t i = 0; i < classes_.size(); ++i)
      for (const auto& m : classes_[i].members) lookup_.emplace(m.rep.str(), i);
  }

  int k() const { return k_; }
  int t() const { return t_; }
  const Mat& sigma() const { return sigma_; }
  std::size_t size() const { return classes_.size(); }
  bool empty() const { return classes_.empty(); }
  const BlockClass& operator[](std::size_t i) const { return classes_[i]; }
  const std::vector<BlockClass>& classes() const { return classes_; }
  auto begin() const { return classes_.begin(); }
  auto end() const { return classes_.end(); }

  /// Class index for any sequence; the sequence is first brought to restricted growth form.
  std::optional<std::size_t> find(const Sequence& s) const {
    if (s.k() != k_) return std::nullopt;
    auto it = lookup_.find(s.canonical().str());
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::size_t> find(std::string_view rep) const { return find(Sequence::parse(rep)); }

  std::size_t index_of(std::string_view rep) const {
    auto idx = find(rep);
    if (!idx) throw ValidationError("unknown block '" + std::string(rep) + "' for k=" + std::to_string(k_) +
                                    ", t=" + std::to_string(t_));
    return *idx;
  }

 private:
  int k_;
  int t_;
  Mat sigma_;
  std::vector<BlockClass> classes_;
  std::map<std::string, std::size_t> lookup_;
};

/// Enumerates relabeling orbits (constant sequences excluded) and merges
/// those whose V matrices agree within merge_tol (relative, entrywise).
inline BlockSet enumerate_blocks(int k, int t, const Mat& sigma, double merge_tol = 1e-10) {
  if (k < 2) throw InvalidConfig("block size k must be >= 2");
  if (t < 2) throw InvalidConfig("number of treatments t must be >= 2");
  if (sigma.rows() != k) throw InvalidConfig("covariance order does not match k");
  const MomentEngine engine(sigma);
  std::vector<Sequence> reps = restricted_growth_strings(k, std::min(k, t));
  reps.erase(reps.begin());  // the all-ones sequence comes first

  std::vector<SymmetricBlock> blocks(reps.size());
  parallel_for(reps.size(), [&](std::size_t i) {
    blocks[i].rep = reps[i];
    blocks[i].orbit_size = falling_factorial(t, reps[i].distinct());
    blocks[i].moments = engine(reps[i]);
  });

  std::vector<BlockClass> classes;
  for (auto& b : blocks) {
    bool merged = false;
    for (auto& c : classes) {
      if (linalg::approx_equal_rel(c.V(), b.moments.V, merge_tol)) {
        c.members.push_back(std::move(b));
        merged = true;
        break;
      }
    }
    if (!merged) classes.push_back(BlockClass{{std::move(b)}});
  }
  return BlockSet(k, t, sigma, std::move(classes));
}

}  // namespace propdesign
