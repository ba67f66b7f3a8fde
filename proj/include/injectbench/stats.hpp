#pragma once

// Statistical kernel used by every report: binomial intervals, entropies,
// embedding diversity, inter-rater agreement, rank correlation and the
// Mann-Whitney test. All functions are pure; domain violations throw
// std::domain_error, malformed arguments std::invalid_argument.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "injectbench/digest.hpp"
#include "injectbench/funnel.hpp"

namespace injectbench::stats {

// ---------------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------------

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

/// P(Z > z) for standard normal Z, accurate in the far tail.
inline double normal_sf(double z) {
  return boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(), z));
}

inline double student_t_two_sided_p(double t, double df) {
  boost::math::students_t_distribution<double> dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t))));
}

// ---------------------------------------------------------------------------
// Wilson score interval
// ---------------------------------------------------------------------------

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

inline Interval wilson_interval(long long successes, long long n, double confidence = 0.95) {
  if (n <= 0) throw std::domain_error("wilson_interval: n must be positive");
  if (successes < 0 || successes > n)
    throw std::invalid_argument("wilson_interval: successes outside [0, n]");
  if (!(confidence > 0.0 && confidence < 1.0))
    throw std::invalid_argument("wilson_interval: confidence outside (0, 1)");

  const double z = normal_quantile(1.0 - (1.0 - confidence) / 2.0);
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2.0 * nn)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn));
  // The closed form gives the exact bounds 0 and 1 at the extremes; pin them
  // rather than keep rounding residue.
  const double lower = successes == 0 ? 0.0 : std::clamp(centre - half, 0.0, 1.0);
  const double upper = successes == n ? 1.0 : std::clamp(centre + half, 0.0, 1.0);
  return {lower, upper};
}

// ---------------------------------------------------------------------------
// Entropy
// ---------------------------------------------------------------------------

/// Shannon entropy of the empirical distribution divided by ln(vocabulary
/// size). `counts` has one entry per vocabulary member, zeros included.
/// Equal non-zero counts over the whole vocabulary yield exactly 1.
inline double normalized_entropy(std::span<const long long> counts) {
  if (counts.empty()) throw std::invalid_argument("normalized_entropy: empty vocabulary");
  long long total = 0;
  for (long long c : counts) {
    if (c < 0) throw std::invalid_argument("normalized_entropy: negative count");
    total += c;
  }
  if (total == 0) throw std::domain_error("normalized_entropy: total count is zero");
  if (std::all_of(counts.begin(), counts.end(), [&](long long c) { return c == counts[0]; }))
    return 1.0;
  // Non-uniform with a one-member vocabulary is impossible, so log(K) > 0 here.
  const double n = static_cast<double>(total);
  double h = 0.0;
  for (long long c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return std::clamp(h / std::log(static_cast<double>(counts.size())), 0.0, 1.0);
}

inline double normalized_entropy(const std::vector<long long>& counts) {
  return normalized_entropy(std::span<const long long>(counts));
}

// ---------------------------------------------------------------------------
// Embedding diversity
// ---------------------------------------------------------------------------

using Vector = std::vector<double>;

inline double squared_distance(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline void check_same_dimension(const std::vector<Vector>& points) {
  if (points.empty()) return;
  const std::size_t dim = points.front().size();
  if (dim == 0) throw std::invalid_argument("embeddings must have positive dimension");
  for (const auto& p : points)
    if (p.size() != dim) throw std::invalid_argument("embeddings differ in dimension");
}

struct KMeansResult {
  std::vector<std::size_t> assignment;
  std::vector<Vector> centers;
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding, single restart. Ties in
/// assignment go to the lowest cluster index; empty clusters keep their centre.
inline KMeansResult kmeans(const std::vector<Vector>& points, std::size_t k, std::uint64_t seed,
                           int max_iterations = 100) {
  if (k == 0) throw std::invalid_argument("kmeans: k must be positive");
  if (points.size() < k) throw std::domain_error("kmeans: fewer points than clusters");
  check_same_dimension(points);

  Rng rng(seed);
  KMeansResult res;
  res.centers.push_back(points[rng.uniform_index(points.size())]);
  std::vector<double> d2(points.size());
  while (res.centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : res.centers) best = std::min(best, squared_distance(points[i], c));
      d2[i] = best;
      total += best;
    }
    std::size_t chosen = 0;
    if (total <= 0.0) {
      chosen = rng.uniform_index(points.size());
    } else {
      const double target = rng.uniform01() * total;
      double acc = 0.0;
      chosen = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    }
    res.centers.push_back(points[chosen]);
  }

  res.assignment.assign(points.size(), k);
  const std::size_t dim = points.front().size();
  for (res.iterations = 0; res.iterations < max_iterations; ++res.iterations) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      std::size_t best = 0;
      double best_d = squared_distance(points[i], res.centers[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = squared_distance(points[i], res.centers[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (res.assignment[i] != best) {
        res.assignment[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<Vector> sums(k, Vector(dim, 0.0));
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      ++sizes[res.assignment[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[res.assignment[i]][d] += points[i][d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) res.centers[c][d] = sums[c][d] / static_cast<double>(sizes[c]);
    }
  }
  return res;
}

/// Normalized entropy of k-means cluster sizes over k categories.
inline double cluster_entropy(const std::vector<Vector>& embeddings, std::size_t k,
                              std::uint64_t seed) {
  const KMeansResult km = kmeans(embeddings, k, seed);
  std::vector<long long> sizes(k, 0);
  for (std::size_t a : km.assignment) ++sizes[a];
  return normalized_entropy(sizes);
}

inline double norm(const Vector& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double cosine_similarity(const Vector& a, const Vector& b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine similarity of a zero vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot / (na * nb);
}

/// Mean over unordered pairs of (1 - cosine similarity).
inline double mean_pairwise_cosine_distance(const std::vector<Vector>& embeddings) {
  if (embeddings.size() < 2) throw std::invalid_argument("need at least two vectors");
  check_same_dimension(embeddings);
  for (const auto& v : embeddings)
    if (norm(v) == 0.0) throw std::domain_error("zero-norm vector");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      sum += 1.0 - cosine_similarity(embeddings[i], embeddings[j]);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

// ---------------------------------------------------------------------------
// Krippendorff's alpha
// ---------------------------------------------------------------------------

enum class AlphaMetric { nominal, ordinal, interval };

/// items x raters grid; std::nullopt marks a missing rating.
using RatingGrid = std::vector<std::vector<std::optional<double>>>;

/// Coincidence-matrix formulation. Units with fewer than two ratings are not
/// pairable and are ignored.
inline double krippendorff_alpha(const RatingGrid& grid, AlphaMetric metric = AlphaMetric::interval) {
  std::vector<std::vector<double>> units;
  for (const auto& row : grid) {
    std::vector<double> vals;
    for (const auto& v : row)
      if (v) vals.push_back(*v);
    if (vals.size() >= 2) units.push_back(std::move(vals));
  }
  if (units.size() < 2) throw std::domain_error("krippendorff_alpha: fewer than two pairable units");

  std::vector<double> values;
  for (const auto& u : units) values.insert(values.end(), u.begin(), u.end());
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  const std::size_t v = values.size();
  auto index_of = [&](double x) {
    return static_cast<std::size_t>(std::lower_bound(values.begin(), values.end(), x) - values.begin());
  };

  std::vector<std::vector<double>> o(v, std::vector<double>(v, 0.0));
  for (const auto& u : units) {
    const double w = 1.0 / static_cast<double>(u.size() - 1);
    for (std::size_t i = 0; i < u.size(); ++i)
      for (std::size_t j = 0; j < u.size(); ++j)
        if (i != j) o[index_of(u[i])][index_of(u[j])] += w;
  }
  std::vector<double> nc(v, 0.0);
  for (std::size_t c = 0; c < v; ++c) nc[c] = std::accumulate(o[c].begin(), o[c].end(), 0.0);
  const double n = std::accumulate(nc.begin(), nc.end(), 0.0);

  auto delta2 = [&](std::size_t c, std::size_t k) -> double {
    if (c == k) return 0.0;
    switch (metric) {
      case AlphaMetric::nominal:
        return 1.0;
      case AlphaMetric::interval: {
        const double d = values[c] - values[k];
        return d * d;
      }
      case AlphaMetric::ordinal: {
        const std::size_t lo = std::min(c, k), hi = std::max(c, k);
        double s = 0.0;
        for (std::size_t g = lo; g <= hi; ++g) s += nc[g];
        s -= (nc[lo] + nc[hi]) / 2.0;
        return s * s;
      }
    }
    return 0.0;
  };

  double observed = 0.0, expected = 0.0;
  for (std::size_t c = 0; c < v; ++c) {
    for (std::size_t k = 0; k < v; ++k) {
      const double d = delta2(c, k);
      observed += o[c][k] * d;
      expected += nc[c] * nc[k] * d;
    }
  }
  observed /= n;
  expected /= n * (n - 1.0);
  if (expected == 0.0) throw std::domain_error("krippendorff_alpha: no variation in pairable values");
  return 1.0 - observed / expected;
}

// ---------------------------------------------------------------------------
// Ranks and correlation
// ---------------------------------------------------------------------------

/// 1-based ranks, ties receive the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Pearson r, or nullopt when either series has zero variance.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw std::invalid_argument("pearson: length mismatch");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double correlation_p_value(double r, std::size_t n) {
  if (std::fabs(r) >= 1.0) return 0.0;
  const double df = static_cast<double>(n) - 2.0;
  return student_t_two_sided_p(r * std::sqrt(df / (1.0 - r * r)), df);
}

/// Correlations are absent when a series is constant.
struct RankCorrelation {
  std::optional<double> spearman_rho;
  std::optional<double> pearson_r;
  std::optional<double> spearman_p;
  std::optional<double> pearson_p;
  std::size_t n = 0;
};

inline RankCorrelation rank_correlations(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("rank_correlations: length mismatch");
  if (x.size() < 3) throw std::invalid_argument("rank_correlations: need at least 3 points");
  RankCorrelation out;
  out.n = x.size();
  out.pearson_r = pearson(x, y);
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  out.spearman_rho = pearson(rx, ry);
  if (out.pearson_r) out.pearson_p = correlation_p_value(*out.pearson_r, out.n);
  if (out.spearman_rho) out.spearman_p = correlation_p_value(*out.spearman_rho, out.n);
  return out;
}

// ---------------------------------------------------------------------------
// Mann-Whitney U
// ---------------------------------------------------------------------------

struct MannWhitneyResult {
  double u_a = 0.0;
  double u_b = 0.0;
  double z = 0.0;
  double p_two_sided = 1.0;
};

/// Normal approximation with tie and continuity correction. `tie_term` is
/// sum(t^3 - t) over tie groups of the pooled sample.
inline MannWhitneyResult mann_whitney_from_u(double u_a, std::size_t n1, std::size_t n2,
                                             double tie_term = 0.0) {
  if (n1 == 0 || n2 == 0) throw std::invalid_argument("mann_whitney: empty group");
  const double a = static_cast<double>(n1), b = static_cast<double>(n2);
  const double big_n = a + b;
  MannWhitneyResult r;
  r.u_a = u_a;
  r.u_b = a * b - u_a;
  const double mu = a * b / 2.0;
  const double var = a * b / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
  if (var <= 0.0) return r;  // every value tied: no evidence either way
  const double diff = u_a - mu;
  const double corrected = std::max(0.0, std::fabs(diff) - 0.5);
  r.z = std::copysign(corrected / std::sqrt(var), diff);
  r.p_two_sided = std::min(1.0, 2.0 * normal_sf(std::fabs(r.z)));
  return r;
}

inline double tie_correction_term(std::span<const double> pooled) {
  std::vector<double> s(pooled.begin(), pooled.end());
  std::sort(s.begin(), s.end());
  double term = 0.0;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = i;
    while (j < s.size() && s[j] == s[i]) ++j;
    const double t = static_cast<double>(j - i);
    term += t * t * t - t;
    i = j;
  }
  return term;
}

/// U_A = #{(a, b): a > b} + 1/2 #{(a, b): a = b}, computed from rank sums.
inline MannWhitneyResult mann_whitney_u(std::span<const double> group_a,
                                        std::span<const double> group_b) {
  if (group_a.empty() || group_b.empty()) throw std::invalid_argument("mann_whitney: empty group");
  std::vector<double> pooled(group_a.begin(), group_a.end());
  pooled.insert(pooled.end(), group_b.begin(), group_b.end());
  const auto ranks = average_ranks(pooled);
  double rank_sum_a = 0.0;
  for (std::size_t i = 0; i < group_a.size(); ++i) rank_sum_a += ranks[i];
  const double n1 = static_cast<double>(group_a.size());
  const double u_a = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
  return mann_whitney_from_u(u_a, group_a.size(), group_b.size(), tie_correction_term(pooled));
}

/// Exact two-sided permutation p: the fraction of relabelings of the pooled
/// sample whose U is at least as far from n1*n2/2 as the observed U.
/// Small samples only (pooled size <= 20).
inline double mann_whitney_exact_p(std::span<const double> group_a, std::span<const double> group_b) {
  const std::size_t n1 = group_a.size(), n2 = group_b.size();
  if (n1 == 0 || n2 == 0) throw std::invalid_argument("mann_whitney: empty group");
  if (n1 + n2 > 20) throw std::invalid_argument("mann_whitney_exact_p: sample too large");
  std::vector<double> pooled(group_a.begin(), group_a.end());
  pooled.insert(pooled.end(), group_b.begin(), group_b.end());
  const auto ranks = average_ranks(pooled);
  const double base = static_cast<double>(n1) * (static_cast<double>(n1) + 1.0) / 2.0;
  const double mu = static_cast<double>(n1 * n2) / 2.0;
  double observed = 0.0;
  for (std::size_t i = 0; i < n1; ++i) observed += ranks[i];
  const double observed_dev = std::fabs(observed - base - mu);

  // Walk all n1-subsets of the pooled indices in lexicographic order.
  std::vector<std::size_t> pick(n1);
  std::iota(pick.begin(), pick.end(), 0);
  const std::size_t total_n = n1 + n2;
  std::uint64_t extreme = 0, count = 0;
  while (true) {
    double rs = 0.0;
    for (std::size_t i : pick) rs += ranks[i];
    ++count;
    if (std::fabs(rs - base - mu) >= observed_dev - 1e-9) ++extreme;
    std::size_t i = n1;
    while (i > 0 && pick[i - 1] == total_n - n1 + (i - 1)) --i;
    if (i == 0) break;
    ++pick[i - 1];
    for (std::size_t j = i; j < n1; ++j) pick[j] = pick[j - 1] + 1;
  }
  return static_cast<double>(extreme) / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Funnel summary
// ---------------------------------------------------------------------------

struct FunnelSummary {
  double gross_filter_rate = 0.0;
  std::optional<double> proposed_mean, proposed_median;
  std::optional<double> survivors_mean, survivors_median;
  std::optional<double> final_mean, final_median;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty list");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2.0;
}

inline double mean(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean of empty list");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline FunnelSummary funnel_summary(const FunnelLedger& ledger) {
  if (!ledger.identity_holds()) throw std::domain_error("funnel ledger identity violated");
  const long long denom = ledger.proposed + ledger.moderator_added;
  if (denom <= 0) throw std::domain_error("funnel ledger has no proposals");
  FunnelSummary s;
  s.gross_filter_rate = 1.0 - static_cast<double>(ledger.survivors) / static_cast<double>(denom);
  if (!ledger.per_screenshot.empty()) {
    std::vector<double> p, sv, f;
    for (const auto& e : ledger.per_screenshot) {
      p.push_back(static_cast<double>(e.proposed));
      sv.push_back(static_cast<double>(e.survivors));
      f.push_back(static_cast<double>(e.in_final_dataset));
    }
    s.proposed_mean = mean(p);
    s.proposed_median = median(p);
    s.survivors_mean = mean(sv);
    s.survivors_median = median(sv);
    s.final_mean = mean(f);
    s.final_median = median(f);
  }
  return s;
}

}  // namespace injectbench::stats
