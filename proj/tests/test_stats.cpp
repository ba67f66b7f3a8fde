#include <injectbench/stats.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace injectbench;
namespace st = injectbench::stats;

TEST(Wilson, PublishedCells) {
  auto a = st::wilson_interval(335, 1111);
  EXPECT_NEAR(a.lower, 0.275, 0.0005);
  EXPECT_NEAR(a.upper, 0.329, 0.0005);
  auto b = st::wilson_interval(54, 131);
  EXPECT_NEAR(b.lower, 0.332, 0.0005);
  EXPECT_NEAR(b.upper, 0.498, 0.0005);
}

TEST(Wilson, ClosedFormOracle) {
  const double z = 1.959963984540054;
  for (auto [k, n] : {std::pair{3LL, 17LL}, {40LL, 41LL}, {500LL, 1000LL}}) {
    const double p = static_cast<double>(k) / n;
    const double c = (p + z * z / (2.0 * n)) / (1 + z * z / n);
    const double h = z / (1 + z * z / n) * std::sqrt(p * (1 - p) / n + z * z / (4.0 * n * n));
    const auto ci = st::wilson_interval(k, n);
    EXPECT_NEAR(ci.lower, c - h, 1e-12);
    EXPECT_NEAR(ci.upper, c + h, 1e-12);
  }
}

TEST(Wilson, Boundaries) {
  EXPECT_EQ(st::wilson_interval(0, 50).lower, 0.0);
  EXPECT_EQ(st::wilson_interval(50, 50).upper, 1.0);
  EXPECT_THROW(st::wilson_interval(0, 0), std::domain_error);
  EXPECT_THROW(st::wilson_interval(5, 4), std::invalid_argument);
  EXPECT_THROW(st::wilson_interval(1, 4, 1.0), std::invalid_argument);
}

TEST(Wilson, ContainsPointAndNarrowsWithN) {
  double prev = 1.0;
  for (long long n = 10; n <= 10000; n *= 10) {
    const auto ci = st::wilson_interval(3 * n / 10, n);
    EXPECT_LE(ci.lower, 0.3);
    EXPECT_GE(ci.upper, 0.3);
    EXPECT_LT(ci.upper - ci.lower, prev);
    prev = ci.upper - ci.lower;
  }
  for (long long n = 1; n < 40; ++n)
    for (long long k = 0; k <= n; ++k) {
      const auto ci = st::wilson_interval(k, n);
      const double p = static_cast<double>(k) / n;
      EXPECT_LE(ci.lower, p + 1e-15);
      EXPECT_GE(ci.upper, p - 1e-15);
      EXPECT_GE(ci.lower, 0.0);
      EXPECT_LE(ci.upper, 1.0);
    }
}

TEST(Entropy, Examples) {
  EXPECT_DOUBLE_EQ(st::normalized_entropy({5, 5, 5}), 1.0);
  EXPECT_DOUBLE_EQ(st::normalized_entropy({0, 9, 0, 0}), 0.0);
  EXPECT_THROW(st::normalized_entropy({0, 0}), std::domain_error);
  EXPECT_DOUBLE_EQ(st::normalized_entropy({1, 1, 0, 0}), 0.5);
}

TEST(Entropy, PermutationInvariantAndBounded) {
  std::mt19937 gen(7);
  std::uniform_int_distribution<long long> d(0, 30);
  for (int t = 0; t < 100; ++t) {
    std::vector<long long> c(11);
    for (auto& x : c) x = d(gen);
    c[0] += 1;
    const double h = st::normalized_entropy(c);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, 1.0);
    std::shuffle(c.begin(), c.end(), gen);
    EXPECT_NEAR(st::normalized_entropy(c), h, 1e-12);
  }
}

TEST(Cosine, Examples) {
  const double s = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(st::mean_pairwise_cosine_distance({{1, 0}, {0, 1}, {s, s}}), 0.5285954792, 1e-9);
  EXPECT_NEAR(st::mean_pairwise_cosine_distance({{1, 1}, {1, 1}}), 0.0, 1e-12);
  EXPECT_NEAR(st::mean_pairwise_cosine_distance({{1, 0}, {0, 1}}), 1.0, 1e-12);
  EXPECT_THROW(st::mean_pairwise_cosine_distance({{0, 0}, {0, 1}}), std::domain_error);
  EXPECT_THROW(st::mean_pairwise_cosine_distance({{0, 1}}), std::invalid_argument);
}

TEST(ClusterEntropy, Examples) {
  std::vector<st::Vector> pts;
  for (int c = 0; c < 4; ++c)
    for (int a = 0; a < 4; ++a) {
      st::Vector v(4, 0.0);
      v[a] = 1.0;
      pts.push_back(v);
    }
  EXPECT_DOUBLE_EQ(st::cluster_entropy(pts, 4, 42), 1.0);
  EXPECT_DOUBLE_EQ(st::cluster_entropy(std::vector<st::Vector>(5, {1.0, 2.0}), 2, 42), 0.0);
  EXPECT_THROW(st::cluster_entropy(pts, 17, 42), std::domain_error);
}

TEST(Krippendorff, Examples) {
  const st::RatingGrid flipped = {{1.0, 2.0}, {2.0, 2.0}, {3.0, 3.0}, {4.0, 4.0}};
  EXPECT_NEAR(st::krippendorff_alpha(flipped), 8.0 / 9.0, 1e-12);
  EXPECT_THROW(st::krippendorff_alpha({{1.0, 2.0}, {3.0, std::nullopt}}), std::domain_error);
  EXPECT_THROW(st::krippendorff_alpha({{2.0, 2.0}, {2.0, 2.0}}), std::domain_error);
}

TEST(Krippendorff, NominalHandOracle) {
  // Units (a,a), (a,b), (b,b): o_aa = 2, o_ab = o_ba = 1, o_bb = 2; n = 6.
  // D_o = 2/6; D_e = 2 * 3 * 3 / (6 * 5) = 0.6; alpha = 1 - (1/3)/0.6.
  const st::RatingGrid g = {{1.0, 1.0}, {1.0, 2.0}, {2.0, 2.0}};
  EXPECT_NEAR(st::krippendorff_alpha(g, st::AlphaMetric::nominal), 1.0 - (1.0 / 3.0) / 0.6, 1e-12);
}

TEST(MannWhitney, Examples) {
  const std::vector<double> a{3, 4}, b{1, 2};
  const auto r = st::mann_whitney_u(a, b);
  EXPECT_DOUBLE_EQ(r.u_a, 4.0);
  EXPECT_DOUBLE_EQ(r.u_b, 0.0);
  const auto big = st::mann_whitney_from_u(6628, 100, 100);
  EXPECT_NEAR(big.z, 3.97662, 1e-5);
  EXPECT_NEAR(big.p_two_sided, 6.9903e-5, 1e-8);
  EXPECT_THROW(st::mann_whitney_u(std::vector<double>{}, b), std::invalid_argument);
}

TEST(MannWhitney, AllTiedGivesNoEvidence) {
  const std::vector<double> a{2, 2, 2}, b{2, 2};
  const auto r = st::mann_whitney_u(a, b);
  EXPECT_DOUBLE_EQ(r.u_a, 3.0);
  EXPECT_DOUBLE_EQ(r.p_two_sided, 1.0);
}

TEST(RankCorrelation, Examples) {
  const std::vector<double> x{1, 2, 3, 4}, y{10, 20, 30, 40}, z{4, 3, 2, 1};
  EXPECT_NEAR(*st::rank_correlations(x, y).spearman_rho, 1.0, 1e-12);
  EXPECT_NEAR(*st::rank_correlations(x, y).pearson_r, 1.0, 1e-12);
  EXPECT_NEAR(*st::rank_correlations(x, z).spearman_rho, -1.0, 1e-12);
  EXPECT_EQ(*st::rank_correlations(x, y).spearman_p, 0.0);
  EXPECT_THROW(st::rank_correlations(std::vector<double>{1, 2}, std::vector<double>{1, 2}),
               std::invalid_argument);
}

TEST(RankCorrelation, AverageRanks) {
  const std::vector<double> v{10, 20, 20, 5};
  EXPECT_EQ(st::average_ranks(v), (std::vector<double>{2, 3.5, 3.5, 1}));
}

TEST(FunnelSummary, Examples) {
  FunnelLedger l;
  l.proposed = 728;
  l.moderator_added = 109;
  l.moderator_dropped = 209;
  l.survivors = 628;
  EXPECT_NEAR(st::funnel_summary(l).gross_filter_rate, 0.2497, 5e-5);
  EXPECT_FALSE(st::funnel_summary(l).proposed_mean);
  FunnelLedger flat;
  flat.add({"a", 10, 0, 0, 10, 4});
  EXPECT_DOUBLE_EQ(st::funnel_summary(flat).gross_filter_rate, 0.0);
  EXPECT_DOUBLE_EQ(*st::funnel_summary(flat).final_median, 4.0);
  EXPECT_THROW(st::funnel_summary(FunnelLedger{}), std::domain_error);
}
