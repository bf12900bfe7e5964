#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "amsq/error.hpp"
#include "amsq/labeling.hpp"
#include "amsq/sizing.hpp"
#include "support.hpp"

using namespace amsq;

namespace {

double sq(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

// Three tight, far-apart blobs.
Matrix blobs(Rng& rng, int per_blob) {
    const Matrix centers{{10, 10, 90}, {50, 90, 10}, {90, 20, 50}};
    Matrix out;
    for (const auto& c : centers) {
        for (int i = 0; i < per_blob; ++i) {
            std::vector<double> row;
            for (double v : c) row.push_back(v + (rng.uniform() - 0.5) * 4);
            out.push_back(row);
        }
    }
    return out;
}

ScoreMatrix as_scores(const Matrix& m) {
    ScoreMatrix s;
    for (std::size_t j = 0; j < m.front().size(); ++j) s.metrics.push_back("m" + std::to_string(j));
    s.rows = m;
    for (std::size_t i = 0; i < m.size(); ++i) s.ids.push_back({"t" + std::to_string(i % 3), static_cast<int>(i) + 1});
    return s;
}

} // namespace

TEST(Standardize, ZeroMeanUnitPopulationSigma) {
    const Matrix s{{1, 5, 7}, {3, 5, 9}, {5, 5, 2}, {7, 5, 2}};
    const auto st = standardize(s);
    EXPECT_DOUBLE_EQ(st.mean[0], 4.0);
    EXPECT_DOUBLE_EQ(st.sigma[0], std::sqrt(5.0));
    EXPECT_TRUE(st.zero_sigma[1]);
    EXPECT_FALSE(st.zero_sigma[0]);
    for (std::size_t j : {0u, 2u}) {
        double mean = 0, var = 0;
        for (const auto& row : st.z) mean += row[j];
        mean /= 4;
        for (const auto& row : st.z) var += (row[j] - mean) * (row[j] - mean);
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR(var / 4, 1.0, 1e-12);
    }
    for (const auto& row : st.z) EXPECT_EQ(row[1], 0.0);
    const auto t = truncate_nonneg(st.z);
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(t[i][j], std::max(0.0, st.z[i][j]));
    }
    EXPECT_THROW(standardize({{1, 2}}), Error);
    EXPECT_THROW(standardize({{1, 2}, {1}}), Error);
}

TEST(KMeans, NeverBeatsExhaustiveOptimum) {
    Rng rng(21);
    int exact = 0, total = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const int rows = 4 + static_cast<int>(rng.below(6));
        const int k = 2 + static_cast<int>(rng.below(3));
        if (k > rows) continue;
        const auto x = amsq::testing::random_matrix(rng, rows, 2);
        const double best = amsq::testing::brute_force_kmeans(x, k);
        const auto r = kmeans(x, k, static_cast<std::uint64_t>(trial));
        EXPECT_GE(r.inertia, best - 1e-6 * (1 + best));
        EXPECT_NEAR(r.inertia, inertia(x, r.labels, r.centers), 1e-9 * (1 + r.inertia));
        exact += r.inertia <= best + 1e-6 * (1 + best);
        ++total;
    }
    EXPECT_GE(exact, total * 9 / 10);
}

TEST(KMeans, RecoversSeparatedBlobs) {
    Rng rng(2);
    const auto x = blobs(rng, 15);
    const auto r = kmeans(x, 3, 99);
    for (int b = 0; b < 3; ++b) {
        std::set<int> labels;
        for (int i = 0; i < 15; ++i) labels.insert(r.labels[static_cast<std::size_t>(b * 15 + i)]);
        EXPECT_EQ(labels.size(), 1u);
    }
    EXPECT_EQ(std::set<int>(r.labels.begin(), r.labels.end()).size(), 3u);
}

TEST(KMeans, LloydInvariants) {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = amsq::testing::random_matrix(rng, 40, 4);
        const auto r = kmeans(x, 5, static_cast<std::uint64_t>(trial));
        ASSERT_FALSE(r.inertia_trace.empty());
        for (std::size_t i = 1; i < r.inertia_trace.size(); ++i)
            EXPECT_LE(r.inertia_trace[i], r.inertia_trace[i - 1] + 1e-9);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double own = sq(x[i], r.centers[static_cast<std::size_t>(r.labels[i])]);
            for (const auto& c : r.centers) EXPECT_LE(own, sq(x[i], c) + 1e-9);
        }
        EXPECT_LE(r.iterations, KMeansOptions{}.max_iter);
    }
}

TEST(KMeans, SeedDeterminism) {
    Rng rng(4);
    const auto x = amsq::testing::random_matrix(rng, 50, 3);
    const auto a = kmeans(x, 4, 17);
    const auto b = kmeans(x, 4, 17);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.centers, b.centers);
    EXPECT_THROW(kmeans(x, 0, 1), Error);
    EXPECT_THROW(kmeans(x, 51, 1), Error);
}

TEST(FitClusters, CentersInBothSpaces) {
    Rng rng(6);
    const auto s = blobs(rng, 10);
    const auto m = fit_clusters(s, 3, 5);
    const auto st = standardize(s);
    ASSERT_EQ(m.k, 3);
    int total = 0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> s_mean(3, 0.0), z_mean(3, 0.0);
        int n = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (m.labels[i] != c) continue;
            ++n;
            for (std::size_t j = 0; j < 3; ++j) {
                s_mean[j] += s[i][j];
                z_mean[j] += st.z[i][j];
            }
        }
        EXPECT_EQ(m.sizes[static_cast<std::size_t>(c)], n);
        total += n;
        for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_NEAR(m.s_centers[static_cast<std::size_t>(c)][j], s_mean[j] / n, 1e-9);
            EXPECT_NEAR(m.z_centers[static_cast<std::size_t>(c)][j], z_mean[j] / n, 1e-9);
        }
    }
    EXPECT_EQ(total, 30);
    EXPECT_EQ(m.mean, st.mean);
}

TEST(Ratings, TopAndBottomFractions) {
    ClusterModel m;
    m.k = 8;
    for (int c = 0; c < 8; ++c) m.s_centers.push_back({static_cast<double>(c), 5.0});
    const auto r = rate_metrics(m, 0.25);
    for (int c = 0; c < 8; ++c) {
        const auto expected = c >= 6 ? Rating::Good : c <= 1 ? Rating::Bad : Rating::Moderate;
        EXPECT_EQ(r[static_cast<std::size_t>(c)][0], expected) << c;
        EXPECT_EQ(r[static_cast<std::size_t>(c)][1], Rating::Good); // ties share the better rating
    }
    m.k = 3;
    m.s_centers = {{1}, {2}, {3}};
    const auto small = rate_metrics(m, 0.25);
    EXPECT_EQ(small[2][0], Rating::Good);
    EXPECT_EQ(small[1][0], Rating::Moderate);
    EXPECT_EQ(small[0][0], Rating::Bad);
    EXPECT_THROW(rate_metrics(m, 0.0), Error);
    EXPECT_THROW(rate_metrics(m, 0.6), Error);
}

TEST(Tags, TopThreePlusStrongFourth) {
    ClusterModel m;
    m.k = 2;
    m.z_centers = {{0.1, -2.0, 1.0, 0.6, -1.5}, {0.1, 0.2, 0.3, 0.4, 0.45}};
    const std::vector<std::vector<Rating>> ratings{
        {Rating::Moderate, Rating::Bad, Rating::Good, Rating::Good, Rating::Bad},
        {Rating::Moderate, Rating::Moderate, Rating::Moderate, Rating::Moderate, Rating::Moderate}};
    const auto tags = make_tags(m, ratings, {"A", "B", "C", "D", "E"});
    EXPECT_EQ(tags[0].text, "bad B; bad E; good C; good D");
    ASSERT_EQ(tags[1].parts.size(), 3u);
    EXPECT_EQ(tags[1].text, "moderate E; moderate D; moderate C");
    EXPECT_DOUBLE_EQ(tags[0].parts[0].magnitude, 2.0);
}

TEST(LabelScores, ReducesKToDistinctRows) {
    const Matrix s{{10, 20}, {10, 20}, {30, 40}, {30, 40}, {50, 10}};
    const auto r = label_scores(as_scores(s), 30, 0.25, 1);
    EXPECT_EQ(r.requested_k, 30);
    EXPECT_EQ(r.model.k, 3);
    ASSERT_EQ(r.warnings.size(), 1u);
    EXPECT_NE(r.warnings[0].find("K reduced from 30 to 3"), std::string::npos);
    EXPECT_EQ(r.model.labels[0], r.model.labels[1]);
    EXPECT_NE(r.model.labels[0], r.model.labels[2]);
    EXPECT_EQ(r.tags.size(), 3u);
    EXPECT_THROW(label_scores(as_scores({{1, 2}}), 3, 0.25, 1), Error);
    EXPECT_THROW(label_scores(as_scores(s), 0, 0.25, 1), Error);
}

TEST(LabelScores, FilesRoundTrip) {
    Rng rng(12);
    const auto s = as_scores(blobs(rng, 6));
    const auto dir = amsq::testing::scratch_dir("labels");
    write_score_matrix(dir + "/s.jsonl", s);
    const auto back = read_score_matrix(dir + "/s.jsonl");
    EXPECT_EQ(back.metrics, s.metrics);
    EXPECT_EQ(back.rows, s.rows);
    EXPECT_EQ(back.ids, s.ids);

    const auto r = label_scores(s, 3, 0.25, 4);
    write_labels(dir + "/l.jsonl", s, r);
    std::ifstream in(dir + "/l.jsonl");
    int lines = 0;
    for (std::string line; std::getline(in, line); ++lines) {
        const auto j = nlohmann::json::parse(line);
        const auto i = static_cast<std::size_t>(lines);
        EXPECT_EQ(j.at("cluster").get<int>(), r.model.labels[i] + 1);
        EXPECT_EQ(j.at("tag").get<std::string>(), r.tags[static_cast<std::size_t>(r.model.labels[i])].text);
        EXPECT_EQ(j.at("trial").get<int>(), s.ids[i].trial);
    }
    EXPECT_EQ(lines, 18);
    const auto summary = cluster_summary(s, r);
    EXPECT_FALSE(summary.dump().empty());

    std::ofstream(dir + "/bad.jsonl") << "{\"topology\": 1}\n";
    EXPECT_THROW(read_score_matrix(dir + "/bad.jsonl"), Error);
    EXPECT_THROW(read_score_matrix(dir + "/missing.jsonl"), Error);
}
