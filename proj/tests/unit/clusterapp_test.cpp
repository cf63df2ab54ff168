// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "driftlab/clusterapp/clusterapp.hpp"
#include "driftlab/error.hpp"
#include "oracles.hpp"

namespace ca = driftlab::clusterapp;
using ca::Point;

namespace {

std::filesystem::path write_csv(const std::string& name, const std::string& body) {
    const auto p = std::filesystem::temp_directory_path() / name;
    std::ofstream(p) << body;
    return p;
}

ca::DataBatch blobs(std::mt19937_64& rng, double ox = 0.0, double oy = 0.0) {
    std::normal_distribution<double> n(0.0, 0.05);
    ca::DataBatch b;
    for (int i = 0; i < 60; ++i) {
        const double cx = i % 2 ? 0.2 : 0.8;
        b.points.push_back({cx + ox + n(rng), 0.5 + oy + n(rng)});
    }
    return b;
}

}  // namespace

TEST(Dbi, ClosedFormExamples) {
    const std::vector<Point> singletons{{0.0, 0.0}, {2.0, 0.0}};
    EXPECT_DOUBLE_EQ(ca::dbi(singletons, singletons), 0.0);
    const std::vector<Point> pts{{-1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}, {3.0, 0.0}};
    const std::vector<Point> centers{{0.0, 0.0}, {2.0, 0.0}};
    // Point (1,0) ties between centers; nearest-first assignment puts it in cluster 0.
    // S0 = 1 (three points at distance 1), S1 = 1.
    EXPECT_DOUBLE_EQ(ca::dbi(pts, centers), 1.0);
}

TEST(Dbi, MatchesDefinitionOracle) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 5 + rep * 4, k = 2 + rep % 4, d = 1 + rep % 3;
        std::vector<Point> pts(n, Point(d)), centers(k, Point(d));
        for (auto& p : pts) for (auto& v : p) v = u(rng);
        for (auto& c : centers) for (auto& v : c) v = u(rng);
        EXPECT_NEAR(ca::dbi(pts, centers), oracle::dbi(pts, centers), 1e-12);
    }
}

TEST(Dbi, InvariantUnderTranslationAndPermutation) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Point> pts(80, Point(3)), centers(4, Point(3));
    for (auto& p : pts) for (auto& v : p) v = u(rng);
    for (auto& c : centers) for (auto& v : c) v = u(rng);
    const double base = ca::dbi(pts, centers);
    auto shifted_p = pts;
    auto shifted_c = centers;
    for (auto& p : shifted_p) for (auto& v : p) v += 0.375;
    for (auto& c : shifted_c) for (auto& v : c) v += 0.375;
    EXPECT_NEAR(ca::dbi(shifted_p, shifted_c), base, 1e-12);
    std::vector<Point> perm{centers[2], centers[0], centers[3], centers[1]};
    EXPECT_NEAR(ca::dbi(pts, perm), base, 1e-12);
}

TEST(Dbi, DegenerateInputs) {
    const std::vector<Point> pts{{0.0}, {1.0}};
    EXPECT_THROW(ca::dbi(pts, std::vector<Point>{{0.0}}), driftlab::DataError);
    EXPECT_EQ(ca::dbi(pts, std::vector<Point>{{0.5}, {0.5}}), ca::kDegeneratePenalty);
}

TEST(Decode, ActivationAndRepair) {
    const std::size_t d = 2, k = 4;
    std::vector<double> c(ca::candidate_length(d, k));
    for (std::size_t i = 0; i < k * d; ++i) c[i] = static_cast<double>(i);
    for (std::size_t i = 0; i < k; ++i) c[k * d + i] = 0.9;
    EXPECT_EQ(ca::decode(c, d, k).size(), k);

    const double genes[] = {0.1, 0.4, 0.2, 0.3};
    for (std::size_t i = 0; i < k; ++i) c[k * d + i] = genes[i];
    const auto rep = ca::decode(c, d, k);
    ASSERT_EQ(rep.size(), 2u);
    EXPECT_EQ(rep[0], (Point{2.0, 3.0}));  // gene 0.4
    EXPECT_EQ(rep[1], (Point{6.0, 7.0}));  // gene 0.3

    const double edge[] = {0.5, 0.51, 0.52, 0.5};
    for (std::size_t i = 0; i < k; ++i) c[k * d + i] = edge[i];
    EXPECT_EQ(ca::decode(c, d, k).size(), 2u);

    EXPECT_THROW(ca::decode(std::vector<double>(5), d, k), driftlab::DataError);
}

TEST(Decode, RepairAlwaysYieldsTwo) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 0.6);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> c(ca::candidate_length(3, 8));
        for (auto& v : c) v = u(rng);
        EXPECT_GE(ca::decode(c, 3).size(), 2u);
    }
}

TEST(ClusteringObjective, BlobCentersBeatRandomCandidates) {
    std::mt19937_64 rng(6);
    const auto batch = blobs(rng);
    std::vector<double> good(ca::candidate_length(2, 8), 0.0);
    for (std::size_t i = 0; i < batch.points.size(); ++i) {
        const std::size_t c = i % 2 ? 0 : 2;  // odd rows form the left blob
        good[c] += batch.points[i][0] / 30.0;
        good[c + 1] += batch.points[i][1] / 30.0;
    }
    good[16] = good[17] = 1.0;
    const double g = ca::clustering_objective(batch, good);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> c(good.size());
        for (auto& v : c) v = u(rng);
        EXPECT_LT(g, ca::clustering_objective(batch, c));
    }
    EXPECT_EQ(g, ca::clustering_objective(batch, good));
    EXPECT_THROW(ca::clustering_objective(ca::DataBatch{}, good), driftlab::DataError);
}

TEST(IngestCsv, BatchingAndReport) {
    std::string body = "a,b,label\n";
    for (int i = 0; i < 100; ++i) body += std::to_string(i) + "," + std::to_string(2 * i) + ",x\n";
    const auto p = write_csv("driftlab_ingest_a.csv", body);
    ca::IngestionReport rep;
    const auto batches = ca::ingest_csv(p, {"a", "b"}, 30, &rep);
    ASSERT_EQ(batches.size(), 4u);
    EXPECT_EQ(batches[0].points.size(), 30u);
    EXPECT_EQ(batches[3].points.size(), 10u);
    EXPECT_EQ(rep.rows_read, 100u);
    EXPECT_EQ(rep.rows_dropped, 0u);
    EXPECT_EQ(rep.batches, 4u);
    // First-batch scaling: rows 0..29 map to [0, 1]; later rows extend beyond it.
    EXPECT_DOUBLE_EQ(batches[0].points[29][0], 1.0);
    EXPECT_DOUBLE_EQ(batches[1].points[0][0], 30.0 / 29.0);
    EXPECT_EQ(ca::ingest_csv(p, {"a", "b"}, 30)[2].points, batches[2].points);
    std::filesystem::remove(p);
}

TEST(IngestCsv, ConstantColumnDroppedRowsMissingColumn) {
    const auto p = write_csv("driftlab_ingest_b.csv", "x,c\n1,5\n2,5\nfoo,5\n3,\n4,5\n");
    ca::IngestionReport rep;
    const auto batches = ca::ingest_csv(p, {"x", "c"}, 10, &rep);
    ASSERT_EQ(batches.size(), 1u);
    EXPECT_EQ(batches[0].points.size(), 3u);
    EXPECT_EQ(rep.rows_dropped, 2u);
    for (const auto& pt : batches[0].points) EXPECT_EQ(pt[1], 0.0);
    try {
        ca::ingest_csv(p, {"x", "missing_col"}, 10);
        FAIL();
    } catch (const driftlab::ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("missing_col"), std::string::npos);
    }
    std::filesystem::remove(p);
}

TEST(ClusterLoop, EmitsOneRowPerBatchDeterministically) {
    std::mt19937_64 rng(7);
    std::vector<ca::DataBatch> batches;
    for (int b = 0; b < 6; ++b) batches.push_back(blobs(rng, b < 3 ? 0.0 : 0.1));
    ca::ClusterLoopConfig cfg;
    cfg.loop.ea.pop_size = 20;
    cfg.loop.ea.generations = 3;
    const auto run = [&] {
        driftlab::detectors::NullDetector det;
        return ca::run_clustering(batches, det, cfg);
    };
    const auto a = run();
    ASSERT_EQ(a.size(), 6u);
    for (const auto& r : a) {
        EXPECT_TRUE(std::isfinite(r.dbi));
        EXPECT_EQ(r.rows, 60u);
    }
    const auto b = run();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].dbi, b[i].dbi);
}
