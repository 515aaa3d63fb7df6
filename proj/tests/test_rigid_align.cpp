#include "ssm/phantom.hpp"
#include "ssm/rigid_align.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <random>

using namespace ssm;

namespace {

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed, double extent = 50.0)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-extent, extent);
    std::vector<Vec3> p(n);
    for (auto& x : p) {
        x = Vec3(u(rng), u(rng), u(rng));
    }
    return p;
}

// Asymmetric blob so that ICP has a unique optimum.
SurfaceMesh blob(int subdivisions)
{
    auto m = icosphere(subdivisions, 1.0);
    for (auto& v : m.vertices) {
        const double r = 30.0 + 6.0 * v.x() * v.y() + 4.0 * v.z() * v.z() * v.z() + 3.0 * v.x();
        v = Vec3(1.3 * r * v.x(), r * v.y(), 0.8 * r * v.z());
    }
    return m;
}

} // namespace

TEST(Procrustes, IdenticalSetsGiveIdentity)
{
    const auto p = random_points(20, 1);
    const auto t = procrustes_rigid(p, p);
    EXPECT_LT((t.rotation - Mat3::Identity()).norm(), 1e-12);
    EXPECT_LT(t.translation.norm(), 1e-12);
}

TEST(Procrustes, RecoversKnownTransform)
{
    const auto p = random_points(30, 2);
    RigidTransform truth;
    truth.rotation = fixtures::rotation_about(Vec3::UnitZ(), 30.0 * EIGEN_PI / 180.0);
    truth.translation = Vec3(5, 0, 0);
    std::vector<Vec3> q;
    for (const auto& x : p) {
        q.push_back(truth.apply(x));
    }
    const auto t = procrustes_rigid(p, q);
    EXPECT_LT((t.rotation - truth.rotation).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((t.translation - truth.translation).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Procrustes, RejectsReflection)
{
    const auto p = random_points(25, 3);
    std::vector<Vec3> q;
    for (const auto& x : p) {
        q.emplace_back(-x.x(), x.y(), x.z());
    }
    const auto t = procrustes_rigid(p, q);
    EXPECT_NEAR(t.rotation.determinant(), 1.0, 1e-9);
    EXPECT_TRUE(t.is_proper());
    double residual = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        residual += (t.apply(p[i]) - q[i]).squaredNorm();
    }
    EXPECT_GT(residual, 1.0);
}

TEST(Procrustes, DegenerateInputs)
{
    const std::vector<Vec3> two = {{0, 0, 0}, {1, 0, 0}};
    EXPECT_THROW(procrustes_rigid(two, two), InvalidInput);
    const std::vector<Vec3> line = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
    EXPECT_THROW(procrustes_rigid(line, line), NumericalError);
}

TEST(Procrustes, RotationIsAlwaysProper)
{
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = random_points(10, 100 + static_cast<std::uint64_t>(trial));
        const auto q = random_points(10, 500 + static_cast<std::uint64_t>(trial));
        EXPECT_TRUE(procrustes_rigid(p, q).is_proper(1e-9));
    }
}

TEST(NearestCorrespondences, IdentityPairing)
{
    const auto m = blob(2);
    const auto pairs = nearest_correspondences(m, m);
    for (std::uint32_t i = 0; i < pairs.size(); ++i) {
        EXPECT_EQ(pairs[i], i);
    }
}

TEST(NearestCorrespondences, TieGoesToLowerIndex)
{
    SurfaceMesh ref;
    ref.vertices = {{5, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 1, 0}};
    SurfaceMesh q;
    q.vertices = {{0, 0, 0}};
    EXPECT_EQ(nearest_correspondences(q, ref)[0], 1u);
    // Many exact ties in a lattice.
    SurfaceMesh lattice;
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            for (int k = 0; k < 6; ++k) {
                lattice.vertices.emplace_back(i, j, k);
            }
        }
    }
    SurfaceMesh mids;
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            mids.vertices.emplace_back(i + 0.5, j + 0.5, 2.5);
        }
    }
    const auto got = nearest_correspondences(mids, lattice);
    for (std::size_t n = 0; n < mids.vertices.size(); ++n) {
        std::uint32_t best = 0;
        double bd = 1e300;
        for (std::uint32_t r = 0; r < lattice.vertices.size(); ++r) {
            const double d = (lattice.vertices[r] - mids.vertices[n]).squaredNorm();
            if (d < bd) {
                bd = d;
                best = r;
            }
        }
        EXPECT_EQ(got[n], best);
    }
}

TEST(NearestCorrespondences, MatchesBruteForce)
{
    SurfaceMesh ref;
    ref.vertices = random_points(500, 21);
    SurfaceMesh q;
    q.vertices = random_points(500, 22);
    const auto got = nearest_correspondences(q, ref);
    for (std::size_t n = 0; n < q.vertices.size(); ++n) {
        std::uint32_t best = 0;
        double bd = 1e300;
        for (std::uint32_t r = 0; r < ref.vertices.size(); ++r) {
            const double d = (ref.vertices[r] - q.vertices[n]).squaredNorm();
            if (d < bd) {
                bd = d;
                best = r;
            }
        }
        ASSERT_EQ(got[n], best) << "query " << n;
    }
}

TEST(NearestCorrespondences, EmptyInput)
{
    EXPECT_THROW(nearest_correspondences(SurfaceMesh{}, blob(1)), InvalidInput);
}

TEST(Icp, AlreadyAlignedStopsAfterOneIteration)
{
    const auto m = blob(3);
    const auto [out, rep] = icp_align(m, m);
    EXPECT_EQ(rep.iterations_run, 1);
    EXPECT_LT((rep.final_transform.rotation - Mat3::Identity()).norm(), 1e-9);
    EXPECT_LT(rep.final_transform.translation.norm(), 1e-9);
}

// A regular icosphere lattice aliases with itself under rotations of about one
// vertex spacing, so recovery is checked on an irregular 2000-point sample.
TEST(Icp, RecoversRandomRigidPerturbation)
{
    const auto full = atria_phantom();
    std::mt19937_64 rng(5);
    std::vector<std::uint32_t> idx(full.num_vertices());
    std::iota(idx.begin(), idx.end(), 0U);
    std::shuffle(idx.begin(), idx.end(), rng);
    SurfaceMesh ref;
    for (std::size_t i = 0; i < 2000; ++i) {
        ref.vertices.push_back(full.vertices[idx[i]]);
    }
    for (int trial = 0; trial < 5; ++trial) {
        const auto truth = fixtures::random_rigid(rng, 30.0, 20.0);
        const auto moving = transformed(ref, truth);
        const auto [out, rep] = icp_align(moving, ref);
        const auto expected = truth.inverse();
        EXPECT_LE(rep.iterations_run, 150);
        EXPECT_LT(rotation_angle_deg(rep.final_transform.rotation, expected.rotation), 0.5);
        EXPECT_LT((rep.final_transform.translation - expected.translation).norm(), 0.1);
    }
}

TEST(Icp, ZeroToleranceRunsTheIterationCap)
{
    const auto ref = blob(2);
    std::mt19937_64 rng(8);
    const auto moving = transformed(ref, fixtures::random_rigid(rng, 10.0, 5.0));
    IcpConfig cfg;
    cfg.convergence_tol = 0.0;
    const auto [out, rep] = icp_align(moving, ref, cfg);
    EXPECT_EQ(rep.iterations_run, 150);
    EXPECT_EQ(rep.residual_history.size(), 150u);
}

TEST(Icp, ResidualIsNonIncreasing)
{
    const auto ref = blob(3);
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 5; ++trial) {
        const auto moving = transformed(ref, fixtures::random_rigid(rng, 30.0, 20.0));
        const auto [out, rep] = icp_align(moving, ref);
        EXPECT_LE(rep.residual_history.front(), rep.initial_residual + 1e-9);
        for (std::size_t i = 1; i < rep.residual_history.size(); ++i) {
            EXPECT_LE(rep.residual_history[i], rep.residual_history[i - 1] + 1e-9);
        }
    }
}

TEST(Icp, InvariantToGlobalRigidPretransform)
{
    const auto ref = blob(3);
    std::mt19937_64 rng(17);
    const auto moving = transformed(ref, fixtures::random_rigid(rng, 20.0, 10.0));
    const auto global = fixtures::random_rigid(rng, 90.0, 100.0);
    const auto [a, ra] = icp_align(moving, ref);
    const auto [b, rb] = icp_align(transformed(moving, global), transformed(ref, global));
    ASSERT_EQ(ra.residual_history.size(), rb.residual_history.size());
    for (std::size_t i = 0; i < ra.residual_history.size(); ++i) {
        EXPECT_NEAR(ra.residual_history[i], rb.residual_history[i], 1e-6);
    }
}

TEST(Icp, ConfigValidation)
{
    IcpConfig cfg;
    cfg.max_iterations = 0;
    EXPECT_THROW(cfg.validate(), InvalidInput);
    cfg = {};
    cfg.trim_fraction = 1.0;
    EXPECT_THROW(cfg.validate(), InvalidInput);
}
