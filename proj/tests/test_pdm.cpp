#include "ssm/model_io.hpp"
#include "ssm/pdm.hpp"
#include "ssm/phantom.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace ssm;

namespace {

std::vector<ShapeVector> random_corpus(std::size_t n, Eigen::Index points, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 5.0);
    std::vector<ShapeVector> out;
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::VectorXd v(3 * points);
        for (auto& x : v) {
            x = g(rng);
        }
        out.emplace_back(v);
    }
    return out;
}

std::vector<ShapeVector> vectors_of(const std::vector<SurfaceMesh>& meshes)
{
    std::vector<ShapeVector> out;
    for (const auto& m : meshes) {
        out.push_back(to_shape_vector(m));
    }
    return out;
}

} // namespace

TEST(BuildPdm, TwoShapesGiveOneModeThroughTheMidpoint)
{
    const auto corpus = random_corpus(2, 10, 1);
    const auto model = build_pdm(corpus);
    ASSERT_EQ(model.num_modes(), 1);
    EXPECT_TRUE(model.mean.isApprox(0.5 * (corpus[0].coords() + corpus[1].coords()), 1e-14));
    const auto r0 = project(model, corpus[0]);
    const auto r1 = project(model, corpus[1]);
    // With divisor N - 1 each shape sits sqrt((N - 1) / N) standard deviations from the mean.
    EXPECT_NEAR(std::abs(r0(0)), std::sqrt(0.5), 1e-12);
    EXPECT_NEAR(r0(0), -r1(0), 1e-12);
    // Two-point sample variance with divisor N - 1 = 1: |a - b|^2 / 2.
    EXPECT_NEAR(model.eigenvalues(0), 0.5 * (corpus[0].coords() - corpus[1].coords()).squaredNorm(), 1e-9);
}

TEST(BuildPdm, EigenvaluesMatchTheSampleCovariance)
{
    const auto corpus = random_corpus(6, 4, 2);
    const auto model = build_pdm(corpus);
    Eigen::MatrixXd x(12, 6);
    for (int j = 0; j < 6; ++j) {
        x.col(j) = corpus[static_cast<std::size_t>(j)].coords();
    }
    const Eigen::MatrixXd centred = x.colwise() - x.rowwise().mean();
    const Eigen::MatrixXd cov = centred * centred.transpose() / 5.0;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    ASSERT_EQ(model.num_modes(), 5);
    for (int k = 0; k < 5; ++k) {
        EXPECT_NEAR(model.eigenvalues(k), eig.eigenvalues()(11 - k), 1e-9 * eig.eigenvalues()(11));
    }
    for (int k = 0; k < 7; ++k) {
        EXPECT_LT(std::abs(eig.eigenvalues()(k)), 1e-9 * eig.eigenvalues()(11));
    }
}

TEST(BuildPdm, ModesAreOrthonormalAndSorted)
{
    const auto model = build_pdm(random_corpus(12, 50, 3));
    ASSERT_EQ(model.num_modes(), 11);
    const Eigen::MatrixXd g = model.eigenvectors.transpose() * model.eigenvectors;
    EXPECT_LT((g - Eigen::MatrixXd::Identity(11, 11)).cwiseAbs().maxCoeff(), 1e-8);
    for (Eigen::Index k = 1; k < model.num_modes(); ++k) {
        EXPECT_GE(model.eigenvalues(k - 1), model.eigenvalues(k));
        EXPECT_GE(model.eigenvalues(k), 0.0);
    }
}

TEST(BuildPdm, LargestComponentOfEachModeIsPositive)
{
    const auto model = build_pdm(random_corpus(8, 20, 4));
    for (Eigen::Index k = 0; k < model.num_modes(); ++k) {
        Eigen::Index arg = 0;
        model.eigenvectors.col(k).cwiseAbs().maxCoeff(&arg);
        EXPECT_GT(model.eigenvectors(arg, k), 0.0);
    }
}

TEST(BuildPdm, ReconstructsEveryTrainingShape)
{
    const auto corpus = random_corpus(10, 30, 5);
    const auto model = build_pdm(corpus);
    for (const auto& s : corpus) {
        const auto rec = reconstruct(model, project(model, s));
        for (Eigen::Index m = 0; m < s.num_points(); ++m) {
            EXPECT_LT((rec.point(m) - s.point(m)).norm(), 1e-6);
        }
    }
}

TEST(BuildPdm, RankBoundedByCorpusSize)
{
    // Three identical shapes plus one distinct: the centred data has rank 1.
    auto corpus = random_corpus(1, 10, 6);
    corpus.push_back(corpus[0]);
    corpus.push_back(corpus[0]);
    corpus.push_back(random_corpus(1, 10, 7)[0]);
    EXPECT_EQ(build_pdm(corpus).num_modes(), 1);
}

TEST(BuildPdm, IdenticalShapesGiveNoModes)
{
    auto corpus = random_corpus(1, 10, 8);
    corpus.push_back(corpus[0]);
    const auto model = build_pdm(corpus);
    EXPECT_EQ(model.num_modes(), 0);
    EXPECT_EQ(reconstruct(model, Eigen::VectorXd()).coords(), corpus[0].coords());
}

TEST(BuildPdm, RejectsBadCorpora)
{
    EXPECT_THROW(build_pdm(random_corpus(1, 5, 9)), InvalidInput);
    auto corpus = random_corpus(2, 5, 9);
    corpus.push_back(random_corpus(1, 6, 9)[0]);
    EXPECT_THROW(build_pdm(corpus), InvalidInput);
}

TEST(BuildPdm, VertexMaskCutsPointsAndTriangles)
{
    const auto corpus = random_corpus(5, 4, 10);
    const std::vector<Triangle> tris = {{0, 1, 2}, {1, 2, 3}};
    PdmBuildOptions opt;
    opt.keep = {true, true, true, false};
    const auto model = build_pdm(corpus, tris, {Label::Body, Label::LAA, Label::RAA, Label::LPV}, opt);
    EXPECT_EQ(model.num_points(), 3);
    ASSERT_EQ(model.topology.size(), 1u);
    EXPECT_EQ(model.topology[0], (Triangle{0, 1, 2}));
    EXPECT_EQ(model.labels, (std::vector<Label>{Label::Body, Label::LAA, Label::RAA}));
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(9);
    for (const auto& s : corpus) {
        mean += s.coords().head(9) / 5.0;
    }
    EXPECT_TRUE(model.mean.isApprox(mean, 1e-14));
}

TEST(BuildPdm, RecoversPlantedSubspace)
{
    SyntheticCorpusSpec spec;
    spec.n_instances = 40;
    spec.base.subdivisions = 3;
    const auto corpus = synth_corpus(spec);
    const auto model = build_pdm(vectors_of(corpus.shapes));
    for (int k = 0; k < 3; ++k) {
        EXPECT_NEAR(model.eigenvalues(k) / corpus.eigenvalues(k), 1.0, 0.1) << "mode " << k;
    }
    EXPECT_LT(oracles::max_principal_angle_deg(corpus.modes, model.eigenvectors.leftCols(3)), 5.0);
}

TEST(Project, MeanProjectsToZero)
{
    const auto model = build_pdm(random_corpus(7, 12, 11));
    EXPECT_LT(project(model, ShapeVector(model.mean)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Project, RoundTripsRandomCoefficients)
{
    const auto model = build_pdm(random_corpus(9, 40, 12));
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(-3, 3);
    Eigen::VectorXd r(model.num_modes());
    for (auto& x : r) {
        x = u(rng);
    }
    EXPECT_LT((project(model, reconstruct(model, r)) - r).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Project, TruncatedReconstructionProjectsToLeadingCoefficients)
{
    const auto model = build_pdm(random_corpus(9, 40, 14));
    Eigen::VectorXd r = Eigen::VectorXd::LinSpaced(model.num_modes(), -2.0, 2.0);
    const auto p = project(model, reconstruct(model, r, 3));
    EXPECT_LT((p.head(3) - r.head(3)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT(p.tail(p.size() - 3).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Project, LengthMismatchThrows)
{
    const auto model = build_pdm(random_corpus(3, 5, 15));
    EXPECT_THROW(project(model, random_corpus(1, 6, 1)[0]), InvalidInput);
}

TEST(Reconstruct, ArithmeticOfASingleMode)
{
    PdmModel model;
    model.mean = Eigen::VectorXd::Zero(6);
    model.eigenvalues = Eigen::VectorXd::Constant(1, 4.0);
    model.eigenvectors = Eigen::MatrixXd::Zero(6, 1);
    model.eigenvectors(0, 0) = 0.6;
    model.eigenvectors(4, 0) = 0.8;
    const auto s = reconstruct(model, Eigen::VectorXd::Constant(1, 2.0));
    EXPECT_DOUBLE_EQ(s.coords()(0), 2.4);
    EXPECT_DOUBLE_EQ(s.coords()(4), 3.2);
    EXPECT_EQ(reconstruct(model, Eigen::VectorXd::Zero(1)).coords(), model.mean);
}

TEST(Reconstruct, BoundsAreChecked)
{
    const auto model = build_pdm(random_corpus(4, 5, 16));
    EXPECT_THROW(reconstruct(model, Eigen::VectorXd::Zero(3), 4), InvalidInput);
    EXPECT_THROW(reconstruct(model, Eigen::VectorXd::Zero(1), 2), InvalidInput);
    EXPECT_THROW(reconstruct(model, Eigen::VectorXd::Zero(3), -1), InvalidInput);
}

TEST(Sample, ZeroBoundsGiveTheMean)
{
    const auto model = build_pdm(random_corpus(5, 8, 17));
    const std::vector<Interval> b(static_cast<std::size_t>(model.num_modes()), {0.0, 0.0});
    EXPECT_EQ(sample(model, 3, b).shape.coords(), model.mean);
}

TEST(Sample, DefaultBoundsStatistics)
{
    const auto model = build_pdm(random_corpus(6, 8, 18));
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(model.num_modes());
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto r = sample(model, seed).coefficients;
        EXPECT_LE(r.cwiseAbs().maxCoeff(), 3.0);
        sum += r;
    }
    EXPECT_LT((sum / 1000.0).cwiseAbs().maxCoeff(), 0.15);
}

TEST(Sample, SameSeedIsBitReproducible)
{
    const auto model = build_pdm(random_corpus(6, 8, 19));
    EXPECT_EQ(sample(model, 42).shape.coords(), sample(model, 42).shape.coords());
    EXPECT_NE(sample(model, 42).shape.coords(), sample(model, 43).shape.coords());
}

TEST(Sample, EmpiricalBoundsSpanTrainingCoefficients)
{
    const auto corpus = random_corpus(8, 10, 20);
    const auto model = build_pdm(corpus);
    const auto b = empirical_bounds(model, corpus);
    for (const auto& s : corpus) {
        const auto r = project(model, s);
        for (std::size_t k = 0; k < b.size(); ++k) {
            EXPECT_GE(r(static_cast<Eigen::Index>(k)), b[k].lo);
            EXPECT_LE(r(static_cast<Eigen::Index>(k)), b[k].hi);
        }
    }
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto r = sample(model, seed, b).coefficients;
        for (std::size_t k = 0; k < b.size(); ++k) {
            EXPECT_GE(r(static_cast<Eigen::Index>(k)), b[k].lo);
            EXPECT_LE(r(static_cast<Eigen::Index>(k)), b[k].hi);
        }
    }
}

TEST(Sample, RejectsBadBounds)
{
    const auto model = build_pdm(random_corpus(4, 5, 21));
    EXPECT_THROW(sample(model, 1, {{0.0, 1.0}}), InvalidInput);
    std::vector<Interval> b(3, {1.0, -1.0});
    EXPECT_THROW(sample(model, 1, b), InvalidInput);
}

TEST(ModesForVariance, Arithmetic)
{
    PdmModel model;
    model.eigenvalues = Eigen::Vector2d(3.0, 1.0);
    EXPECT_EQ(modes_for_variance(model, 0.75), 1);
    EXPECT_EQ(modes_for_variance(model, 0.76), 2);
    EXPECT_EQ(modes_for_variance(model, 1.0), 2);
    EXPECT_THROW(modes_for_variance(model, 0.0), InvalidInput);
}

TEST(ModesForVariance, FullFractionGivesEveryMode)
{
    const auto model = build_pdm(random_corpus(15, 20, 22));
    EXPECT_EQ(modes_for_variance(model, 1.0), model.num_modes());
}

TEST(ModelIo, PdmRoundTripIsExact)
{
    SyntheticCorpusSpec spec;
    spec.base.subdivisions = 2;
    const auto corpus = synth_corpus(spec);
    const auto model = build_pdm(std::span<const SurfaceMesh>(corpus.shapes));
    const auto back = decode_pdm(encode_model(model));
    EXPECT_EQ(back.mean, model.mean);
    EXPECT_EQ(back.eigenvalues, model.eigenvalues);
    EXPECT_EQ(back.eigenvectors, model.eigenvectors);
    EXPECT_EQ(back.topology, model.topology);
    EXPECT_EQ(back.labels, model.labels);
    EXPECT_EQ(back.n_training, 12);
    EXPECT_EQ(back.divisor, 11.0);
}

TEST(ModelIo, GpRoundTripAndTypeTag)
{
    PhantomSpec ps;
    ps.subdivisions = 2;
    const auto ref = atria_phantom(ps);
    const auto gp = build_low_rank_gp(ref, KernelSpec::body(), {12, 100});
    const auto bytes = encode_model(gp);
    EXPECT_EQ(peek_model_type(bytes), ModelType::Gp);
    const auto back = decode_gp(bytes);
    EXPECT_EQ(back.basis, gp.basis);
    EXPECT_EQ(back.eigenvalues, gp.eigenvalues);
    EXPECT_EQ(back.reference.vertices, gp.reference.vertices);
    EXPECT_EQ(back.reference.labels, gp.reference.labels);
    EXPECT_EQ(back.captured_variance, gp.captured_variance);
    EXPECT_THROW(decode_pdm(bytes), ParseError);
}

TEST(ModelIo, LayoutStartsWithMagicAndLittleEndianHeader)
{
    PdmModel model;
    model.mean = Eigen::VectorXd::Zero(3);
    model.eigenvalues = Eigen::VectorXd();
    model.eigenvectors = Eigen::MatrixXd(3, 0);
    model.n_training = 2;
    model.divisor = 1.0;
    const auto bytes = encode_model(model);
    EXPECT_EQ(bytes.substr(0, 5), "SSMC1");
    EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 1u); // version, low byte first
    EXPECT_EQ(static_cast<unsigned char>(bytes[9]), 1u); // type tag
    // 5 magic + 2*4 + 5*8 + 2*8 header bytes, then three mean doubles.
    EXPECT_EQ(bytes.size(), 5u + 8u + 40u + 16u + 24u);
}

TEST(ModelIo, RejectsCorruptFiles)
{
    const auto model = build_pdm(random_corpus(4, 5, 23));
    const auto bytes = encode_model(model);
    EXPECT_THROW(decode_pdm("SSMC2" + bytes.substr(5)), ParseError);
    EXPECT_THROW(decode_pdm(bytes.substr(0, bytes.size() - 1)), ParseError);
    EXPECT_THROW(decode_pdm(bytes.substr(0, 20)), ParseError);
    auto huge = bytes;
    huge[21 + 7] = '\x7f'; // top byte of the point count
    EXPECT_THROW(decode_pdm(huge), ParseError);
    auto bad_type = bytes;
    bad_type[9] = 7;
    EXPECT_THROW(decode_pdm(bad_type), ParseError);
}

TEST(ModelIo, FileRoundTrip)
{
    const auto model = build_pdm(random_corpus(4, 5, 24));
    const auto path = std::filesystem::temp_directory_path() / "ssm_test_model.ssmc";
    save_model(model, path);
    EXPECT_EQ(load_pdm(path).eigenvectors, model.eigenvectors);
    std::filesystem::remove(path);
}
