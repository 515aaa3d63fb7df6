#include "ssm/ecg.hpp"
#include "ssm/eikonal.hpp"
#include "ssm/phantom.hpp"
#include "ssm/volumetric.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace ssm;

namespace {

const TetMesh& tagged_phantom()
{
    static const TetMesh m = [] {
        PhantomSpec spec;
        spec.subdivisions = 3;
        auto w = extrude_wall(atria_phantom(spec));
        return assign_fibers(assign_regions(w, load_region_rules(SSM_DATA_DIR "/regions_phantom.rules")));
    }();
    return m;
}

const ActivationMap& phantom_activation()
{
    static const ActivationMap a = [] {
        const auto& m = tagged_phantom();
        return fast_march(m, ConductionTable{}, sinus_seed(m, m.vertices[37], 2.5));
    }();
    return a;
}

const ElectrodeSet& standard_electrodes()
{
    static const ElectrodeSet e = load_electrodes(SSM_DATA_DIR "/electrodes_standard.txt");
    return e;
}

EcgTraceSet simulate(const TetMesh& m, std::span<const double> lat, const ElectrodeSet& el, double duration = 200.0)
{
    const auto movie = vm_movie(lat, analytic_atrial_ap(), duration, 1.0);
    return derive_12_leads(surface_potentials(m, movie, el));
}

/// One tet with its centroid at the origin.
TetMesh single_tet()
{
    TetMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 2, 0), Vec3(0, 0, 2)};
    m.tets = {Tet{0, 1, 2, 3}};
    for (auto& v : m.vertices) {
        v -= Vec3(0.5, 0.5, 0.5);
    }
    return m;
}

ElectrodeSet on_axis(const Vec3& axis, double d)
{
    ElectrodeSet e;
    const Vec3 u = axis.normalized();
    e.positions = {d * u,
                   2.0 * d * u,
                   Vec3(0, 0, -300),
                   Vec3(300, 0, 0),
                   Vec3(0, 300, 0),
                   Vec3(-300, 0, 0),
                   Vec3(0, -300, 0),
                   Vec3(200, 200, 0),
                   Vec3(-200, -200, 0)};
    return e;
}

EcgTraceSet pulse_traces(std::size_t n, double dt, std::size_t from, std::size_t to)
{
    EcgTraceSet t;
    t.dt = dt;
    for (std::size_t l = 0; l < lead_count; ++l) {
        t.leads[l].assign(n, 0.0);
        for (std::size_t k = from; k <= to; ++k) {
            t.leads[l][k] = (1.0 + 0.1 * static_cast<double>(l)) * ((k % 2) != 0 ? 1.0 : -0.7);
        }
    }
    return t;
}

} // namespace

TEST(ApTemplate, AnalyticShape)
{
    const auto ap = analytic_atrial_ap();
    EXPECT_NO_THROW(ap.validate());
    EXPECT_DOUBLE_EQ(ap.rest(), -81.0);
    const double peak = *std::max_element(ap.samples.begin(), ap.samples.end());
    EXPECT_NEAR(peak - ap.rest(), 105.0, 0.5);
    EXPECT_LT(ap.dt * static_cast<double>(ap.upstroke_end), 2.0);
    double apd90 = 0.0;
    for (std::size_t i = ap.upstroke_end; i < ap.samples.size(); ++i) {
        if (ap.samples[i] < ap.rest() + 0.1 * (peak - ap.rest())) {
            apd90 = ap.dt * static_cast<double>(i);
            break;
        }
    }
    EXPECT_NEAR(apd90, 280.0, 10.0);
    EXPECT_NEAR(ap.samples.back(), ap.rest(), 1e-3);
}

TEST(ApTemplate, DataFileMatchesAnalytic)
{
    const auto file = load_ap_template(SSM_DATA_DIR "/ap_atrial.txt");
    const auto ap = analytic_atrial_ap();
    EXPECT_EQ(file.dt, ap.dt);
    EXPECT_EQ(file.samples, ap.samples);
    EXPECT_EQ(file.upstroke_end, ap.upstroke_end);
}

TEST(ApTemplate, InterpolatesLinearly)
{
    ApTemplate ap;
    ap.dt = 2.0;
    ap.samples = {-80.0, 20.0, 0.0};
    ap.upstroke_end = 1;
    EXPECT_DOUBLE_EQ(ap.at(-5.0), -80.0);
    EXPECT_DOUBLE_EQ(ap.at(1.0), -30.0);
    EXPECT_DOUBLE_EQ(ap.at(3.0), 10.0);
    EXPECT_DOUBLE_EQ(ap.at(100.0), 0.0);
}

TEST(ApTemplate, ParseErrors)
{
    EXPECT_THROW(parse_ap_template(""), ParseError);
    EXPECT_THROW(parse_ap_template("-80\n20\n"), ParseError);
    EXPECT_THROW(parse_ap_template("dt 0.1\n"), ParseError);
    EXPECT_THROW(parse_ap_template("dt 0.1\n-80\nabc\n"), ParseError);
    EXPECT_THROW(parse_ap_template("dt -1\n-80\n20\n"), ParseError);
    EXPECT_THROW(parse_ap_template("dt 0.1\n20\n-80\n"), ParseError); // peak at the first sample
    EXPECT_NO_THROW(parse_ap_template("# c\ndt 0.1\n-80\n20\n0\n"));
}

TEST(VmMovie, ZeroLatReproducesTemplate)
{
    const auto ap = analytic_atrial_ap();
    const std::vector<double> lat = {0.0};
    const auto mv = vm_movie(lat, ap, 400.0, 0.1);
    ASSERT_EQ(mv.num_steps(), 4001u);
    for (std::size_t k = 0; k < mv.num_steps(); ++k) {
        EXPECT_NEAR(mv.vm(0, static_cast<Eigen::Index>(k)), ap.samples[k], 1e-9);
    }
}

TEST(VmMovie, ShiftMovesUpstrokeCrossing)
{
    const auto ap = analytic_atrial_ap();
    const std::vector<double> lat = {0.0, 10.0};
    const auto mv = vm_movie(lat, ap, 30.0, 0.05);
    auto crossing = [&](Eigen::Index row) {
        for (Eigen::Index k = 1; k < mv.vm.cols(); ++k) {
            const double a = mv.vm(row, k - 1);
            const double b = mv.vm(row, k);
            if (a < -40.0 && b >= -40.0) {
                return mv.dt * (static_cast<double>(k - 1) + (-40.0 - a) / (b - a));
            }
        }
        return -1.0;
    };
    EXPECT_NEAR(crossing(1) - crossing(0), 10.0, 1e-9);
    EXPECT_DOUBLE_EQ(mv.vm(1, 0), ap.rest());
}

TEST(VmMovie, Errors)
{
    const auto ap = analytic_atrial_ap();
    const std::vector<double> bad = {0.0, std::numeric_limits<double>::infinity()};
    EXPECT_THROW(vm_movie(bad, ap, 10.0, 1.0), InvalidInput);
    const std::vector<double> ok = {0.0};
    EXPECT_THROW(vm_movie(ok, ap, 1000.0, 1.0), InvalidInput);
    EXPECT_THROW(vm_movie(ok, ap, 10.0, 0.0), InvalidInput);
}

TEST(Electrodes, StandardFileLoads)
{
    const auto& e = standard_electrodes();
    EXPECT_NO_THROW(e.validate());
    const auto& m = tagged_phantom();
    for (const auto& p : e.positions) {
        for (const auto& v : m.vertices) {
            ASSERT_GT((p - v).norm(), 10.0);
        }
    }
}

TEST(Electrodes, ParseErrors)
{
    const std::string full = "RA 0 0 0\nLA 1 0 0\nLL 2 0 0\nV1 3 0 0\nV2 4 0 0\nV3 5 0 0\nV4 6 0 0\nV5 7 0 0\nV6 8 0 0\n";
    EXPECT_NO_THROW(parse_electrodes(full));
    EXPECT_THROW(parse_electrodes("RA 0 0 0\n"), ParseError);
    EXPECT_THROW(parse_electrodes(full + "V1 9 9 9\n"), ParseError);
    EXPECT_THROW(parse_electrodes(full + "V7 9 9 9\n"), ParseError);
    EXPECT_THROW(parse_electrodes("RA 0 0\n"), ParseError);
    std::string dup = full;
    dup.replace(dup.find("LA 1"), 4, "LA 0");
    EXPECT_THROW(parse_electrodes(dup), ParseError);
}

TEST(SurfacePotentials, UniformVmGivesZero)
{
    const auto& m = tagged_phantom();
    const std::vector<double> lat(m.num_vertices(), 12.0);
    const auto movie = vm_movie(lat, analytic_atrial_ap(), 100.0, 1.0);
    const auto phi = surface_potentials(m, movie, standard_electrodes());
    EXPECT_EQ(phi.phi.cwiseAbs().maxCoeff(), 0.0);
    const auto traces = derive_12_leads(phi);
    for (const auto& l : traces.leads) {
        for (double v : l) {
            EXPECT_EQ(v, 0.0);
        }
    }
}

TEST(SurfacePotentials, SingleTetIsAPointDipole)
{
    const auto m = single_tet();
    const Vec3 g(3.0, -1.0, 2.0); // mV/mm
    VmMovie movie;
    movie.vm.resize(4, 1);
    for (int i = 0; i < 4; ++i) {
        movie.vm(i, 0) = g.dot(m.vertices[static_cast<std::size_t>(i)]);
    }
    const double d = 50.0;
    const auto el = on_axis(g, d);
    const auto phi = surface_potentials(m, movie, el).phi;
    const Vec3 p = -tet_volume(m, 0) * g;
    for (std::size_t e = 0; e < electrode_count; ++e) {
        const Vec3 r = el[e];
        const double expect = p.dot(r) / (4.0 * EIGEN_PI * std::pow(r.norm(), 3));
        EXPECT_NEAR(phi(static_cast<Eigen::Index>(e), 0), expect, 1e-12 * std::abs(expect) + 1e-15);
    }
    EXPECT_NEAR(phi(0, 0) / phi(1, 0), 4.0, 1e-9);
}

TEST(SurfacePotentials, FiberSignDoesNotMatter)
{
    auto flipped = tagged_phantom();
    for (auto& f : flipped.fibers) {
        f = -f;
    }
    const auto a = fast_march(flipped, ConductionTable{}, sinus_seed(flipped, flipped.vertices[37], 2.5));
    for (std::size_t i = 0; i < a.lat.size(); ++i) {
        EXPECT_NEAR(a.lat[i], phantom_activation().lat[i], 1e-9);
    }
    const auto ta = simulate(flipped, a.lat, standard_electrodes(), 120.0);
    const auto tb = simulate(tagged_phantom(), phantom_activation().lat, standard_electrodes(), 120.0);
    for (std::size_t l = 0; l < lead_count; ++l) {
        for (std::size_t k = 0; k < ta.num_samples(); ++k) {
            EXPECT_NEAR(ta.leads[l][k], tb.leads[l][k], 1e-9 * (1.0 + std::abs(tb.leads[l][k])));
        }
    }
}

TEST(SurfacePotentials, ThreadCountDoesNotChangeResult)
{
    const auto& m = tagged_phantom();
    const auto movie = vm_movie(phantom_activation().lat, analytic_atrial_ap(), 100.0, 1.0);
    ForwardOptions one;
    ForwardOptions four;
    four.jobs = 4;
    const auto a = surface_potentials(m, movie, standard_electrodes(), one);
    const auto b = surface_potentials(m, movie, standard_electrodes(), four);
    EXPECT_EQ(a.phi, b.phi);
}

TEST(SurfacePotentials, BinningIsAFarFieldApproximation)
{
    const auto& m = tagged_phantom();
    const auto movie = vm_movie(phantom_activation().lat, analytic_atrial_ap(), 100.0, 1.0);
    ForwardOptions fine;
    fine.sample_spacing = 1e-3;
    const auto exact = surface_potentials(m, movie, standard_electrodes(), fine).phi;
    const auto binned = surface_potentials(m, movie, standard_electrodes()).phi;
    const double peak = exact.cwiseAbs().maxCoeff();
    ASSERT_GT(peak, 0.0);
    EXPECT_LT((exact - binned).cwiseAbs().maxCoeff(), 0.01 * peak);
}

// Close to an extended wavefront the peak falls off a little slower than a
// point dipole; far away it approaches the inverse-square law.
TEST(SurfacePotentials, FarFieldFalloffIsInverseSquare)
{
    const auto& m = tagged_phantom();
    const auto movie = vm_movie(phantom_activation().lat, analytic_atrial_ap(), 150.0, 1.0);
    Vec3 c = Vec3::Zero();
    for (const auto& v : m.vertices) {
        c += v;
    }
    c /= static_cast<double>(m.num_vertices());
    auto peak = [&](double scale) {
        return surface_potentials(m, movie, standard_electrodes().scaled(c, scale)).phi.cwiseAbs().maxCoeff();
    };
    const double r1 = peak(1.0) / peak(2.0);
    const double r8 = peak(8.0) / peak(16.0);
    EXPECT_GT(r1, 3.0);
    EXPECT_LT(r1, 8.4);
    EXPECT_NEAR(r8, 4.0, 0.08);
    EXPECT_LT(std::abs(r8 - 4.0), std::abs(r1 - 4.0));
}

TEST(SurfacePotentials, ElectrodeInsideThrows)
{
    const auto& m = tagged_phantom();
    const auto movie = vm_movie(phantom_activation().lat, analytic_atrial_ap(), 10.0, 1.0);
    auto el = standard_electrodes();
    el.positions[4] = Vec3(0.0, 0.0, 0.0);
    EXPECT_THROW(surface_potentials(m, movie, el), InvalidInput);
    VmMovie wrong;
    wrong.vm.setZero(3, 2);
    EXPECT_THROW(surface_potentials(m, wrong, standard_electrodes()), InvalidInput);
}

TEST(Leads, EqualInputsGiveZero)
{
    ElectrodePotentials p;
    p.phi.setConstant(9, 5, 3.25);
    const auto t = derive_12_leads(p);
    for (const auto& l : t.leads) {
        for (double v : l) {
            EXPECT_EQ(v, 0.0);
        }
    }
}

TEST(Leads, LeadAlgebraOnRandomInputs)
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 10.0);
    ElectrodePotentials p;
    p.phi.resize(9, 50);
    for (Eigen::Index i = 0; i < p.phi.size(); ++i) {
        p.phi.data()[i] = g(rng);
    }
    const auto t = derive_12_leads(p);
    for (std::size_t k = 0; k < 50; ++k) {
        const auto e = [&](int i) { return p.phi(i, static_cast<Eigen::Index>(k)); };
        const auto& L = t.leads;
        EXPECT_NEAR(L[0][k] + L[2][k] - L[1][k], 0.0, 1e-12);
        EXPECT_NEAR(L[3][k], -(L[0][k] + L[1][k]) / 2.0, 1e-12);
        EXPECT_NEAR(L[4][k], (L[0][k] - L[2][k]) / 2.0, 1e-12);
        EXPECT_NEAR(L[5][k], (L[1][k] + L[2][k]) / 2.0, 1e-12);
        EXPECT_NEAR(L[3][k] + L[4][k] + L[5][k], 0.0, 1e-12);
        for (int v = 0; v < 6; ++v) {
            EXPECT_NEAR(L[static_cast<std::size_t>(6 + v)][k], e(3 + v) - (e(0) + e(1) + e(2)) / 3.0, 1e-12);
        }
    }
}

TEST(Leads, WrongElectrodeCountThrows)
{
    ElectrodePotentials p;
    p.phi.setZero(8, 3);
    EXPECT_THROW(derive_12_leads(p), InvalidInput);
}

TEST(PWave, PulseDuration)
{
    auto t = pulse_traces(200, 1.0, 20, 95);
    const auto p = p_wave_duration(t);
    EXPECT_DOUBLE_EQ(p.duration(), 75.0);
    EXPECT_DOUBLE_EQ(p.onset, 20.0);
    EXPECT_DOUBLE_EQ(t.offset[3], 95.0);
}

TEST(PWave, LatestOffsetWins)
{
    auto t = pulse_traces(200, 1.0, 20, 95);
    const auto longer = pulse_traces(200, 1.0, 20, 110);
    t.leads[7] = longer.leads[7];
    const auto p = p_wave_duration(t);
    EXPECT_DOUBLE_EQ(p.offset, 110.0);
    EXPECT_EQ(p.offset_lead, 7u);
    EXPECT_DOUBLE_EQ(p.duration(), 90.0);
}

TEST(PWave, FlatLeadIsSkippedAndAllFlatThrows)
{
    auto t = pulse_traces(100, 1.0, 10, 50);
    t.leads[2].assign(100, 0.0);
    const auto p = p_wave_duration(t);
    EXPECT_DOUBLE_EQ(p.duration(), 40.0);
    EXPECT_TRUE(std::isnan(t.onset[2]));
    auto z = pulse_traces(100, 1.0, 10, 50);
    for (auto& l : z.leads) {
        l.assign(100, 0.0);
    }
    EXPECT_THROW(p_wave_duration(z), InvalidInput);
    EXPECT_THROW(p_wave_duration(t, 0.0), InvalidInput);
}

TEST(PWave, GainInvariantOnSimulatedTraces)
{
    auto t = simulate(tagged_phantom(), phantom_activation().lat, standard_electrodes());
    const auto base = p_wave_duration(t);
    for (double gain : {1e-3, 0.5, 7.0, 1e4}) {
        auto s = t;
        for (auto& l : s.leads) {
            for (double& v : l) {
                v *= gain;
            }
        }
        const auto p = p_wave_duration(s);
        EXPECT_EQ(p.onset, base.onset) << gain;
        EXPECT_EQ(p.offset, base.offset) << gain;
    }
    normalize(t);
    EXPECT_EQ(p_wave_duration(t).duration(), base.duration());
}

TEST(PWave, ShiftEquivariantOnSimulatedTraces)
{
    const auto& lat = phantom_activation().lat;
    auto t0 = simulate(tagged_phantom(), lat, standard_electrodes());
    const auto p0 = p_wave_duration(t0);
    // Whole-sample shifts; sub-sample shifts need a finer mesh than this one.
    for (double shift : {7.0, 13.0, 30.0}) {
        std::vector<double> moved = lat;
        for (double& v : moved) {
            v += shift;
        }
        auto t1 = simulate(tagged_phantom(), moved, standard_electrodes(), 200.0 + shift);
        const auto p1 = p_wave_duration(t1);
        EXPECT_NEAR(p1.onset - p0.onset, shift, t0.dt) << shift;
        EXPECT_NEAR(p1.offset - p0.offset, shift, t0.dt) << shift;
        EXPECT_NEAR(p1.duration(), p0.duration(), t0.dt) << shift;
    }
}

TEST(PWave, PhantomDurationIsPlausible)
{
    auto t = simulate(tagged_phantom(), phantom_activation().lat, standard_electrodes());
    const auto p = p_wave_duration(t);
    double max_lat = 0.0;
    for (double v : phantom_activation().lat) {
        max_lat = std::max(max_lat, v);
    }
    EXPECT_GE(p.duration(), 0.8 * max_lat);
    EXPECT_LE(p.duration(), max_lat + 30.0);
}

TEST(TracesCsv, RoundTrip)
{
    auto t = pulse_traces(50, 0.5, 5, 30);
    std::ostringstream os;
    write_traces_csv(os, t);
    const auto back = parse_traces_csv(os.str());
    EXPECT_EQ(back.dt, 0.5);
    EXPECT_EQ(back.leads, t.leads);
    EXPECT_THROW(parse_traces_csv("time,I\n0,1\n"), ParseError);
    EXPECT_THROW(parse_traces_csv(""), ParseError);
}
