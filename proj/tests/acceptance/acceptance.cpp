// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Pass criterion numbers to run a subset.

#include "oracles.hpp"

#include "ssm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace ssm;
namespace fs = std::filesystem;

namespace {

struct Outcome
{
    bool pass = true;
    std::vector<std::string> notes;

    // Records a sub-check; any failing sub-check fails the criterion.
    void expect(bool ok, const std::string& what)
    {
        pass = pass && ok;
        notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    }
};

struct Criterion
{
    int id;
    const char* name;
    double limit_s;
    std::function<void(Outcome&)> run;
};

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

fs::path scratch(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / "atria_ssm_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<ShapeVector> vectors(const std::vector<SurfaceMesh>& meshes)
{
    std::vector<ShapeVector> out;
    for (const auto& m : meshes) {
        out.push_back(to_shape_vector(m));
    }
    return out;
}

double max_of(std::span<const double> v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

/// Column `col` of a CSV with a header row.
std::vector<std::string> csv_column(const fs::path& file, const std::string& col)
{
    std::istringstream in(io::read_file(file));
    std::string line;
    std::getline(in, line);
    std::vector<std::string> header;
    {
        std::istringstream h(line);
        std::string cell;
        while (std::getline(h, cell, ',')) {
            header.push_back(cell);
        }
    }
    const auto idx = static_cast<std::size_t>(std::find(header.begin(), header.end(), col) - header.begin());
    if (idx == header.size()) {
        throw InvalidInput(file.string() + ": no column " + col);
    }
    std::vector<std::string> out;
    while (std::getline(in, line)) {
        std::istringstream r(line);
        std::string cell;
        for (std::size_t i = 0; i <= idx && std::getline(r, cell, ','); ++i) {
        }
        out.push_back(cell);
    }
    return out;
}

std::vector<double> csv_numbers(const fs::path& file, const std::string& col)
{
    std::vector<double> out;
    for (const auto& s : csv_column(file, col)) {
        out.push_back(std::stod(s));
    }
    return out;
}

const RegionRules& phantom_rules()
{
    static const RegionRules r = load_region_rules(SSM_DATA_DIR "/regions_phantom.rules");
    return r;
}

TetMesh tagged_wall(int subdivisions, const WallConfig& wall = {})
{
    PhantomSpec spec;
    spec.subdivisions = subdivisions;
    return assign_fibers(assign_regions(extrude_wall(atria_phantom(spec), wall), phantom_rules()));
}

EcgTraceSet simulate(const TetMesh& m, std::span<const double> lat, const ElectrodeSet& el, double duration)
{
    const auto movie = vm_movie(lat, analytic_atrial_ap(), duration, 1.0);
    return derive_12_leads(surface_potentials(m, movie, el));
}

// ---- criteria

void pca_exactness(Outcome& o)
{
    SyntheticCorpusSpec spec;
    spec.n_instances = 40;
    spec.base.subdivisions = 4;
    const auto corpus = synth_corpus(spec);
    const auto shapes = vectors(corpus.shapes);
    const auto model = build_pdm(shapes, corpus.base.triangles);
    double worst = 0.0;
    for (const auto& s : shapes) {
        worst = std::max(worst, max_of(vertex_distances(s, reconstruct(model, project(model, s)))));
    }
    o.expect(worst < 1e-6, "max reconstruction error " + fmt("%.3g", worst) + " mm over 40 shapes (< 1e-6)");
}

void planted_recovery(Outcome& o)
{
    SyntheticCorpusSpec spec;
    spec.n_instances = 40;
    spec.variances = {9.0, 4.0, 1.0};
    spec.noise_sigma = 0.1;
    const auto corpus = synth_corpus(spec);
    const auto model = build_pdm(std::span<const SurfaceMesh>(corpus.shapes));
    double worst_rel = 0.0;
    for (Eigen::Index k = 0; k < 3; ++k) {
        worst_rel = std::max(worst_rel, std::abs(model.eigenvalues(k) / corpus.eigenvalues(k) - 1.0));
    }
    o.expect(worst_rel < 0.10, "eigenvalue error " + fmt("%.2f", 100.0 * worst_rel) + "% (< 10%)");
    const double angle = oracles::max_principal_angle_deg(model.eigenvectors.leftCols(3), corpus.modes);
    o.expect(angle < 5.0, "largest principal angle " + fmt("%.3f", angle) + " deg (< 5)");
    const double c3 = compactness(model)[2];
    o.expect(c3 > 0.99, "compactness with 3 modes " + fmt("%.5f", c3) + " (> 0.99)");
}

void icp_recovery(Outcome& o)
{
    // ICP is point based; an irregular 2000-point sample avoids the lattice
    // aliasing of the icosphere.
    const auto full = atria_phantom();
    std::mt19937_64 rng(2024);
    std::vector<std::uint32_t> idx(full.num_vertices());
    std::iota(idx.begin(), idx.end(), 0U);
    std::shuffle(idx.begin(), idx.end(), rng);
    SurfaceMesh ref;
    for (std::size_t i = 0; i < 2000; ++i) {
        ref.vertices.push_back(full.vertices[idx[i]]);
    }
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_rot = 0.0;
    double worst_t = 0.0;
    int worst_it = 0;
    int failures = 0;
    for (int trial = 0; trial < 100; ++trial) {
        RigidTransform truth;
        const Vec3 axis(g(rng), g(rng), g(rng));
        truth.rotation = Eigen::AngleAxisd(u(rng) * 30.0 * EIGEN_PI / 180.0, axis.normalized()).toRotationMatrix();
        const Vec3 dir(g(rng), g(rng), g(rng));
        truth.translation = dir.normalized() * 20.0 * std::cbrt(u(rng));
        const auto [out, rep] = icp_align(transformed(ref, truth), ref);
        const auto expected = truth.inverse();
        const double r = rotation_angle_deg(rep.final_transform.rotation, expected.rotation);
        const double t = (rep.final_transform.translation - expected.translation).norm();
        failures += !(r < 0.5 && t < 0.1 && rep.iterations_run <= 150);
        worst_rot = std::max(worst_rot, r);
        worst_t = std::max(worst_t, t);
        worst_it = std::max(worst_it, rep.iterations_run);
    }
    o.expect(failures == 0, std::to_string(100 - failures) + "/100 trials recovered");
    o.expect(worst_rot < 0.5, "worst rotation error " + fmt("%.2e", worst_rot) + " deg (< 0.5)");
    o.expect(worst_t < 0.1, "worst translation error " + fmt("%.2e", worst_t) + " mm (< 0.1)");
    o.expect(worst_it <= 150, "most iterations " + std::to_string(worst_it) + " (<= 150)");
}

void nystrom_fidelity(Outcome& o)
{
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(-30.0, 30.0);
    SurfaceMesh cloud;
    for (int i = 0; i < 200; ++i) {
        cloud.vertices.emplace_back(u(rng), u(rng), u(rng));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> dense(kernel_matrix(cloud, KernelSpec::body()));
    const Eigen::VectorXd exact = dense.eigenvalues().reverse();
    const auto model = build_low_rank_gp(cloud, KernelSpec::body(), {30, 100});
    // The kernel acts per coordinate, so each scalar eigenvalue appears three times.
    double worst = 0.0;
    for (int j = 0; j < 10; ++j) {
        worst = std::max(worst, std::abs(model.eigenvalues(3 * j) / exact(j) - 1.0));
    }
    o.expect(worst < 0.02, "top-10 eigenvalue error " + fmt("%.3f", 100.0 * worst) +
                               "% with 100 of 200 landmarks (< 2%)");
}

void correspondence(Outcome& o)
{
    const auto ref = atria_phantom();
    const auto model = build_low_rank_gp(ref, KernelSpec::body(), {100, 1000});
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    double worst = 0.0;
    int ok = 0;
    const int targets = 6;
    for (int t = 0; t < targets; ++t) {
        Eigen::VectorXd truth(model.rank());
        for (auto& x : truth) {
            x = u(rng);
        }
        const auto target = gp_deform(model, truth);
        const auto fit = fit_to_target(model, target);
        double w = 0.0;
        for (std::size_t i = 0; i < ref.num_vertices(); ++i) {
            w = std::max(w, (fit.deformed_reference.vertices[i] - target.vertices[i]).norm());
        }
        ok += w < 0.1;
        worst = std::max(worst, w);
    }
    o.expect(ok == targets, "in-span targets within 0.1 mm: " + std::to_string(ok) + "/" + std::to_string(targets) +
                                " (worst vertex " + fmt("%.2f", worst) + " mm)");

    // Noisy corpus through the align and correspond stages.
    const auto dir = scratch("correspondence");
    auto cfg = parse_config("", dir, SSM_DATA_DIR);
    cfg.corpus = dir / "corpus";
    cfg.output = dir / "out";
    write_synthetic_corpus(cfg.synth, cfg.corpus);
    Pipeline p(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    p.run("align");
    p.run("correspond");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto means = csv_numbers(cfg.output / "correspond" / "fit.csv", "mean_mm");
    const double mean = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
    const double limit = 3.0 * cfg.synth.noise_sigma;
    o.expect(mean <= limit, "noisy corpus mean fit distance " + fmt("%.3f", mean) + " mm (<= " + fmt("%.2f", limit) +
                                "), worst shape " + fmt("%.3f", max_of(means)) + " mm");
    o.expect(secs < 300.0, std::to_string(means.size()) + " targets fitted in " + fmt("%.1f", secs) + " s (< 300)");
}

void evaluation(Outcome& o)
{
    SyntheticCorpusSpec spec;
    spec.n_instances = 12;
    const auto corpus = vectors(synth_corpus(spec).shapes);
    const auto max_k = static_cast<Eigen::Index>(corpus.size()) - 2;
    std::vector<std::vector<LooInstance>> loo;
    for (Eigen::Index k = 1; k <= max_k; ++k) {
        loo.push_back(generalization_loo(corpus, {k, 0}));
    }
    int increases = 0;
    for (std::size_t k = 1; k < loo.size(); ++k) {
        for (std::size_t n = 0; n < corpus.size(); ++n) {
            increases += loo[k][n].rmse > loo[k - 1][n].rmse;
        }
    }
    o.expect(increases == 0, "LOO rmse non-increasing over k = 1.." + std::to_string(max_k) + " for every instance (" +
                                 fmt("%.3f", loo.front()[0].rmse) + " -> " + fmt("%.3f", loo.back()[0].rmse) +
                                 " mm for shape 0)");

    const auto model = build_pdm(corpus);
    SpecificityOptions opt;
    opt.n_samples = 1000;
    opt.seed = 7;
    opt.jobs = 0;
    const auto a = specificity(model, corpus, opt);
    const auto b = specificity(model, corpus, opt);
    o.expect(a.rmse == b.rmse && a.closest == b.closest, "specificity with n = 1000 is bit-identical across runs");
    const std::vector<ShapeVector> subset(corpus.begin(), corpus.begin() + 8);
    const auto s = specificity(model, subset, opt);
    int worse = 0;
    for (std::size_t i = 0; i < a.rmse.size(); ++i) {
        worse += a.rmse[i] > s.rmse[i];
    }
    o.expect(worse == 0, "specificity against 12 shapes <= against a subset of 8 for every sample (mean " +
                             fmt("%.3f", a.mean) + " vs " + fmt("%.3f", s.mean) + " mm)");
    const double last = compactness(model).back();
    o.expect(last == 1.0, "compactness ends at " + fmt("%.17g", last));
}

void eikonal(Outcome& o)
{
    {
        const auto slab = box_tet_mesh(Vec3::Zero(), {100, 20, 3}, 1.0);
        std::vector<std::uint32_t> seeds;
        for (std::uint32_t i = 0; i < slab.num_vertices(); ++i) {
            if (slab.vertices[i].x() == 0.0) {
                seeds.push_back(i);
            }
        }
        const auto a = fast_march(slab, ConductionTable::uniform(1000.0), seeds);
        double worst = 0.0;
        for (std::uint32_t i = 0; i < slab.num_vertices(); ++i) {
            const double x = slab.vertices[i].x();
            if (x > 0.0) {
                worst = std::max(worst, std::abs(a.lat[i] / x - 1.0));
            }
        }
        o.expect(worst <= 0.03, "isotropic slab lat error " + fmt("%.3f", 100.0 * worst) + "% (<= 3%)");
    }
    {
        auto slab = box_tet_mesh(Vec3::Zero(), {40, 40, 3}, 1.0);
        slab.fibers.assign(slab.num_tets(), Vec3::UnitX());
        const auto table = ConductionTable::uniform(500.0, 2.0);
        std::vector<std::uint32_t> x0;
        std::vector<std::uint32_t> y0;
        for (std::uint32_t i = 0; i < slab.num_vertices(); ++i) {
            if (slab.vertices[i].x() == 0.0) {
                x0.push_back(i);
            }
            if (slab.vertices[i].y() == 0.0) {
                y0.push_back(i);
            }
        }
        const auto along = fast_march(slab, table, x0);
        const auto across = fast_march(slab, table, y0);
        double tx = 0.0;
        double ty = 0.0;
        for (std::uint32_t i = 0; i < slab.num_vertices(); ++i) {
            if (slab.vertices[i].x() == 40.0) {
                tx = std::max(tx, along.lat[i]);
            }
            if (slab.vertices[i].y() == 40.0) {
                ty = std::max(ty, across.lat[i]);
            }
        }
        const double err = std::abs(ty / tx / 2.0 - 1.0);
        o.expect(err <= 0.05, "ar = 2 slab traversal ratio " + fmt("%.4f", ty / tx) + " (within 5% of 2)");
    }
    const ConductionTable table;
    const auto& ra = table[Region::RA];
    const auto& cti = table[Region::InferiorIsthmus];
    o.expect(ra.cv_t == 739.0 && ra.ar == 2.11 && cti.cv_t == 722.0 && cti.ar == 1.0,
             "RA " + fmt("%g", ra.cv_t) + " mm/s / " + fmt("%g", ra.ar) + ", isthmus " + fmt("%g", cti.cv_t) +
                 " mm/s / " + fmt("%g", cti.ar));

    const auto t0 = std::chrono::steady_clock::now();
    const auto wall = tagged_wall(4, {3.0, 0.75});
    const auto seeds = sinus_seed(wall, wall.vertices[37], 2.0);
    const auto a = fast_march(wall, table, seeds);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.expect(wall.num_tets() >= 50000 && secs < 60.0, "phantom with " + std::to_string(wall.num_tets()) +
                                                          " tets built and marched in " + fmt("%.1f", secs) +
                                                          " s (< 60)");
    const auto oracle = oracles::dijkstra_two_ring(wall, table, seeds);
    double worst = 0.0;
    for (std::size_t i = 0; i < wall.num_vertices(); ++i) {
        if (oracle[i] > 0.0) {
            worst = std::max(worst, a.lat[i] / oracle[i]);
        }
    }
    o.expect(worst <= 1.02, "phantom lat / two-ring Dijkstra at most " + fmt("%.4f", worst) + " (<= 1.02)");
}

void ecg_chain(Outcome& o)
{
    const auto wall = tagged_wall(4);
    const auto lat = fast_march(wall, ConductionTable{}, sinus_seed(wall, wall.vertices[37], 2.0)).lat;
    const auto el = load_electrodes(SSM_DATA_DIR "/electrodes_standard.txt");
    const auto movie = vm_movie(lat, analytic_atrial_ap(), 200.0, 1.0);
    const auto phi = surface_potentials(wall, movie, el);
    const auto traces = derive_12_leads(phi);
    double closure = 0.0;
    for (std::size_t k = 0; k < traces.num_samples(); ++k) {
        const double scale = std::max({1.0, std::abs(phi.phi(0, static_cast<Eigen::Index>(k))),
                                       std::abs(phi.phi(1, static_cast<Eigen::Index>(k))),
                                       std::abs(phi.phi(2, static_cast<Eigen::Index>(k)))});
        closure = std::max(closure, std::abs(traces.leads[0][k] + traces.leads[2][k] - traces.leads[1][k]) / scale);
    }
    o.expect(closure <= 1e-12, "Einthoven I + III - II at most " + fmt("%.2g", closure) + " relative");

    const std::vector<double> flat(wall.num_vertices(), 12.0);
    const auto zero = surface_potentials(wall, vm_movie(flat, analytic_atrial_ap(), 100.0, 1.0), el);
    o.expect(zero.phi.cwiseAbs().maxCoeff() == 0.0, "uniform Vm gives max |phi| = " +
                                                        fmt("%g", zero.phi.cwiseAbs().maxCoeff()));

    Vec3 center = Vec3::Zero();
    double vol = 0.0;
    for (std::size_t t = 0; t < wall.num_tets(); ++t) {
        center += tet_volume(wall, t) * tet_centroid(wall, t);
        vol += tet_volume(wall, t);
    }
    center /= vol;
    const auto far = surface_potentials(wall, movie, el.scaled(center, 2.0));
    const double falloff = phi.phi.cwiseAbs().maxCoeff() / far.phi.cwiseAbs().maxCoeff();
    double lo = 1e300;
    double hi = 0.0;
    for (Eigen::Index e = 0; e < phi.phi.rows(); ++e) {
        const double r = phi.phi.row(e).cwiseAbs().maxCoeff() / far.phi.row(e).cwiseAbs().maxCoeff();
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    o.expect(falloff >= 4.0 && falloff <= 8.4, "peak |phi| ratio on doubling electrode distance " +
                                                   fmt("%.3f", falloff) + " (in [4, 8.4]); per electrode " +
                                                   fmt("%.2f", lo) + ".." + fmt("%.2f", hi));

    auto base = traces;
    const auto p0 = p_wave_duration(base);
    bool gain_ok = true;
    for (double gain : {1e-3, 0.5, 7.0, 1e4}) {
        auto s = traces;
        for (auto& l : s.leads) {
            for (double& v : l) {
                v *= gain;
            }
        }
        const auto p = p_wave_duration(s);
        gain_ok = gain_ok && p.onset == p0.onset && p.offset == p0.offset;
    }
    o.expect(gain_ok, "P wave " + fmt("%.0f", p0.duration()) + " ms unchanged under gains 1e-3..1e4");

    double worst = 0.0;
    for (double shift : {0.1, 0.25, 0.5, 0.75, 1.3, 2.6, 7.9}) {
        std::vector<double> moved = lat;
        for (double& v : moved) {
            v += shift;
        }
        auto t1 = simulate(wall, moved, el, 200.0 + std::ceil(shift));
        const auto p1 = p_wave_duration(t1);
        worst = std::max({worst, std::abs(p1.onset - p0.onset - shift), std::abs(p1.offset - p0.offset - shift)});
    }
    o.expect(worst <= traces.dt, "fractional lat shifts move onset and offset within " + fmt("%.2f", worst) +
                                     " ms of the shift (<= one sample)");
}

void batch(Outcome& o)
{
    const auto dir = scratch("batch");
    auto cfg = load_config(SSM_CONFIG_DIR "/batch.ini", SSM_DATA_DIR);
    cfg.corpus = dir / "corpus";
    cfg.output = dir / "out";
    write_synthetic_corpus(cfg.synth, cfg.corpus);
    Pipeline(cfg).run_all();
    const auto la = csv_numbers(cfg.output / "extrude" / "volumes.csv", "left_cavity_ml");
    const auto [la_lo, la_hi] = std::minmax_element(la.begin(), la.end());
    const auto outside = std::count_if(la.begin(), la.end(), [](double v) { return v < 10.0 || v > 130.0; });
    o.expect(la.size() == 100 && outside == 0, std::to_string(la.size()) + " instances, LA volume " +
                                                   fmt("%.1f", *la_lo) + ".." + fmt("%.1f", *la_hi) +
                                                   " ml (all in 10..130)");
    const auto pw = csv_numbers(cfg.output / "ecg" / "p_wave.csv", "duration_ms");
    const auto in = [&](double a, double b) { return std::count_if(pw.begin(), pw.end(), [&](double v) { return v >= a && v <= b; }); };
    const auto [lo, hi] = std::minmax_element(pw.begin(), pw.end());
    o.expect(in(60.0, 160.0) >= 90, std::to_string(in(60.0, 160.0)) + "/" + std::to_string(pw.size()) +
                                        " P waves in 60..160 ms (>= 90); range " + fmt("%.0f", *lo) + ".." +
                                        fmt("%.0f", *hi) + " ms");
    const auto summary = io::read_file(cfg.output / "ecg" / "summary.txt");
    o.expect(summary.find("p_wave.reference_band_ms = 80 118") != std::string::npos,
             "reference band 80..118 ms recorded in ecg/summary.txt; " + std::to_string(in(80.0, 118.0)) +
                 " of the P waves fall inside it");
}

} // namespace

int main(int argc, char** argv)
{
    const std::vector<Criterion> criteria = {
        {1, "pca-exactness", 10.0, pca_exactness},
        {2, "planted-subspace", 30.0, planted_recovery},
        {3, "icp-recovery", 60.0, icp_recovery},
        {4, "nystrom-fidelity", 10.0, nystrom_fidelity},
        {5, "correspondence", 300.0, correspondence},
        {6, "evaluation-suite", 120.0, evaluation},
        {7, "eikonal", 60.0, eikonal},
        {8, "ecg-chain", 0.0, ecg_chain},
        {9, "batch", 1800.0, batch},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        only.insert(std::atoi(argv[i]));
    }
    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) {
            continue;
        }
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.run(o);
        } catch (const std::exception& e) {
            o.expect(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.limit_s > 0.0) {
            o.expect(secs < c.limit_s, "runtime " + fmt("%.1f", secs) + " s (< " + fmt("%.0f", c.limit_s) + ")");
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << " (" << fmt("%.1f", secs)
                  << " s)\n";
        for (const auto& n : o.notes) {
            std::cout << "       " << n << '\n';
        }
        std::cout.flush();
    }
    std::cout << (failed ? std::to_string(failed) + " criteria failed\n" : std::string("all criteria passed\n"));
    return failed ? 1 : 0;
}
