/*
 * atria-ssm - statistical shape modelling and atrial ECG simulation.
 *
 * Copyright 2026 The atria-ssm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include "ssm/config.hpp"
#include "ssm/ecg.hpp"
#include "ssm/eikonal.hpp"
#include "ssm/error.hpp"
#include "ssm/gpmm.hpp"
#include "ssm/io_util.hpp"
#include "ssm/mesh_io.hpp"
#include "ssm/model_eval.hpp"
#include "ssm/model_io.hpp"
#include "ssm/parallel.hpp"
#include "ssm/pdm.hpp"
#include "ssm/phantom.hpp"
#include "ssm/rigid_align.hpp"
#include "ssm/svg.hpp"
#include "ssm/tet_mesh.hpp"
#include "ssm/volumetric.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ssm {

inline constexpr std::string_view version = "0.1.0";

/// A pipeline stage failed while producing `path`.
class StageError : public Error
{
public:
    StageError(const std::string& stage, const std::filesystem::path& path, const std::string& what)
        : Error("stage " + stage + " failed" + (path.empty() ? std::string() : " at " + path.string()) + ": " + what),
          stage_(stage)
    {
    }

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// A stage produced an output that breaks its invariants; nothing was written for it.
class ValidationError : public Error
{
public:
    ValidationError(const std::string& stage, const std::filesystem::path& path, const std::string& what)
        : Error("stage " + stage + " produced an invalid artifact " + path.string() + ": " + what)
    {
    }
};

inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 14695981039346656037ULL)
{
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string file_checksum(const std::filesystem::path& path) { return hex64(fnv1a(io::read_file(path))); }

inline constexpr std::array<std::string_view, 8> stage_names = {"align",   "correspond", "build-pdm", "evaluate",
                                                                "sample",  "extrude",    "simulate",  "ecg"};

struct StageRecord
{
    std::string input_hash;
    /// Output path relative to the output directory -> checksum.
    std::map<std::string, std::string> outputs;
};

/// Per-stage input hashes and output checksums, stored as JSON in the output directory.
struct Manifest
{
    std::string version{ssm::version};
    std::uint64_t seed = 0;
    std::map<std::string, StageRecord> stages;

    std::string dump() const
    {
        nlohmann::ordered_json j;
        j["version"] = version;
        j["seed"] = seed;
        auto& s = j["stages"];
        s = nlohmann::ordered_json::object();
        for (const auto& [name, rec] : stages) {
            s[name]["input_hash"] = rec.input_hash;
            s[name]["outputs"] = rec.outputs;
        }
        return j.dump(2) + "\n";
    }

    static Manifest parse(std::string_view text, const std::string& source)
    {
        Manifest m;
        try {
            const auto j = nlohmann::json::parse(text);
            m.version = j.at("version").get<std::string>();
            m.seed = j.at("seed").get<std::uint64_t>();
            for (const auto& [name, rec] : j.at("stages").items()) {
                m.stages[name] = {rec.at("input_hash").get<std::string>(),
                                  rec.at("outputs").get<std::map<std::string, std::string>>()};
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(source, 0, e.what());
        }
        return m;
    }
};

/// Writes the synthetic corpus as NNN.off meshes plus a ground_truth/ directory.
inline SyntheticCorpus write_synthetic_corpus(const SyntheticCorpusSpec& spec, const std::filesystem::path& dir)
{
    auto corpus = synth_corpus(spec);
    std::filesystem::create_directories(dir / "ground_truth");
    for (std::size_t n = 0; n < corpus.shapes.size(); ++n) {
        char name[32];
        std::snprintf(name, sizeof name, "shape_%03zu.off", n);
        save_mesh(corpus.shapes[n], dir / name);
    }
    std::ostringstream coef;
    std::ostringstream tr;
    std::ostringstream ev;
    coef << "shape";
    for (Eigen::Index k = 0; k < corpus.coefficients.cols(); ++k) {
        coef << ",r" << k + 1;
    }
    coef << '\n';
    tr << "shape,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz\n";
    for (std::size_t n = 0; n < corpus.shapes.size(); ++n) {
        coef << n;
        for (Eigen::Index k = 0; k < corpus.coefficients.cols(); ++k) {
            coef << ',';
            io::put_double(coef, corpus.coefficients(static_cast<Eigen::Index>(n), k));
        }
        coef << '\n';
        const auto& t = corpus.transforms[n];
        tr << n;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                tr << ',';
                io::put_double(tr, t.rotation(r, c));
            }
        }
        for (int c = 0; c < 3; ++c) {
            tr << ',';
            io::put_double(tr, t.translation(c));
        }
        tr << '\n';
    }
    ev << "mode,eigenvalue_mm2\n";
    for (Eigen::Index k = 0; k < corpus.eigenvalues.size(); ++k) {
        ev << k + 1 << ',';
        io::put_double(ev, corpus.eigenvalues(k));
        ev << '\n';
    }
    std::ostringstream modes;
    for (Eigen::Index i = 0; i < corpus.modes.rows(); ++i) {
        for (Eigen::Index k = 0; k < corpus.modes.cols(); ++k) {
            if (k) {
                modes << ',';
            }
            io::put_double(modes, corpus.modes(i, k));
        }
        modes << '\n';
    }
    io::write_file_atomic(dir / "ground_truth" / "coefficients.csv", coef.str());
    io::write_file_atomic(dir / "ground_truth" / "transforms.csv", tr.str());
    io::write_file_atomic(dir / "ground_truth" / "eigenvalues.csv", ev.str());
    io::write_file_atomic(dir / "ground_truth" / "modes.csv", modes.str());
    save_mesh(corpus.base, dir / "ground_truth" / "base.off");
    return corpus;
}

/// Sorted *.off files directly inside `dir`.
inline std::vector<std::filesystem::path> list_meshes(const std::filesystem::path& dir)
{
    std::vector<std::filesystem::path> out;
    if (std::filesystem::is_directory(dir)) {
        for (const auto& e : std::filesystem::directory_iterator(dir)) {
            if (e.is_regular_file() && e.path().extension() == ".off") {
                out.push_back(e.path());
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

struct StageOutcome
{
    std::string stage;
    bool skipped = false;
    double seconds = 0.0;
};

/**
 * Runs the stages align -> correspond -> build-pdm -> evaluate -> sample ->
 * extrude -> simulate -> ecg over the configured output directory. A stage is
 * skipped when its inputs hash to the recorded value and its recorded outputs
 * are intact.
 */
class Pipeline
{
public:
    explicit Pipeline(PipelineConfig cfg, std::ostream* log = nullptr) : cfg_(std::move(cfg)), log_(log)
    {
        cfg_.validate();
        const auto path = cfg_.output / "manifest.json";
        if (std::filesystem::exists(path)) {
            manifest_ = Manifest::parse(io::read_file(path), path.string());
        }
        manifest_.seed = cfg_.seed;
    }

    const PipelineConfig& config() const noexcept { return cfg_; }
    const Manifest& manifest() const noexcept { return manifest_; }

    std::vector<StageOutcome> run_all()
    {
        std::vector<StageOutcome> out;
        for (auto s : stage_names) {
            out.push_back(run(s));
        }
        return out;
    }

    StageOutcome run(std::string_view stage)
    {
        const auto it = std::find(stage_names.begin(), stage_names.end(), stage);
        if (it == stage_names.end()) {
            throw InvalidInput("unknown stage '" + std::string(stage) + "'");
        }
        const std::string name(stage);
        const auto start = std::chrono::steady_clock::now();
        const auto hash = input_hash(name);
        StageOutcome outcome{name, false, 0.0};
        if (up_to_date(name, hash)) {
            outcome.skipped = true;
            say("stage " + name + ": up to date");
            return outcome;
        }
        std::filesystem::remove_all(cfg_.output / name);
        std::filesystem::create_directories(cfg_.output / name);
        std::vector<std::string> outputs;
        try {
            outputs = run_stage(name);
        } catch (const StageError&) {
            throw;
        } catch (const ValidationError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(name, cfg_.output / name, e.what());
        }
        StageRecord rec;
        rec.input_hash = hash;
        for (const auto& o : outputs) {
            rec.outputs[o] = file_checksum(cfg_.output / o);
        }
        manifest_.stages[name] = std::move(rec);
        io::write_file_atomic(cfg_.output / "manifest.json", manifest_.dump());
        outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        char buf[64];
        std::snprintf(buf, sizeof buf, " (%zu files, %.1f s)", outputs.size(), outcome.seconds);
        say("stage " + name + ": done" + buf);
        return outcome;
    }

private:
    PipelineConfig cfg_;
    std::ostream* log_;
    Manifest manifest_;

    void say(const std::string& s) const
    {
        if (log_) {
            *log_ << s << '\n';
        }
    }

    unsigned jobs() const { return resolve_jobs(cfg_.jobs); }

    std::filesystem::path out(const std::string& rel) const { return cfg_.output / rel; }

    static std::string numbered(const std::string& stem, std::size_t i, const std::string& ext)
    {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s_%03zu%s", stem.c_str(), i, ext.c_str());
        return buf;
    }

    // ---- hashing and skip logic

    const StageRecord& upstream(const std::string& stage, const std::string& of) const
    {
        const auto it = manifest_.stages.find(of);
        if (it == manifest_.stages.end()) {
            throw StageError(stage, cfg_.output / of, "stage " + of + " has not been run");
        }
        return it->second;
    }

    std::string input_hash(const std::string& name) const
    {
        std::ostringstream h;
        h << "version=" << version << ";stage=" << name << ';';
        auto dep = [&](const std::string& of) {
            for (const auto& [p, sum] : upstream(name, of).outputs) {
                const auto path = cfg_.output / p;
                if (!std::filesystem::is_regular_file(path) || file_checksum(path) != sum) {
                    throw StageError(name, path, "artifact of stage " + of + " is missing or changed; rerun " + of);
                }
                h << p << '=' << sum << ';';
            }
        };
        auto file = [&](const std::filesystem::path& p) { h << p.filename().string() << '=' << file_checksum(p) << ';'; };
        auto num = [&](const char* key, double v) {
            h << key << '=';
            io::put_double(h, v);
            h << ';';
        };
        if (name == "align") {
            const auto files = list_meshes(cfg_.corpus);
            if (files.empty()) {
                throw StageError(name, cfg_.corpus, "no .off meshes in the corpus directory");
            }
            for (const auto& f : files) {
                file(f);
            }
            num("icp.max_iterations", cfg_.icp.max_iterations);
            num("icp.convergence_tol", cfg_.icp.convergence_tol);
            num("icp.trim_fraction", cfg_.icp.trim_fraction);
            num("reference", static_cast<double>(cfg_.correspondence.reference));
        } else if (name == "correspond") {
            dep("align");
            const auto& c = cfg_.correspondence;
            for (const auto& k : c.stages) {
                for (const auto& t : k.terms) {
                    num("s", t.scale);
                    num("l", t.length);
                    num("mask", t.mask);
                }
            }
            num("pv", c.pv_orientation);
            num("rank", c.low_rank.rank);
            num("landmarks", c.low_rank.landmarks);
            num("reg", c.fit.reg_weight);
            num("outer", c.fit.outer_iterations);
            num("reference", static_cast<double>(c.reference));
        } else if (name == "build-pdm") {
            dep("correspond");
        } else if (name == "evaluate") {
            dep("correspond");
            dep("build-pdm");
            num("seed", static_cast<double>(cfg_.seed));
            num("specificity_samples", static_cast<double>(cfg_.specificity_samples));
            num("empirical", cfg_.empirical_bounds);
        } else if (name == "sample") {
            dep("correspond");
            dep("build-pdm");
            num("seed", static_cast<double>(cfg_.seed));
            num("samples", static_cast<double>(cfg_.samples));
            num("empirical", cfg_.empirical_bounds);
        } else if (name == "extrude") {
            dep("sample");
            file(cfg_.regions);
            num("thickness", cfg_.wall.thickness);
            num("target_edge", cfg_.wall.target_edge);
        } else if (name == "simulate") {
            dep("extrude");
            for (const auto& c : cfg_.conduction.regions) {
                num("cv", c.cv_t);
                num("ar", c.ar);
            }
            num("sinus.vertex", cfg_.sinus.vertex);
            num("sinus.radius", cfg_.sinus.radius);
        } else if (name == "ecg") {
            dep("extrude");
            dep("simulate");
            file(cfg_.electrodes);
            file(cfg_.ap_template);
            num("duration", cfg_.ecg.duration_ms);
            num("dt", cfg_.ecg.dt_ms);
            num("spacing", cfg_.ecg.sample_spacing);
            num("threshold", cfg_.ecg.threshold);
        }
        return hex64(fnv1a(h.str()));
    }

    bool up_to_date(const std::string& name, const std::string& hash) const
    {
        const auto it = manifest_.stages.find(name);
        if (it == manifest_.stages.end() || it->second.input_hash != hash) {
            return false;
        }
        for (const auto& [p, sum] : it->second.outputs) {
            const auto path = cfg_.output / p;
            if (!std::filesystem::is_regular_file(path) || file_checksum(path) != sum) {
                return false;
            }
        }
        return true;
    }

    // ---- helpers shared by stages

    /// Runs fn(i) for every item, attributing failures to the item's artifact.
    template <typename Fn>
    void for_each_item(const std::string& stage, const std::vector<std::string>& artifacts, Fn&& fn) const
    {
        parallel_for(artifacts.size(), jobs(), [&](std::size_t i) {
            try {
                fn(i);
            } catch (const ValidationError&) {
                throw;
            } catch (const StageError&) {
                throw;
            } catch (const std::exception& e) {
                throw StageError(stage, out(artifacts[i]), e.what());
            }
        });
    }

    template <typename Check>
    static void check(const std::string& stage, const std::filesystem::path& path, Check&& c)
    {
        try {
            c();
        } catch (const InvalidInput& e) {
            throw ValidationError(stage, path, e.what());
        }
    }

    std::vector<std::string> stage_files(const std::string& stage, const std::string& ext) const
    {
        std::vector<std::string> files;
        for (const auto& [p, sum] : manifest_.stages.at(stage).outputs) {
            if (p.size() >= ext.size() && p.compare(p.size() - ext.size(), ext.size(), ext) == 0) {
                files.push_back(p);
            }
        }
        return files;
    }

    std::vector<SurfaceMesh> load_stage_meshes(const std::string& stage) const
    {
        const auto files = stage_files(stage, ".off");
        std::vector<SurfaceMesh> meshes(files.size());
        parallel_for(files.size(), jobs(), [&](std::size_t i) { meshes[i] = load_mesh(out(files[i])); });
        return meshes;
    }

    std::vector<std::string> run_stage(const std::string& name)
    {
        if (name == "align") {
            return stage_align();
        }
        if (name == "correspond") {
            return stage_correspond();
        }
        if (name == "build-pdm") {
            return stage_build_pdm();
        }
        if (name == "evaluate") {
            return stage_evaluate();
        }
        if (name == "sample") {
            return stage_sample();
        }
        if (name == "extrude") {
            return stage_extrude();
        }
        if (name == "simulate") {
            return stage_simulate();
        }
        return stage_ecg();
    }

    std::vector<std::string> write_text(const std::string& rel, const std::string& text) const
    {
        io::write_file_atomic(out(rel), text);
        return {rel};
    }

    // ---- stages

    std::vector<std::string> stage_align()
    {
        const auto files = list_meshes(cfg_.corpus);
        const auto ref = cfg_.correspondence.reference;
        if (ref >= files.size()) {
            throw StageError("align", cfg_.corpus,
                             "reference index " + std::to_string(ref) + " but only " + std::to_string(files.size()) +
                                 " meshes");
        }
        std::vector<SurfaceMesh> meshes(files.size());
        parallel_for(files.size(), jobs(), [&](std::size_t i) { meshes[i] = load_mesh(files[i]); });
        std::vector<std::string> outputs(files.size());
        for (std::size_t i = 0; i < files.size(); ++i) {
            outputs[i] = "align/" + files[i].filename().string();
        }
        std::vector<IcpReport> reports(files.size());
        for_each_item("align", outputs, [&](std::size_t i) {
            SurfaceMesh aligned = meshes[i];
            if (i != ref) {
                auto [m, rep] = icp_align(meshes[i], meshes[ref], cfg_.icp);
                aligned = std::move(m);
                reports[i] = std::move(rep);
            }
            check("align", out(outputs[i]), [&] {
                validate(aligned);
                if (!reports[i].final_transform.is_proper(1e-6)) {
                    throw InvalidInput("alignment is not a proper rotation");
                }
            });
            save_mesh(aligned, out(outputs[i]));
        });
        std::ostringstream tr;
        tr << "file,iterations,initial_rms_mm,final_rms_mm,rotation_deg,tx,ty,tz\n";
        for (std::size_t i = 0; i < files.size(); ++i) {
            const auto& r = reports[i];
            tr << files[i].filename().string() << ',' << r.iterations_run << ',';
            io::put_double(tr, r.initial_residual);
            tr << ',';
            io::put_double(tr, r.residual_history.empty() ? r.initial_residual : r.residual_history.back());
            tr << ',';
            io::put_double(tr, rotation_angle_deg(r.final_transform.rotation, Mat3::Identity()));
            for (int c = 0; c < 3; ++c) {
                tr << ',';
                io::put_double(tr, r.final_transform.translation(c));
            }
            tr << '\n';
        }
        outputs.push_back(write_text("align/transforms.csv", tr.str())[0]);
        return outputs;
    }

    std::vector<std::string> stage_correspond()
    {
        const auto files = stage_files("align", ".off");
        const auto meshes = load_stage_meshes("align");
        const auto ref = cfg_.correspondence.reference;
        const auto& reference = meshes.at(ref);
        std::vector<GpModel> models;
        for (const auto& k : cfg_.correspondence.stages) {
            models.push_back(build_low_rank_gp(reference, k, cfg_.correspondence.low_rank));
        }
        if (cfg_.correspondence.pv_orientation) {
            models.push_back(build_pv_orientation_model(reference));
        }
        std::vector<const GpModel*> chain;
        for (const auto& m : models) {
            chain.push_back(&m);
        }
        std::vector<std::string> outputs(files.size());
        for (std::size_t i = 0; i < files.size(); ++i) {
            outputs[i] = "correspond/" + std::filesystem::path(files[i]).filename().string();
        }
        std::vector<double> rms(files.size(), 0.0);
        std::vector<double> mean(files.size(), 0.0);
        for_each_item("correspond", outputs, [&](std::size_t i) {
            SurfaceMesh fitted = reference;
            if (i != ref) {
                fitted = fit_sequential(chain, meshes[i], cfg_.correspondence.fit).back().deformed_reference;
            }
            double sq = 0.0;
            double sum = 0.0;
            for (double d : surface_distances(fitted, meshes[i])) {
                sq += d * d;
                sum += d;
            }
            const auto n = static_cast<double>(fitted.num_vertices());
            rms[i] = std::sqrt(sq / n);
            mean[i] = sum / n;
            check("correspond", out(outputs[i]), [&] { validate(fitted); });
            save_mesh(fitted, out(outputs[i]));
        });
        std::ostringstream fit;
        fit << "file,rms_mm,mean_mm\n";
        for (std::size_t i = 0; i < files.size(); ++i) {
            fit << std::filesystem::path(files[i]).filename().string() << ',';
            io::put_double(fit, rms[i]);
            fit << ',';
            io::put_double(fit, mean[i]);
            fit << '\n';
        }
        outputs.push_back(write_text("correspond/fit.csv", fit.str())[0]);
        return outputs;
    }

    std::vector<ShapeVector> corresponded_shapes() const
    {
        const auto meshes = load_stage_meshes("correspond");
        std::vector<ShapeVector> shapes;
        for (const auto& m : meshes) {
            shapes.push_back(to_shape_vector(m));
        }
        return shapes;
    }

    std::vector<std::string> stage_build_pdm()
    {
        const auto meshes = load_stage_meshes("correspond");
        const auto model = build_pdm(std::span<const SurfaceMesh>(meshes));
        check("build-pdm", out("build-pdm/pdm.ssmc"), [&] {
            if (model.num_modes() < 1 || !model.mean.allFinite() || !model.eigenvectors.allFinite()) {
                throw InvalidInput("model has no finite modes");
            }
        });
        save_model(model, out("build-pdm/pdm.ssmc"));
        std::ostringstream ev;
        ev << "mode,eigenvalue_mm2,cumulative\n";
        const auto cum = cumulative_variance(model.eigenvalues);
        for (Eigen::Index k = 0; k < model.num_modes(); ++k) {
            ev << k + 1 << ',';
            io::put_double(ev, model.eigenvalues(k));
            ev << ',';
            io::put_double(ev, cum[static_cast<std::size_t>(k)]);
            ev << '\n';
        }
        save_mesh(model.mesh(ShapeVector(model.mean)), out("build-pdm/mean.off"));
        return {"build-pdm/pdm.ssmc", write_text("build-pdm/eigenvalues.csv", ev.str())[0], "build-pdm/mean.off"};
    }

    std::vector<Interval> bounds(const PdmModel& model, const std::vector<ShapeVector>& shapes) const
    {
        return cfg_.empirical_bounds ? empirical_bounds(model, shapes) : default_bounds(model);
    }

    std::vector<std::string> stage_evaluate()
    {
        const auto model = load_pdm(out("build-pdm/pdm.ssmc"));
        const auto shapes = corresponded_shapes();
        EvalReport rep;
        LooOptions lo;
        lo.jobs = jobs();
        rep.generalization = generalization_loo(shapes, lo);
        SpecificityOptions so;
        so.n_samples = cfg_.specificity_samples;
        so.seed = derive_seed(cfg_.seed, 1);
        so.bounds = bounds(model, shapes);
        so.jobs = jobs();
        rep.specificity = specificity(model, shapes, so);
        rep.compactness = compactness(model);

        std::ostringstream g;
        std::ostringstream s;
        std::ostringstream c;
        std::ostringstream sum;
        write_generalization_csv(g, rep.generalization);
        write_specificity_csv(s, rep.specificity);
        write_compactness_csv(c, rep.compactness);
        write_summary(sum, rep);
        std::vector<std::string> outs;
        outs.push_back(write_text("evaluate/generalization.csv", g.str())[0]);
        outs.push_back(write_text("evaluate/specificity.csv", s.str())[0]);
        outs.push_back(write_text("evaluate/compactness.csv", c.str())[0]);
        outs.push_back(write_text("evaluate/summary.txt", sum.str())[0]);
        outs.push_back(write_text("evaluate/generalization.svg",
                                  svg::plot_artifact(out("evaluate/generalization.csv"), "generalization"))[0]);
        outs.push_back(
            write_text("evaluate/compactness.svg", svg::plot_artifact(out("evaluate/compactness.csv"), "compactness"))[0]);
        return outs;
    }

    std::vector<std::string> stage_sample()
    {
        const auto model = load_pdm(out("build-pdm/pdm.ssmc"));
        const auto shapes = corresponded_shapes();
        const auto b = bounds(model, shapes);
        std::vector<std::string> outputs(cfg_.samples);
        for (std::size_t i = 0; i < cfg_.samples; ++i) {
            outputs[i] = "sample/" + numbered("sample", i, ".off");
        }
        std::vector<Eigen::VectorXd> coeffs(cfg_.samples);
        const auto stream = derive_seed(cfg_.seed, 2);
        for_each_item("sample", outputs, [&](std::size_t i) {
            auto s = sample(model, derive_seed(stream, i), b);
            coeffs[i] = s.coefficients;
            const auto mesh = model.mesh(s.shape);
            check("sample", out(outputs[i]), [&] { validate(mesh); });
            save_mesh(mesh, out(outputs[i]));
        });
        std::ostringstream cs;
        cs << "sample";
        for (Eigen::Index k = 0; k < model.num_modes(); ++k) {
            cs << ",r" << k + 1;
        }
        cs << '\n';
        for (std::size_t i = 0; i < cfg_.samples; ++i) {
            cs << i;
            for (Eigen::Index k = 0; k < coeffs[i].size(); ++k) {
                cs << ',';
                io::put_double(cs, coeffs[i](k));
            }
            cs << '\n';
        }
        outputs.push_back(write_text("sample/coefficients.csv", cs.str())[0]);
        return outputs;
    }

    std::vector<std::string> stage_extrude()
    {
        const auto files = stage_files("sample", ".off");
        const auto rules = load_region_rules(cfg_.regions);
        std::vector<std::string> outputs(files.size());
        for (std::size_t i = 0; i < files.size(); ++i) {
            outputs[i] = "extrude/" + std::filesystem::path(files[i]).stem().string() + ".tet";
        }
        struct Row
        {
            std::size_t tets = 0;
            double wall_ml = 0.0;
            double cavity_ml = 0.0;
            double left_ml = 0.0;
        };
        std::vector<Row> rows(files.size());
        for_each_item("extrude", outputs, [&](std::size_t i) {
            const auto endo = load_mesh(out(files[i]));
            auto wall = assign_fibers(assign_regions(extrude_wall(endo, cfg_.wall), rules));
            check("extrude", out(outputs[i]), [&] { validate(wall); });
            rows[i] = {wall.num_tets(), total_volume(wall) / 1000.0, enclosed_volume(endo) / 1000.0,
                       left_side_volume(endo) / 1000.0};
            save_tet_mesh(wall, out(outputs[i]));
        });
        std::ostringstream s;
        s << "sample,tets,wall_ml,cavity_ml,left_cavity_ml\n";
        for (std::size_t i = 0; i < files.size(); ++i) {
            s << std::filesystem::path(files[i]).stem().string() << ',' << rows[i].tets;
            for (double v : {rows[i].wall_ml, rows[i].cavity_ml, rows[i].left_ml}) {
                s << ',';
                io::put_double(s, v);
            }
            s << '\n';
        }
        outputs.push_back(write_text("extrude/volumes.csv", s.str())[0]);
        return outputs;
    }

    std::vector<std::string> stage_simulate()
    {
        const auto files = stage_files("extrude", ".tet");
        std::vector<std::string> outputs(files.size());
        for (std::size_t i = 0; i < files.size(); ++i) {
            outputs[i] = "simulate/" + std::filesystem::path(files[i]).stem().string() + ".csv";
        }
        std::vector<double> max_lat(files.size(), 0.0);
        std::vector<std::size_t> n_seeds(files.size(), 0);
        for_each_item("simulate", outputs, [&](std::size_t i) {
            const auto mesh = load_tet_mesh(out(files[i]));
            if (cfg_.sinus.vertex >= mesh.num_vertices()) {
                throw InvalidInput("sinus vertex " + std::to_string(cfg_.sinus.vertex) + " is outside the mesh");
            }
            const auto seeds = sinus_seed(mesh, mesh.vertices[cfg_.sinus.vertex], cfg_.sinus.radius);
            const auto act = fast_march(mesh, cfg_.conduction, seeds);
            check("simulate", out(outputs[i]), [&] {
                if (!act.unreached.empty()) {
                    throw InvalidInput(std::to_string(act.unreached.size()) + " vertices were never activated");
                }
            });
            max_lat[i] = *std::max_element(act.lat.begin(), act.lat.end());
            n_seeds[i] = act.seeds.size();
            std::ostringstream os;
            write_activation_csv(os, act);
            io::write_file_atomic(out(outputs[i]), os.str());
        });
        std::ostringstream s;
        s << "sample,seeds,max_lat_ms\n";
        for (std::size_t i = 0; i < files.size(); ++i) {
            s << std::filesystem::path(files[i]).stem().string() << ',' << n_seeds[i] << ',';
            io::put_double(s, max_lat[i]);
            s << '\n';
        }
        outputs.push_back(write_text("simulate/summary.csv", s.str())[0]);
        return outputs;
    }

    std::vector<std::string> stage_ecg()
    {
        const auto meshes = stage_files("extrude", ".tet");
        const auto electrodes = load_electrodes(cfg_.electrodes);
        const auto ap = load_ap_template(cfg_.ap_template);
        std::vector<std::string> outputs(meshes.size());
        for (std::size_t i = 0; i < meshes.size(); ++i) {
            outputs[i] = "ecg/" + std::filesystem::path(meshes[i]).stem().string() + ".csv";
        }
        std::vector<PWave> waves(meshes.size());
        ForwardOptions fo;
        fo.sample_spacing = cfg_.ecg.sample_spacing;
        for_each_item("ecg", outputs, [&](std::size_t i) {
            const auto stem = std::filesystem::path(meshes[i]).stem().string();
            const auto mesh = load_tet_mesh(out(meshes[i]));
            const auto lat = parse_activation_csv(io::read_file(out("simulate/" + stem + ".csv")), stem);
            if (lat.size() != mesh.num_vertices()) {
                throw InvalidInput("activation map does not match the mesh");
            }
            const auto movie = vm_movie(lat, ap, cfg_.ecg.duration_ms, cfg_.ecg.dt_ms);
            auto traces = derive_12_leads(surface_potentials(mesh, movie, electrodes, fo));
            normalize(traces);
            waves[i] = p_wave_duration(traces, cfg_.ecg.threshold);
            check("ecg", out(outputs[i]), [&] {
                for (const auto& l : traces.leads) {
                    for (double v : l) {
                        if (!std::isfinite(v)) {
                            throw InvalidInput("non-finite lead value");
                        }
                    }
                }
            });
            std::ostringstream os;
            write_traces_csv(os, traces);
            io::write_file_atomic(out(outputs[i]), os.str());
            io::write_file_atomic(out("ecg/" + stem + ".svg"), svg::lead_plot(traces, waves[i]));
        });
        const auto n = outputs.size();
        for (std::size_t i = 0; i < n; ++i) {
            outputs.push_back("ecg/" + std::filesystem::path(meshes[i]).stem().string() + ".svg");
        }
        std::ostringstream pw;
        pw << "sample,onset_ms,offset_ms,duration_ms,onset_lead,offset_lead\n";
        std::vector<double> d;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& w = waves[i];
            pw << std::filesystem::path(meshes[i]).stem().string() << ',';
            io::put_double(pw, w.onset);
            pw << ',';
            io::put_double(pw, w.offset);
            pw << ',';
            io::put_double(pw, w.duration());
            pw << ',' << lead_names[w.onset_lead] << ',' << lead_names[w.offset_lead] << '\n';
            d.push_back(w.duration());
        }
        outputs.push_back(write_text("ecg/p_wave.csv", pw.str())[0]);
        outputs.push_back(write_text("ecg/summary.txt", p_wave_summary(d))[0]);
        return outputs;
    }

public:
    /// Key = value summary of P-wave durations with counts inside the reference bands.
    static std::string p_wave_summary(const std::vector<double>& d)
    {
        std::ostringstream s;
        auto within = [&](double lo, double hi) {
            return std::count_if(d.begin(), d.end(), [&](double v) { return v >= lo && v <= hi; });
        };
        s << "p_wave.samples = " << d.size() << '\n';
        if (!d.empty()) {
            const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
            const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
            s << "p_wave.min_ms = " << *lo << '\n';
            s << "p_wave.max_ms = " << *hi << '\n';
            s << "p_wave.mean_ms = " << mean << '\n';
        }
        s << "p_wave.reference_band_ms = 80 118\n";
        s << "p_wave.within_reference_band = " << within(80.0, 118.0) << '\n';
        s << "p_wave.plausible_band_ms = 60 160\n";
        s << "p_wave.within_plausible_band = " << within(60.0, 160.0) << '\n';
        return s.str();
    }
};

} // namespace ssm
