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

#include "ssm/eikonal.hpp"
#include "ssm/error.hpp"
#include "ssm/gpmm.hpp"
#include "ssm/io_util.hpp"
#include "ssm/phantom.hpp"
#include "ssm/rigid_align.hpp"
#include "ssm/volumetric.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ssm {

/// Bad or inconsistent configuration.
class ConfigError : public Error
{
public:
    using Error::Error;
};

struct CorrespondenceConfig
{
    /// Corpus index of the shape whose topology every instance inherits.
    std::size_t reference = 0;
    /// One GP stage per entry, fitted in order.
    std::vector<KernelSpec> stages = {KernelSpec::body(), KernelSpec::appendages()};
    bool pv_orientation = false;
    LowRankOptions low_rank;
    FitOptions fit;
};

struct SinusConfig
{
    /// Vertex of the mean shape (and therefore of every sample) at the exit site.
    std::uint32_t vertex = 37;
    double radius = 2.0; // mm
};

struct EcgConfig
{
    double duration_ms = 200.0;
    double dt_ms = 1.0;
    double sample_spacing = 3.0; // mm
    double threshold = 0.05;
};

struct PipelineConfig
{
    std::filesystem::path corpus = "corpus";
    std::filesystem::path output = "out";
    std::filesystem::path regions;
    std::filesystem::path electrodes;
    std::filesystem::path ap_template;

    std::uint64_t seed = 1;
    unsigned jobs = 0;

    SyntheticCorpusSpec synth;
    IcpConfig icp;
    CorrespondenceConfig correspondence;

    std::size_t samples = 5;
    bool empirical_bounds = true;
    std::size_t specificity_samples = 1000;

    WallConfig wall;
    ConductionTable conduction;
    SinusConfig sinus;
    EcgConfig ecg;

    /// Checks ranges, and that every referenced input file exists when `check_files`.
    void validate(bool check_files = true) const
    {
        auto fail = [](const std::string& m) { throw ConfigError(m); };
        if (samples < 1) {
            fail("pdm.samples must be >= 1");
        }
        if (specificity_samples < 1) {
            fail("evaluate.specificity_samples must be >= 1");
        }
        if (correspondence.stages.empty() && !correspondence.pv_orientation) {
            fail("correspondence needs at least one kernel or the PV model");
        }
        if (correspondence.low_rank.rank < 1 || correspondence.low_rank.landmarks < 1) {
            fail("correspondence.rank and correspondence.landmarks must be >= 1");
        }
        if (!(correspondence.fit.reg_weight >= 0.0) || correspondence.fit.outer_iterations < 1) {
            fail("correspondence.reg_weight must be >= 0 and outer_iterations >= 1");
        }
        if (!(sinus.radius > 0.0)) {
            fail("sinus.radius must be positive");
        }
        if (!(ecg.dt_ms > 0.0) || !(ecg.duration_ms > ecg.dt_ms) || !(ecg.sample_spacing > 0.0) ||
            !(ecg.threshold > 0.0 && ecg.threshold < 1.0)) {
            fail("ecg: need dt_ms > 0, duration_ms > dt_ms, sample_spacing > 0, 0 < threshold < 1");
        }
        try {
            icp.validate();
            wall.validate();
            conduction.validate();
            synth.validate();
            for (const auto& k : correspondence.stages) {
                k.validate();
            }
        } catch (const InvalidInput& e) {
            fail(e.what());
        }
        if (check_files) {
            for (const auto* p : {&regions, &electrodes, &ap_template}) {
                if (!std::filesystem::is_regular_file(*p)) {
                    fail("file not found: " + p->string());
                }
            }
        }
    }
};

namespace detail {

inline std::vector<double> config_numbers(const std::string& key, const std::string& value)
{
    std::vector<double> out;
    std::string v = value;
    std::replace(v.begin(), v.end(), ',', ' ');
    for (auto tok : io::split_ws(v)) {
        double d = 0.0;
        if (!io::parse_double(tok, d)) {
            throw ConfigError(key + ": '" + value + "' is not a list of numbers");
        }
        out.push_back(d);
    }
    return out;
}

inline KernelSpec parse_kernel_stage(const std::string& key, const std::string& value)
{
    // "<scale> <length> <labels...>" where labels is `all` or label names.
    std::string v = value;
    std::replace(v.begin(), v.end(), ',', ' ');
    const auto f = io::split_ws(v);
    KernelTerm term;
    if (f.size() < 3 || !io::parse_double(f[0], term.scale) || !io::parse_double(f[1], term.length)) {
        throw ConfigError(key + ": expected '<scale> <length> <labels>'");
    }
    term.mask = 0;
    for (std::size_t i = 2; i < f.size(); ++i) {
        if (f[i] == "all") {
            term.mask = all_labels;
            continue;
        }
        const auto l = label_from_string(f[i]);
        if (!l) {
            throw ConfigError(key + ": unknown label '" + std::string(f[i]) + "'");
        }
        term.mask |= mask_of({*l});
    }
    return KernelSpec{{term}};
}

} // namespace detail

/**
 * Reads an INI file. Relative paths resolve against `base_dir`; data files that
 * are not named default to the standard files in `data_dir`. Unknown sections
 * or keys are errors so that typos do not pass silently.
 */
inline PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                                   const std::filesystem::path& data_dir, const std::string& source = "<config>")
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
    }

    PipelineConfig c;
    c.corpus = base_dir / c.corpus;
    c.output = base_dir / c.output;
    c.regions = data_dir / "regions_phantom.rules";
    c.electrodes = data_dir / "electrodes_standard.txt";
    c.ap_template = data_dir / "ap_atrial.txt";

    const std::map<std::string, std::set<std::string>> known = {
        {"paths", {"corpus", "output", "regions", "electrodes", "ap_template"}},
        {"run", {"seed", "jobs"}},
        {"synth",
         {"instances", "subdivisions", "variances", "noise_sigma", "max_rotation_deg", "max_translation",
          "shuffle_vertices"}},
        {"icp", {"max_iterations", "convergence_tol", "trim_fraction"}},
        {"correspondence", {"reference", "kernels", "pv_orientation", "rank", "landmarks", "reg_weight", "outer_iterations"}},
        {"pdm", {"samples", "bounds"}},
        {"evaluate", {"specificity_samples"}},
        {"wall", {"thickness", "target_edge"}},
        {"conduction", {}},
        {"sinus", {"vertex", "radius"}},
        {"ecg", {"duration_ms", "dt_ms", "sample_spacing", "threshold"}},
    };
    for (const auto& [section, body] : tree) {
        const auto it = known.find(section);
        if (it == known.end()) {
            throw ConfigError(source + ": unknown section [" + section + "]");
        }
        if (!body.data().empty()) {
            throw ConfigError(source + ": key '" + section + "' outside a section");
        }
        for (const auto& [key, value] : body) {
            const bool ok = section == "conduction" ? region_from_string(key).has_value()
                                                    : (it->second.count(key) > 0 ||
                                                       (section == "correspondence" && key.rfind("kernel.", 0) == 0));
            if (!ok) {
                throw ConfigError(source + ": unknown key '" + key + "' in [" + section + "]");
            }
        }
    }

    auto get = [&]<typename T>(const std::string& path, T& out) {
        const auto v = tree.get_optional<std::string>(path);
        if (!v) {
            return;
        }
        const auto s = io::trim(*v);
        if constexpr (std::is_same_v<T, bool>) {
            if (s == "true" || s == "yes" || s == "1") {
                out = true;
            } else if (s == "false" || s == "no" || s == "0") {
                out = false;
            } else {
                throw ConfigError(source + ": " + path + ": expected true or false, got '" + s + "'");
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!io::parse_double(s, out)) {
                throw ConfigError(source + ": " + path + ": expected a number, got '" + s + "'");
            }
        } else if constexpr (std::is_integral_v<T>) {
            if (!io::parse_int(s, out)) {
                throw ConfigError(source + ": " + path + ": expected an integer, got '" + s + "'");
            }
        } else {
            out = T(s);
        }
    };
    auto path_of = [&](const std::string& key, std::filesystem::path& out) {
        std::string s;
        get(key, s);
        if (!s.empty()) {
            out = std::filesystem::path(s).is_relative() ? base_dir / s : std::filesystem::path(s);
        }
        out = out.lexically_normal();
    };
    path_of("paths.corpus", c.corpus);
    path_of("paths.output", c.output);
    path_of("paths.regions", c.regions);
    path_of("paths.electrodes", c.electrodes);
    path_of("paths.ap_template", c.ap_template);

    get("run.seed", c.seed);
    get("run.jobs", c.jobs);

    get("synth.instances", c.synth.n_instances);
    get("synth.subdivisions", c.synth.base.subdivisions);
    if (const auto v = tree.get_optional<std::string>("synth.variances")) {
        c.synth.variances = detail::config_numbers("synth.variances", *v);
    }
    get("synth.noise_sigma", c.synth.noise_sigma);
    get("synth.max_rotation_deg", c.synth.max_rotation_deg);
    get("synth.max_translation", c.synth.max_translation);
    get("synth.shuffle_vertices", c.synth.shuffle_vertices);
    c.synth.seed = c.seed;

    get("icp.max_iterations", c.icp.max_iterations);
    get("icp.convergence_tol", c.icp.convergence_tol);
    get("icp.trim_fraction", c.icp.trim_fraction);

    auto& cc = c.correspondence;
    get("correspondence.reference", cc.reference);
    get("correspondence.pv_orientation", cc.pv_orientation);
    get("correspondence.rank", cc.low_rank.rank);
    get("correspondence.landmarks", cc.low_rank.landmarks);
    get("correspondence.reg_weight", cc.fit.reg_weight);
    get("correspondence.outer_iterations", cc.fit.outer_iterations);
    if (const auto sec = tree.get_child_optional("correspondence")) {
        std::map<int, KernelSpec> staged;
        for (const auto& [key, value] : *sec) {
            if (key.rfind("kernel.", 0) != 0) {
                continue;
            }
            int order = 0;
            if (!io::parse_int(std::string_view(key).substr(7), order)) {
                throw ConfigError(source + ": correspondence." + key + ": expected kernel.<number>");
            }
            staged[order] = detail::parse_kernel_stage("correspondence." + key, value.data());
        }
        if (!staged.empty()) {
            cc.stages.clear();
            for (auto& [order, k] : staged) {
                cc.stages.push_back(k);
            }
        }
    }

    get("pdm.samples", c.samples);
    if (const auto b = tree.get_optional<std::string>("pdm.bounds")) {
        const auto s = io::trim(*b);
        if (s != "empirical" && s != "default") {
            throw ConfigError(source + ": pdm.bounds: expected 'empirical' or 'default'");
        }
        c.empirical_bounds = s == "empirical";
    }
    get("evaluate.specificity_samples", c.specificity_samples);

    get("wall.thickness", c.wall.thickness);
    get("wall.target_edge", c.wall.target_edge);
    if (const auto sec = tree.get_child_optional("conduction")) {
        for (const auto& [key, value] : *sec) {
            const auto nums = detail::config_numbers("conduction." + key, value.data());
            if (nums.size() != 2) {
                throw ConfigError(source + ": conduction." + key + ": expected '<cv_t mm/s> <anisotropy ratio>'");
            }
            c.conduction[*region_from_string(key)] = {nums[0], nums[1]};
        }
    }
    get("sinus.vertex", c.sinus.vertex);
    get("sinus.radius", c.sinus.radius);
    get("ecg.duration_ms", c.ecg.duration_ms);
    get("ecg.dt_ms", c.ecg.dt_ms);
    get("ecg.sample_spacing", c.ecg.sample_spacing);
    get("ecg.threshold", c.ecg.threshold);
    return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path, const std::filesystem::path& data_dir)
{
    std::string text;
    try {
        text = io::read_file(path);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text, path.parent_path(), data_dir, path.string());
}

} // namespace ssm
