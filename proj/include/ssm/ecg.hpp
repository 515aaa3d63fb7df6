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

#include "ssm/error.hpp"
#include "ssm/io_util.hpp"
#include "ssm/parallel.hpp"
#include "ssm/tet_mesh.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace ssm {

/// Action potential sampled at a fixed step, starting at the resting value.
struct ApTemplate
{
    double dt = 0.1; // ms
    std::vector<double> samples;
    /// Index of the last sample of the upstroke (the peak).
    std::size_t upstroke_end = 0;

    double rest() const { return samples.front(); }
    double length() const { return dt * static_cast<double>(samples.size() - 1); }

    /// Voltage `t` ms after activation, linearly interpolated. Rest before 0,
    /// last sample after the end.
    double at(double t) const
    {
        if (t <= 0.0) {
            return samples.front();
        }
        const double u = t / dt;
        const auto i = static_cast<std::size_t>(u);
        if (i + 1 >= samples.size()) {
            return samples.back();
        }
        const double w = u - static_cast<double>(i);
        return samples[i] + w * (samples[i + 1] - samples[i]);
    }

    void validate() const
    {
        if (!(dt > 0.0) || !std::isfinite(dt)) {
            throw InvalidInput("action potential template: dt must be positive");
        }
        if (samples.size() < 2 || upstroke_end == 0 || upstroke_end >= samples.size()) {
            throw InvalidInput("action potential template: no upstroke");
        }
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (!std::isfinite(samples[i])) {
                throw InvalidInput("action potential template: non-finite sample");
            }
            if (i > 0 && i <= upstroke_end && samples[i] < samples[i - 1]) {
                throw InvalidInput("action potential template: upstroke is not monotone");
            }
        }
    }
};

/**
 * Piecewise analytic atrial action potential: a 1 ms smoothstep upstroke from
 * `rest` by `amplitude`, a spike decaying with 3 ms time constant onto a
 * plateau, and a logistic repolarisation centred at `repol_ms`.
 */
inline ApTemplate analytic_atrial_ap(double dt = 0.1, double length_ms = 500.0, double rest = -81.0,
                                     double amplitude = 105.0, double repol_ms = 250.0)
{
    constexpr double upstroke_ms = 1.0;
    constexpr double spike_tau = 3.0;
    constexpr double plateau = 76.0; // above rest
    constexpr double repol_width = 15.0;
    auto gate = [&](double t) { return 1.0 / (1.0 + std::exp((t - repol_ms) / repol_width)); };

    ApTemplate ap;
    ap.dt = dt;
    const auto n = static_cast<std::size_t>(std::llround(length_ms / dt)) + 1;
    ap.samples.resize(n);
    const double peak_gate = gate(upstroke_ms);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = dt * static_cast<double>(i);
        if (t < upstroke_ms) {
            const double s = t / upstroke_ms;
            ap.samples[i] = rest + amplitude * peak_gate * s * s * (3.0 - 2.0 * s);
            ap.upstroke_end = i + 1;
        } else {
            const double a = plateau + (amplitude - plateau) * std::exp(-(t - upstroke_ms) / spike_tau);
            ap.samples[i] = rest + a * gate(t);
        }
    }
    ap.upstroke_end = std::min(ap.upstroke_end, n - 1);
    return ap;
}

/// Text format: `dt <ms>` then one voltage (mV) per line; `#` starts a comment.
/// The upstroke ends at the global maximum.
inline ApTemplate parse_ap_template(std::string_view text, const std::string& source = "<ap>")
{
    io::LineTokenizer tok(text, source);
    std::string_view line;
    ApTemplate ap;
    bool have_dt = false;
    while (tok.next_line(line)) {
        if (line.front() == '#') {
            continue;
        }
        const auto f = io::split_ws(line);
        if (!have_dt) {
            if (f.size() != 2 || f[0] != "dt" || !io::parse_double(f[1], ap.dt)) {
                tok.fail("expected 'dt <ms>'");
            }
            have_dt = true;
            continue;
        }
        double v = 0.0;
        if (f.size() != 1 || !io::parse_double(f[0], v)) {
            tok.fail("expected one voltage per line");
        }
        ap.samples.push_back(v);
    }
    if (!have_dt || ap.samples.empty()) {
        throw ParseError(source, 0, "empty action potential template");
    }
    ap.upstroke_end = static_cast<std::size_t>(std::max_element(ap.samples.begin(), ap.samples.end()) - ap.samples.begin());
    try {
        ap.validate();
    } catch (const InvalidInput& e) {
        throw ParseError(source, 0, e.what());
    }
    return ap;
}

inline ApTemplate load_ap_template(const std::filesystem::path& path)
{
    return parse_ap_template(io::read_file(path), path.string());
}

inline std::string format_ap_template(const ApTemplate& ap)
{
    std::ostringstream os;
    os << "dt ";
    io::put_double(os, ap.dt);
    os << '\n';
    for (double v : ap.samples) {
        io::put_double(os, v);
        os << '\n';
    }
    return os.str();
}

/// Transmembrane voltage per vertex (rows) and time step (columns).
struct VmMovie
{
    double dt = 1.0; // ms
    Eigen::MatrixXd vm;

    std::size_t num_steps() const { return static_cast<std::size_t>(vm.cols()); }
    double time(std::size_t k) const { return dt * static_cast<double>(k); }
};

/// Vm(m, t) = template(t - lat_m) at t = 0, dt, ..., duration.
inline VmMovie vm_movie(std::span<const double> lat, const ApTemplate& ap, double duration, double dt)
{
    ap.validate();
    if (!(dt > 0.0) || !(duration >= 0.0)) {
        throw InvalidInput("vm_movie: need dt > 0 and duration >= 0");
    }
    if (ap.length() < duration) {
        throw InvalidInput("vm_movie: template shorter than the requested duration");
    }
    for (std::size_t m = 0; m < lat.size(); ++m) {
        if (!std::isfinite(lat[m])) {
            throw InvalidInput("vm_movie: vertex " + std::to_string(m) + " has no finite activation time");
        }
    }
    VmMovie out;
    out.dt = dt;
    const auto steps = static_cast<Eigen::Index>(std::floor(duration / dt + 1e-9)) + 1;
    out.vm.resize(static_cast<Eigen::Index>(lat.size()), steps);
    for (Eigen::Index k = 0; k < steps; ++k) {
        const double t = dt * static_cast<double>(k);
        for (std::size_t m = 0; m < lat.size(); ++m) {
            out.vm(static_cast<Eigen::Index>(m), k) = ap.at(t - lat[m]);
        }
    }
    return out;
}

inline constexpr std::size_t electrode_count = 9;
inline constexpr std::array<const char*, electrode_count> electrode_names = {"RA", "LA", "LL", "V1", "V2",
                                                                             "V3", "V4", "V5", "V6"};

/// Limb-equivalent (RA, LA, LL) and precordial (V1-V6) positions in mm.
struct ElectrodeSet
{
    std::array<Vec3, electrode_count> positions;

    const Vec3& operator[](std::size_t i) const { return positions[i]; }

    void validate() const
    {
        for (std::size_t i = 0; i < electrode_count; ++i) {
            if (!positions[i].allFinite()) {
                throw InvalidInput(std::string("electrode ") + electrode_names[i] + " is not finite");
            }
            for (std::size_t j = 0; j < i; ++j) {
                if ((positions[i] - positions[j]).norm() < 1e-9) {
                    throw InvalidInput(std::string("electrodes ") + electrode_names[j] + " and " + electrode_names[i] +
                                       " coincide");
                }
            }
        }
    }

    /// Copy with every electrode moved away from `center` by `factor`.
    ElectrodeSet scaled(const Vec3& center, double factor) const
    {
        ElectrodeSet out = *this;
        for (auto& p : out.positions) {
            p = center + factor * (p - center);
        }
        return out;
    }
};

/// Lines of `name x y z`; all nine names must appear once.
inline ElectrodeSet parse_electrodes(std::string_view text, const std::string& source = "<electrodes>")
{
    io::LineTokenizer tok(text, source);
    std::string_view line;
    ElectrodeSet set;
    std::array<bool, electrode_count> seen{};
    while (tok.next_line(line)) {
        if (line.front() == '#') {
            continue;
        }
        const auto f = io::split_ws(line);
        if (f.size() != 4) {
            tok.fail("expected 'name x y z'");
        }
        const auto it = std::find_if(electrode_names.begin(), electrode_names.end(),
                                     [&](const char* n) { return f[0] == n; });
        if (it == electrode_names.end()) {
            tok.fail("unknown electrode '" + std::string(f[0]) + "'");
        }
        const auto i = static_cast<std::size_t>(it - electrode_names.begin());
        if (seen[i]) {
            tok.fail("electrode " + std::string(f[0]) + " given twice");
        }
        for (int c = 0; c < 3; ++c) {
            if (!io::parse_double(f[static_cast<std::size_t>(c) + 1], set.positions[i][c])) {
                tok.fail("bad coordinate");
            }
        }
        seen[i] = true;
    }
    for (std::size_t i = 0; i < electrode_count; ++i) {
        if (!seen[i]) {
            throw ParseError(source, 0, std::string("missing electrode ") + electrode_names[i]);
        }
    }
    try {
        set.validate();
    } catch (const InvalidInput& e) {
        throw ParseError(source, 0, e.what());
    }
    return set;
}

inline ElectrodeSet load_electrodes(const std::filesystem::path& path)
{
    return parse_electrodes(io::read_file(path), path.string());
}

/// Per-electrode potential (rows, in electrode order) per time step (columns).
struct ElectrodePotentials
{
    double dt = 1.0;
    Eigen::MatrixXd phi;
};

struct ForwardOptions
{
    double sample_spacing = 3.0; // mm, source binning cell
    double conductivity = 1.0;
    /// Minimum distance from an electrode to the source bounding box.
    double min_clearance = 10.0;
    unsigned jobs = 1;
};

namespace detail {

struct SourceBins
{
    std::vector<std::uint32_t> bin_of_tet;
    std::vector<Vec3> centers;
};

/// Groups tets by the grid cell of their centroid; each bin sits at the
/// volume-weighted centroid of its members. Bin order follows the cell index.
inline SourceBins bin_sources(const TetMesh& mesh, double spacing)
{
    const Vec3 lo = [&] {
        Vec3 m = Vec3::Constant(std::numeric_limits<double>::infinity());
        for (const auto& v : mesh.vertices) {
            m = m.cwiseMin(v);
        }
        return m;
    }();
    std::map<std::array<long, 3>, std::uint32_t> cells;
    std::vector<std::array<long, 3>> key(mesh.num_tets());
    for (std::size_t t = 0; t < mesh.num_tets(); ++t) {
        const Vec3 c = (tet_centroid(mesh, t) - lo) / spacing;
        key[t] = {static_cast<long>(std::floor(c.x())), static_cast<long>(std::floor(c.y())),
                  static_cast<long>(std::floor(c.z()))};
        cells.emplace(key[t], 0);
    }
    std::uint32_t next = 0;
    for (auto& [k, id] : cells) {
        id = next++;
    }
    SourceBins bins;
    bins.bin_of_tet.resize(mesh.num_tets());
    bins.centers.assign(next, Vec3::Zero());
    std::vector<double> weight(next, 0.0);
    for (std::size_t t = 0; t < mesh.num_tets(); ++t) {
        const auto b = cells.at(key[t]);
        bins.bin_of_tet[t] = b;
        const double vol = tet_volume(mesh, t);
        bins.centers[b] += vol * tet_centroid(mesh, t);
        weight[b] += vol;
    }
    for (std::uint32_t b = 0; b < next; ++b) {
        bins.centers[b] /= weight[b];
    }
    return bins;
}

} // namespace detail

/**
 * Extracellular potential at each electrode in an infinite homogeneous
 * conductor. Each tet contributes the dipole -sigma * grad(Vm) * volume; dipoles
 * are summed per grid cell and placed at the cell's source centroid.
 */
inline ElectrodePotentials surface_potentials(const TetMesh& mesh, const VmMovie& movie, const ElectrodeSet& electrodes,
                                              const ForwardOptions& opt = {})
{
    validate(mesh);
    electrodes.validate();
    if (static_cast<std::size_t>(movie.vm.rows()) != mesh.num_vertices()) {
        throw InvalidInput("surface_potentials: movie has " + std::to_string(movie.vm.rows()) + " vertices, mesh has " +
                           std::to_string(mesh.num_vertices()));
    }
    if (!(opt.sample_spacing > 0.0)) {
        throw InvalidInput("surface_potentials: sample spacing must be positive");
    }
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (const auto& v : mesh.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    for (std::size_t e = 0; e < electrode_count; ++e) {
        const Vec3 gap = (lo - electrodes[e]).cwiseMax(electrodes[e] - hi).cwiseMax(0.0);
        if (gap.norm() <= opt.min_clearance) {
            throw InvalidInput(std::string("electrode ") + electrode_names[e] + " lies inside or within " +
                               std::to_string(opt.min_clearance) + " mm of the source mesh");
        }
    }

    const auto nt = mesh.num_tets();
    std::vector<Mat3> grad(nt);
    std::vector<double> vol(nt);
    for (std::size_t t = 0; t < nt; ++t) {
        const auto& k = mesh.tets[t];
        Mat3 edges;
        for (int c = 0; c < 3; ++c) {
            edges.col(c) = mesh.vertices[k[static_cast<std::size_t>(c) + 1]] - mesh.vertices[k[0]];
        }
        grad[t] = edges.transpose().inverse();
        vol[t] = tet_volume(mesh, t);
    }
    const auto bins = detail::bin_sources(mesh, opt.sample_spacing);
    const auto nb = bins.centers.size();
    std::vector<std::array<Vec3, electrode_count>> lead(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t e = 0; e < electrode_count; ++e) {
            const Vec3 r = electrodes[e] - bins.centers[b];
            const double d = r.norm();
            lead[b][e] = r / (4.0 * std::numbers::pi * d * d * d);
        }
    }

    ElectrodePotentials out;
    out.dt = movie.dt;
    out.phi.setZero(static_cast<Eigen::Index>(electrode_count), movie.vm.cols());
    parallel_for(movie.num_steps(), opt.jobs, [&](std::size_t step) {
        const auto col = movie.vm.col(static_cast<Eigen::Index>(step));
        std::vector<Vec3> moment(nb, Vec3::Zero());
        for (std::size_t t = 0; t < nt; ++t) {
            const auto& k = mesh.tets[t];
            const double v0 = col(k[0]);
            const Vec3 dv(col(k[1]) - v0, col(k[2]) - v0, col(k[3]) - v0);
            if (dv.isZero(0.0)) {
                continue;
            }
            moment[bins.bin_of_tet[t]] -= opt.conductivity * vol[t] * (grad[t] * dv);
        }
        for (std::size_t e = 0; e < electrode_count; ++e) {
            double phi = 0.0;
            for (std::size_t b = 0; b < nb; ++b) {
                phi += moment[b].dot(lead[b][e]);
            }
            out.phi(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(step)) = phi;
        }
    });
    return out;
}

inline constexpr std::size_t lead_count = 12;
inline constexpr std::array<const char*, lead_count> lead_names = {"I",  "II", "III", "aVR", "aVL", "aVF",
                                                                   "V1", "V2", "V3",  "V4",  "V5",  "V6"};

struct EcgTraceSet
{
    double dt = 1.0; // ms
    std::array<std::vector<double>, lead_count> leads;
    /// Per-lead onset/offset in ms; NaN until annotated or for a flat lead.
    std::array<double, lead_count> onset;
    std::array<double, lead_count> offset;

    EcgTraceSet() { clear_annotations(); }

    std::size_t num_samples() const { return leads[0].size(); }

    void clear_annotations()
    {
        onset.fill(std::numeric_limits<double>::quiet_NaN());
        offset.fill(std::numeric_limits<double>::quiet_NaN());
    }
};

/// Einthoven, Goldberger and Wilson leads from the nine electrode potentials.
inline EcgTraceSet derive_12_leads(const ElectrodePotentials& potentials)
{
    if (potentials.phi.rows() != static_cast<Eigen::Index>(electrode_count)) {
        throw InvalidInput("derive_12_leads: expected " + std::to_string(electrode_count) + " electrode series, got " +
                           std::to_string(potentials.phi.rows()));
    }
    EcgTraceSet out;
    out.dt = potentials.dt;
    const auto n = static_cast<std::size_t>(potentials.phi.cols());
    for (auto& l : out.leads) {
        l.resize(n);
    }
    for (std::size_t k = 0; k < n; ++k) {
        const auto e = [&](std::size_t i) { return potentials.phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)); };
        const double ra = e(0);
        const double la = e(1);
        const double ll = e(2);
        const double wct = (ra + la + ll) / 3.0;
        out.leads[0][k] = la - ra;
        out.leads[1][k] = ll - ra;
        out.leads[2][k] = ll - la;
        out.leads[3][k] = ra - 0.5 * (la + ll);
        out.leads[4][k] = la - 0.5 * (ra + ll);
        out.leads[5][k] = ll - 0.5 * (ra + la);
        for (std::size_t v = 0; v < 6; ++v) {
            out.leads[6 + v][k] = e(3 + v) - wct;
        }
        const double closure = out.leads[0][k] + out.leads[2][k] - out.leads[1][k];
        const double scale = std::max({1.0, std::abs(ra), std::abs(la), std::abs(ll)});
        if (std::abs(closure) > 1e-12 * scale) {
            throw NumericalError("Einthoven closure violated at sample " + std::to_string(k));
        }
    }
    return out;
}

/// Scales all leads by one factor so the largest |value| is 1.
inline void normalize(EcgTraceSet& traces)
{
    double peak = 0.0;
    for (const auto& l : traces.leads) {
        for (double v : l) {
            peak = std::max(peak, std::abs(v));
        }
    }
    if (peak > 0.0) {
        for (auto& l : traces.leads) {
            for (double& v : l) {
                v /= peak;
            }
        }
    }
}

struct PWave
{
    double onset = 0.0;  // ms, earliest over leads
    double offset = 0.0; // ms, latest over leads
    std::size_t onset_lead = 0;
    std::size_t offset_lead = 0;

    double duration() const { return offset - onset; }
};

/**
 * Per lead, onset and offset are the first and last samples where |signal|
 * exceeds `threshold_frac` times that lead's peak |signal|. The P wave spans
 * the earliest onset to the latest offset. Writes the per-lead annotations.
 */
inline PWave p_wave_duration(EcgTraceSet& traces, double threshold_frac = 0.05)
{
    if (!(threshold_frac > 0.0 && threshold_frac < 1.0)) {
        throw InvalidInput("p_wave_duration: threshold fraction must be in (0, 1)");
    }
    traces.clear_annotations();
    PWave out;
    bool any = false;
    for (std::size_t l = 0; l < lead_count; ++l) {
        const auto& s = traces.leads[l];
        double peak = 0.0;
        for (double v : s) {
            peak = std::max(peak, std::abs(v));
        }
        if (!(peak > 0.0)) {
            continue;
        }
        const double thr = threshold_frac * peak;
        std::size_t first = s.size();
        std::size_t last = 0;
        for (std::size_t k = 0; k < s.size(); ++k) {
            if (std::abs(s[k]) > thr) {
                first = std::min(first, k);
                last = k;
            }
        }
        traces.onset[l] = traces.dt * static_cast<double>(first);
        traces.offset[l] = traces.dt * static_cast<double>(last);
        if (!any || traces.onset[l] < out.onset) {
            out.onset = traces.onset[l];
            out.onset_lead = l;
        }
        if (!any || traces.offset[l] > out.offset) {
            out.offset = traces.offset[l];
            out.offset_lead = l;
        }
        any = true;
    }
    if (!any) {
        throw InvalidInput("p_wave_duration: all leads are zero");
    }
    return out;
}

inline void write_traces_csv(std::ostream& os, const EcgTraceSet& traces)
{
    os << "time_ms";
    for (const char* n : lead_names) {
        os << ',' << n;
    }
    os << '\n';
    for (std::size_t k = 0; k < traces.num_samples(); ++k) {
        io::put_double(os, traces.dt * static_cast<double>(k));
        for (const auto& l : traces.leads) {
            os << ',';
            io::put_double(os, l[k]);
        }
        os << '\n';
    }
}

/// Reads the CSV written by write_traces_csv. The time column must be evenly spaced from 0.
inline EcgTraceSet parse_traces_csv(std::string_view text, const std::string& source = "<traces>")
{
    io::LineTokenizer tok(text, source);
    std::string_view line;
    if (!tok.next_line(line)) {
        throw ParseError(source, 0, "empty trace file");
    }
    {
        std::string expect = "time_ms";
        for (const char* n : lead_names) {
            expect += std::string(",") + n;
        }
        if (io::trim(line) != expect) {
            tok.fail("unexpected header");
        }
    }
    EcgTraceSet out;
    std::vector<double> times;
    while (tok.next_line(line)) {
        std::array<double, lead_count + 1> row{};
        std::size_t col = 0;
        std::size_t pos = 0;
        while (true) {
            const auto comma = line.find(',', pos);
            const auto cell = io::trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
            if (col > lead_count || !io::parse_double(cell, row[col])) {
                tok.fail("expected " + std::to_string(lead_count + 1) + " numeric columns");
            }
            ++col;
            if (comma == std::string_view::npos) {
                break;
            }
            pos = comma + 1;
        }
        if (col != lead_count + 1) {
            tok.fail("expected " + std::to_string(lead_count + 1) + " numeric columns");
        }
        times.push_back(row[0]);
        for (std::size_t l = 0; l < lead_count; ++l) {
            out.leads[l].push_back(row[l + 1]);
        }
    }
    if (times.size() < 2) {
        throw ParseError(source, 0, "need at least two samples");
    }
    out.dt = times[1] - times[0];
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (std::abs(times[k] - out.dt * static_cast<double>(k)) > 1e-9 * std::max(1.0, times[k])) {
            throw ParseError(source, k + 2, "time column is not evenly spaced from 0");
        }
    }
    return out;
}

} // namespace ssm
