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
#include "ssm/tet_mesh.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>
#include <queue>
#include <span>
#include <string>
#include <vector>

namespace ssm {

struct Conduction
{
    double cv_t = 1000.0; // transverse conduction velocity, mm/s
    double ar = 1.0;      // longitudinal / transverse
};

/// Per-region conduction velocities. Defaults are the published atrial values.
struct ConductionTable
{
    std::array<Conduction, region_count> regions = {{
        {739.0, 2.11},  // RA
        {946.0, 2.11},  // LA
        {1093.0, 3.36}, // InterAtrial
        {445.0, 2.11},  // ValveRing
        {578.0, 3.78},  // PectinateMuscle
        {607.0, 3.0},   // CristaTerminalis
        {722.0, 1.0},   // InferiorIsthmus
    }};

    static ConductionTable uniform(double cv_t, double ar = 1.0)
    {
        ConductionTable t;
        t.regions.fill({cv_t, ar});
        return t;
    }

    const Conduction& operator[](Region r) const { return regions[static_cast<std::size_t>(r)]; }
    Conduction& operator[](Region r) { return regions[static_cast<std::size_t>(r)]; }

    void validate() const
    {
        for (int r = 0; r < region_count; ++r) {
            const auto& c = regions[static_cast<std::size_t>(r)];
            if (!(c.cv_t > 0.0) || !std::isfinite(c.cv_t) || !(c.ar >= 1.0) || !std::isfinite(c.ar)) {
                throw InvalidInput(std::string("conduction for ") + std::string(to_string(static_cast<Region>(r))) +
                                   " needs cv_t > 0 and ar >= 1");
            }
        }
    }
};

/// M = (ar cv)^2 f f^T + cv^2 (I - f f^T), in (mm/s)^2.
inline Mat3 velocity_tensor(Region region, const Vec3& fiber, const ConductionTable& table)
{
    const auto& c = table[region];
    const Mat3 ff = fiber * fiber.transpose();
    const double vl = c.ar * c.cv_t;
    return vl * vl * ff + c.cv_t * c.cv_t * (Mat3::Identity() - ff);
}

struct ActivationMap
{
    /// Activation time per vertex in ms; +inf where no seed is reachable.
    std::vector<double> lat;
    std::vector<std::uint32_t> seeds;
    std::vector<std::uint32_t> unreached;
    /// Times a vertex was accepted again after its value improved.
    std::size_t reinsertions = 0;
};

namespace detail {

/**
 * Minimum over the simplex spanned by the known points of
 * T(p) + |x - p|_D, where T is linear over the simplex. Points are given
 * relative to x's neighbours: `base` with time t0 and up to two edge vectors
 * e[k] = p_k - base with time differences g[k].
 */
template <int K>
double simplex_arrival(const Vec3& x, const Vec3& base, double t0, const std::array<Vec3, 2>& e,
                       const std::array<double, 2>& g, const Mat3& d)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    const Vec3 r = x - base;
    if constexpr (K == 0) {
        return t0 + std::sqrt(r.dot(d * r));
    } else {
        Eigen::Matrix<double, 3, K> E;
        Eigen::Matrix<double, K, 1> gv;
        for (int k = 0; k < K; ++k) {
            E.col(k) = e[static_cast<std::size_t>(k)];
            gv(k) = g[static_cast<std::size_t>(k)];
        }
        const Eigen::Matrix<double, 3, K> de = d * E;
        const Eigen::Matrix<double, K, K> a = E.transpose() * de;
        const Eigen::Matrix<double, K, 1> b = de.transpose() * r;
        const double det = a.determinant();
        if (!(std::abs(det) > 1e-14 * std::pow(a.trace(), K))) {
            return inf;
        }
        const Eigen::Matrix<double, K, K> ainv = a.inverse();
        const double q = gv.dot(ainv * gv);
        if (!(q < 1.0)) {
            return inf;
        }
        const Vec3 r0 = r - E * (ainv * b);
        const double s = std::sqrt(std::max(0.0, r0.dot(d * r0)) / (1.0 - q));
        const Eigen::Matrix<double, K, 1> lambda = ainv * (b - s * gv);
        constexpr double tol = 1e-12;
        if ((lambda.array() < -tol).any() || lambda.sum() > 1.0 + tol) {
            return inf;
        }
        return t0 + gv.dot(lambda) + s;
    }
}

/// Arrival at x from the known vertices (p_i, t_i) of one tet, metric d = M^-1.
inline double local_arrival(const Vec3& x, std::span<const Vec3> p, std::span<const double> t, const Mat3& d)
{
    double best = std::numeric_limits<double>::infinity();
    const std::size_t n = p.size();
    for (std::size_t i = 0; i < n; ++i) {
        best = std::min(best, simplex_arrival<0>(x, p[i], t[i], {}, {}, d));
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            best = std::min(best, simplex_arrival<1>(x, p[i], t[i], {p[j] - p[i], Vec3::Zero()}, {t[j] - t[i], 0.0}, d));
        }
    }
    if (n == 3) {
        best = std::min(best, simplex_arrival<2>(x, p[2], t[2], {p[0] - p[2], p[1] - p[2]},
                                                 {t[0] - t[2], t[1] - t[2]}, d));
    }
    return best;
}

} // namespace detail

struct MarchOptions
{
    /// Relative improvement needed to re-queue a vertex.
    double rel_tol = 1e-12;
    /// Vertices connected to a seed within this distance (mm) start from the
    /// straight-line travel time to it, using the slowest metric around the seed.
    /// Zero disables.
    double source_radius = 10.0;
};

/**
 * Anisotropic Eikonal solve on a tet mesh (times in ms).
 *
 * Vertices are settled from a min-heap as in fast marching, but a vertex
 * whose time later improves through an obtuse tet is queued again, so the
 * result is the fixed point of the local tet updates rather than a single
 * causal sweep.
 */
inline ActivationMap fast_march(const TetMesh& mesh, const ConductionTable& table, std::span<const std::uint32_t> seeds,
                                const MarchOptions& opt = {})
{
    table.validate();
    if (seeds.empty()) {
        throw InvalidInput("activation needs at least one seed vertex");
    }
    const auto nv = mesh.num_vertices();
    for (auto s : seeds) {
        if (s >= nv) {
            throw InvalidInput("seed vertex " + std::to_string(s) + " is not on the mesh");
        }
    }
    if (!mesh.fibers.empty() && mesh.fibers.size() != mesh.num_tets()) {
        throw InvalidInput("fiber block does not match the tet count");
    }

    std::vector<Mat3> metric(mesh.num_tets());
    for (std::size_t t = 0; t < mesh.num_tets(); ++t) {
        const Vec3 f = mesh.fibers.empty() ? Vec3::UnitX() : mesh.fibers[t];
        // mm/ms units: velocities / 1000, so the metric scales by 1e6.
        metric[t] = velocity_tensor(mesh.region(t), f, table).inverse() * 1e6;
    }
    std::vector<std::uint32_t> offsets(nv + 1, 0);
    for (const auto& k : mesh.tets) {
        for (auto v : k) {
            ++offsets[v + 1];
        }
    }
    for (std::size_t i = 0; i < nv; ++i) {
        offsets[i + 1] += offsets[i];
    }
    std::vector<std::uint32_t> incident(offsets.back());
    {
        auto fill = offsets;
        for (std::size_t t = 0; t < mesh.num_tets(); ++t) {
            for (auto v : mesh.tets[t]) {
                incident[fill[v]++] = static_cast<std::uint32_t>(t);
            }
        }
    }

    constexpr double inf = std::numeric_limits<double>::infinity();
    ActivationMap out;
    out.lat.assign(nv, inf);
    out.seeds.assign(seeds.begin(), seeds.end());
    std::sort(out.seeds.begin(), out.seeds.end());
    out.seeds.erase(std::unique(out.seeds.begin(), out.seeds.end()), out.seeds.end());

    using Entry = std::pair<double, std::uint32_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    std::vector<char> settled(nv, 0);
    for (auto s : out.seeds) {
        out.lat[s] = 0.0;
    }

    // A first-order front started from isolated points is too slow near the
    // source, where the front is strongly curved.
    if (opt.source_radius > 0.0) {
        const double r2 = opt.source_radius * opt.source_radius;
        auto slowest = [&](std::uint32_t a, const Vec3& e) {
            double c = 0.0;
            for (auto i = offsets[a]; i < offsets[a + 1]; ++i) {
                c = std::max(c, std::sqrt(e.dot(metric[incident[i]] * e)));
            }
            return c;
        };
        std::vector<std::uint32_t> mark(nv, 0);
        std::uint32_t stamp = 0;
        std::vector<std::uint32_t> frontier;
        std::vector<std::uint32_t> next;
        for (auto s : out.seeds) {
            ++stamp;
            mark[s] = stamp;
            frontier.assign(1, s);
            while (!frontier.empty()) {
                next.clear();
                for (auto a : frontier) {
                    for (auto i = offsets[a]; i < offsets[a + 1]; ++i) {
                        for (auto w : mesh.tets[incident[i]]) {
                            if (mark[w] == stamp) {
                                continue;
                            }
                            mark[w] = stamp;
                            const Vec3 e = mesh.vertices[w] - mesh.vertices[s];
                            if (e.squaredNorm() > r2) {
                                continue;
                            }
                            next.push_back(w);
                            out.lat[w] = std::min(out.lat[w], slowest(s, e));
                        }
                    }
                }
                frontier.swap(next);
            }
        }
    }
    for (std::uint32_t i = 0; i < nv; ++i) {
        if (std::isfinite(out.lat[i])) {
            heap.emplace(out.lat[i], i);
        }
    }

    std::array<Vec3, 3> p;
    std::array<double, 3> tk;
    while (!heap.empty()) {
        const auto [time, v] = heap.top();
        heap.pop();
        if (time > out.lat[v]) {
            continue;
        }
        if (settled[v]) {
            ++out.reinsertions;
        }
        settled[v] = 1;
        for (auto i = offsets[v]; i < offsets[v + 1]; ++i) {
            const auto t = incident[i];
            const auto& k = mesh.tets[t];
            for (auto w : k) {
                if (w == v || out.lat[w] == 0.0) {
                    continue;
                }
                std::size_t n = 0;
                for (auto u : k) {
                    if (u != w && std::isfinite(out.lat[u])) {
                        p[n] = mesh.vertices[u];
                        tk[n] = out.lat[u];
                        ++n;
                    }
                }
                const double cand = detail::local_arrival(mesh.vertices[w], std::span(p.data(), n),
                                                          std::span(tk.data(), n), metric[t]);
                if (cand < out.lat[w] * (1.0 - opt.rel_tol)) {
                    out.lat[w] = cand;
                    heap.emplace(cand, w);
                }
            }
        }
    }
    for (std::uint32_t i = 0; i < nv; ++i) {
        if (!std::isfinite(out.lat[i])) {
            out.unreached.push_back(i);
        }
    }
    return out;
}

/// Vertices within `radius` (mm) of `point`.
inline std::vector<std::uint32_t> sinus_seed(const TetMesh& mesh, const Vec3& point, double radius = 2.0)
{
    if (!(radius >= 0.0)) {
        throw InvalidInput("seed radius must be non-negative");
    }
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
        if ((mesh.vertices[i] - point).norm() <= radius) {
            out.push_back(static_cast<std::uint32_t>(i));
        }
    }
    if (out.empty()) {
        throw InvalidInput("no mesh vertex within " + std::to_string(radius) + " mm of the exit site (" +
                           std::to_string(point.x()) + ", " + std::to_string(point.y()) + ", " +
                           std::to_string(point.z()) + ")");
    }
    return out;
}

inline void write_activation_csv(std::ostream& os, const ActivationMap& map)
{
    os << "vertex,lat_ms\n";
    for (std::size_t i = 0; i < map.lat.size(); ++i) {
        os << i << ',';
        if (std::isfinite(map.lat[i])) {
            io::put_double(os, map.lat[i]);
        } else {
            os << "inf";
        }
        os << '\n';
    }
}

/// Activation times from the CSV written by write_activation_csv.
inline std::vector<double> parse_activation_csv(std::string_view text, const std::string& source = "<activation>")
{
    io::LineTokenizer tok(text, source);
    std::string_view line;
    if (!tok.next_line(line) || io::trim(line) != "vertex,lat_ms") {
        throw ParseError(source, tok.line_number(), "expected header 'vertex,lat_ms'");
    }
    std::vector<double> lat;
    while (tok.next_line(line)) {
        const auto comma = line.find(',');
        std::size_t index = 0;
        double v = 0.0;
        if (comma == std::string_view::npos || !io::parse_int(io::trim(line.substr(0, comma)), index) ||
            index != lat.size()) {
            tok.fail("expected vertex " + std::to_string(lat.size()));
        }
        const auto cell = io::trim(line.substr(comma + 1));
        if (cell == "inf") {
            v = std::numeric_limits<double>::infinity();
        } else if (!io::parse_double(cell, v)) {
            tok.fail("bad activation time '" + cell + "'");
        }
        lat.push_back(v);
    }
    return lat;
}

} // namespace ssm
