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
#include "ssm/mesh.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ssm {

/// Conduction region of a wall tetrahedron.
enum class Region : std::uint8_t {
    RA = 0,
    LA = 1,
    InterAtrial = 2,
    ValveRing = 3,
    PectinateMuscle = 4,
    CristaTerminalis = 5,
    InferiorIsthmus = 6,
};

inline constexpr int region_count = 7;

inline std::string_view to_string(Region r)
{
    switch (r) {
    case Region::RA: return "RA";
    case Region::LA: return "LA";
    case Region::InterAtrial: return "InterAtrial";
    case Region::ValveRing: return "ValveRing";
    case Region::PectinateMuscle: return "PectinateMuscle";
    case Region::CristaTerminalis: return "CristaTerminalis";
    case Region::InferiorIsthmus: return "InferiorIsthmus";
    }
    return "RA";
}

inline std::optional<Region> region_from_string(std::string_view s)
{
    for (int i = 0; i < region_count; ++i) {
        const auto r = static_cast<Region>(i);
        if (to_string(r) == s) {
            return r;
        }
    }
    return std::nullopt;
}

using Tet = std::array<std::uint32_t, 4>;

/// Tets at or below this signed volume (mm^3) count as inverted.
inline constexpr double min_tet_volume = 1e-9;

/**
 * Tetrahedral wall mesh. `regions` and `fibers` have one entry per tet once
 * assigned (empty before); `surface_labels` records the label of the surface
 * triangle a tet was extruded from, when known. `lat` is per vertex.
 */
struct TetMesh
{
    std::vector<Vec3> vertices;
    std::vector<Tet> tets;
    std::vector<Region> regions;
    std::vector<Vec3> fibers;
    std::vector<Label> surface_labels;
    std::vector<double> lat;

    std::size_t num_vertices() const noexcept { return vertices.size(); }
    std::size_t num_tets() const noexcept { return tets.size(); }
    Region region(std::size_t t) const { return regions.empty() ? Region::RA : regions[t]; }
};

inline double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d)
{
    return (b - a).dot((c - a).cross(d - a)) / 6.0;
}

inline double tet_volume(const TetMesh& m, std::size_t t)
{
    const auto& k = m.tets[t];
    return signed_volume(m.vertices[k[0]], m.vertices[k[1]], m.vertices[k[2]], m.vertices[k[3]]);
}

inline Vec3 tet_centroid(const TetMesh& m, std::size_t t)
{
    const auto& k = m.tets[t];
    return 0.25 * (m.vertices[k[0]] + m.vertices[k[1]] + m.vertices[k[2]] + m.vertices[k[3]]);
}

inline double total_volume(const TetMesh& m)
{
    double v = 0.0;
    for (std::size_t t = 0; t < m.num_tets(); ++t) {
        v += tet_volume(m, t);
    }
    return v;
}

/// Checks indices, orientation, per-tet array sizes and fiber normalization.
inline void validate(const TetMesh& m)
{
    const auto nv = m.vertices.size();
    for (std::size_t i = 0; i < nv; ++i) {
        if (!m.vertices[i].allFinite()) {
            throw InvalidInput("vertex " + std::to_string(i) + " has non-finite coordinates");
        }
    }
    for (std::size_t t = 0; t < m.tets.size(); ++t) {
        for (auto v : m.tets[t]) {
            if (v >= nv) {
                throw InvalidInput("tet " + std::to_string(t) + " references vertex " + std::to_string(v) +
                                   " but only " + std::to_string(nv) + " vertices exist");
            }
        }
        const double vol = tet_volume(m, t);
        if (!(vol > min_tet_volume)) {
            throw InvalidInput("tet " + std::to_string(t) + " is inverted or degenerate (signed volume " +
                               std::to_string(vol) + " mm^3)");
        }
    }
    auto sized = [&](std::size_t n, const char* what) {
        if (n != 0 && n != m.tets.size()) {
            throw InvalidInput(std::string(what) + " has " + std::to_string(n) + " entries for " +
                               std::to_string(m.tets.size()) + " tets");
        }
    };
    sized(m.regions.size(), "region block");
    sized(m.fibers.size(), "fiber block");
    sized(m.surface_labels.size(), "surface label block");
    for (std::size_t t = 0; t < m.fibers.size(); ++t) {
        if (!m.fibers[t].allFinite() || std::abs(m.fibers[t].norm() - 1.0) > 1e-9) {
            throw InvalidInput("fiber of tet " + std::to_string(t) + " is not unit length");
        }
    }
    if (!m.lat.empty() && m.lat.size() != nv) {
        throw InvalidInput("activation block has " + std::to_string(m.lat.size()) + " entries for " +
                           std::to_string(nv) + " vertices");
    }
}

/// Faces that belong to exactly one tet, oriented outward.
inline std::vector<Triangle> boundary_faces(const TetMesh& m)
{
    std::map<std::array<std::uint32_t, 3>, std::pair<int, Triangle>> faces;
    for (const auto& k : m.tets) {
        // Faces opposite each vertex, oriented so the normal points away from it.
        const std::array<Triangle, 4> f = {Triangle{k[1], k[3], k[2]}, Triangle{k[0], k[2], k[3]},
                                           Triangle{k[0], k[3], k[1]}, Triangle{k[0], k[1], k[2]}};
        for (const auto& tri : f) {
            auto key = tri;
            std::sort(key.begin(), key.end());
            auto& e = faces[key];
            ++e.first;
            e.second = tri;
        }
    }
    std::vector<Triangle> out;
    for (const auto& [key, e] : faces) {
        if (e.first == 1) {
            out.push_back(e.second);
        }
    }
    return out;
}

/// Unique undirected edges (i < j), sorted.
inline std::vector<std::array<std::uint32_t, 2>> tet_edges(const TetMesh& m)
{
    std::vector<std::array<std::uint32_t, 2>> e;
    e.reserve(6 * m.tets.size());
    for (const auto& k : m.tets) {
        for (int a = 0; a < 4; ++a) {
            for (int b = a + 1; b < 4; ++b) {
                e.push_back({std::min(k[a], k[b]), std::max(k[a], k[b])});
            }
        }
    }
    std::sort(e.begin(), e.end());
    e.erase(std::unique(e.begin(), e.end()), e.end());
    return e;
}

/**
 * Axis-aligned box [origin, origin + n * h] split into cubes of side h, each
 * cut into 6 tets around its main diagonal (conforming across cubes).
 */
inline TetMesh box_tet_mesh(const Vec3& origin, std::array<int, 3> n, double h)
{
    if (n[0] < 1 || n[1] < 1 || n[2] < 1 || !(h > 0.0)) {
        throw InvalidInput("box mesh needs at least one cell per axis and a positive spacing");
    }
    TetMesh m;
    auto id = [&](int i, int j, int k) {
        return static_cast<std::uint32_t>((k * (n[1] + 1) + j) * (n[0] + 1) + i);
    };
    for (int k = 0; k <= n[2]; ++k) {
        for (int j = 0; j <= n[1]; ++j) {
            for (int i = 0; i <= n[0]; ++i) {
                m.vertices.push_back(origin + h * Vec3(i, j, k));
            }
        }
    }
    const std::array<std::array<int, 3>, 6> perms = {
        {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    for (int k = 0; k < n[2]; ++k) {
        for (int j = 0; j < n[1]; ++j) {
            for (int i = 0; i < n[0]; ++i) {
                for (const auto& p : perms) {
                    std::array<int, 3> c = {i, j, k};
                    Tet t{};
                    t[0] = id(c[0], c[1], c[2]);
                    for (int s = 0; s < 3; ++s) {
                        ++c[static_cast<std::size_t>(p[static_cast<std::size_t>(s)])];
                        t[static_cast<std::size_t>(s) + 1] = id(c[0], c[1], c[2]);
                    }
                    if (signed_volume(m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]], m.vertices[t[3]]) < 0) {
                        std::swap(t[2], t[3]);
                    }
                    m.tets.push_back(t);
                }
            }
        }
    }
    return m;
}

/*
 * ASCII tet mesh format:
 *
 *   TETMESH 1
 *   VERTICES <n>
 *   x y z                      (n lines)
 *   TETS <t>
 *   4 i j k l                  (t lines, zero-based, positive orientation)
 *   #REGION                    optional, t region names
 *   #FIBER                     optional, t lines "fx fy fz"
 *   #SURFACE_LABEL             optional, t surface label tags
 *   #LAT                       optional, n activation times in ms ("inf" if unreached)
 *
 * Other lines starting with '#' are comments.
 */
inline std::string format_tet_mesh(const TetMesh& m)
{
    std::ostringstream os;
    os << "TETMESH 1\nVERTICES " << m.vertices.size() << '\n';
    for (const auto& v : m.vertices) {
        io::put_double(os, v.x());
        os << ' ';
        io::put_double(os, v.y());
        os << ' ';
        io::put_double(os, v.z());
        os << '\n';
    }
    os << "TETS " << m.tets.size() << '\n';
    for (const auto& t : m.tets) {
        os << "4 " << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << '\n';
    }
    if (!m.regions.empty()) {
        os << "#REGION\n";
        for (auto r : m.regions) {
            os << to_string(r) << '\n';
        }
    }
    if (!m.fibers.empty()) {
        os << "#FIBER\n";
        for (const auto& f : m.fibers) {
            io::put_double(os, f.x());
            os << ' ';
            io::put_double(os, f.y());
            os << ' ';
            io::put_double(os, f.z());
            os << '\n';
        }
    }
    if (!m.surface_labels.empty()) {
        os << "#SURFACE_LABEL\n";
        for (auto l : m.surface_labels) {
            os << to_string(l) << '\n';
        }
    }
    if (!m.lat.empty()) {
        os << "#LAT\n";
        for (double t : m.lat) {
            if (std::isfinite(t)) {
                io::put_double(os, t);
            } else {
                os << "inf";
            }
            os << '\n';
        }
    }
    return os.str();
}

inline TetMesh parse_tet_mesh(std::string_view text, const std::string& source = "<memory>")
{
    io::LineTokenizer lines(text, source);
    std::string_view line;
    auto next = [&](const char* what) {
        while (lines.next_line(line)) {
            if (line.front() != '#') {
                return;
            }
            lines.fail(std::string("unexpected block header while reading ") + what);
        }
        lines.fail(std::string("unexpected end of file while reading ") + what);
    };
    auto counted = [&](std::string_view keyword) {
        next(std::string(keyword).c_str());
        const auto tok = io::split_ws(line);
        std::size_t n = 0;
        if (tok.size() != 2 || tok[0] != keyword || !io::parse_int(tok[1], n)) {
            lines.fail("expected '" + std::string(keyword) + " <count>'");
        }
        return n;
    };

    if (!lines.next_line(line) || io::split_ws(line) != std::vector<std::string_view>{"TETMESH", "1"}) {
        throw ParseError(source, lines.line_number(), "expected 'TETMESH 1' header");
    }
    TetMesh m;
    const auto nv = counted("VERTICES");
    m.vertices.reserve(nv);
    for (std::size_t i = 0; i < nv; ++i) {
        next("vertices");
        const auto tok = io::split_ws(line);
        Vec3 p;
        if (tok.size() != 3 || !io::parse_double(tok[0], p.x()) || !io::parse_double(tok[1], p.y()) ||
            !io::parse_double(tok[2], p.z())) {
            lines.fail("malformed vertex " + std::to_string(i));
        }
        m.vertices.push_back(p);
    }
    const auto nt = counted("TETS");
    m.tets.reserve(nt);
    for (std::size_t t = 0; t < nt; ++t) {
        next("tets");
        const auto tok = io::split_ws(line);
        Tet k{};
        if (tok.size() != 5 || tok[0] != "4") {
            lines.fail("tet " + std::to_string(t) + " must be '4 i j k l'");
        }
        for (std::size_t c = 0; c < 4; ++c) {
            if (!io::parse_int(tok[c + 1], k[c])) {
                lines.fail("malformed index in tet " + std::to_string(t));
            }
            if (k[c] >= nv) {
                lines.fail("tet " + std::to_string(t) + " references vertex " + std::to_string(k[c]) + " but only " +
                           std::to_string(nv) + " vertices exist");
            }
        }
        m.tets.push_back(k);
    }

    std::string block;
    while (lines.next_line(line)) {
        if (line.front() == '#') {
            const auto name = io::trim(line);
            if (name == "#REGION" || name == "#FIBER" || name == "#SURFACE_LABEL" || name == "#LAT") {
                block = name;
            }
            continue;
        }
        if (block.empty()) {
            lines.fail("trailing data after tets");
        }
        const auto tok = io::split_ws(line);
        if (block == "#REGION") {
            const auto r = tok.size() == 1 ? region_from_string(tok[0]) : std::nullopt;
            if (!r) {
                lines.fail("unknown region '" + std::string(line) + "'");
            }
            m.regions.push_back(*r);
        } else if (block == "#SURFACE_LABEL") {
            const auto l = tok.size() == 1 ? label_from_string(tok[0]) : std::nullopt;
            if (!l) {
                lines.fail("unknown surface label '" + std::string(line) + "'");
            }
            m.surface_labels.push_back(*l);
        } else if (block == "#FIBER") {
            Vec3 f;
            if (tok.size() != 3 || !io::parse_double(tok[0], f.x()) || !io::parse_double(tok[1], f.y()) ||
                !io::parse_double(tok[2], f.z())) {
                lines.fail("malformed fiber");
            }
            m.fibers.push_back(f);
        } else {
            double t = 0.0;
            if (tok.size() != 1) {
                lines.fail("malformed activation time");
            }
            if (tok[0] == "inf") {
                t = std::numeric_limits<double>::infinity();
            } else if (!io::parse_double(tok[0], t)) {
                lines.fail("malformed activation time '" + std::string(tok[0]) + "'");
            }
            m.lat.push_back(t);
        }
    }
    try {
        validate(m);
    } catch (const InvalidInput& e) {
        throw ParseError(source, lines.line_number(), e.what());
    }
    return m;
}

inline TetMesh load_tet_mesh(const std::filesystem::path& path)
{
    return parse_tet_mesh(io::read_file(path), path.string());
}

inline void save_tet_mesh(const TetMesh& m, const std::filesystem::path& path)
{
    io::write_file_atomic(path, format_tet_mesh(m));
}

} // namespace ssm
