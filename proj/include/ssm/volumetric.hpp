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
#include "ssm/tet_mesh.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ssm {

struct WallConfig
{
    double thickness = 3.0;   // mm
    double target_edge = 1.0; // mm, sets the number of layers through the wall

    void validate() const
    {
        if (!(thickness > 0.0) || !std::isfinite(thickness)) {
            throw InvalidInput("wall thickness must be positive");
        }
        if (!(target_edge > 0.0) || !std::isfinite(target_edge)) {
            throw InvalidInput("target edge length must be positive");
        }
    }

    int layers() const { return std::max(1, static_cast<int>(std::ceil(thickness / target_edge - 1e-9))); }
};

/// Number of edges not shared by exactly one pair of oppositely oriented triangles.
inline std::size_t open_edge_count(const SurfaceMesh& mesh)
{
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
    for (const auto& t : mesh.triangles) {
        for (int k = 0; k < 3; ++k) {
            ++directed[{t[static_cast<std::size_t>(k)], t[static_cast<std::size_t>((k + 1) % 3)]}];
        }
    }
    std::size_t bad = 0;
    for (const auto& [e, n] : directed) {
        const auto rev = directed.find({e.second, e.first});
        if (n != 1 || rev == directed.end() || rev->second != 1) {
            ++bad;
        }
    }
    return bad;
}

namespace detail {

/// Segment pq against triangle abc, excluding touching at the segment ends.
inline bool segment_hits_triangle(const Vec3& p, const Vec3& q, const Vec3& a, const Vec3& b, const Vec3& c)
{
    const Vec3 d = q - p;
    const Vec3 e1 = b - a;
    const Vec3 e2 = c - a;
    const Vec3 h = d.cross(e2);
    const double det = e1.dot(h);
    const double scale = e1.norm() * e2.norm() * d.norm();
    if (std::abs(det) <= 1e-12 * scale) {
        return false;
    }
    const Vec3 s = p - a;
    const double u = s.dot(h) / det;
    const Vec3 qv = s.cross(e1);
    const double v = d.dot(qv) / det;
    const double t = e2.dot(qv) / det;
    constexpr double eps = 1e-12;
    return u >= -eps && v >= -eps && u + v <= 1.0 + eps && t > eps && t < 1.0 - eps;
}

inline bool triangles_intersect(const SurfaceMesh& m, const Triangle& s, const Triangle& t)
{
    const auto& v = m.vertices;
    for (int k = 0; k < 3; ++k) {
        if (segment_hits_triangle(v[s[static_cast<std::size_t>(k)]], v[s[static_cast<std::size_t>((k + 1) % 3)]],
                                  v[t[0]], v[t[1]], v[t[2]]) ||
            segment_hits_triangle(v[t[static_cast<std::size_t>(k)]], v[t[static_cast<std::size_t>((k + 1) % 3)]],
                                  v[s[0]], v[s[1]], v[s[2]])) {
            return true;
        }
    }
    return false;
}

} // namespace detail

/**
 * Pairs of triangles that share no vertex and cross each other. Uses a
 * uniform grid over triangle bounding boxes; coplanar overlaps are not
 * reported.
 */
inline std::vector<std::pair<std::size_t, std::size_t>> self_intersections(const SurfaceMesh& mesh)
{
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (mesh.triangles.size() < 2) {
        return out;
    }
    const double cell = std::max(2.0 * mean_edge_length(mesh), 1e-6);
    std::vector<Eigen::AlignedBox3d> boxes;
    boxes.reserve(mesh.triangles.size());
    for (const auto& t : mesh.triangles) {
        Eigen::AlignedBox3d b;
        for (auto i : t) {
            b.extend(mesh.vertices[i]);
        }
        boxes.push_back(b);
    }
    struct Key
    {
        std::int64_t x, y, z;
        bool operator==(const Key&) const = default;
    };
    struct Hash
    {
        std::size_t operator()(const Key& k) const
        {
            return static_cast<std::size_t>(k.x * 73856093LL ^ k.y * 19349663LL ^ k.z * 83492791LL);
        }
    };
    std::unordered_map<Key, std::vector<std::size_t>, Hash> grid;
    auto idx = [&](double x) { return static_cast<std::int64_t>(std::floor(x / cell)); };
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const auto& b = boxes[i];
        for (auto x = idx(b.min().x()); x <= idx(b.max().x()); ++x) {
            for (auto y = idx(b.min().y()); y <= idx(b.max().y()); ++y) {
                for (auto z = idx(b.min().z()); z <= idx(b.max().z()); ++z) {
                    grid[{x, y, z}].push_back(i);
                }
            }
        }
    }
    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    for (const auto& [key, list] : grid) {
        for (std::size_t a = 0; a < list.size(); ++a) {
            for (std::size_t b = a + 1; b < list.size(); ++b) {
                candidates.emplace_back(std::min(list[a], list[b]), std::max(list[a], list[b]));
            }
        }
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    for (const auto& [i, j] : candidates) {
        const auto& s = mesh.triangles[i];
        const auto& t = mesh.triangles[j];
        const bool shared = std::any_of(s.begin(), s.end(), [&](auto v) { return std::find(t.begin(), t.end(), v) != t.end(); });
        if (shared || !boxes[i].intersects(boxes[j])) {
            continue;
        }
        if (detail::triangles_intersect(mesh, s, t)) {
            out.emplace_back(i, j);
        }
    }
    return out;
}

namespace detail {

inline Label triangle_label(const SurfaceMesh& m, const Triangle& t)
{
    const Label a = m.label(t[0]);
    const Label b = m.label(t[1]);
    const Label c = m.label(t[2]);
    if (a == b || a == c) {
        return a;
    }
    return b == c ? b : Label::Body;
}

inline std::string pair_list(const std::vector<std::pair<std::size_t, std::size_t>>& pairs, std::size_t limit = 5)
{
    std::string s;
    for (std::size_t i = 0; i < std::min(limit, pairs.size()); ++i) {
        s += (i ? ", (" : "(") + std::to_string(pairs[i].first) + ", " + std::to_string(pairs[i].second) + ")";
    }
    if (pairs.size() > limit) {
        s += ", ...";
    }
    return s;
}

} // namespace detail

/**
 * Offsets a closed, outward-oriented endocardial surface along its vertex
 * normals and fills the wall with layers of prisms, each cut into 3 tets.
 *
 * Prism split: with the triangle's vertices sorted by index (a < b < c) and
 * primes denoting the next layer, the tets are (a b c a'), (b c a' b'),
 * (c a' b' c'). The diagonal of every quad side depends only on the two
 * vertex indices of its edge, so neighbouring prisms conform.
 */
inline TetMesh extrude_wall(const SurfaceMesh& endo, const WallConfig& cfg = {})
{
    cfg.validate();
    validate(endo);
    if (endo.triangles.empty()) {
        throw InvalidInput("cannot extrude a mesh without triangles");
    }
    if (const auto open = open_edge_count(endo); open > 0) {
        throw InvalidInput("surface is not closed: " + std::to_string(open) + " edges are open or non-manifold");
    }
    if (!(enclosed_volume(endo) > 0.0)) {
        throw InvalidInput("surface normals point inward");
    }
    const auto normals = vertex_normals(endo);
    const int layers = cfg.layers();
    const auto nv = static_cast<std::uint32_t>(endo.vertices.size());

    TetMesh out;
    out.vertices.reserve(static_cast<std::size_t>(layers + 1) * nv);
    for (int j = 0; j <= layers; ++j) {
        const double offset = cfg.thickness * j / layers;
        for (std::uint32_t i = 0; i < nv; ++i) {
            out.vertices.push_back(endo.vertices[i] + offset * normals[i]);
        }
    }

    SurfaceMesh epi;
    epi.vertices.assign(out.vertices.end() - nv, out.vertices.end());
    epi.triangles = endo.triangles;
    if (const auto hits = self_intersections(epi); !hits.empty()) {
        throw InvalidInput("offset surface self-intersects: " + std::to_string(hits.size()) +
                           " triangle pairs, e.g. " + detail::pair_list(hits));
    }

    out.tets.reserve(3 * static_cast<std::size_t>(layers) * endo.triangles.size());
    out.surface_labels.reserve(out.tets.capacity());
    for (int j = 0; j < layers; ++j) {
        const std::uint32_t lo = static_cast<std::uint32_t>(j) * nv;
        const std::uint32_t hi = lo + nv;
        for (const auto& tri : endo.triangles) {
            auto s = tri;
            std::sort(s.begin(), s.end());
            const std::array<Tet, 3> prism = {Tet{lo + s[0], lo + s[1], lo + s[2], hi + s[0]},
                                              Tet{lo + s[1], lo + s[2], hi + s[0], hi + s[1]},
                                              Tet{lo + s[2], hi + s[0], hi + s[1], hi + s[2]}};
            const Label label = detail::triangle_label(endo, tri);
            for (auto t : prism) {
                const auto& v = out.vertices;
                if (signed_volume(v[t[0]], v[t[1]], v[t[2]], v[t[3]]) < 0.0) {
                    std::swap(t[2], t[3]);
                }
                const double vol = signed_volume(v[t[0]], v[t[1]], v[t[2]], v[t[3]]);
                if (!(vol > min_tet_volume)) {
                    throw NumericalError("extrusion produced a degenerate tet (volume " + std::to_string(vol) +
                                         " mm^3) at surface triangle " + std::to_string(&tri - endo.triangles.data()) +
                                         ", layer " + std::to_string(j));
                }
                out.tets.push_back(t);
                out.surface_labels.push_back(label);
            }
        }
    }
    return out;
}

/// Epicardial surface of an extruded wall: the outermost vertex layer with the endo topology.
inline SurfaceMesh epicardium(const TetMesh& wall, const SurfaceMesh& endo)
{
    const auto nv = endo.vertices.size();
    if (nv == 0 || wall.vertices.size() % nv != 0) {
        throw InvalidInput("wall was not extruded from this surface");
    }
    SurfaceMesh epi;
    epi.vertices.assign(wall.vertices.end() - static_cast<std::ptrdiff_t>(nv), wall.vertices.end());
    epi.triangles = endo.triangles;
    epi.labels = endo.labels;
    return epi;
}

enum class Predicate { All, HalfSpace, Slab, Sphere, Ring, Box, SurfaceLabel };

/// One geometric rule; evaluated at tet centroids.
struct RegionRule
{
    Region tag = Region::RA;
    Predicate kind = Predicate::All;
    Vec3 point = Vec3::Zero();  // sphere/ring centre, box min
    Vec3 vector = Vec3::UnitX(); // unit normal (half-space, slab, ring), box max
    double offset = 0.0;        // half-space/slab offset along the normal
    double radius = 0.0;        // sphere/ring radius
    double width = 0.0;         // slab/ring full width
    Label label = Label::Body;

    bool matches(const Vec3& c, std::optional<Label> surface) const
    {
        switch (kind) {
        case Predicate::All: return true;
        case Predicate::HalfSpace: return vector.dot(c) >= offset;
        case Predicate::Slab: return std::abs(vector.dot(c) - offset) <= 0.5 * width;
        case Predicate::Sphere: return (c - point).norm() <= radius;
        case Predicate::Ring: {
            const Vec3 d = c - point;
            const double axial = vector.dot(d);
            const double radial = (d - axial * vector).norm();
            return std::hypot(radial - radius, axial) <= 0.5 * width;
        }
        case Predicate::Box: return (c.array() >= point.array()).all() && (c.array() <= vector.array()).all();
        case Predicate::SurfaceLabel: return surface && *surface == label;
        }
        return false;
    }
};

/// Ordered rule list; later matches override earlier ones.
struct RegionRules
{
    std::optional<Region> fallback = Region::RA;
    std::vector<RegionRule> rules;
};

/*
 * Rule file: one statement per line, '#' starts a comment.
 *
 *   default <Region|none>
 *   <Region> all
 *   <Region> halfspace normal=x,y,z offset=d          n.c >= d
 *   <Region> slab      normal=x,y,z offset=d width=w  |n.c - d| <= w/2
 *   <Region> sphere    center=x,y,z radius=r
 *   <Region> ring      center=x,y,z normal=x,y,z radius=r width=w
 *   <Region> box       min=x,y,z max=x,y,z
 *   <Region> label     label=<Label>
 */
inline RegionRules parse_region_rules(std::string_view text, const std::string& source = "<rules>")
{
    io::LineTokenizer lines(text, source);
    std::string_view raw;
    RegionRules out;
    while (lines.next_line(raw)) {
        const auto line = raw.substr(0, raw.find('#'));
        const auto tok = io::split_ws(line);
        if (tok.empty()) {
            continue;
        }
        if (tok[0] == "default") {
            if (tok.size() != 2) {
                lines.fail("expected 'default <Region|none>'");
            }
            if (tok[1] == "none") {
                out.fallback.reset();
            } else if (auto r = region_from_string(tok[1])) {
                out.fallback = *r;
            } else {
                lines.fail("unknown region '" + std::string(tok[1]) + "'");
            }
            continue;
        }
        RegionRule rule;
        const auto tag = region_from_string(tok[0]);
        if (!tag) {
            lines.fail("unknown region '" + std::string(tok[0]) + "'");
        }
        rule.tag = *tag;
        if (tok.size() < 2) {
            lines.fail("missing predicate");
        }
        std::map<std::string, std::string, std::less<>> kv;
        for (std::size_t i = 2; i < tok.size(); ++i) {
            const auto eq = tok[i].find('=');
            if (eq == std::string_view::npos) {
                lines.fail("expected key=value, got '" + std::string(tok[i]) + "'");
            }
            kv[std::string(tok[i].substr(0, eq))] = std::string(tok[i].substr(eq + 1));
        }
        auto take = [&](const char* key) {
            const auto it = kv.find(key);
            if (it == kv.end()) {
                lines.fail(std::string("missing parameter '") + key + "'");
            }
            auto v = it->second;
            kv.erase(it);
            return v;
        };
        auto scalar = [&](const char* key) {
            double v = 0.0;
            const auto s = take(key);
            if (!io::parse_double(s, v) || !std::isfinite(v)) {
                lines.fail(std::string("parameter '") + key + "' is not a number");
            }
            return v;
        };
        auto vec = [&](const char* key) {
            const auto s = take(key);
            Vec3 v;
            std::size_t start = 0;
            for (int c = 0; c < 3; ++c) {
                const auto end = c < 2 ? s.find(',', start) : s.size();
                if (end == std::string::npos ||
                    !io::parse_double(std::string_view(s).substr(start, end - start), v(c))) {
                    lines.fail(std::string("parameter '") + key + "' must be x,y,z");
                }
                start = end + 1;
            }
            return v;
        };
        auto unit = [&](const char* key) {
            const Vec3 v = vec(key);
            if (!(v.norm() > 0.0)) {
                lines.fail(std::string("parameter '") + key + "' must be non-zero");
            }
            return Vec3(v.normalized());
        };
        const auto kind = tok[1];
        if (kind == "all") {
            rule.kind = Predicate::All;
        } else if (kind == "halfspace") {
            rule.kind = Predicate::HalfSpace;
            rule.vector = unit("normal");
            rule.offset = scalar("offset");
        } else if (kind == "slab") {
            rule.kind = Predicate::Slab;
            rule.vector = unit("normal");
            rule.offset = scalar("offset");
            rule.width = scalar("width");
        } else if (kind == "sphere") {
            rule.kind = Predicate::Sphere;
            rule.point = vec("center");
            rule.radius = scalar("radius");
        } else if (kind == "ring") {
            rule.kind = Predicate::Ring;
            rule.point = vec("center");
            rule.vector = unit("normal");
            rule.radius = scalar("radius");
            rule.width = scalar("width");
        } else if (kind == "box") {
            rule.kind = Predicate::Box;
            rule.point = vec("min");
            rule.vector = vec("max");
        } else if (kind == "label") {
            rule.kind = Predicate::SurfaceLabel;
            const auto name = take("label");
            const auto l = label_from_string(name);
            if (!l) {
                lines.fail("unknown surface label '" + name + "'");
            }
            rule.label = *l;
        } else {
            lines.fail("unknown predicate '" + std::string(kind) + "'");
        }
        if (!kv.empty()) {
            lines.fail("unexpected parameter '" + kv.begin()->first + "'");
        }
        if (rule.radius < 0.0 || rule.width < 0.0) {
            lines.fail("radius and width must be non-negative");
        }
        out.rules.push_back(rule);
    }
    return out;
}

inline RegionRules load_region_rules(const std::filesystem::path& path)
{
    return parse_region_rules(io::read_file(path), path.string());
}

inline TetMesh assign_regions(TetMesh mesh, const RegionRules& rules)
{
    mesh.regions.assign(mesh.num_tets(), Region::RA);
    std::size_t untagged = 0;
    std::size_t first_untagged = 0;
    for (std::size_t t = 0; t < mesh.num_tets(); ++t) {
        const Vec3 c = tet_centroid(mesh, t);
        const std::optional<Label> surface =
            mesh.surface_labels.empty() ? std::nullopt : std::optional<Label>(mesh.surface_labels[t]);
        std::optional<Region> tag = rules.fallback;
        for (const auto& r : rules.rules) {
            if (r.matches(c, surface)) {
                tag = r.tag;
            }
        }
        if (!tag) {
            if (untagged++ == 0) {
                first_untagged = t;
            }
            continue;
        }
        mesh.regions[t] = *tag;
    }
    if (untagged > 0) {
        throw InvalidInput(std::to_string(untagged) + " tets match no region rule (first: tet " +
                           std::to_string(first_untagged) + ")");
    }
    return mesh;
}

inline std::array<std::size_t, region_count> region_counts(const TetMesh& mesh)
{
    std::array<std::size_t, region_count> n{};
    for (std::size_t t = 0; t < mesh.num_tets(); ++t) {
        ++n[static_cast<std::size_t>(mesh.region(t))];
    }
    return n;
}

struct FiberRule
{
    enum class Kind { Uniform, Circumferential };
    Kind kind = Kind::Circumferential;
    Vec3 direction = Vec3::UnitX(); // uniform rule
};

struct RegionFrame
{
    Vec3 center = Vec3::Zero();
    Vec3 axis = Vec3::UnitZ();
};

/// Centroid and principal (largest-spread) axis of each region's tet centroids.
inline std::array<RegionFrame, region_count> region_frames(const TetMesh& mesh)
{
    std::array<RegionFrame, region_count> frames{};
    std::array<Vec3, region_count> sum{};
    std::array<std::size_t, region_count> count{};
    sum.fill(Vec3::Zero());
    for (std::size_t t = 0; t < mesh.num_tets(); ++t) {
        const auto r = static_cast<std::size_t>(mesh.region(t));
        sum[r] += tet_centroid(mesh, t);
        ++count[r];
    }
    std::array<Mat3, region_count> cov{};
    cov.fill(Mat3::Zero());
    for (std::size_t r = 0; r < region_count; ++r) {
        if (count[r] > 0) {
            frames[r].center = sum[r] / static_cast<double>(count[r]);
        }
    }
    for (std::size_t t = 0; t < mesh.num_tets(); ++t) {
        const auto r = static_cast<std::size_t>(mesh.region(t));
        const Vec3 d = tet_centroid(mesh, t) - frames[r].center;
        cov[r] += d * d.transpose();
    }
    for (std::size_t r = 0; r < region_count; ++r) {
        if (count[r] < 2) {
            continue;
        }
        const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov[r]);
        Vec3 axis = eig.eigenvectors().col(2);
        Eigen::Index arg = 0;
        axis.cwiseAbs().maxCoeff(&arg);
        if (axis(arg) < 0.0) {
            axis = -axis;
        }
        frames[r].axis = axis;
    }
    return frames;
}

/**
 * Per-tet unit fibers. The circumferential rule uses axis x (c - center) for
 * each region's principal axis; where that vanishes (centroid on the axis)
 * the axis itself is used and the tet index is appended to `fallbacks`.
 */
inline TetMesh assign_fibers(TetMesh mesh, const FiberRule& rule = {}, std::vector<std::size_t>* fallbacks = nullptr)
{
    mesh.fibers.assign(mesh.num_tets(), Vec3::UnitX());
    if (rule.kind == FiberRule::Kind::Uniform) {
        if (!(rule.direction.norm() > 0.0)) {
            throw InvalidInput("uniform fiber direction must be non-zero");
        }
        std::fill(mesh.fibers.begin(), mesh.fibers.end(), rule.direction.normalized());
        return mesh;
    }
    const auto frames = region_frames(mesh);
    for (std::size_t t = 0; t < mesh.num_tets(); ++t) {
        const auto& f = frames[static_cast<std::size_t>(mesh.region(t))];
        const Vec3 d = tet_centroid(mesh, t) - f.center;
        const Vec3 tangent = f.axis.cross(d);
        const double len = tangent.norm();
        if (len <= 1e-9 * std::max(1.0, d.norm())) {
            mesh.fibers[t] = f.axis;
            if (fallbacks) {
                fallbacks->push_back(t);
            }
        } else {
            mesh.fibers[t] = tangent / len;
        }
    }
    return mesh;
}

} // namespace ssm
