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

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ssm {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Triangle = std::array<std::uint32_t, 3>;

/// Anatomical region tag carried per surface vertex.
enum class Label : std::uint8_t { Body = 0, LAA = 1, RAA = 2, LPV = 3, RPV = 4, Other = 5 };

inline constexpr int label_count = 6;

inline std::string_view to_string(Label l)
{
    switch (l) {
    case Label::Body: return "Body";
    case Label::LAA: return "LAA";
    case Label::RAA: return "RAA";
    case Label::LPV: return "LPV";
    case Label::RPV: return "RPV";
    case Label::Other: return "Other";
    }
    return "Other";
}

inline std::optional<Label> label_from_string(std::string_view s)
{
    for (int i = 0; i < label_count; ++i) {
        const auto l = static_cast<Label>(i);
        if (to_string(l) == s) {
            return l;
        }
    }
    return std::nullopt;
}

/// Triangles with area below this (mm^2) are considered degenerate.
inline constexpr double degenerate_area_tol = 1e-9;

/**
 * Triangulated surface. Vertex order is the correspondence contract: once
 * meshes are in correspondence, vertex m denotes the same landmark on every
 * shape, and nothing in the library reorders vertices.
 *
 * A mesh without triangles is a valid point cloud (used by rigid alignment).
 * `labels` is either empty or has one entry per vertex.
 */
struct SurfaceMesh
{
    std::vector<Vec3> vertices;
    std::vector<Triangle> triangles;
    std::vector<Label> labels;

    std::size_t num_vertices() const noexcept { return vertices.size(); }
    std::size_t num_triangles() const noexcept { return triangles.size(); }
    bool has_labels() const noexcept { return !labels.empty(); }

    Label label(std::size_t v) const { return labels.empty() ? Label::Body : labels[v]; }
};

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c)
{
    return 0.5 * (b - a).cross(c - a).norm();
}

/// Throws InvalidInput if indices are out of range, labels are mis-sized,
/// a coordinate is non-finite, or a triangle is degenerate.
inline void validate(const SurfaceMesh& mesh)
{
    const auto n = mesh.vertices.size();
    if (!mesh.labels.empty() && mesh.labels.size() != n) {
        throw InvalidInput("label count " + std::to_string(mesh.labels.size()) +
                           " does not match vertex count " + std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!mesh.vertices[i].allFinite()) {
            throw InvalidInput("vertex " + std::to_string(i) + " has non-finite coordinates");
        }
    }
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        for (auto idx : tri) {
            if (idx >= n) {
                throw InvalidInput("triangle " + std::to_string(t) + " references vertex " +
                                   std::to_string(idx) + " but the mesh has " + std::to_string(n) +
                                   " vertices");
            }
        }
        if (triangle_area(mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]) <=
            degenerate_area_tol) {
            throw InvalidInput("triangle " + std::to_string(t) + " is degenerate");
        }
    }
}

/// Flattened coordinates x1,y1,z1,...,xM,yM,zM (mm).
class ShapeVector
{
public:
    ShapeVector() = default;

    explicit ShapeVector(Eigen::VectorXd coords) : coords_(std::move(coords))
    {
        if (coords_.size() % 3 != 0) {
            throw InvalidInput("shape vector length " + std::to_string(coords_.size()) +
                               " is not divisible by 3");
        }
        if (!coords_.allFinite()) {
            throw InvalidInput("shape vector has non-finite entries");
        }
    }

    const Eigen::VectorXd& coords() const noexcept { return coords_; }
    Eigen::Index size() const noexcept { return coords_.size(); }
    Eigen::Index num_points() const noexcept { return coords_.size() / 3; }

    Vec3 point(Eigen::Index m) const { return coords_.segment<3>(3 * m); }

    friend bool operator==(const ShapeVector& a, const ShapeVector& b)
    {
        return a.coords_.size() == b.coords_.size() && a.coords_ == b.coords_;
    }

private:
    Eigen::VectorXd coords_;
};

inline ShapeVector to_shape_vector(const SurfaceMesh& mesh)
{
    if (mesh.vertices.empty()) {
        throw InvalidInput("cannot vectorize an empty mesh");
    }
    Eigen::VectorXd v(3 * static_cast<Eigen::Index>(mesh.vertices.size()));
    for (std::size_t m = 0; m < mesh.vertices.size(); ++m) {
        v.segment<3>(3 * static_cast<Eigen::Index>(m)) = mesh.vertices[m];
    }
    return ShapeVector(std::move(v));
}

/// Rebuilds a mesh from a shape vector and a triangle list. The vector may
/// carry more points than the topology references; all of them become vertices.
inline SurfaceMesh from_shape_vector(const ShapeVector& v, const std::vector<Triangle>& topology,
                                     std::vector<Label> labels = {})
{
    std::uint32_t max_index = 0;
    for (const auto& t : topology) {
        for (auto i : t) {
            max_index = std::max(max_index, i);
        }
    }
    if (!topology.empty() && v.num_points() < static_cast<Eigen::Index>(max_index) + 1) {
        throw InvalidInput("shape vector has " + std::to_string(v.num_points()) +
                           " points but topology references vertex " + std::to_string(max_index));
    }
    SurfaceMesh mesh;
    mesh.vertices.resize(static_cast<std::size_t>(v.num_points()));
    for (Eigen::Index m = 0; m < v.num_points(); ++m) {
        mesh.vertices[static_cast<std::size_t>(m)] = v.point(m);
    }
    mesh.triangles = topology;
    mesh.labels = std::move(labels);
    validate(mesh);
    return mesh;
}

inline SurfaceMesh from_shape_vector(const Eigen::VectorXd& coords, const std::vector<Triangle>& topology,
                                     std::vector<Label> labels = {})
{
    return from_shape_vector(ShapeVector(coords), topology, std::move(labels));
}

/// Proper rigid motion x -> R x + t.
struct RigidTransform
{
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static RigidTransform identity() { return {}; }

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

    /// (*this) after `first`.
    RigidTransform compose(const RigidTransform& first) const
    {
        return {rotation * first.rotation, rotation * first.translation + translation};
    }

    RigidTransform inverse() const
    {
        const Mat3 rt = rotation.transpose();
        return {rt, -(rt * translation)};
    }

    bool is_proper(double tol = 1e-9) const
    {
        return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
               std::abs(rotation.determinant() - 1.0) <= tol;
    }
};

inline SurfaceMesh transformed(const SurfaceMesh& mesh, const RigidTransform& t)
{
    SurfaceMesh out = mesh;
    for (auto& v : out.vertices) {
        v = t.apply(v);
    }
    return out;
}

/// Angle of the rotation R_a^T R_b in degrees.
inline double rotation_angle_deg(const Mat3& a, const Mat3& b)
{
    const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c) * 180.0 / EIGEN_PI;
}

inline Vec3 centroid(const std::vector<Vec3>& pts)
{
    Vec3 c = Vec3::Zero();
    for (const auto& p : pts) {
        c += p;
    }
    return pts.empty() ? c : Vec3(c / static_cast<double>(pts.size()));
}

inline Vec3 triangle_normal(const SurfaceMesh& mesh, const Triangle& t)
{
    const Vec3& a = mesh.vertices[t[0]];
    return (mesh.vertices[t[1]] - a).cross(mesh.vertices[t[2]] - a).normalized();
}

/**
 * Per-vertex unit normals: the normalized mean of the unit normals of the
 * incident triangles. Throws for vertices without incident triangles.
 */
inline std::vector<Vec3> vertex_normals(const SurfaceMesh& mesh)
{
    std::vector<Vec3> acc(mesh.vertices.size(), Vec3::Zero());
    std::vector<int> count(mesh.vertices.size(), 0);
    for (const auto& t : mesh.triangles) {
        const Vec3 n = triangle_normal(mesh, t);
        for (auto i : t) {
            acc[i] += n;
            ++count[i];
        }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) {
        if (count[i] == 0) {
            throw InvalidInput("vertex " + std::to_string(i) + " has no incident triangle");
        }
        const double len = acc[i].norm();
        if (len <= 1e-12) {
            throw NumericalError("vertex " + std::to_string(i) + " has cancelling incident normals");
        }
        acc[i] /= len;
    }
    return acc;
}

/// Enclosed volume by the divergence theorem (mm^3); positive for outward orientation.
inline double enclosed_volume(const SurfaceMesh& mesh)
{
    double vol = 0.0;
    for (const auto& t : mesh.triangles) {
        vol += mesh.vertices[t[0]].dot(mesh.vertices[t[1]].cross(mesh.vertices[t[2]]));
    }
    return vol / 6.0;
}

inline double surface_area(const SurfaceMesh& mesh)
{
    double a = 0.0;
    for (const auto& t : mesh.triangles) {
        a += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
    }
    return a;
}

inline double mean_edge_length(const SurfaceMesh& mesh)
{
    if (mesh.triangles.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (const auto& t : mesh.triangles) {
        for (int k = 0; k < 3; ++k) {
            sum += (mesh.vertices[t[k]] - mesh.vertices[t[(k + 1) % 3]]).norm();
        }
    }
    return sum / (3.0 * static_cast<double>(mesh.triangles.size()));
}

/**
 * Subdivided icosahedron projected on a sphere. Level 0 has 12 vertices; each
 * level splits every triangle in four. Triangles are oriented outward.
 */
inline SurfaceMesh icosphere(int subdivisions, double radius = 1.0, const Vec3& center = Vec3::Zero())
{
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {{-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
                           {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
                           {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
    for (auto& p : v) {
        p.normalize();
    }
    std::vector<Triangle> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                               {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                               {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                               {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (int level = 0; level < subdivisions; ++level) {
        std::vector<Triangle> next;
        next.reserve(f.size() * 4);
        auto key = [](std::uint32_t a, std::uint32_t b) {
            return (static_cast<std::uint64_t>(std::min(a, b)) << 32) | std::max(a, b);
        };
        std::unordered_map<std::uint64_t, std::uint32_t> mid;
        auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
            const auto k = key(a, b);
            if (auto it = mid.find(k); it != mid.end()) {
                return it->second;
            }
            v.push_back((v[a] + v[b]).normalized());
            const auto idx = static_cast<std::uint32_t>(v.size() - 1);
            mid.emplace(k, idx);
            return idx;
        };
        for (const auto& t : f) {
            const auto a = midpoint(t[0], t[1]);
            const auto b = midpoint(t[1], t[2]);
            const auto c = midpoint(t[2], t[0]);
            next.push_back({t[0], a, c});
            next.push_back({t[1], b, a});
            next.push_back({t[2], c, b});
            next.push_back({a, b, c});
        }
        f = std::move(next);
    }
    SurfaceMesh mesh;
    mesh.vertices.reserve(v.size());
    for (const auto& p : v) {
        mesh.vertices.push_back(center + radius * p);
    }
    mesh.triangles = std::move(f);
    return mesh;
}

/// Closest point to p on triangle (a, b, c), by Voronoi region of the triangle's features.
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c)
{
    const Vec3 ab = b - a;
    const Vec3 ac = c - a;
    const Vec3 ap = p - a;
    const double d1 = ab.dot(ap);
    const double d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) {
        return a;
    }
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp);
    const double d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) {
        return b;
    }
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        return a + (d1 / (d1 - d3)) * ab;
    }
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp);
    const double d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) {
        return c;
    }
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        return a + (d2 / (d2 - d6)) * ac;
    }
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
    }
    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

/// Distance from every vertex of `from` to the surface of `to`.
inline std::vector<double> surface_distances(const SurfaceMesh& from, const SurfaceMesh& to)
{
    if (to.triangles.empty()) {
        throw InvalidInput("surface distance needs a target with triangles");
    }
    // Bounding sphere per triangle, for pruning.
    std::vector<Vec3> centre(to.triangles.size());
    std::vector<double> radius(to.triangles.size());
    for (std::size_t t = 0; t < to.triangles.size(); ++t) {
        const auto& tri = to.triangles[t];
        centre[t] = (to.vertices[tri[0]] + to.vertices[tri[1]] + to.vertices[tri[2]]) / 3.0;
        radius[t] = 0.0;
        for (auto v : tri) {
            radius[t] = std::max(radius[t], (to.vertices[v] - centre[t]).norm());
        }
    }
    std::vector<double> out(from.vertices.size());
    std::size_t hint = 0;
    for (std::size_t i = 0; i < from.vertices.size(); ++i) {
        const Vec3& p = from.vertices[i];
        auto dist = [&](std::size_t t) {
            const auto& tri = to.triangles[t];
            return (closest_point_on_triangle(p, to.vertices[tri[0]], to.vertices[tri[1]], to.vertices[tri[2]]) - p)
                .norm();
        };
        double best = dist(hint);
        for (std::size_t t = 0; t < to.triangles.size(); ++t) {
            if ((p - centre[t]).norm() - radius[t] < best) {
                const double d = dist(t);
                if (d < best) {
                    best = d;
                    hint = t;
                }
            }
        }
        out[i] = best;
    }
    return out;
}

} // namespace ssm
