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

#include "ssm/mesh.hpp"
#include "ssm/spatial_index.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace ssm {

struct IcpConfig
{
    int max_iterations = 150;
    /// Stop when the RMS residual changes by less than this (mm).
    double convergence_tol = 1e-4;
    /// Fraction of worst pairs discarded before each Procrustes step, in [0, 1).
    double trim_fraction = 0.0;

    void validate() const
    {
        if (max_iterations < 1) {
            throw InvalidInput("ICP max_iterations must be >= 1");
        }
        if (!(convergence_tol >= 0.0)) {
            throw InvalidInput("ICP convergence_tol must be non-negative");
        }
        if (!(trim_fraction >= 0.0 && trim_fraction < 1.0)) {
            throw InvalidInput("ICP trim_fraction must lie in [0, 1)");
        }
    }
};

struct IcpReport
{
    int iterations_run = 0;
    /// RMS nearest-neighbour distance before the first iteration.
    double initial_residual = 0.0;
    /// RMS nearest-neighbour distance after each iteration.
    std::vector<double> residual_history;
    RigidTransform final_transform;
};

/**
 * Least-squares rigid transform mapping `source` onto `target` (Kabsch).
 * The rotation is always proper; a best-fitting reflection is rejected in
 * favour of the closest rotation.
 */
inline RigidTransform procrustes_rigid(std::span<const Vec3> source, std::span<const Vec3> target)
{
    if (source.size() != target.size()) {
        throw InvalidInput("Procrustes needs matched point lists");
    }
    if (source.size() < 3) {
        throw InvalidInput("Procrustes needs at least 3 point pairs");
    }
    const auto n = static_cast<double>(source.size());
    Vec3 cs = Vec3::Zero();
    Vec3 ct = Vec3::Zero();
    for (std::size_t i = 0; i < source.size(); ++i) {
        cs += source[i];
        ct += target[i];
    }
    cs /= n;
    ct /= n;
    Mat3 h = Mat3::Zero();
    Mat3 spread = Mat3::Zero();
    for (std::size_t i = 0; i < source.size(); ++i) {
        const Vec3 a = source[i] - cs;
        h += a * (target[i] - ct).transpose();
        spread += a * a.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> spread_eig(spread);
    const auto ev = spread_eig.eigenvalues();
    if (ev(2) <= 0.0 || ev(1) <= 1e-12 * ev(2)) {
        throw NumericalError("Procrustes configuration is degenerate (points coincident or collinear)");
    }
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Mat3& u = svd.matrixU();
    const Mat3& v = svd.matrixV();
    Mat3 d = Mat3::Identity();
    if ((v * u.transpose()).determinant() < 0.0) {
        d(2, 2) = -1.0;
    }
    RigidTransform t;
    t.rotation = v * d * u.transpose();
    t.translation = ct - t.rotation * cs;
    return t;
}

struct Correspondence
{
    std::vector<std::uint32_t> target_index;
    std::vector<double> sq_distance;
};

/// For every query point, the closest indexed point (lowest index on ties).
inline Correspondence nearest_correspondences(std::span<const Vec3> query, const KdTree& reference)
{
    if (query.empty() || reference.empty()) {
        throw InvalidInput("nearest correspondences need non-empty inputs");
    }
    Correspondence c;
    c.target_index.resize(query.size());
    c.sq_distance.resize(query.size());
    for (std::size_t i = 0; i < query.size(); ++i) {
        const auto hit = reference.nearest(query[i]);
        c.target_index[i] = hit.index;
        c.sq_distance[i] = hit.sq_distance;
    }
    return c;
}

inline std::vector<std::uint32_t> nearest_correspondences(const SurfaceMesh& moving, const SurfaceMesh& reference)
{
    const KdTree tree(reference.vertices);
    return nearest_correspondences(moving.vertices, tree).target_index;
}

namespace detail {

inline double rms(const std::vector<double>& sq)
{
    double s = 0.0;
    for (double d : sq) {
        s += d;
    }
    return std::sqrt(s / static_cast<double>(sq.size()));
}

} // namespace detail

/**
 * Rigidly aligns `moving` to `reference` by iterated closest points with a
 * point-to-point Procrustes step. Correspondences go from each moving vertex
 * to its nearest reference vertex. Returns the transformed mesh and a report
 * whose transform maps the original moving mesh onto the result.
 */
inline std::pair<SurfaceMesh, IcpReport> icp_align(const SurfaceMesh& moving, const SurfaceMesh& reference,
                                                   const IcpConfig& cfg = {})
{
    cfg.validate();
    if (moving.vertices.empty() || reference.vertices.empty()) {
        throw InvalidInput("ICP needs non-empty meshes");
    }
    const KdTree tree(reference.vertices);
    std::vector<Vec3> current = moving.vertices;
    IcpReport report;

    auto pairs = nearest_correspondences(current, tree);
    double residual = detail::rms(pairs.sq_distance);
    report.initial_residual = residual;

    std::vector<Vec3> src;
    std::vector<Vec3> dst;
    std::vector<std::size_t> keep(current.size());
    for (int it = 0; it < cfg.max_iterations; ++it) {
        std::iota(keep.begin(), keep.end(), std::size_t{0});
        if (cfg.trim_fraction > 0.0) {
            const auto kept = std::max<std::size_t>(
                3, static_cast<std::size_t>(std::ceil((1.0 - cfg.trim_fraction) * static_cast<double>(keep.size()))));
            std::stable_sort(keep.begin(), keep.end(),
                             [&](std::size_t a, std::size_t b) { return pairs.sq_distance[a] < pairs.sq_distance[b]; });
            keep.resize(std::min(kept, keep.size()));
        }
        src.clear();
        dst.clear();
        for (auto i : keep) {
            src.push_back(current[i]);
            dst.push_back(reference.vertices[pairs.target_index[i]]);
        }
        const RigidTransform step = procrustes_rigid(src, dst);
        for (auto& p : current) {
            p = step.apply(p);
        }
        report.final_transform = step.compose(report.final_transform);
        ++report.iterations_run;

        pairs = nearest_correspondences(current, tree);
        const double next = detail::rms(pairs.sq_distance);
        report.residual_history.push_back(next);
        const bool converged = std::abs(residual - next) < cfg.convergence_tol;
        residual = next;
        if (converged) {
            break;
        }
    }
    // Re-orthonormalize the accumulated rotation to remove drift from repeated products.
    Eigen::JacobiSVD<Mat3> svd(report.final_transform.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
    report.final_transform.rotation = svd.matrixU() * svd.matrixV().transpose();

    SurfaceMesh out = transformed(moving, report.final_transform);
    return {std::move(out), std::move(report)};
}

} // namespace ssm
