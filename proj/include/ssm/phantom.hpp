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

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace ssm {

/// A smooth radial bump on the phantom surface, centred on a direction from the origin.
struct Bump
{
    Label label = Label::Other;
    Vec3 direction = Vec3::UnitX();
    double height = 10.0; // mm
    double width = 0.2;   // angular standard deviation, rad
};

/**
 * Bi-atrial phantom: two blended ellipsoidal lobes (right lobe at -x, left lobe
 * at +x) with appendage and pulmonary-vein bumps. Axes: +x patient left,
 * +y anterior, +z superior. The surface is star-shaped about the origin and
 * sampled on a subdivided icosahedron, so it is closed, manifold and outward
 * oriented.
 */
struct PhantomSpec
{
    int subdivisions = 4;
    Vec3 right_center{-21.0, 0.0, 0.0};
    Vec3 right_radii{26.0, 24.0, 27.0};
    Vec3 left_center{21.0, -3.0, 0.0};
    Vec3 left_radii{25.0, 23.0, 21.0};
    /// Exponent of the smooth maximum joining the lobes; larger is sharper.
    double blend = 1.5;
    std::vector<Bump> bumps = {
        {Label::LAA, Vec3(0.55, 0.75, 0.35), 12.0, 0.42},
        {Label::RAA, Vec3(-0.45, 0.8, 0.4), 14.0, 0.48},
        {Label::LPV, Vec3(0.6, -0.55, 0.55), 10.0, 0.255},
        {Label::LPV, Vec3(0.7, -0.6, -0.2), 10.0, 0.255},
        {Label::RPV, Vec3(0.12, -0.8, 0.55), 10.0, 0.255},
        {Label::RPV, Vec3(0.15, -0.95, -0.15), 10.0, 0.255},
    };
    /// Fraction of a bump's height above which a vertex takes the bump's label.
    double label_threshold = 0.5;
};

namespace detail {

/// Distance along unit ray u from the origin to the boundary of an axis-aligned ellipsoid.
inline double ray_ellipsoid_exit(const Vec3& u, const Vec3& c, const Vec3& radii)
{
    const Vec3 uu = u.cwiseQuotient(radii);
    const Vec3 cc = (-c).cwiseQuotient(radii);
    const double a = uu.squaredNorm();
    const double b = 2.0 * uu.dot(cc);
    const double k = cc.squaredNorm() - 1.0;
    const double disc = b * b - 4.0 * a * k;
    if (disc < 0.0) {
        return 0.0;
    }
    return std::max(0.0, (-b + std::sqrt(disc)) / (2.0 * a));
}

inline double bump_weight(const Bump& b, const Vec3& u)
{
    const double ang = std::acos(std::clamp(u.dot(b.direction.normalized()), -1.0, 1.0));
    return std::exp(-0.5 * ang * ang / (b.width * b.width));
}

} // namespace detail

inline double phantom_radius(const PhantomSpec& spec, const Vec3& unit_dir)
{
    const double r1 = detail::ray_ellipsoid_exit(unit_dir, spec.right_center, spec.right_radii);
    const double r2 = detail::ray_ellipsoid_exit(unit_dir, spec.left_center, spec.left_radii);
    const double p = spec.blend;
    double r = std::pow(std::pow(r1, p) + std::pow(r2, p), 1.0 / p);
    for (const auto& b : spec.bumps) {
        r += b.height * detail::bump_weight(b, unit_dir);
    }
    return r;
}

inline SurfaceMesh atria_phantom(const PhantomSpec& spec = {})
{
    SurfaceMesh mesh = icosphere(spec.subdivisions, 1.0);
    mesh.labels.assign(mesh.vertices.size(), Label::Body);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3 u = mesh.vertices[i];
        double best = spec.label_threshold;
        for (const auto& b : spec.bumps) {
            const double w = detail::bump_weight(b, u);
            if (w > best) {
                best = w;
                mesh.labels[i] = b.label;
            }
        }
        mesh.vertices[i] = phantom_radius(spec, u) * u;
    }
    return mesh;
}

/// Volume (mm^3) enclosed on the left (+x) side of the septal plane x = septum_x.
inline double left_side_volume(const SurfaceMesh& mesh, double septum_x = 0.0)
{
    // Cone decomposition from a point on the septal plane; exact for star-shaped surfaces
    // whose septal cross-section contains that point.
    const Vec3 apex(septum_x, 0.0, 0.0);
    double vol = 0.0;
    for (const auto& t : mesh.triangles) {
        const Vec3 a = mesh.vertices[t[0]] - apex;
        const Vec3 b = mesh.vertices[t[1]] - apex;
        const Vec3 c = mesh.vertices[t[2]] - apex;
        const Vec3 cen = (a + b + c) / 3.0;
        if (cen.x() > 0.0) {
            vol += a.dot(b.cross(c)) / 6.0;
        }
    }
    return vol;
}

/**
 * Library of smooth displacement fields on the phantom, in order:
 * global size, left/right asymmetry, appendage prominence, superior-inferior
 * elongation, anterior-posterior depth, vein tilt. Fields are raw (not normalized).
 */
inline std::vector<Eigen::VectorXd> phantom_mode_fields(const SurfaceMesh& base, const PhantomSpec& spec = {})
{
    const auto m = static_cast<Eigen::Index>(base.vertices.size());
    std::vector<Eigen::VectorXd> fields(6, Eigen::VectorXd::Zero(3 * m));
    for (Eigen::Index i = 0; i < m; ++i) {
        const Vec3& x = base.vertices[static_cast<std::size_t>(i)];
        const Vec3 u = x.normalized();
        const double side = std::tanh(x.x() / 20.0);
        const Vec3 lobe = 0.5 * (1.0 + side) * spec.left_center + 0.5 * (1.0 - side) * spec.right_center;
        double app = 0.0;
        double vein = 0.0;
        for (const auto& b : spec.bumps) {
            const double w = detail::bump_weight(b, u);
            if (b.label == Label::LAA || b.label == Label::RAA) {
                app += w;
            } else if (b.label == Label::LPV || b.label == Label::RPV) {
                vein += w * (b.direction.z() > 0.2 ? 1.0 : -1.0);
            }
        }
        fields[0].segment<3>(3 * i) = x;
        fields[1].segment<3>(3 * i) = side * (x - lobe);
        fields[2].segment<3>(3 * i) = app * u * 10.0;
        fields[3].segment<3>(3 * i) = Vec3(0.0, 0.0, x.z());
        fields[4].segment<3>(3 * i) = Vec3(0.0, x.y(), 0.0);
        fields[5].segment<3>(3 * i) = vein * Vec3(0.0, 1.0, 0.0) * 10.0;
    }
    return fields;
}

struct SyntheticCorpusSpec
{
    int n_instances = 12;
    PhantomSpec base;
    /// Per-vertex mean squared displacement (mm^2) of each planted mode at unit coefficient
    /// variance; the k-th entry uses the k-th field of phantom_mode_fields.
    std::vector<double> variances = {9.0, 4.0, 1.0};
    double noise_sigma = 0.1; // mm, per coordinate
    double max_rotation_deg = 0.0;
    double max_translation = 0.0; // mm
    bool shuffle_vertices = false;
    std::uint64_t seed = 1;

    void validate() const
    {
        if (n_instances < 1) {
            throw InvalidInput("corpus needs at least one instance");
        }
        if (variances.size() > 6) {
            throw InvalidInput("at most 6 planted modes are available");
        }
        if (!variances.empty() && static_cast<int>(variances.size()) >= n_instances) {
            throw InvalidInput("number of planted modes must be smaller than the number of instances");
        }
        for (std::size_t k = 0; k < variances.size(); ++k) {
            if (!(variances[k] > 0.0) || (k > 0 && variances[k] > variances[k - 1])) {
                throw InvalidInput("planted variances must be positive and non-increasing");
            }
        }
        if (!(noise_sigma >= 0.0) || !(max_rotation_deg >= 0.0) || !(max_translation >= 0.0)) {
            throw InvalidInput("noise and perturbation ranges must be non-negative");
        }
    }
};

struct SyntheticCorpus
{
    SurfaceMesh base;
    std::vector<SurfaceMesh> shapes;
    /// Orthonormal planted mode directions, one column per mode (3M x K).
    Eigen::MatrixXd modes;
    /// Planted variances as covariance eigenvalues (mm^2), i.e. M * per-vertex variance.
    Eigen::VectorXd eigenvalues;
    /// Standardized coefficients (N x K); columns have zero mean, unit sample variance
    /// (divisor N-1) and are mutually uncorrelated.
    Eigen::MatrixXd coefficients;
    /// Rigid perturbation applied to each shape after deformation.
    std::vector<RigidTransform> transforms;
    /// permutations[n][j] = base vertex index stored at position j of shape n.
    std::vector<std::vector<std::uint32_t>> permutations;
};

/**
 * Generates base + sum_k r_nk sqrt(lambda_k) mode_k + noise, then a random
 * rigid perturbation and optional vertex shuffling. Coefficients are whitened
 * over the corpus so that the sample covariance of the clean shapes has
 * exactly the planted spectrum.
 */
inline SyntheticCorpus synth_corpus(const SyntheticCorpusSpec& spec)
{
    spec.validate();
    SyntheticCorpus out;
    out.base = atria_phantom(spec.base);
    const auto m = static_cast<Eigen::Index>(out.base.vertices.size());
    const auto k = static_cast<Eigen::Index>(spec.variances.size());
    const auto n = spec.n_instances;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const auto fields = phantom_mode_fields(out.base, spec.base);
    out.modes.resize(3 * m, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::VectorXd f = fields[static_cast<std::size_t>(j)];
        for (Eigen::Index i = 0; i < j; ++i) {
            f -= out.modes.col(i).dot(f) * out.modes.col(i);
        }
        out.modes.col(j) = f.normalized();
    }
    out.eigenvalues.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        out.eigenvalues(j) = spec.variances[static_cast<std::size_t>(j)] * static_cast<double>(m);
    }

    out.coefficients.setZero(n, k);
    if (k > 0) {
        Eigen::MatrixXd raw(n, k);
        for (Eigen::Index r = 0; r < n; ++r) {
            for (Eigen::Index c = 0; c < k; ++c) {
                raw(r, c) = gauss(rng);
            }
        }
        raw.rowwise() -= raw.colwise().mean();
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
        Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, k);
        // Fix column signs so the whitened coefficients follow the raw draws.
        for (Eigen::Index c = 0; c < k; ++c) {
            if (q.col(c).dot(raw.col(c)) < 0.0) {
                q.col(c) = -q.col(c);
            }
        }
        out.coefficients = q * std::sqrt(static_cast<double>(n - 1));
    }

    const Eigen::VectorXd base_vec = to_shape_vector(out.base).coords();
    for (int s = 0; s < n; ++s) {
        Eigen::VectorXd v = base_vec;
        for (Eigen::Index j = 0; j < k; ++j) {
            v += out.coefficients(s, j) * std::sqrt(out.eigenvalues(j)) * out.modes.col(j);
        }
        if (spec.noise_sigma > 0.0) {
            for (Eigen::Index i = 0; i < v.size(); ++i) {
                v(i) += spec.noise_sigma * gauss(rng);
            }
        }
        RigidTransform t;
        if (spec.max_rotation_deg > 0.0 || spec.max_translation > 0.0) {
            Vec3 axis(gauss(rng), gauss(rng), gauss(rng));
            const double angle = unit(rng) * spec.max_rotation_deg * EIGEN_PI / 180.0;
            t.rotation = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
            Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
            t.translation = dir.normalized() * spec.max_translation * std::cbrt(unit(rng));
        }
        SurfaceMesh shape = from_shape_vector(v, out.base.triangles, out.base.labels);
        shape = transformed(shape, t);

        std::vector<std::uint32_t> perm(static_cast<std::size_t>(m));
        std::iota(perm.begin(), perm.end(), 0U);
        if (spec.shuffle_vertices) {
            std::shuffle(perm.begin(), perm.end(), rng);
            std::vector<std::uint32_t> inverse(perm.size());
            for (std::size_t j = 0; j < perm.size(); ++j) {
                inverse[perm[j]] = static_cast<std::uint32_t>(j);
            }
            SurfaceMesh shuffled;
            shuffled.vertices.resize(perm.size());
            shuffled.labels.resize(perm.size());
            for (std::size_t j = 0; j < perm.size(); ++j) {
                shuffled.vertices[j] = shape.vertices[perm[j]];
                shuffled.labels[j] = shape.labels[perm[j]];
            }
            for (const auto& tri : shape.triangles) {
                shuffled.triangles.push_back({inverse[tri[0]], inverse[tri[1]], inverse[tri[2]]});
            }
            shape = std::move(shuffled);
        }
        out.shapes.push_back(std::move(shape));
        out.transforms.push_back(t);
        out.permutations.push_back(std::move(perm));
    }
    return out;
}

} // namespace ssm
