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
#include "ssm/mesh.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ssm {

/// PCA point-distribution model. Mode k of a shape is r_k * sqrt(eigenvalues[k]) * eigenvectors.col(k).
struct PdmModel
{
    Eigen::VectorXd mean;
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd eigenvectors;
    std::vector<Triangle> topology;
    std::vector<Label> labels;
    std::int64_t n_training = 0;
    /// Covariance divisor used at build time (N - 1).
    double divisor = 1.0;

    Eigen::Index num_modes() const noexcept { return eigenvalues.size(); }
    Eigen::Index num_points() const noexcept { return mean.size() / 3; }

    SurfaceMesh mesh(const ShapeVector& shape) const { return from_shape_vector(shape, topology, labels); }
};

struct PdmBuildOptions
{
    /// Vertices to keep; empty keeps all. Triangles touching a dropped vertex are removed.
    std::vector<bool> keep;
    /// Eigenvalues at or below rank_tol * largest are treated as zero and dropped.
    double rank_tol = 1e-12;
};

namespace detail {

inline Eigen::VectorXd cut(const Eigen::VectorXd& v, const std::vector<std::uint32_t>& kept)
{
    Eigen::VectorXd out(3 * static_cast<Eigen::Index>(kept.size()));
    for (std::size_t j = 0; j < kept.size(); ++j) {
        out.segment<3>(3 * static_cast<Eigen::Index>(j)) = v.segment<3>(3 * static_cast<Eigen::Index>(kept[j]));
    }
    return out;
}

inline void fix_sign(Eigen::Ref<Eigen::VectorXd> v)
{
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i) {
        if (std::abs(v(i)) > std::abs(v(arg))) {
            arg = i;
        }
    }
    if (v(arg) < 0.0) {
        v = -v;
    }
}

} // namespace detail

/**
 * Builds the model from shapes in correspondence. The covariance is
 * diagonalized through the N x N Gram matrix of centred shapes.
 */
inline PdmModel build_pdm(std::span<const ShapeVector> corpus, const std::vector<Triangle>& topology = {},
                          const std::vector<Label>& labels = {}, const PdmBuildOptions& opt = {})
{
    if (corpus.size() < 2) {
        throw InvalidInput("a shape model needs at least 2 shapes, got " + std::to_string(corpus.size()));
    }
    const auto len = corpus.front().size();
    for (std::size_t n = 1; n < corpus.size(); ++n) {
        if (corpus[n].size() != len) {
            throw InvalidInput("shape " + std::to_string(n) + " has " + std::to_string(corpus[n].num_points()) +
                               " points, expected " + std::to_string(len / 3));
        }
    }
    if (len == 0) {
        throw InvalidInput("shapes are empty");
    }
    const auto m = static_cast<std::size_t>(len / 3);
    if (!labels.empty() && labels.size() != m) {
        throw InvalidInput("label count does not match the shape length");
    }
    if (!opt.keep.empty() && opt.keep.size() != m) {
        throw InvalidInput("vertex mask length does not match the shape length");
    }

    std::vector<std::uint32_t> kept;
    std::vector<std::int64_t> remap(m, -1);
    for (std::size_t i = 0; i < m; ++i) {
        if (opt.keep.empty() || opt.keep[i]) {
            remap[i] = static_cast<std::int64_t>(kept.size());
            kept.push_back(static_cast<std::uint32_t>(i));
        }
    }
    if (kept.empty()) {
        throw InvalidInput("vertex mask removes every vertex");
    }

    PdmModel model;
    for (const auto& t : topology) {
        if (std::any_of(t.begin(), t.end(), [&](std::uint32_t v) { return v >= m; })) {
            throw InvalidInput("topology references a vertex beyond the shape length");
        }
        if (remap[t[0]] >= 0 && remap[t[1]] >= 0 && remap[t[2]] >= 0) {
            model.topology.push_back({static_cast<std::uint32_t>(remap[t[0]]), static_cast<std::uint32_t>(remap[t[1]]),
                                      static_cast<std::uint32_t>(remap[t[2]])});
        }
    }
    for (auto i : kept) {
        if (!labels.empty()) {
            model.labels.push_back(labels[i]);
        }
    }

    const auto n = static_cast<Eigen::Index>(corpus.size());
    Eigen::MatrixXd x(3 * static_cast<Eigen::Index>(kept.size()), n);
    for (Eigen::Index j = 0; j < n; ++j) {
        x.col(j) = opt.keep.empty() ? corpus[static_cast<std::size_t>(j)].coords()
                                    : detail::cut(corpus[static_cast<std::size_t>(j)].coords(), kept);
    }
    model.mean = x.rowwise().mean();
    x.colwise() -= model.mean;
    model.n_training = n;
    model.divisor = static_cast<double>(n - 1);

    const Eigen::MatrixXd gram = (x.transpose() * x) / model.divisor;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success) {
        throw NumericalError("eigendecomposition of the Gram matrix failed");
    }
    const Eigen::VectorXd& ev = eig.eigenvalues();
    const double top = std::max(ev(n - 1), 0.0);
    Eigen::Index k = 0;
    while (k < n - 1 && ev(n - 1 - k) > opt.rank_tol * top && top > 0.0) {
        ++k;
    }
    model.eigenvalues.resize(k);
    model.eigenvectors.resize(x.rows(), k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const Eigen::Index src = n - 1 - j;
        model.eigenvalues(j) = ev(src);
        Eigen::VectorXd v = x * eig.eigenvectors().col(src);
        v.normalize();
        detail::fix_sign(v);
        model.eigenvectors.col(j) = v;
    }
    return model;
}

inline PdmModel build_pdm(std::span<const SurfaceMesh> meshes, const PdmBuildOptions& opt = {})
{
    if (meshes.empty()) {
        throw InvalidInput("a shape model needs at least 2 shapes, got 0");
    }
    std::vector<ShapeVector> corpus;
    corpus.reserve(meshes.size());
    for (const auto& mesh : meshes) {
        corpus.push_back(to_shape_vector(mesh));
    }
    return build_pdm(corpus, meshes.front().triangles, meshes.front().labels, opt);
}

inline void check_length(const PdmModel& model, const Eigen::VectorXd& shape)
{
    if (shape.size() != model.mean.size()) {
        throw InvalidInput("shape has " + std::to_string(shape.size() / 3) + " points, model expects " +
                           std::to_string(model.num_points()));
    }
}

/// Least-squares standardized coefficients of a shape (all modes).
inline Eigen::VectorXd project(const PdmModel& model, const ShapeVector& shape)
{
    check_length(model, shape.coords());
    Eigen::VectorXd r = model.eigenvectors.transpose() * (shape.coords() - model.mean);
    return r.cwiseQuotient(model.eigenvalues.cwiseSqrt());
}

inline ShapeVector reconstruct(const PdmModel& model, const Eigen::VectorXd& r, Eigen::Index k_modes)
{
    if (k_modes < 0 || k_modes > model.num_modes()) {
        throw InvalidInput("requested " + std::to_string(k_modes) + " modes, model has " +
                           std::to_string(model.num_modes()));
    }
    if (r.size() < k_modes) {
        throw InvalidInput("coefficient vector has " + std::to_string(r.size()) + " entries, need " +
                           std::to_string(k_modes));
    }
    if (!r.head(k_modes).allFinite()) {
        throw InvalidInput("coefficients are not finite");
    }
    const auto lead = model.eigenvectors.leftCols(k_modes);
    return ShapeVector(model.mean + lead * r.head(k_modes).cwiseProduct(model.eigenvalues.head(k_modes).cwiseSqrt()));
}

inline ShapeVector reconstruct(const PdmModel& model, const Eigen::VectorXd& r)
{
    return reconstruct(model, r, model.num_modes());
}

struct Interval
{
    double lo = -3.0;
    double hi = 3.0;
};

inline std::vector<Interval> default_bounds(const PdmModel& model)
{
    return std::vector<Interval>(static_cast<std::size_t>(model.num_modes()));
}

/// Per-mode [min, max] of the projected training coefficients.
inline std::vector<Interval> empirical_bounds(const PdmModel& model, std::span<const ShapeVector> corpus)
{
    if (corpus.empty()) {
        throw InvalidInput("empirical bounds need at least one shape");
    }
    std::vector<Interval> b(static_cast<std::size_t>(model.num_modes()), {0.0, 0.0});
    bool first = true;
    for (const auto& s : corpus) {
        const auto r = project(model, s);
        for (std::size_t k = 0; k < b.size(); ++k) {
            const double v = r(static_cast<Eigen::Index>(k));
            b[k].lo = first ? v : std::min(b[k].lo, v);
            b[k].hi = first ? v : std::max(b[k].hi, v);
        }
        first = false;
    }
    return b;
}

struct ShapeSample
{
    Eigen::VectorXd coefficients;
    ShapeVector shape;
};

/// Uniform draw per mode. An empty bounds list means [-3, 3] for every mode.
inline ShapeSample sample(const PdmModel& model, std::uint64_t seed, const std::vector<Interval>& bounds = {})
{
    const auto b = bounds.empty() ? default_bounds(model) : bounds;
    if (static_cast<Eigen::Index>(b.size()) != model.num_modes()) {
        throw InvalidInput("got " + std::to_string(b.size()) + " bounds for " + std::to_string(model.num_modes()) +
                           " modes");
    }
    std::mt19937_64 rng(seed);
    ShapeSample out;
    out.coefficients.resize(model.num_modes());
    for (std::size_t k = 0; k < b.size(); ++k) {
        if (!std::isfinite(b[k].lo) || !std::isfinite(b[k].hi) || b[k].lo > b[k].hi) {
            throw InvalidInput("bounds for mode " + std::to_string(k) + " are not a finite interval");
        }
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        out.coefficients(static_cast<Eigen::Index>(k)) = b[k].lo == b[k].hi ? b[k].lo : b[k].lo + u * (b[k].hi - b[k].lo);
    }
    out.shape = reconstruct(model, out.coefficients);
    return out;
}

/// curve[k] = variance fraction captured by the first k + 1 modes.
inline std::vector<double> cumulative_variance(const Eigen::VectorXd& eigenvalues)
{
    // Same summation order as the loop below, so the last entry is exactly 1.
    double total = 0.0;
    for (Eigen::Index k = 0; k < eigenvalues.size(); ++k) {
        total += eigenvalues(k);
    }
    if (eigenvalues.size() == 0 || !(total > 0.0)) {
        throw InvalidInput("model has no variance");
    }
    std::vector<double> curve(static_cast<std::size_t>(eigenvalues.size()));
    double acc = 0.0;
    for (Eigen::Index k = 0; k < eigenvalues.size(); ++k) {
        acc += eigenvalues(k);
        curve[static_cast<std::size_t>(k)] = acc / total;
    }
    curve.back() = 1.0;
    return curve;
}

inline Eigen::Index modes_for_variance(const PdmModel& model, double fraction)
{
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw InvalidInput("variance fraction must be in (0, 1]");
    }
    const auto curve = cumulative_variance(model.eigenvalues);
    for (std::size_t k = 0; k < curve.size(); ++k) {
        if (curve[k] >= fraction) {
            return static_cast<Eigen::Index>(k + 1);
        }
    }
    return model.num_modes();
}

} // namespace ssm
