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

#include "ssm/lbfgs.hpp"
#include "ssm/mesh.hpp"
#include "ssm/spatial_index.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ssm {

/// Bit set over Label values.
using LabelMask = std::uint32_t;

inline constexpr LabelMask all_labels = (1U << label_count) - 1U;

constexpr LabelMask mask_of(std::initializer_list<Label> labels)
{
    LabelMask m = 0;
    for (auto l : labels) {
        m |= 1U << static_cast<unsigned>(l);
    }
    return m;
}

inline bool in_mask(LabelMask m, Label l) { return (m >> static_cast<unsigned>(l)) & 1U; }

/// k(x, x') = s * exp(-|x - x'|^2 / l^2)
inline double gaussian_kernel(const Vec3& x, const Vec3& y, double s, double l)
{
    return s * std::exp(-(x - y).squaredNorm() / (l * l));
}

/// One Gaussian term restricted to vertices whose label is in `mask`.
struct KernelTerm
{
    double scale = 1.0;  // s, mm^2
    double length = 1.0; // l, mm
    LabelMask mask = all_labels;
};

/**
 * Sum of masked Gaussian kernels. A term contributes only when both points
 * carry a label in its mask. The kernel is scalar and acts identically on the
 * x, y and z displacement components.
 */
struct KernelSpec
{
    std::vector<KernelTerm> terms;

    void validate() const
    {
        if (terms.empty()) {
            throw InvalidInput("kernel spec has no terms");
        }
        for (const auto& t : terms) {
            if (!(t.scale > 0.0) || !(t.length > 0.0)) {
                throw InvalidInput("kernel terms need positive scale and length");
            }
        }
    }

    double operator()(const Vec3& x, Label lx, const Vec3& y, Label ly) const
    {
        double k = 0.0;
        for (const auto& t : terms) {
            if (in_mask(t.mask, lx) && in_mask(t.mask, ly)) {
                k += gaussian_kernel(x, y, t.scale, t.length);
            }
        }
        return k;
    }

    LabelMask support() const
    {
        LabelMask m = 0;
        for (const auto& t : terms) {
            m |= t.mask;
        }
        return m;
    }

    /// Atrial body deformation: s = 50 mm^2, l = 40 mm over the whole surface.
    static KernelSpec body() { return {{{50.0, 40.0, all_labels}}}; }

    /// Appendage deformation: s = 20 mm^2, l = 20 mm on LAA/RAA vertices only.
    static KernelSpec appendages() { return {{{20.0, 20.0, mask_of({Label::LAA, Label::RAA})}}}; }
};

/**
 * Low-rank Gaussian process deformation model over a reference mesh.
 *
 * Column k of `basis` is the eigenfunction phi_k sampled at the vertices,
 * flattened like a ShapeVector. Columns are orthonormal under the plain sum
 * over vertices; `eigenvalues` are non-increasing. A deformation with
 * coefficients a moves vertex m by sum_k a_k sqrt(lambda_k) phi_k(m).
 */
struct GpModel
{
    SurfaceMesh reference;
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd basis;
    /// Sum of eigenvalues over the trace of the (vector-valued) kernel matrix.
    double captured_variance = 1.0;

    Eigen::Index rank() const noexcept { return eigenvalues.size(); }

    /// basis * diag(sqrt(lambda)).
    Eigen::MatrixXd scaled_basis() const { return basis * eigenvalues.cwiseSqrt().asDiagonal(); }
};

struct LowRankOptions
{
    int rank = 100;
    int landmarks = 1000;
};

/**
 * Dense scalar kernel matrix over the given vertices (used as an oracle and
 * for small meshes).
 */
inline Eigen::MatrixXd kernel_matrix(const SurfaceMesh& mesh, const KernelSpec& spec)
{
    const auto n = static_cast<Eigen::Index>(mesh.num_vertices());
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            const auto a = static_cast<std::size_t>(i);
            const auto b = static_cast<std::size_t>(j);
            k(i, j) = spec(mesh.vertices[a], mesh.label(a), mesh.vertices[b], mesh.label(b));
            k(j, i) = k(i, j);
        }
    }
    return k;
}

/**
 * Nystrom approximation of the kernel's leading spectrum.
 *
 * Landmarks are spread evenly over the vertices inside the kernel's support.
 * With C the vertex-by-landmark kernel block and W the landmark block, the
 * approximation C W^+ C^T is diagonalized exactly through a thin SVD of
 * C W^(-1/2), which yields eigenvectors orthonormal over all vertices. Each
 * scalar eigenfunction contributes three vector modes (x, y, z). A rank above
 * the numerical rank of the landmark kernel is clamped.
 */
inline GpModel build_low_rank_gp(const SurfaceMesh& reference, const KernelSpec& spec, const LowRankOptions& opt = {})
{
    spec.validate();
    if (reference.vertices.empty()) {
        throw InvalidInput("low-rank GP needs a non-empty reference");
    }
    if (opt.rank < 1 || opt.landmarks < 1) {
        throw InvalidInput("rank and landmark count must be positive");
    }
    const LabelMask support = spec.support();
    if (support != all_labels && !reference.has_labels()) {
        throw InvalidInput("masked kernel terms need a labelled reference");
    }
    std::vector<std::size_t> inside;
    for (std::size_t i = 0; i < reference.num_vertices(); ++i) {
        if (in_mask(support, reference.label(i))) {
            inside.push_back(i);
        }
    }
    if (inside.empty()) {
        throw InvalidInput("no reference vertex lies inside the kernel support");
    }
    const auto n_land = std::min<std::size_t>(static_cast<std::size_t>(opt.landmarks), inside.size());
    if (static_cast<std::size_t>(opt.rank) > 3 * n_land) {
        throw InvalidInput("rank " + std::to_string(opt.rank) + " exceeds 3 x landmark count " +
                           std::to_string(n_land));
    }
    std::vector<std::size_t> land(n_land);
    for (std::size_t i = 0; i < n_land; ++i) {
        land[i] = inside[i * inside.size() / n_land];
    }

    const auto m = static_cast<Eigen::Index>(reference.num_vertices());
    const auto l = static_cast<Eigen::Index>(n_land);
    Eigen::MatrixXd c(m, l);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto vi = static_cast<std::size_t>(i);
        for (Eigen::Index j = 0; j < l; ++j) {
            const auto vj = land[static_cast<std::size_t>(j)];
            c(i, j) = spec(reference.vertices[vi], reference.label(vi), reference.vertices[vj], reference.label(vj));
        }
    }
    Eigen::MatrixXd w(l, l);
    for (Eigen::Index j = 0; j < l; ++j) {
        w.row(j) = c.row(static_cast<Eigen::Index>(land[static_cast<std::size_t>(j)]));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> weig(w);
    if (weig.info() != Eigen::Success) {
        throw NumericalError("landmark kernel eigendecomposition failed");
    }
    const Eigen::VectorXd mu = weig.eigenvalues();
    const double trace_w = w.trace();
    if (mu(0) < -1e-8 * trace_w) {
        throw NumericalError("landmark kernel matrix is not positive semi-definite; worst eigenvalue " +
                             std::to_string(mu(0)));
    }
    const double cutoff = 1e-12 * mu(l - 1);
    Eigen::Index first_kept = 0;
    while (first_kept < l && mu(first_kept) <= cutoff) {
        ++first_kept;
    }
    const Eigen::Index kept = l - first_kept;
    const Eigen::MatrixXd g = c * weig.eigenvectors().rightCols(kept) *
                              mu.tail(kept).cwiseSqrt().cwiseInverse().asDiagonal();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(g, Eigen::ComputeThinU);
    const Eigen::VectorXd sigma = svd.singularValues().array().square();
    Eigen::Index usable = 0;
    while (usable < sigma.size() && sigma(usable) > 1e-14 * sigma(0)) {
        ++usable;
    }
    // Ranks beyond the numerical rank of the landmark kernel are clamped.
    const int rank = std::min(opt.rank, static_cast<int>(3 * usable));
    const int scalar_used = (rank + 2) / 3;
    const Eigen::MatrixXd phi = svd.matrixU().leftCols(scalar_used);

    GpModel model;
    model.reference = reference;
    model.eigenvalues.resize(rank);
    model.basis.setZero(3 * m, rank);
    for (int k = 0; k < rank; ++k) {
        const int j = k / 3;
        const int comp = k % 3;
        model.eigenvalues(k) = sigma(j);
        for (Eigen::Index i = 0; i < m; ++i) {
            // Rows outside the support are zero in exact arithmetic; keep them exactly zero.
            if (in_mask(support, reference.label(static_cast<std::size_t>(i)))) {
                model.basis(3 * i + comp, k) = phi(i, j);
            }
        }
    }
    double trace = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto vi = static_cast<std::size_t>(i);
        trace += spec(reference.vertices[vi], reference.label(vi), reference.vertices[vi], reference.label(vi));
    }
    model.captured_variance = model.eigenvalues.sum() / (3.0 * trace);
    return model;
}

struct PvModelOptions
{
    /// Anterior-posterior axis; veins tilt within the plane it spans with their own axis.
    Vec3 ap_direction = Vec3::UnitY();
    /// Rotation angle produced by a unit coefficient.
    double degrees_per_unit = 2.0;
};

struct VeinGroup
{
    Label label = Label::LPV;
    std::vector<std::uint32_t> vertices;
    Vec3 ostium_center = Vec3::Zero();
    Vec3 rotation_axis = Vec3::UnitZ();
    /// Infinitesimal-rotation field omega x (x - c), zero off the vein (3M).
    Eigen::VectorXd field;
};

/**
 * The four pulmonary veins as connected components of LPV/RPV-labelled
 * vertices, ordered by decreasing rotation-field energy (lowest first vertex
 * index on ties). Throws unless exactly four veins are found.
 */
inline std::vector<VeinGroup> pv_vein_groups(const SurfaceMesh& reference, const PvModelOptions& opt = {})
{
    if (!reference.has_labels()) {
        throw InvalidInput("PV orientation model needs a labelled reference");
    }
    const auto n = reference.num_vertices();
    std::vector<std::vector<std::uint32_t>> adj(n);
    for (const auto& t : reference.triangles) {
        for (int k = 0; k < 3; ++k) {
            adj[t[k]].push_back(t[(k + 1) % 3]);
            adj[t[(k + 1) % 3]].push_back(t[k]);
        }
    }
    auto is_vein = [&](std::size_t v) { return reference.labels[v] == Label::LPV || reference.labels[v] == Label::RPV; };
    std::vector<int> comp(n, -1);
    std::vector<VeinGroup> groups;
    for (std::size_t s = 0; s < n; ++s) {
        if (!is_vein(s) || comp[s] >= 0) {
            continue;
        }
        VeinGroup g;
        g.label = reference.labels[s];
        std::vector<std::uint32_t> stack = {static_cast<std::uint32_t>(s)};
        comp[s] = static_cast<int>(groups.size());
        while (!stack.empty()) {
            const auto v = stack.back();
            stack.pop_back();
            g.vertices.push_back(v);
            for (auto w : adj[v]) {
                if (comp[w] < 0 && reference.labels[w] == g.label) {
                    comp[w] = comp[s];
                    stack.push_back(w);
                }
            }
        }
        std::sort(g.vertices.begin(), g.vertices.end());
        groups.push_back(std::move(g));
    }
    if (groups.size() != 4) {
        throw InvalidInput("expected 4 pulmonary veins, found " + std::to_string(groups.size()));
    }
    const Vec3 ap = opt.ap_direction.normalized();
    const auto m = static_cast<Eigen::Index>(n);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        auto& g = groups[gi];
        Vec3 ostium = Vec3::Zero();
        int n_ostium = 0;
        Vec3 center = Vec3::Zero();
        for (auto v : g.vertices) {
            center += reference.vertices[v];
            const bool rim = std::any_of(adj[v].begin(), adj[v].end(),
                                         [&](std::uint32_t w) { return comp[w] != static_cast<int>(gi); });
            if (rim) {
                ostium += reference.vertices[v];
                ++n_ostium;
            }
        }
        if (n_ostium == 0) {
            throw InvalidInput("pulmonary vein without an ostium rim (vein covers a closed component)");
        }
        center /= static_cast<double>(g.vertices.size());
        g.ostium_center = ostium / n_ostium;
        const Vec3 axis = center - g.ostium_center;
        const Vec3 omega = axis.cross(ap);
        if (omega.norm() < 1e-9 * std::max(1.0, axis.norm())) {
            throw InvalidInput("pulmonary vein axis is parallel to the anterior-posterior direction");
        }
        g.rotation_axis = omega.normalized();
        g.field = Eigen::VectorXd::Zero(3 * m);
        for (auto v : g.vertices) {
            g.field.segment<3>(3 * static_cast<Eigen::Index>(v)) =
                g.rotation_axis.cross(reference.vertices[v] - g.ostium_center);
        }
    }
    std::stable_sort(groups.begin(), groups.end(), [](const VeinGroup& a, const VeinGroup& b) {
        const double ea = a.field.squaredNorm();
        const double eb = b.field.squaredNorm();
        return ea != eb ? ea > eb : a.vertices.front() < b.vertices.front();
    });
    return groups;
}

/**
 * Rank-4 model whose k-th mode tilts vein k about its ostium centre within the
 * plane spanned by the vein axis and the anterior-posterior direction. Modes
 * are linearized rotations: lengths change only to second order in the angle.
 */
inline GpModel build_pv_orientation_model(const SurfaceMesh& reference, const PvModelOptions& opt = {})
{
    const auto groups = pv_vein_groups(reference, opt);
    const double theta = opt.degrees_per_unit * EIGEN_PI / 180.0;
    GpModel model;
    model.reference = reference;
    model.eigenvalues.resize(4);
    model.basis.resize(3 * static_cast<Eigen::Index>(reference.num_vertices()), 4);
    for (Eigen::Index k = 0; k < 4; ++k) {
        const auto& f = groups[static_cast<std::size_t>(k)].field;
        const double norm = f.norm();
        model.basis.col(k) = f / norm;
        model.eigenvalues(k) = theta * theta * norm * norm;
    }
    model.captured_variance = 1.0;
    return model;
}

/// Reference (or `base`, same topology) displaced by the model at coefficients `alpha`.
inline SurfaceMesh gp_deform(const GpModel& model, const Eigen::VectorXd& alpha, const SurfaceMesh* base = nullptr)
{
    if (alpha.size() != model.rank()) {
        throw InvalidInput("coefficient count " + std::to_string(alpha.size()) + " does not match model rank " +
                           std::to_string(model.rank()));
    }
    const SurfaceMesh& from = base ? *base : model.reference;
    if (from.num_vertices() != model.reference.num_vertices()) {
        throw InvalidInput("deformation base does not match the model's vertex count");
    }
    const Eigen::VectorXd disp = model.basis * alpha.cwiseProduct(model.eigenvalues.cwiseSqrt());
    SurfaceMesh out = from;
    for (std::size_t m = 0; m < out.vertices.size(); ++m) {
        out.vertices[m] += disp.segment<3>(3 * static_cast<Eigen::Index>(m));
    }
    return out;
}

struct FitOptions
{
    double reg_weight = 1e-3;
    int outer_iterations = 20;
    LbfgsOptions lbfgs;
};

struct FitResult
{
    Eigen::VectorXd coefficients;
    SurfaceMesh deformed_reference;
    /// Mean squared nearest-neighbour distance from the deformed reference to the target (mm^2).
    double mse = 0.0;
    int iterations = 0;
    int outer_iterations = 0;
    /// Objective value at every accepted optimizer iterate, across re-pairings.
    std::vector<double> objective_history;
};

/**
 * Fits model coefficients so that the deformed reference matches `target`.
 *
 * Minimizes (1/M) sum_m |y_m(alpha) - t_p(m)|^2 + reg |alpha|^2, where p(m) is
 * the target vertex nearest to deformed vertex m. Pairs are held fixed while
 * L-BFGS runs and recomputed on each outer iteration. `start` (same topology
 * as the reference) replaces the reference as the undeformed shape.
 */
inline FitResult fit_to_target(const GpModel& model, const SurfaceMesh& target, const FitOptions& opt = {},
                               const SurfaceMesh* start = nullptr)
{
    if (target.vertices.empty()) {
        throw InvalidInput("cannot fit to an empty target");
    }
    const SurfaceMesh& base = start ? *start : model.reference;
    if (base.num_vertices() != model.reference.num_vertices()) {
        throw InvalidInput("fit start mesh does not match the model's vertex count");
    }
    const KdTree tree(target.vertices);
    const Eigen::MatrixXd b = model.scaled_basis();
    const Eigen::VectorXd y0 = to_shape_vector(base).coords();
    const auto m = static_cast<double>(base.num_vertices());
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(model.rank());
    Eigen::VectorXd paired(y0.size());
    std::vector<std::uint32_t> pairs(base.num_vertices(), 0);

    auto repair = [&](const Eigen::VectorXd& y) {
        bool changed = false;
        for (Eigen::Index i = 0; i < y.size() / 3; ++i) {
            const auto hit = tree.nearest(y.segment<3>(3 * i));
            auto& p = pairs[static_cast<std::size_t>(i)];
            changed = changed || p != hit.index;
            p = hit.index;
            paired.segment<3>(3 * i) = target.vertices[hit.index];
        }
        return changed;
    };
    const double reg = opt.reg_weight;
    auto objective = [&](const Eigen::VectorXd& a, Eigen::VectorXd& grad) {
        const Eigen::VectorXd r = y0 + b * a - paired;
        grad = (2.0 / m) * (b.transpose() * r) + 2.0 * reg * a;
        return r.squaredNorm() / m + reg * a.squaredNorm();
    };

    FitResult res;
    Eigen::VectorXd grad(alpha.size());
    for (int outer = 0; outer < opt.outer_iterations; ++outer) {
        const bool changed = repair(y0 + b * alpha);
        if (outer > 0 && !changed) {
            break;
        }
        auto lr = lbfgs_minimize(objective, alpha, opt.lbfgs);
        res.objective_history.insert(res.objective_history.end(), lr.history.begin(), lr.history.end());
        alpha = lr.x;
        res.iterations += lr.iterations;
        ++res.outer_iterations;
    }
    const Eigen::VectorXd y = y0 + b * alpha;
    repair(y);
    res.mse = (y - paired).squaredNorm() / m;
    res.coefficients = alpha;
    res.deformed_reference = from_shape_vector(y, base.triangles, base.labels);
    return res;
}

/// Staged fit: each model starts from the previous stage's deformed reference.
inline std::vector<FitResult> fit_sequential(std::span<const GpModel* const> models, const SurfaceMesh& target,
                                             const FitOptions& opt = {})
{
    std::vector<FitResult> stages;
    stages.reserve(models.size());
    const SurfaceMesh* start = nullptr;
    for (const auto* model : models) {
        stages.push_back(fit_to_target(*model, target, opt, start));
        start = &stages.back().deformed_reference;
    }
    return stages;
}

} // namespace ssm
