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
#include "ssm/pdm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace ssm {

inline std::vector<double> vertex_distances(const ShapeVector& a, const ShapeVector& b)
{
    if (a.size() != b.size()) {
        throw InvalidInput("cannot compare shapes with " + std::to_string(a.num_points()) + " and " +
                           std::to_string(b.num_points()) + " points");
    }
    std::vector<double> d(static_cast<std::size_t>(a.num_points()));
    for (Eigen::Index m = 0; m < a.num_points(); ++m) {
        d[static_cast<std::size_t>(m)] = (a.point(m) - b.point(m)).norm();
    }
    return d;
}

inline double rmse(std::span<const double> distances)
{
    if (distances.empty()) {
        return 0.0;
    }
    double acc = 0.0;
    for (double d : distances) {
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(distances.size()));
}

/// Linear-interpolation percentile of sorted values, p in [0, 100].
inline double percentile_sorted(std::span<const double> sorted, double p)
{
    if (sorted.empty()) {
        throw InvalidInput("percentile of an empty list");
    }
    const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Boxplot summary with 1.5 IQR whiskers.
struct BoxStats
{
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double p95 = 0.0;
    double max = 0.0;
    double whisker_lo = 0.0;
    double whisker_hi = 0.0;
    std::size_t outliers = 0;
};

inline BoxStats box_stats(std::vector<double> v)
{
    if (v.empty()) {
        throw InvalidInput("box statistics of an empty list");
    }
    std::sort(v.begin(), v.end());
    BoxStats s;
    s.min = v.front();
    s.max = v.back();
    s.q1 = percentile_sorted(v, 25.0);
    s.median = percentile_sorted(v, 50.0);
    s.q3 = percentile_sorted(v, 75.0);
    s.p95 = percentile_sorted(v, 95.0);
    const double iqr = s.q3 - s.q1;
    const double lo_fence = s.q1 - 1.5 * iqr;
    const double hi_fence = s.q3 + 1.5 * iqr;
    s.whisker_lo = s.max;
    s.whisker_hi = s.min;
    for (double x : v) {
        if (x < lo_fence || x > hi_fence) {
            ++s.outliers;
        } else {
            s.whisker_lo = std::min(s.whisker_lo, x);
            s.whisker_hi = std::max(s.whisker_hi, x);
        }
    }
    return s;
}

struct LooInstance
{
    std::size_t index = 0;
    std::vector<double> distances;
    BoxStats stats;
    double rmse = 0.0;
};

struct LooOptions
{
    /// Modes used for reconstruction; negative uses every mode of the reduced model.
    Eigen::Index k_modes = -1;
    unsigned jobs = 1;
};

/// Leave-one-out: rebuild without shape n, project and reconstruct shape n.
inline std::vector<LooInstance> generalization_loo(std::span<const ShapeVector> corpus, const LooOptions& opt = {})
{
    if (corpus.size() < 3) {
        throw InvalidInput("leave-one-out needs at least 3 shapes, got " + std::to_string(corpus.size()));
    }
    std::vector<LooInstance> out(corpus.size());
    parallel_for(corpus.size(), opt.jobs, [&](std::size_t n) {
        std::vector<ShapeVector> rest;
        rest.reserve(corpus.size() - 1);
        for (std::size_t j = 0; j < corpus.size(); ++j) {
            if (j != n) {
                rest.push_back(corpus[j]);
            }
        }
        const auto model = build_pdm(rest);
        const auto k = opt.k_modes < 0 ? model.num_modes() : std::min(opt.k_modes, model.num_modes());
        const auto rec = reconstruct(model, project(model, corpus[n]), k);
        auto& inst = out[n];
        inst.index = n;
        inst.distances = vertex_distances(corpus[n], rec);
        inst.stats = box_stats(inst.distances);
        inst.rmse = rmse(inst.distances);
    });
    return out;
}

struct SpecificityOptions
{
    std::size_t n_samples = 1000;
    std::uint64_t seed = 1;
    /// Empty means [-3, 3] for every mode.
    std::vector<Interval> bounds;
    unsigned jobs = 1;
};

struct SpecificityReport
{
    /// rmse of each sample to its closest corpus shape.
    std::vector<double> rmse;
    std::vector<std::size_t> closest;
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    double sd = 0.0;
};

inline SpecificityReport specificity(const PdmModel& model, std::span<const ShapeVector> corpus,
                                     const SpecificityOptions& opt = {})
{
    if (corpus.empty()) {
        throw InvalidInput("specificity needs a non-empty corpus");
    }
    if (opt.n_samples == 0) {
        throw InvalidInput("specificity needs at least one sample");
    }
    SpecificityReport rep;
    rep.rmse.resize(opt.n_samples);
    rep.closest.resize(opt.n_samples);
    parallel_for(opt.n_samples, opt.jobs, [&](std::size_t i) {
        const auto s = sample(model, derive_seed(opt.seed, i), opt.bounds);
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t n = 0; n < corpus.size(); ++n) {
            const double e = rmse(vertex_distances(s.shape, corpus[n]));
            if (e < best) {
                best = e;
                arg = n;
            }
        }
        rep.rmse[i] = best;
        rep.closest[i] = arg;
    });
    const auto [lo, hi] = std::minmax_element(rep.rmse.begin(), rep.rmse.end());
    rep.min = *lo;
    rep.max = *hi;
    rep.mean = std::accumulate(rep.rmse.begin(), rep.rmse.end(), 0.0) / static_cast<double>(rep.rmse.size());
    double ss = 0.0;
    for (double e : rep.rmse) {
        ss += (e - rep.mean) * (e - rep.mean);
    }
    rep.sd = rep.rmse.size() > 1 ? std::sqrt(ss / static_cast<double>(rep.rmse.size() - 1)) : 0.0;
    return rep;
}

inline std::vector<double> compactness(const PdmModel& model) { return cumulative_variance(model.eigenvalues); }

struct EvalReport
{
    std::vector<LooInstance> generalization;
    SpecificityReport specificity;
    std::vector<double> compactness;
};

inline void write_generalization_csv(std::ostream& os, std::span<const LooInstance> loo)
{
    os << "instance,median,q1,q3,p95,whisker_lo,whisker_hi,outliers,max,rmse\n";
    for (const auto& l : loo) {
        os << l.index;
        for (double v : {l.stats.median, l.stats.q1, l.stats.q3, l.stats.p95, l.stats.whisker_lo, l.stats.whisker_hi}) {
            os << ',';
            io::put_double(os, v);
        }
        os << ',' << l.stats.outliers << ',';
        io::put_double(os, l.stats.max);
        os << ',';
        io::put_double(os, l.rmse);
        os << '\n';
    }
}

inline void write_specificity_csv(std::ostream& os, const SpecificityReport& rep)
{
    os << "sample,rmse,closest\n";
    for (std::size_t i = 0; i < rep.rmse.size(); ++i) {
        os << i << ',';
        io::put_double(os, rep.rmse[i]);
        os << ',' << rep.closest[i] << '\n';
    }
}

inline void write_compactness_csv(std::ostream& os, std::span<const double> curve)
{
    os << "modes,cumulative_variance\n";
    for (std::size_t k = 0; k < curve.size(); ++k) {
        os << k + 1 << ',';
        io::put_double(os, curve[k]);
        os << '\n';
    }
}

/// Short key = value summary of a full evaluation.
inline void write_summary(std::ostream& os, const EvalReport& rep)
{
    if (!rep.generalization.empty()) {
        std::vector<double> medians;
        for (const auto& l : rep.generalization) {
            medians.push_back(l.stats.median);
        }
        const auto s = box_stats(medians);
        os << "generalization.instances = " << rep.generalization.size() << '\n';
        os << "generalization.median_of_medians_mm = " << s.median << '\n';
        os << "generalization.max_median_mm = " << s.max << '\n';
    }
    if (!rep.specificity.rmse.empty()) {
        os << "specificity.samples = " << rep.specificity.rmse.size() << '\n';
        os << "specificity.min_mm = " << rep.specificity.min << '\n';
        os << "specificity.max_mm = " << rep.specificity.max << '\n';
        os << "specificity.mean_mm = " << rep.specificity.mean << '\n';
        os << "specificity.sd_mm = " << rep.specificity.sd << '\n';
    }
    if (!rep.compactness.empty()) {
        os << "compactness.modes = " << rep.compactness.size() << '\n';
        for (int pct : {90, 95}) {
            const double f = pct / 100.0;
            const auto it = std::find_if(rep.compactness.begin(), rep.compactness.end(), [&](double c) { return c >= f; });
            os << "compactness.modes_for_" << pct << " = " << (it - rep.compactness.begin()) + 1 << '\n';
        }
    }
}

} // namespace ssm
