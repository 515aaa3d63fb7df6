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

#include <cmath>
#include <deque>
#include <limits>
#include <sstream>
#include <vector>

namespace ssm {

struct LbfgsOptions
{
    int memory = 10;
    int max_iterations = 500;
    /// Converged when the infinity norm of the gradient drops below this.
    double gradient_tol = 1e-6;
    int max_line_search = 40;
    double armijo = 1e-4;
    double wolfe = 0.9;
};

struct LbfgsResult
{
    Eigen::VectorXd x;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
    /// Objective at the start point and at every accepted iterate.
    std::vector<double> history;
};

namespace detail {

inline std::string format_trace(const std::vector<double>& history)
{
    std::ostringstream os;
    os << "objective trace:";
    for (double v : history) {
        os << ' ' << v;
    }
    return os.str();
}

} // namespace detail

/**
 * Limited-memory BFGS with a bracketing line search enforcing the weak Wolfe
 * conditions. `objective(x, grad)` returns f(x) and writes the gradient.
 * Throws NumericalError if the objective becomes non-finite at an accepted
 * point or the line search cannot make progress from a non-stationary point.
 */
template <typename Objective>
LbfgsResult lbfgs_minimize(Objective&& objective, Eigen::VectorXd x0, const LbfgsOptions& opt = {})
{
    LbfgsResult res;
    res.x = std::move(x0);
    Eigen::VectorXd g(res.x.size());
    res.value = objective(res.x, g);
    res.history.push_back(res.value);
    if (!std::isfinite(res.value) || !g.allFinite()) {
        throw NumericalError("L-BFGS: non-finite objective at the start point; " +
                             detail::format_trace(res.history));
    }

    std::deque<Eigen::VectorXd> s_hist;
    std::deque<Eigen::VectorXd> y_hist;
    std::deque<double> rho_hist;
    Eigen::VectorXd x_new(res.x.size());
    Eigen::VectorXd g_new(res.x.size());

    for (int it = 0; it < opt.max_iterations; ++it) {
        if (res.x.size() == 0 || g.lpNorm<Eigen::Infinity>() < opt.gradient_tol) {
            res.converged = true;
            break;
        }
        // Two-loop recursion.
        Eigen::VectorXd d = -g;
        std::vector<double> alpha(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            alpha[static_cast<std::size_t>(i)] = rho_hist[static_cast<std::size_t>(i)] * s_hist[static_cast<std::size_t>(i)].dot(d);
            d -= alpha[static_cast<std::size_t>(i)] * y_hist[static_cast<std::size_t>(i)];
        }
        if (!s_hist.empty()) {
            d *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        }
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(d);
            d += (alpha[i] - beta) * s_hist[i];
        }
        double slope = g.dot(d);
        if (!(slope < 0.0)) {
            // Not a descent direction: restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = -g;
            slope = -g.squaredNorm();
        }

        double step = s_hist.empty() ? std::min(1.0, 1.0 / std::max(d.norm(), 1e-300)) : 1.0;
        double lo = 0.0;
        double hi = std::numeric_limits<double>::infinity();
        bool accepted = false;
        double f_new = 0.0;
        for (int ls = 0; ls < opt.max_line_search; ++ls) {
            x_new = res.x + step * d;
            f_new = objective(x_new, g_new);
            if (!std::isfinite(f_new) || f_new > res.value + opt.armijo * step * slope) {
                hi = step;
            } else if (g_new.dot(d) < opt.wolfe * slope) {
                lo = step;
            } else {
                accepted = true;
                break;
            }
            step = std::isinf(hi) ? 2.0 * lo : 0.5 * (lo + hi);
        }
        if (!accepted) {
            // Accept the best sufficient-decrease point if the bracket collapsed.
            if (lo > 0.0) {
                x_new = res.x + lo * d;
                f_new = objective(x_new, g_new);
            } else {
                break;
            }
        }
        if (!std::isfinite(f_new) || !g_new.allFinite()) {
            res.history.push_back(f_new);
            throw NumericalError("L-BFGS: objective diverged; " + detail::format_trace(res.history));
        }
        if (f_new > res.value) {
            break;
        }
        Eigen::VectorXd s = x_new - res.x;
        Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opt.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        const bool stalled = res.value - f_new <= 1e-16 * std::max(1.0, std::abs(res.value));
        res.x = x_new;
        g = g_new;
        res.value = f_new;
        res.history.push_back(f_new);
        ++res.iterations;
        if (stalled && g.lpNorm<Eigen::Infinity>() >= opt.gradient_tol) {
            break;
        }
    }
    if (g.lpNorm<Eigen::Infinity>() < opt.gradient_tol) {
        res.converged = true;
    }
    return res;
}

} // namespace ssm
