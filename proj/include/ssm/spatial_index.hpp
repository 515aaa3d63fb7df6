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

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace ssm {

/**
 * Exact nearest-neighbour search over a fixed 3D point set.
 *
 * Ties are resolved towards the lowest point index, so results are identical
 * to an exhaustive scan that keeps the first minimum. Read-only after
 * construction; safe to query from several threads.
 */
class KdTree
{
public:
    struct Hit
    {
        std::uint32_t index = 0;
        double sq_distance = std::numeric_limits<double>::infinity();
    };

    KdTree() = default;

    explicit KdTree(std::vector<Vec3> points) : points_(std::move(points))
    {
        order_.resize(points_.size());
        std::iota(order_.begin(), order_.end(), 0U);
        if (!points_.empty()) {
            nodes_.reserve(2 * points_.size() / leaf_size + 2);
            build(0, static_cast<std::uint32_t>(points_.size()));
        }
    }

    bool empty() const noexcept { return points_.empty(); }
    std::size_t size() const noexcept { return points_.size(); }
    const std::vector<Vec3>& points() const noexcept { return points_; }

    Hit nearest(const Vec3& q) const
    {
        if (points_.empty()) {
            throw InvalidInput("nearest-neighbour query on an empty point set");
        }
        Hit best;
        search(0, q, best);
        return best;
    }

    /// Indices of all points with distance <= radius, sorted ascending.
    std::vector<std::uint32_t> within_radius(const Vec3& q, double radius) const
    {
        std::vector<std::uint32_t> out;
        if (!points_.empty()) {
            collect(0, q, radius * radius, out);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    static constexpr std::uint32_t leaf_size = 8;

    struct Node
    {
        std::uint32_t begin = 0;
        std::uint32_t end = 0;
        std::int32_t axis = -1; // -1 for leaves
        double split = 0.0;
        std::uint32_t left = 0;
        std::uint32_t right = 0;
    };

    std::uint32_t build(std::uint32_t begin, std::uint32_t end)
    {
        const auto id = static_cast<std::uint32_t>(nodes_.size());
        nodes_.push_back({begin, end, -1, 0.0, 0, 0});
        if (end - begin <= leaf_size) {
            return id;
        }
        Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
        Vec3 hi = -lo;
        for (auto i = begin; i < end; ++i) {
            lo = lo.cwiseMin(points_[order_[i]]);
            hi = hi.cwiseMax(points_[order_[i]]);
        }
        Eigen::Index axis = 0;
        (hi - lo).maxCoeff(&axis);
        const auto mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
        const double split = points_[order_[mid]][axis];
        const auto left = build(begin, mid);
        const auto right = build(mid, end);
        auto& n = nodes_[id];
        n.axis = static_cast<std::int32_t>(axis);
        n.split = split;
        n.left = left;
        n.right = right;
        return id;
    }

    void search(std::uint32_t node_id, const Vec3& q, Hit& best) const
    {
        const Node& n = nodes_[node_id];
        if (n.axis < 0) {
            for (auto i = n.begin; i < n.end; ++i) {
                const auto idx = order_[i];
                const double d = (points_[idx] - q).squaredNorm();
                if (d < best.sq_distance || (d == best.sq_distance && idx < best.index)) {
                    best = {idx, d};
                }
            }
            return;
        }
        const double delta = q[n.axis] - n.split;
        const auto near = delta < 0.0 ? n.left : n.right;
        const auto far = delta < 0.0 ? n.right : n.left;
        search(near, q, best);
        // Equal distance must still be explored so that the lowest index wins.
        if (delta * delta <= best.sq_distance) {
            search(far, q, best);
        }
    }

    void collect(std::uint32_t node_id, const Vec3& q, double r2, std::vector<std::uint32_t>& out) const
    {
        const Node& n = nodes_[node_id];
        if (n.axis < 0) {
            for (auto i = n.begin; i < n.end; ++i) {
                if ((points_[order_[i]] - q).squaredNorm() <= r2) {
                    out.push_back(order_[i]);
                }
            }
            return;
        }
        const double delta = q[n.axis] - n.split;
        if (delta <= 0.0 || delta * delta <= r2) {
            collect(n.left, q, r2, out);
        }
        if (delta >= 0.0 || delta * delta <= r2) {
            collect(n.right, q, r2, out);
        }
    }

    std::vector<Vec3> points_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
};

} // namespace ssm
