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
#include "ssm/gpmm.hpp"
#include "ssm/io_util.hpp"
#include "ssm/pdm.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>
#include <variant>

namespace ssm {

/*
 * SSMC1 container, all integers and floats little-endian:
 *
 *   "SSMC1"                         5 bytes
 *   version        u32              currently 1
 *   type           u32              1 = point-distribution model, 2 = Gaussian-process model
 *   n_training     u64              shapes used to build (0 for GP models)
 *   n_points       u64              M
 *   n_modes        u64              K
 *   n_triangles    u64              T
 *   n_labels       u64              0 or M
 *   divisor        f64              covariance divisor (N - 1), 0 for GP models
 *   captured       f64              captured kernel variance (GP), 1 for PDM
 *   mean           f64[3M]          mean shape / GP reference vertices
 *   eigenvalues    f64[K]
 *   eigenvectors   f64[3M * K]      row-major
 *   triangles      u32[3T]
 *   labels         u8[n_labels]
 */
enum class ModelType : std::uint32_t { Pdm = 1, Gp = 2 };

inline constexpr std::string_view model_magic = "SSMC1";
inline constexpr std::uint32_t model_version = 1;

namespace detail {

class ByteWriter
{
public:
    template <typename T>
    void put(T v)
    {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                     std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
        auto u = std::bit_cast<U>(v);
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            buf_.push_back(static_cast<char>(u & 0xFFU));
            u = static_cast<U>(u >> 8U);
        }
    }
    void raw(std::string_view s) { buf_.append(s); }
    std::string& str() { return buf_; }

private:
    std::string buf_;
};

class ByteReader
{
public:
    ByteReader(std::string_view data, std::string source) : data_(data), source_(std::move(source)) {}

    template <typename T>
    T get(const char* what)
    {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                     std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
        need(sizeof(T), what);
        U u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            u |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8U * i));
        }
        pos_ += sizeof(T);
        return std::bit_cast<T>(u);
    }
    std::string_view raw(std::size_t n, const char* what)
    {
        need(n, what);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return data_.size() - pos_; }
    [[noreturn]] void fail(const std::string& what) const { throw ParseError(source_, 0, what); }

private:
    void need(std::size_t n, const char* what) const
    {
        if (remaining() < n) {
            fail(std::string("truncated model file while reading ") + what);
        }
    }
    std::string_view data_;
    std::size_t pos_ = 0;
    std::string source_;
};

struct ModelPayload
{
    ModelType type = ModelType::Pdm;
    std::uint64_t n_training = 0;
    double divisor = 0.0;
    double captured = 1.0;
    Eigen::VectorXd mean;
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd eigenvectors;
    std::vector<Triangle> triangles;
    std::vector<Label> labels;
};

inline std::string encode(const ModelPayload& p)
{
    ByteWriter w;
    w.raw(model_magic);
    w.put(model_version);
    w.put(static_cast<std::uint32_t>(p.type));
    w.put(p.n_training);
    w.put(static_cast<std::uint64_t>(p.mean.size() / 3));
    w.put(static_cast<std::uint64_t>(p.eigenvalues.size()));
    w.put(static_cast<std::uint64_t>(p.triangles.size()));
    w.put(static_cast<std::uint64_t>(p.labels.size()));
    w.put(p.divisor);
    w.put(p.captured);
    for (Eigen::Index i = 0; i < p.mean.size(); ++i) {
        w.put(p.mean(i));
    }
    for (Eigen::Index i = 0; i < p.eigenvalues.size(); ++i) {
        w.put(p.eigenvalues(i));
    }
    for (Eigen::Index r = 0; r < p.eigenvectors.rows(); ++r) {
        for (Eigen::Index c = 0; c < p.eigenvectors.cols(); ++c) {
            w.put(p.eigenvectors(r, c));
        }
    }
    for (const auto& t : p.triangles) {
        for (auto v : t) {
            w.put(v);
        }
    }
    for (auto l : p.labels) {
        w.put(static_cast<std::uint8_t>(l));
    }
    return std::move(w.str());
}

inline ModelPayload decode(std::string_view data, const std::string& source)
{
    ByteReader r(data, source);
    if (r.raw(model_magic.size(), "magic") != model_magic) {
        r.fail("not an SSMC1 model file");
    }
    const auto version = r.get<std::uint32_t>("version");
    if (version != model_version) {
        r.fail("unsupported model version " + std::to_string(version));
    }
    ModelPayload p;
    const auto type = r.get<std::uint32_t>("type tag");
    if (type != 1 && type != 2) {
        r.fail("unknown model type tag " + std::to_string(type));
    }
    p.type = static_cast<ModelType>(type);
    p.n_training = r.get<std::uint64_t>("training count");
    const auto m = r.get<std::uint64_t>("point count");
    const auto k = r.get<std::uint64_t>("mode count");
    const auto t = r.get<std::uint64_t>("triangle count");
    const auto nl = r.get<std::uint64_t>("label count");
    p.divisor = r.get<double>("divisor");
    p.captured = r.get<double>("captured variance");

    // Validate counts against the file size before allocating anything.
    constexpr std::uint64_t cap = std::uint64_t{1} << 40;
    if (m == 0 || m > cap || k > cap || t > cap || nl > cap) {
        r.fail("implausible counts in model header");
    }
    if (nl != 0 && nl != m) {
        r.fail("label count " + std::to_string(nl) + " does not match point count " + std::to_string(m));
    }
    if (k > 3 * m) {
        r.fail("mode count exceeds the shape dimension");
    }
    const long double expected = 8.0L * (3.0L * m + k + 3.0L * m * k) + 12.0L * t + nl;
    if (expected != static_cast<long double>(r.remaining())) {
        r.fail("model file size does not match its header: expected " +
               std::to_string(static_cast<unsigned long long>(expected)) + " payload bytes, found " +
               std::to_string(r.remaining()));
    }

    const auto dim = static_cast<Eigen::Index>(3 * m);
    const auto modes = static_cast<Eigen::Index>(k);
    p.mean.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
        p.mean(i) = r.get<double>("mean");
    }
    p.eigenvalues.resize(modes);
    for (Eigen::Index i = 0; i < modes; ++i) {
        p.eigenvalues(i) = r.get<double>("eigenvalues");
    }
    p.eigenvectors.resize(dim, modes);
    for (Eigen::Index row = 0; row < dim; ++row) {
        for (Eigen::Index c = 0; c < modes; ++c) {
            p.eigenvectors(row, c) = r.get<double>("eigenvectors");
        }
    }
    p.triangles.resize(t);
    for (auto& tri : p.triangles) {
        for (auto& v : tri) {
            v = r.get<std::uint32_t>("triangles");
            if (v >= m) {
                r.fail("triangle references vertex " + std::to_string(v) + " beyond " + std::to_string(m));
            }
        }
    }
    p.labels.resize(nl);
    for (auto& l : p.labels) {
        const auto raw = r.get<std::uint8_t>("labels");
        if (raw >= label_count) {
            r.fail("invalid label tag " + std::to_string(raw));
        }
        l = static_cast<Label>(raw);
    }
    if (!p.mean.allFinite() || !p.eigenvalues.allFinite() || !p.eigenvectors.allFinite()) {
        r.fail("model arrays contain non-finite values");
    }
    return p;
}

} // namespace detail

inline std::string encode_model(const PdmModel& model)
{
    return detail::encode({ModelType::Pdm, static_cast<std::uint64_t>(model.n_training), model.divisor, 1.0,
                           model.mean, model.eigenvalues, model.eigenvectors, model.topology, model.labels});
}

inline std::string encode_model(const GpModel& model)
{
    return detail::encode({ModelType::Gp, 0, 0.0, model.captured_variance, to_shape_vector(model.reference).coords(),
                           model.eigenvalues, model.basis, model.reference.triangles, model.reference.labels});
}

/// Type tag of an encoded model, without decoding the arrays.
inline ModelType peek_model_type(std::string_view data, const std::string& source = "<model>")
{
    detail::ByteReader r(data, source);
    if (r.raw(model_magic.size(), "magic") != model_magic) {
        r.fail("not an SSMC1 model file");
    }
    r.get<std::uint32_t>("version");
    const auto type = r.get<std::uint32_t>("type tag");
    if (type != 1 && type != 2) {
        r.fail("unknown model type tag " + std::to_string(type));
    }
    return static_cast<ModelType>(type);
}

inline PdmModel decode_pdm(std::string_view data, const std::string& source = "<model>")
{
    auto p = detail::decode(data, source);
    if (p.type != ModelType::Pdm) {
        throw ParseError(source, 0, "model file holds a Gaussian-process model, expected a shape model");
    }
    PdmModel m;
    m.mean = std::move(p.mean);
    m.eigenvalues = std::move(p.eigenvalues);
    m.eigenvectors = std::move(p.eigenvectors);
    m.topology = std::move(p.triangles);
    m.labels = std::move(p.labels);
    m.n_training = static_cast<std::int64_t>(p.n_training);
    m.divisor = p.divisor;
    return m;
}

inline GpModel decode_gp(std::string_view data, const std::string& source = "<model>")
{
    auto p = detail::decode(data, source);
    if (p.type != ModelType::Gp) {
        throw ParseError(source, 0, "model file holds a shape model, expected a Gaussian-process model");
    }
    GpModel m;
    m.reference = from_shape_vector(p.mean, p.triangles, p.labels);
    m.eigenvalues = std::move(p.eigenvalues);
    m.basis = std::move(p.eigenvectors);
    m.captured_variance = p.captured;
    return m;
}

inline void save_model(const PdmModel& model, const std::filesystem::path& path)
{
    io::write_file_atomic(path, encode_model(model));
}

inline void save_model(const GpModel& model, const std::filesystem::path& path)
{
    io::write_file_atomic(path, encode_model(model));
}

inline PdmModel load_pdm(const std::filesystem::path& path) { return decode_pdm(io::read_file(path), path.string()); }

inline GpModel load_gp(const std::filesystem::path& path) { return decode_gp(io::read_file(path), path.string()); }

} // namespace ssm
