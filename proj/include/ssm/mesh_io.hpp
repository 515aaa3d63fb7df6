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

#include "ssm/io_util.hpp"
#include "ssm/mesh.hpp"

#include <filesystem>
#include <sstream>
#include <string>

namespace ssm {

/*
 * Mesh files use a subset of ASCII OFF:
 *
 *   OFF
 *   <num_vertices> <num_faces> <num_edges, ignored>
 *   x y z                      (one line per vertex)
 *   3 i j k                    (one line per face, triangles only)
 *   #LABELS                    (optional; one integer tag per vertex follows)
 *
 * Other lines starting with '#' are comments. Coordinates are written with 17
 * significant digits so a save/load round trip is bit-exact.
 */

inline std::string format_off(const SurfaceMesh& mesh)
{
    std::ostringstream os;
    os << "OFF\n" << mesh.vertices.size() << ' ' << mesh.triangles.size() << " 0\n";
    for (const auto& v : mesh.vertices) {
        io::put_double(os, v.x());
        os << ' ';
        io::put_double(os, v.y());
        os << ' ';
        io::put_double(os, v.z());
        os << '\n';
    }
    for (const auto& t : mesh.triangles) {
        os << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    }
    if (mesh.has_labels()) {
        os << "#LABELS\n";
        for (auto l : mesh.labels) {
            os << static_cast<int>(l) << '\n';
        }
    }
    return os.str();
}

inline SurfaceMesh parse_off(std::string_view text, const std::string& source = "<memory>")
{
    io::LineTokenizer lines(text, source);
    std::string_view line;

    auto next_data_line = [&](const char* expecting) {
        while (lines.next_line(line)) {
            if (line.front() == '#') {
                if (line.substr(0, 7) == "#LABELS") {
                    lines.fail(std::string("unexpected #LABELS block while reading ") + expecting);
                }
                continue;
            }
            return;
        }
        lines.fail(std::string("unexpected end of file while reading ") + expecting);
    };

    if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
        throw ParseError(source, 0, "empty mesh file");
    }
    next_data_line("header");
    auto header = io::split_ws(line);
    if (header.empty() || header[0] != "OFF") {
        lines.fail("expected 'OFF' header");
    }
    header.erase(header.begin());
    if (header.empty()) {
        next_data_line("counts");
        header = io::split_ws(line);
    }
    std::size_t nv = 0;
    std::size_t nf = 0;
    if (header.size() < 2 || !io::parse_int(header[0], nv) || !io::parse_int(header[1], nf)) {
        lines.fail("malformed counts line");
    }

    SurfaceMesh mesh;
    mesh.vertices.reserve(nv);
    for (std::size_t i = 0; i < nv; ++i) {
        next_data_line("vertices");
        const auto tok = io::split_ws(line);
        Vec3 p;
        if (tok.size() < 3 || !io::parse_double(tok[0], p.x()) || !io::parse_double(tok[1], p.y()) ||
            !io::parse_double(tok[2], p.z())) {
            lines.fail("malformed vertex " + std::to_string(i));
        }
        if (!p.allFinite()) {
            lines.fail("vertex " + std::to_string(i) + " has non-finite coordinates");
        }
        mesh.vertices.push_back(p);
    }
    mesh.triangles.reserve(nf);
    for (std::size_t f = 0; f < nf; ++f) {
        next_data_line("faces");
        const auto tok = io::split_ws(line);
        int arity = 0;
        if (tok.empty() || !io::parse_int(tok[0], arity)) {
            lines.fail("malformed face " + std::to_string(f));
        }
        if (arity != 3 || tok.size() < 4) {
            lines.fail("face " + std::to_string(f) + " is not a triangle");
        }
        Triangle t{};
        for (int k = 0; k < 3; ++k) {
            if (!io::parse_int(tok[static_cast<std::size_t>(k) + 1], t[static_cast<std::size_t>(k)])) {
                lines.fail("malformed index in face " + std::to_string(f));
            }
            if (t[static_cast<std::size_t>(k)] >= nv) {
                lines.fail("face " + std::to_string(f) + " references vertex " +
                           std::to_string(t[static_cast<std::size_t>(k)]) + " but only " +
                           std::to_string(nv) + " vertices exist");
            }
        }
        mesh.triangles.push_back(t);
    }

    bool in_labels = false;
    while (lines.next_line(line)) {
        if (line.front() == '#') {
            if (line.substr(0, 7) == "#LABELS") {
                if (in_labels) {
                    lines.fail("duplicate #LABELS block");
                }
                in_labels = true;
            }
            continue;
        }
        if (!in_labels) {
            lines.fail("trailing data after faces");
        }
        for (auto tok : io::split_ws(line)) {
            int tag = -1;
            if (!io::parse_int(tok, tag) || tag < 0 || tag >= label_count) {
                lines.fail("invalid label '" + std::string(tok) + "'");
            }
            mesh.labels.push_back(static_cast<Label>(tag));
        }
    }
    if (in_labels && mesh.labels.size() != nv) {
        throw ParseError(source, lines.line_number(),
                         "#LABELS block has " + std::to_string(mesh.labels.size()) + " entries for " +
                             std::to_string(nv) + " vertices");
    }
    try {
        validate(mesh);
    } catch (const InvalidInput& e) {
        throw ParseError(source, lines.line_number(), e.what());
    }
    return mesh;
}

inline SurfaceMesh load_mesh(const std::filesystem::path& path)
{
    return parse_off(io::read_file(path), path.string());
}

inline void save_mesh(const SurfaceMesh& mesh, const std::filesystem::path& path)
{
    io::write_file_atomic(path, format_off(mesh));
}

} // namespace ssm
