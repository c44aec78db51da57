// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "blockeig/csb.hpp"

namespace blockeig {

/// A symmetric matrix normalized to strictly-lower triples plus a dense
/// diagonal array: the library's interchange form.
struct SymmetricCoo {
    index_t n = 0;
    std::vector<Triple> lower;
    std::vector<double> diag;
};

namespace detail {

inline std::string lower_ascii(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace detail

/// Read a coordinate-format real symmetric Matrix Market stream. Entries
/// given in either triangle are normalized to strictly-lower + diagonal.
inline SymmetricCoo ingest_matrix_market(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError("matrix market: empty input");
    std::istringstream banner(line);
    std::string tag, object, format, field, symmetry;
    banner >> tag >> object >> format >> field >> symmetry;
    if (detail::lower_ascii(tag) != "%%matrixmarket" || detail::lower_ascii(object) != "matrix")
        throw ParseError("matrix market: bad banner line");
    if (detail::lower_ascii(format) != "coordinate")
        throw ParseError("matrix market: only coordinate format is supported");
    const std::string f = detail::lower_ascii(field);
    if (f != "real" && f != "integer")
        throw ParseError("matrix market: only real or integer fields are supported");
    if (detail::lower_ascii(symmetry) != "symmetric")
        throw NotSymmetricHeader("matrix market: header must declare a symmetric matrix");

    while (std::getline(is, line)) {
        if (!line.empty() && line[0] != '%') break;
    }
    std::istringstream sizes(line);
    index_t nrows = 0, ncols = 0, nnz = 0;
    if (!(sizes >> nrows >> ncols >> nnz)) throw ParseError("matrix market: bad size line");
    if (nrows != ncols) throw ParseError("matrix market: symmetric matrix must be square");
    if (nrows <= 0) throw ParseError("matrix market: empty matrix");

    SymmetricCoo out;
    out.n = nrows;
    out.diag.assign(static_cast<std::size_t>(nrows), 0.0);
    std::vector<std::uint8_t> diag_seen(static_cast<std::size_t>(nrows), 0);
    out.lower.reserve(static_cast<std::size_t>(nnz));
    for (index_t e = 0; e < nnz; ++e) {
        index_t i = 0, j = 0;
        double v = 0.0;
        if (!(is >> i >> j >> v)) throw ParseError("matrix market: truncated entry list");
        if (i < 1 || i > nrows || j < 1 || j > ncols)
            throw ParseError("matrix market: entry index out of range");
        --i;
        --j;
        if (i == j) {
            if (diag_seen[static_cast<std::size_t>(i)])
                throw DuplicateEntry("matrix market: repeated diagonal entry");
            diag_seen[static_cast<std::size_t>(i)] = 1;
            out.diag[static_cast<std::size_t>(i)] = v;
        } else if (i > j) {
            out.lower.push_back({i, j, v});
        } else {
            out.lower.push_back({j, i, v});  // upper-given entry mirrored
        }
    }
    return out;
}

inline SymmetricCoo ingest_matrix_market_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open " + path);
    return ingest_matrix_market(is);
}

/// Write the strictly-lower + diagonal form back out (nonzero diagonal
/// entries only).
inline void write_matrix_market(std::ostream& os, const SymmetricCoo& m) {
    os << "%%MatrixMarket matrix coordinate real symmetric\n";
    index_t diag_nnz = 0;
    for (double d : m.diag)
        if (d != 0.0) ++diag_nnz;
    os << m.n << ' ' << m.n << ' ' << (static_cast<index_t>(m.lower.size()) + diag_nnz) << '\n';
    os.precision(17);
    for (const Triple& t : m.lower) os << (t.row + 1) << ' ' << (t.col + 1) << ' ' << t.value << '\n';
    for (index_t i = 0; i < m.n; ++i)
        if (m.diag[static_cast<std::size_t>(i)] != 0.0)
            os << (i + 1) << ' ' << (i + 1) << ' ' << m.diag[static_cast<std::size_t>(i)] << '\n';
}

}  // namespace blockeig
