// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "blockeig/block_vector.hpp"
#include "blockeig/errors.hpp"

namespace blockeig {

/// One nonzero of a sparse matrix in global coordinates.
struct Triple {
    index_t row = 0;
    index_t col = 0;
    double value = 0.0;
};

/// Largest allowed block extent: local within-block indices must fit
/// in 2 bytes.
inline constexpr index_t kMaxBlockExtent = 32000;

/// Compressed Sparse Block storage with per-block coordinate triples.
///
/// The matrix is partitioned into nrowblks x ncolblks rectangular blocks by
/// the row_offsets / col_offsets boundary arrays. A dense table holds each
/// block's nonzero count (block_nnz) and the exclusive prefix offset of its
/// elements (block_nnz_offsets) inside the flat local_rows / local_cols /
/// values arrays. Local indices are relative to the block origin and stored
/// as 16-bit integers, which caps every block extent at 32000. Immutable
/// after construction; safe to share across workers.
struct CsbCooMatrix {
    index_t nrows = 0;
    index_t ncols = 0;
    index_t nrowblks = 0;
    index_t ncolblks = 0;
    std::vector<index_t> row_offsets;        // length nrowblks + 1
    std::vector<index_t> col_offsets;        // length ncolblks + 1
    std::vector<index_t> block_nnz;          // row-major nrowblks x ncolblks
    std::vector<index_t> block_nnz_offsets;  // exclusive prefix, same shape
    std::vector<std::uint16_t> local_rows;
    std::vector<std::uint16_t> local_cols;
    std::vector<double> values;

    index_t nnz() const { return static_cast<index_t>(values.size()); }

    index_t block_index(index_t bi, index_t bj) const { return bi * ncolblks + bj; }
    index_t block_rows(index_t bi) const { return row_offsets[bi + 1] - row_offsets[bi]; }
    index_t block_cols(index_t bj) const { return col_offsets[bj + 1] - col_offsets[bj]; }

    double max_abs_value() const {
        double m = 0.0;
        for (double v : values) m = std::max(m, std::abs(v));
        return m;
    }
};

namespace detail {

inline void check_boundaries(const std::vector<index_t>& b, index_t n, const char* what) {
    if (b.size() < 2 || b.front() != 0 || b.back() != n)
        throw BadParams(std::string(what) + " boundaries must start at 0 and end at the dimension");
    for (std::size_t i = 1; i < b.size(); ++i) {
        if (b[i] <= b[i - 1]) throw BadParams(std::string(what) + " boundaries must be strictly increasing");
        if (b[i] - b[i - 1] > kMaxBlockExtent)
            throw BlockTooLarge(std::string(what) + " block extent exceeds 32000");
    }
}

// Map each global index to its block id; O(n) table, built once.
inline std::vector<std::int32_t> block_lookup(const std::vector<index_t>& boundaries) {
    std::vector<std::int32_t> lut(static_cast<std::size_t>(boundaries.back()));
    for (std::size_t b = 0; b + 1 < boundaries.size(); ++b)
        for (index_t i = boundaries[b]; i < boundaries[b + 1]; ++i)
            lut[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(b);
    return lut;
}

}  // namespace detail

/// Evenly sized block boundaries with extent at most `extent`.
inline std::vector<index_t> uniform_boundaries(index_t n, index_t extent) {
    if (n <= 0) throw BadParams("uniform_boundaries: empty dimension");
    if (extent <= 0 || extent > kMaxBlockExtent) throw BadParams("uniform_boundaries: bad extent");
    const index_t nblk = (n + extent - 1) / extent;
    std::vector<index_t> b(static_cast<std::size_t>(nblk) + 1);
    for (index_t i = 0; i <= nblk; ++i) b[static_cast<std::size_t>(i)] = std::min(n, i * extent);
    return b;
}

/// Group the given nonzeros by block (row-major block order), preserving the
/// input order inside each block. Duplicate coordinates are rejected.
inline CsbCooMatrix build_csb_coo(std::span<const Triple> triples, index_t nrows, index_t ncols,
                                  const std::vector<index_t>& block_rows,
                                  const std::vector<index_t>& block_cols) {
    detail::check_boundaries(block_rows, nrows, "row");
    detail::check_boundaries(block_cols, ncols, "column");

    CsbCooMatrix m;
    m.nrows = nrows;
    m.ncols = ncols;
    m.nrowblks = static_cast<index_t>(block_rows.size()) - 1;
    m.ncolblks = static_cast<index_t>(block_cols.size()) - 1;
    m.row_offsets = block_rows;
    m.col_offsets = block_cols;
    m.block_nnz.assign(static_cast<std::size_t>(m.nrowblks * m.ncolblks), 0);
    m.block_nnz_offsets.assign(static_cast<std::size_t>(m.nrowblks * m.ncolblks), 0);

    const auto row_lut = detail::block_lookup(block_rows);
    const auto col_lut = detail::block_lookup(block_cols);

    for (const Triple& t : triples) {
        if (t.row < 0 || t.row >= nrows || t.col < 0 || t.col >= ncols)
            throw IndexOutOfRange("build_csb_coo: entry (" + std::to_string(t.row) + ", " +
                                  std::to_string(t.col) + ") outside the matrix");
        const index_t b = m.block_index(row_lut[static_cast<std::size_t>(t.row)],
                                        col_lut[static_cast<std::size_t>(t.col)]);
        ++m.block_nnz[static_cast<std::size_t>(b)];
    }

    // duplicate detection: sort a key copy and scan neighbours
    {
        std::vector<std::uint64_t> keys;
        keys.reserve(triples.size());
        for (const Triple& t : triples)
            keys.push_back(static_cast<std::uint64_t>(t.row) * static_cast<std::uint64_t>(ncols) +
                           static_cast<std::uint64_t>(t.col));
        std::sort(keys.begin(), keys.end());
        if (std::adjacent_find(keys.begin(), keys.end()) != keys.end())
            throw DuplicateEntry("build_csb_coo: duplicate coordinate in input");
    }

    index_t acc = 0;
    for (std::size_t b = 0; b < m.block_nnz.size(); ++b) {
        m.block_nnz_offsets[b] = acc;
        acc += m.block_nnz[b];
    }

    m.local_rows.resize(triples.size());
    m.local_cols.resize(triples.size());
    m.values.resize(triples.size());
    std::vector<index_t> cursor = m.block_nnz_offsets;
    for (const Triple& t : triples) {
        const index_t bi = row_lut[static_cast<std::size_t>(t.row)];
        const index_t bj = col_lut[static_cast<std::size_t>(t.col)];
        const index_t k = cursor[static_cast<std::size_t>(m.block_index(bi, bj))]++;
        m.local_rows[static_cast<std::size_t>(k)] =
            static_cast<std::uint16_t>(t.row - block_rows[static_cast<std::size_t>(bi)]);
        m.local_cols[static_cast<std::size_t>(k)] =
            static_cast<std::uint16_t>(t.col - block_cols[static_cast<std::size_t>(bj)]);
        m.values[static_cast<std::size_t>(k)] = t.value;
    }
    return m;
}

/// Flatten back to global coordinate triples, block row-major, preserving
/// the intra-block order build_csb_coo kept.
inline std::vector<Triple> to_triples(const CsbCooMatrix& m) {
    std::vector<Triple> out;
    out.reserve(static_cast<std::size_t>(m.nnz()));
    for (index_t bi = 0; bi < m.nrowblks; ++bi) {
        for (index_t bj = 0; bj < m.ncolblks; ++bj) {
            const index_t b = m.block_index(bi, bj);
            const index_t begin = m.block_nnz_offsets[static_cast<std::size_t>(b)];
            const index_t end = begin + m.block_nnz[static_cast<std::size_t>(b)];
            for (index_t k = begin; k < end; ++k) {
                out.push_back({m.row_offsets[static_cast<std::size_t>(bi)] +
                                   m.local_rows[static_cast<std::size_t>(k)],
                               m.col_offsets[static_cast<std::size_t>(bj)] +
                                   m.local_cols[static_cast<std::size_t>(k)],
                               m.values[static_cast<std::size_t>(k)]});
            }
        }
    }
    return out;
}

/// True when every stored entry lies strictly below the diagonal.
inline bool is_strictly_lower(const CsbCooMatrix& m) {
    for (index_t bi = 0; bi < m.nrowblks; ++bi) {
        for (index_t bj = 0; bj < m.ncolblks; ++bj) {
            const index_t b = m.block_index(bi, bj);
            const index_t begin = m.block_nnz_offsets[static_cast<std::size_t>(b)];
            const index_t end = begin + m.block_nnz[static_cast<std::size_t>(b)];
            const index_t rbase = m.row_offsets[static_cast<std::size_t>(bi)];
            const index_t cbase = m.col_offsets[static_cast<std::size_t>(bj)];
            for (index_t k = begin; k < end; ++k) {
                if (rbase + m.local_rows[static_cast<std::size_t>(k)] <=
                    cbase + m.local_cols[static_cast<std::size_t>(k)])
                    return false;
            }
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Binary cache format ("CSB1"), little-endian:
//   magic "CSB1"
//   u64 nrows, ncols, nrowblks, ncolblks
//   row_offsets  (nrowblks+1) u64
//   col_offsets  (ncolblks+1) u64
//   block_nnz          row-major u64
//   block_nnz_offsets  row-major u64
//   (local_row u16, local_col u16) per nonzero
//   values f64
// ---------------------------------------------------------------------------

static_assert(__BYTE_ORDER__ == __ORDER_LITTLE_ENDIAN__,
              "CSB1 cache I/O assumes a little-endian host");

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw ParseError("CSB1 cache: truncated file");
    return v;
}

inline void write_u64s(std::ostream& os, const std::vector<index_t>& v) {
    for (index_t x : v) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(x));
}

inline std::vector<index_t> read_u64s(std::istream& is, std::size_t n) {
    std::vector<index_t> v(n);
    for (auto& x : v) x = static_cast<index_t>(read_pod<std::uint64_t>(is));
    return v;
}

}  // namespace detail

inline void save_csb(std::ostream& os, const CsbCooMatrix& m) {
    os.write("CSB1", 4);
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(m.nrows));
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(m.ncols));
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(m.nrowblks));
    detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(m.ncolblks));
    detail::write_u64s(os, m.row_offsets);
    detail::write_u64s(os, m.col_offsets);
    detail::write_u64s(os, m.block_nnz);
    detail::write_u64s(os, m.block_nnz_offsets);
    for (std::size_t k = 0; k < m.values.size(); ++k) {
        detail::write_pod<std::uint16_t>(os, m.local_rows[k]);
        detail::write_pod<std::uint16_t>(os, m.local_cols[k]);
    }
    os.write(reinterpret_cast<const char*>(m.values.data()),
             static_cast<std::streamsize>(m.values.size() * sizeof(double)));
}

inline CsbCooMatrix load_csb(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CSB1", 4) != 0) throw ParseError("CSB1 cache: bad magic");
    CsbCooMatrix m;
    m.nrows = static_cast<index_t>(detail::read_pod<std::uint64_t>(is));
    m.ncols = static_cast<index_t>(detail::read_pod<std::uint64_t>(is));
    m.nrowblks = static_cast<index_t>(detail::read_pod<std::uint64_t>(is));
    m.ncolblks = static_cast<index_t>(detail::read_pod<std::uint64_t>(is));
    m.row_offsets = detail::read_u64s(is, static_cast<std::size_t>(m.nrowblks) + 1);
    m.col_offsets = detail::read_u64s(is, static_cast<std::size_t>(m.ncolblks) + 1);
    const std::size_t nb = static_cast<std::size_t>(m.nrowblks * m.ncolblks);
    m.block_nnz = detail::read_u64s(is, nb);
    m.block_nnz_offsets = detail::read_u64s(is, nb);
    const index_t nnz = std::accumulate(m.block_nnz.begin(), m.block_nnz.end(), index_t{0});
    m.local_rows.resize(static_cast<std::size_t>(nnz));
    m.local_cols.resize(static_cast<std::size_t>(nnz));
    m.values.resize(static_cast<std::size_t>(nnz));
    for (index_t k = 0; k < nnz; ++k) {
        m.local_rows[static_cast<std::size_t>(k)] = detail::read_pod<std::uint16_t>(is);
        m.local_cols[static_cast<std::size_t>(k)] = detail::read_pod<std::uint16_t>(is);
    }
    is.read(reinterpret_cast<char*>(m.values.data()),
            static_cast<std::streamsize>(m.values.size() * sizeof(double)));
    if (!is) throw ParseError("CSB1 cache: truncated values");
    return m;
}

inline void save_csb_file(const std::string& path, const CsbCooMatrix& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open " + path + " for writing");
    save_csb(os, m);
}

inline CsbCooMatrix load_csb_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open " + path);
    return load_csb(is);
}

}  // namespace blockeig
