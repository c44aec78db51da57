// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "blockeig/errors.hpp"

namespace blockeig {

using index_t = std::int64_t;

/// A block of nvec dense vectors of length nrows, stored row-major:
/// all nvec components of row r are contiguous, element (r, v) lives at
/// data[r * nvec + v]. This is the multivector layout all kernels assume.
struct BlockVector {
    index_t nrows = 0;
    index_t nvec = 0;
    std::vector<double> data;

    BlockVector() = default;
    BlockVector(index_t rows, index_t vecs)
        : nrows(rows), nvec(vecs), data(static_cast<std::size_t>(rows * vecs), 0.0) {}

    static BlockVector zeros(index_t rows, index_t vecs) { return BlockVector(rows, vecs); }

    double& operator()(index_t r, index_t v) { return data[static_cast<std::size_t>(r * nvec + v)]; }
    double operator()(index_t r, index_t v) const { return data[static_cast<std::size_t>(r * nvec + v)]; }

    double* row(index_t r) { return data.data() + r * nvec; }
    const double* row(index_t r) const { return data.data() + r * nvec; }

    void set_zero() { std::fill(data.begin(), data.end(), 0.0); }

    bool same_shape(const BlockVector& o) const { return nrows == o.nrows && nvec == o.nvec; }
};

inline void require_same_shape(const BlockVector& a, const BlockVector& b, const char* where) {
    if (!a.same_shape(b))
        throw DimensionMismatch(std::string(where) + ": multivector shapes differ");
}

/// Uniform random entries in [-1, 1], deterministic under seed.
inline BlockVector random_block(index_t nrows, index_t nvec, std::uint64_t seed) {
    BlockVector x(nrows, nvec);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& v : x.data) v = dist(rng);
    return x;
}

inline double column_norm(const BlockVector& x, index_t v) {
    double s = 0.0;
    for (index_t r = 0; r < x.nrows; ++r) {
        const double e = x(r, v);
        s += e * e;
    }
    return std::sqrt(s);
}

inline void scale_column(BlockVector& x, index_t v, double alpha) {
    for (index_t r = 0; r < x.nrows; ++r) x(r, v) *= alpha;
}

inline double frobenius_norm(const BlockVector& x) {
    double s = 0.0;
    for (double e : x.data) s += e * e;
    return std::sqrt(s);
}

inline double max_abs(const BlockVector& x) {
    double m = 0.0;
    for (double e : x.data) m = std::max(m, std::abs(e));
    return m;
}

/// Relative Frobenius distance ||a - b||_F / max(||a||_F, ||b||_F, tiny).
inline double rel_frobenius_distance(const BlockVector& a, const BlockVector& b) {
    require_same_shape(a, b, "rel_frobenius_distance");
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        diff += d * d;
        na += a.data[i] * a.data[i];
        nb += b.data[i] * b.data[i];
    }
    const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-300});
    return std::sqrt(diff) / scale;
}

}  // namespace blockeig
