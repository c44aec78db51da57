// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "blockeig/csb.hpp"
#include "blockeig/thread_pool.hpp"

namespace blockeig {

/// One diagonal tile of the operator, stored as a full (both triangles)
/// coordinate list. Every diagonal slot is stored explicitly, even when its
/// value is zero, so a shift can always be folded into the stored values.
struct SparseTile {
    index_t dim = 0;
    std::vector<std::int32_t> rows, cols;
    std::vector<double> values;
    std::vector<index_t> diag_pos;  // diag_pos[i] = position of entry (i, i)

    /// y = T x for one column.
    void apply(std::span<const double> x, std::span<double> y) const {
        std::fill(y.begin(), y.end(), 0.0);
        for (std::size_t k = 0; k < values.size(); ++k)
            y[static_cast<std::size_t>(rows[k])] += values[k] * x[static_cast<std::size_t>(cols[k])];
    }
};

/// The block-diagonal preconditioner data: b shifted-able diagonal tiles
/// covering [0, n) plus their global starting offsets. Immutable once built.
struct DiagonalTileSet {
    std::vector<index_t> tile_offsets;  // length b + 1, tile_offsets[b] = n
    std::vector<SparseTile> tiles;

    index_t count() const { return static_cast<index_t>(tiles.size()); }
    index_t dim() const { return tile_offsets.empty() ? 0 : tile_offsets.back(); }

    /// tile size histogram data for reporting
    std::vector<index_t> sizes() const {
        std::vector<index_t> s;
        s.reserve(tiles.size());
        for (const auto& t : tiles) s.push_back(t.dim);
        return s;
    }
};

/// Krylov solve parameters for the per-tile preconditioner solves.
struct FomConfig {
    int iterations = 4;

    void validate() const {
        if (iterations < 1) throw BadParams("FomConfig: iterations must be >= 1");
    }
};

/// Cut the shifted diagonal tiles out of the half-stored operator. Tile j
/// receives exactly the entries of (L + L^T + diag(D)) with both indices in
/// [tile_offsets[j], tile_offsets[j+1]); couplings across tile boundaries
/// are dropped. Tiles may not straddle a row-block boundary of L.
inline DiagonalTileSet extract_tiles(const CsbCooMatrix& l, std::span<const double> d,
                                     const std::vector<index_t>& tile_offsets) {
    if (l.nrows != l.ncols) throw DimensionMismatch("extract_tiles: matrix must be square");
    if (static_cast<index_t>(d.size()) != l.nrows)
        throw DimensionMismatch("extract_tiles: diagonal length mismatch");
    if (tile_offsets.size() < 2 || tile_offsets.front() != 0 || tile_offsets.back() != l.nrows)
        throw BadParams("extract_tiles: tile offsets must cover [0, n)");
    for (std::size_t j = 1; j < tile_offsets.size(); ++j)
        if (tile_offsets[j] <= tile_offsets[j - 1])
            throw BadParams("extract_tiles: tile offsets must be strictly increasing");

    // nesting check: each tile inside one diagonal block of L
    {
        std::size_t blk = 0;
        for (std::size_t j = 0; j + 1 < tile_offsets.size(); ++j) {
            const index_t lo = tile_offsets[j], hi = tile_offsets[j + 1];
            while (blk + 1 < l.row_offsets.size() && l.row_offsets[blk + 1] <= lo) ++blk;
            if (hi > l.row_offsets[blk + 1])
                throw MisalignedTiles("extract_tiles: tile [" + std::to_string(lo) + ", " +
                                      std::to_string(hi) + ") straddles a block boundary");
        }
    }

    DiagonalTileSet set;
    set.tile_offsets = tile_offsets;
    const index_t b = static_cast<index_t>(tile_offsets.size()) - 1;
    set.tiles.resize(static_cast<std::size_t>(b));
    std::vector<std::int32_t> tile_of(static_cast<std::size_t>(l.nrows));
    for (index_t j = 0; j < b; ++j) {
        auto& t = set.tiles[static_cast<std::size_t>(j)];
        t.dim = tile_offsets[static_cast<std::size_t>(j) + 1] - tile_offsets[static_cast<std::size_t>(j)];
        for (index_t i = tile_offsets[static_cast<std::size_t>(j)]; i < tile_offsets[static_cast<std::size_t>(j) + 1]; ++i)
            tile_of[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(j);
    }

    for (const Triple& e : to_triples(l)) {
        if (e.row <= e.col)
            throw NotStrictlyLower("extract_tiles: stored entry with row <= col");
        const auto tj = tile_of[static_cast<std::size_t>(e.row)];
        if (tj != tile_of[static_cast<std::size_t>(e.col)]) continue;  // cross-tile coupling dropped
        auto& t = set.tiles[static_cast<std::size_t>(tj)];
        const auto base = set.tile_offsets[static_cast<std::size_t>(tj)];
        const auto lr = static_cast<std::int32_t>(e.row - base);
        const auto lc = static_cast<std::int32_t>(e.col - base);
        t.rows.push_back(lr);
        t.cols.push_back(lc);
        t.values.push_back(e.value);
        t.rows.push_back(lc);
        t.cols.push_back(lr);
        t.values.push_back(e.value);
    }
    // diagonal slots last, positions recorded for shift folding
    for (index_t j = 0; j < b; ++j) {
        auto& t = set.tiles[static_cast<std::size_t>(j)];
        t.diag_pos.resize(static_cast<std::size_t>(t.dim));
        const index_t base = set.tile_offsets[static_cast<std::size_t>(j)];
        for (index_t i = 0; i < t.dim; ++i) {
            t.diag_pos[static_cast<std::size_t>(i)] = static_cast<index_t>(t.values.size());
            t.rows.push_back(static_cast<std::int32_t>(i));
            t.cols.push_back(static_cast<std::int32_t>(i));
            t.values.push_back(d[static_cast<std::size_t>(base + i)]);
        }
    }
    return set;
}

namespace detail {

// Scratch for one Lanczos solve; reused across columns of a tile.
struct FomWorkspace {
    std::vector<double> shifted_values;
    std::vector<std::vector<double>> basis;
    std::vector<double> alpha, beta, w, y;
};

// m-step Lanczos-Galerkin approximation to (K - sigma I)^{-1} r for a single
// column. The shift is folded into the stored diagonal values up front, so a
// pre-shifted tile with sigma = 0 follows the identical arithmetic path.
// Throws SingularProjection when the projected tridiagonal system is
// numerically singular.
inline void fom_solve_column(const SparseTile& tile, double sigma, std::span<const double> r,
                             int m, std::span<double> out, FomWorkspace& ws) {
    const index_t d = tile.dim;
    double beta0 = 0.0;
    for (double x : r) beta0 += x * x;
    beta0 = std::sqrt(beta0);
    if (beta0 == 0.0) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }

    ws.shifted_values.assign(tile.values.begin(), tile.values.end());
    for (index_t i = 0; i < d; ++i)
        ws.shifted_values[static_cast<std::size_t>(tile.diag_pos[static_cast<std::size_t>(i)])] -= sigma;
    auto apply_shifted = [&](std::span<const double> x, std::span<double> y) {
        std::fill(y.begin(), y.end(), 0.0);
        for (std::size_t k = 0; k < ws.shifted_values.size(); ++k)
            y[static_cast<std::size_t>(tile.rows[k])] +=
                ws.shifted_values[k] * x[static_cast<std::size_t>(tile.cols[k])];
    };

    const int steps_cap = static_cast<int>(std::min<index_t>(m, d));
    ws.basis.assign(static_cast<std::size_t>(steps_cap) + 1, {});
    ws.alpha.assign(static_cast<std::size_t>(steps_cap), 0.0);
    ws.beta.assign(static_cast<std::size_t>(steps_cap), 0.0);
    ws.w.assign(static_cast<std::size_t>(d), 0.0);

    ws.basis[0].resize(static_cast<std::size_t>(d));
    for (index_t i = 0; i < d; ++i) ws.basis[0][static_cast<std::size_t>(i)] = r[static_cast<std::size_t>(i)] / beta0;

    int steps = steps_cap;
    for (int s = 0; s < steps_cap; ++s) {
        apply_shifted(ws.basis[static_cast<std::size_t>(s)], ws.w);
        double a = 0.0;
        for (index_t i = 0; i < d; ++i) a += ws.basis[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] * ws.w[static_cast<std::size_t>(i)];
        ws.alpha[static_cast<std::size_t>(s)] = a;
        if (s + 1 == steps_cap) break;  // T complete, no next basis vector needed
        for (index_t i = 0; i < d; ++i)
            ws.w[static_cast<std::size_t>(i)] -= a * ws.basis[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
        if (s > 0) {
            const double bprev = ws.beta[static_cast<std::size_t>(s - 1)];
            for (index_t i = 0; i < d; ++i)
                ws.w[static_cast<std::size_t>(i)] -= bprev * ws.basis[static_cast<std::size_t>(s - 1)][static_cast<std::size_t>(i)];
        }
        // one reorthogonalization pass keeps the basis usable at m ~ dim
        for (int t = 0; t <= s; ++t) {
            double proj = 0.0;
            for (index_t i = 0; i < d; ++i)
                proj += ws.basis[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] * ws.w[static_cast<std::size_t>(i)];
            for (index_t i = 0; i < d; ++i)
                ws.w[static_cast<std::size_t>(i)] -= proj * ws.basis[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
        }
        double nb = 0.0;
        for (index_t i = 0; i < d; ++i) nb += ws.w[static_cast<std::size_t>(i)] * ws.w[static_cast<std::size_t>(i)];
        nb = std::sqrt(nb);
        if (nb < 1e-14 * beta0) {  // breakdown: Krylov space is exhausted
            steps = s + 1;
            break;
        }
        ws.beta[static_cast<std::size_t>(s)] = nb;
        ws.basis[static_cast<std::size_t>(s) + 1].resize(static_cast<std::size_t>(d));
        for (index_t i = 0; i < d; ++i)
            ws.basis[static_cast<std::size_t>(s) + 1][static_cast<std::size_t>(i)] = ws.w[static_cast<std::size_t>(i)] / nb;
    }

    // solve T y = beta0 e1 by LU with partial pivoting (T may be indefinite);
    // T is tridiagonal, kept dense at these sizes
    const int s = steps;
    std::vector<double> t(static_cast<std::size_t>(s) * static_cast<std::size_t>(s), 0.0);
    auto T = [&](int i, int j) -> double& { return t[static_cast<std::size_t>(j) * s + i]; };
    double tmax = 0.0;
    for (int i = 0; i < s; ++i) {
        T(i, i) = ws.alpha[static_cast<std::size_t>(i)];
        tmax = std::max(tmax, std::abs(T(i, i)));
        if (i + 1 < s) {
            T(i, i + 1) = ws.beta[static_cast<std::size_t>(i)];
            T(i + 1, i) = ws.beta[static_cast<std::size_t>(i)];
            tmax = std::max(tmax, std::abs(T(i, i + 1)));
        }
    }
    const double pivot_floor = 1e-14 * std::max(1.0, tmax);
    ws.y.assign(static_cast<std::size_t>(s), 0.0);
    ws.y[0] = beta0;
    std::vector<int> perm(static_cast<std::size_t>(s));
    for (int i = 0; i < s; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (int col = 0; col < s; ++col) {
        int piv = col;
        for (int i = col + 1; i < s; ++i)
            if (std::abs(T(i, col)) > std::abs(T(piv, col))) piv = i;
        if (std::abs(T(piv, col)) < pivot_floor)
            throw SingularProjection("fom_solve_tile: projected tridiagonal system is singular");
        if (piv != col) {
            for (int j = 0; j < s; ++j) std::swap(T(col, j), T(piv, j));
            std::swap(ws.y[static_cast<std::size_t>(col)], ws.y[static_cast<std::size_t>(piv)]);
        }
        for (int i = col + 1; i < s; ++i) {
            const double f = T(i, col) / T(col, col);
            if (f == 0.0) continue;
            for (int j = col; j < s; ++j) T(i, j) -= f * T(col, j);
            ws.y[static_cast<std::size_t>(i)] -= f * ws.y[static_cast<std::size_t>(col)];
        }
    }
    for (int i = s - 1; i >= 0; --i) {
        double acc = ws.y[static_cast<std::size_t>(i)];
        for (int j = i + 1; j < s; ++j) acc -= T(i, j) * ws.y[static_cast<std::size_t>(j)];
        ws.y[static_cast<std::size_t>(i)] = acc / T(i, i);
    }

    std::fill(out.begin(), out.end(), 0.0);
    for (int j = 0; j < s; ++j) {
        const double yj = ws.y[static_cast<std::size_t>(j)];
        for (index_t i = 0; i < d; ++i)
            out[static_cast<std::size_t>(i)] += yj * ws.basis[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
    }
}

}  // namespace detail

/// Tile rows of W = (K_j - diag shifts)^{-1} R_j, one m-step Krylov solve
/// per column with that column's shift. Throws SingularProjection when a
/// projected system is singular; apply_preconditioner catches that per
/// column and falls back to the raw residual.
inline BlockVector fom_solve_tile(const SparseTile& tile, std::span<const double> sigma,
                                  const BlockVector& rj, int m) {
    if (rj.nrows != tile.dim) throw DimensionMismatch("fom_solve_tile: residual rows != tile dim");
    if (static_cast<index_t>(sigma.size()) != rj.nvec)
        throw DimensionMismatch("fom_solve_tile: one shift per column required");
    if (m < 1) throw BadParams("fom_solve_tile: need at least one iteration");
    BlockVector w(tile.dim, rj.nvec);
    detail::FomWorkspace ws;
    std::vector<double> rcol(static_cast<std::size_t>(tile.dim));
    std::vector<double> wcol(static_cast<std::size_t>(tile.dim));
    for (index_t v = 0; v < rj.nvec; ++v) {
        for (index_t i = 0; i < tile.dim; ++i) rcol[static_cast<std::size_t>(i)] = rj(i, v);
        detail::fom_solve_column(tile, sigma[static_cast<std::size_t>(v)], rcol, m, wcol, ws);
        for (index_t i = 0; i < tile.dim; ++i) w(i, v) = wcol[static_cast<std::size_t>(i)];
    }
    return w;
}

/// W = K^{-1} R assembled tile by tile. Tiles write disjoint row ranges and
/// may run on any worker; the result does not depend on processing order.
/// A column whose projected solve is singular falls back to its raw
/// residual; `fallbacks` (when given) counts such columns.
inline BlockVector apply_preconditioner(const DiagonalTileSet& tiles, std::span<const double> shifts,
                                        const BlockVector& r, const FomConfig& cfg,
                                        ThreadPool* pool = nullptr,
                                        std::int64_t* fallbacks = nullptr) {
    cfg.validate();
    if (r.nrows != tiles.dim()) throw DimensionMismatch("apply_preconditioner: residual rows != operator dim");
    if (static_cast<index_t>(shifts.size()) != r.nvec)
        throw DimensionMismatch("apply_preconditioner: one shift per column required");
    BlockVector w(r.nrows, r.nvec);
    std::atomic<std::int64_t> nfall{0};
    parallel_jobs(pool, tiles.count(), [&](index_t j, int) {
        const SparseTile& tile = tiles.tiles[static_cast<std::size_t>(j)];
        const index_t base = tiles.tile_offsets[static_cast<std::size_t>(j)];
        detail::FomWorkspace ws;
        std::vector<double> rcol(static_cast<std::size_t>(tile.dim));
        std::vector<double> wcol(static_cast<std::size_t>(tile.dim));
        for (index_t v = 0; v < r.nvec; ++v) {
            for (index_t i = 0; i < tile.dim; ++i) rcol[static_cast<std::size_t>(i)] = r(base + i, v);
            try {
                detail::fom_solve_column(tile, shifts[static_cast<std::size_t>(v)], rcol,
                                         cfg.iterations, wcol, ws);
            } catch (const SingularProjection&) {
                wcol = rcol;  // unpreconditioned fallback for this column
                nfall.fetch_add(1, std::memory_order_relaxed);
            }
            for (index_t i = 0; i < tile.dim; ++i) w(base + i, v) = wcol[static_cast<std::size_t>(i)];
        }
    });
    if (fallbacks) *fallbacks += nfall.load();
    return w;
}

}  // namespace blockeig
