// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "blockeig/kernels.hpp"
#include "blockeig/precond.hpp"
#include "oracles.hpp"

using namespace blockeig;

namespace {

// dense Gaussian-elimination solve, test-side oracle
std::vector<double> dense_solve(oracle::Dense a, std::vector<double> b) {
    const index_t n = a.nrows;
    for (index_t col = 0; col < n; ++col) {
        index_t piv = col;
        for (index_t i = col + 1; i < n; ++i)
            if (std::abs(a.at(i, col)) > std::abs(a.at(piv, col))) piv = i;
        if (piv != col) {
            for (index_t j = 0; j < n; ++j) std::swap(a.at(col, j), a.at(piv, j));
            std::swap(b[static_cast<std::size_t>(col)], b[static_cast<std::size_t>(piv)]);
        }
        for (index_t i = col + 1; i < n; ++i) {
            const double f = a.at(i, col) / a.at(col, col);
            if (f == 0.0) continue;
            for (index_t j = col; j < n; ++j) a.at(i, j) -= f * a.at(col, j);
            b[static_cast<std::size_t>(i)] -= f * b[static_cast<std::size_t>(col)];
        }
    }
    for (index_t i = n - 1; i >= 0; --i) {
        double s = b[static_cast<std::size_t>(i)];
        for (index_t j = i + 1; j < n; ++j) s -= a.at(i, j) * b[static_cast<std::size_t>(j)];
        b[static_cast<std::size_t>(i)] = s / a.at(i, i);
    }
    return b;
}

SparseTile tile_from_dense(const oracle::Dense& d) {
    SparseTile t;
    t.dim = d.nrows;
    for (index_t i = 0; i < d.nrows; ++i)
        for (index_t j = 0; j < d.ncols; ++j) {
            if (i == j) continue;
            if (d.at(i, j) != 0.0) {
                t.rows.push_back(static_cast<std::int32_t>(i));
                t.cols.push_back(static_cast<std::int32_t>(j));
                t.values.push_back(d.at(i, j));
            }
        }
    t.diag_pos.resize(static_cast<std::size_t>(t.dim));
    for (index_t i = 0; i < t.dim; ++i) {
        t.diag_pos[static_cast<std::size_t>(i)] = static_cast<index_t>(t.values.size());
        t.rows.push_back(static_cast<std::int32_t>(i));
        t.cols.push_back(static_cast<std::int32_t>(i));
        t.values.push_back(d.at(i, i));
    }
    return t;
}

oracle::Dense random_spd_dense(index_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    oracle::Dense d(n, n);
    for (index_t i = 0; i < n; ++i)
        for (index_t j = 0; j <= i; ++j) {
            const double v = u(rng);
            d.at(i, j) = v;
            d.at(j, i) = v;
        }
    for (index_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (index_t j = 0; j < n; ++j) s += std::abs(d.at(i, j));
        d.at(i, i) += s + 1.0;
    }
    return d;
}

}  // namespace

TEST_CASE("extract_tiles: diagonal matrix with unit tiles") {
    const index_t n = 5;
    auto l = build_csb_coo({}, n, n, {0, n}, {0, n});
    std::vector<double> d = {1.0, 2.0, 3.0, 4.0, 5.0};
    std::vector<index_t> offsets = {0, 1, 2, 3, 4, 5};
    auto tiles = extract_tiles(l, d, offsets);
    REQUIRE(tiles.count() == n);
    for (index_t j = 0; j < n; ++j) {
        const auto& t = tiles.tiles[static_cast<std::size_t>(j)];
        REQUIRE(t.dim == 1);
        REQUIRE(t.values.size() == 1);
        CHECK(t.values[0] == d[static_cast<std::size_t>(j)]);
    }
}

TEST_CASE("extract_tiles: tridiagonal coupling across tiles is dropped") {
    // 6x6 tridiagonal, subdiagonal all 1s, diag 2; tiles {0..3), [3..6)
    std::vector<Triple> sub;
    for (index_t i = 1; i < 6; ++i) sub.push_back({i, i - 1, 1.0});
    auto l = build_csb_coo(sub, 6, 6, {0, 6}, {0, 6});
    std::vector<double> d(6, 2.0);
    auto tiles = extract_tiles(l, d, {0, 3, 6});
    REQUIRE(tiles.count() == 2);
    // each tile: 2 mirrored couplings * 2 + 3 diagonal = 7 entries
    CHECK(tiles.tiles[0].values.size() == 7);
    CHECK(tiles.tiles[1].values.size() == 7);
    // the (3,2) entry belongs to neither tile
    for (const auto& t : tiles.tiles)
        for (std::size_t k = 0; k < t.values.size(); ++k)
            CHECK(t.rows[k] < 3);
}

TEST_CASE("extract_tiles equals dense principal submatrices") {
    const index_t n = 64;
    auto lower = oracle::random_lower_triples(n, 400, 17);
    std::vector<double> diag(static_cast<std::size_t>(n));
    std::mt19937_64 rng(18);
    std::uniform_real_distribution<double> u(0.5, 3.0);
    for (auto& x : diag) x = u(rng);
    auto l = build_csb_coo(lower, n, n, {0, n}, {0, n});
    std::vector<index_t> offsets = {0, 10, 30, 64};
    auto tiles = extract_tiles(l, diag, offsets);
    auto dense = oracle::dense_from_lower(lower, diag, n);
    for (index_t j = 0; j < tiles.count(); ++j) {
        const auto& t = tiles.tiles[static_cast<std::size_t>(j)];
        const index_t base = offsets[static_cast<std::size_t>(j)];
        oracle::Dense got(t.dim, t.dim);
        for (std::size_t k = 0; k < t.values.size(); ++k) got.at(t.rows[k], t.cols[k]) += t.values[k];
        for (index_t a = 0; a < t.dim; ++a)
            for (index_t b = 0; b < t.dim; ++b)
                CHECK(got.at(a, b) == dense.at(base + a, base + b));
    }
}

TEST_CASE("extract_tiles rejects tiles straddling block boundaries") {
    const index_t n = 8;
    auto l = build_csb_coo({}, n, n, {0, 4, 8}, {0, 4, 8});
    std::vector<double> d(8, 1.0);
    CHECK_THROWS_AS(extract_tiles(l, d, {0, 3, 6, 8}), MisalignedTiles);
    CHECK_NOTHROW(extract_tiles(l, d, {0, 2, 4, 6, 8}));
    CHECK_THROWS_AS(extract_tiles(l, d, {0, 8, 8}), BadParams);
}

TEST_CASE("fom scalar solve: K=2, r=6 -> w=3 in one step") {
    oracle::Dense k(1, 1);
    k.at(0, 0) = 2.0;
    auto tile = tile_from_dense(k);
    BlockVector r(1, 1);
    r(0, 0) = 6.0;
    std::vector<double> sigma = {0.0};
    auto w = fom_solve_tile(tile, sigma, r, 1);
    CHECK(w(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("fom zero right-hand side maps to zero") {
    auto tile = tile_from_dense(random_spd_dense(7, 5));
    BlockVector r(7, 3);
    std::vector<double> sigma = {0.0, 1.0, -2.0};
    auto w = fom_solve_tile(tile, sigma, r, 4);
    for (double x : w.data) CHECK(x == 0.0);
}

TEST_CASE("fom at full dimension matches the dense solve") {
    const index_t n = 20;
    auto dense = random_spd_dense(n, 31);
    auto tile = tile_from_dense(dense);
    // shift below the smallest eigenvalue keeps K - sigma I definite
    const double sigma = -1.0;
    std::mt19937_64 rng(32);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    BlockVector r(n, 2);
    for (auto& x : r.data) x = u(rng);
    auto w = fom_solve_tile(tile, std::vector<double>{sigma, sigma}, r, static_cast<int>(n));
    for (index_t v = 0; v < 2; ++v) {
        oracle::Dense shifted = dense;
        for (index_t i = 0; i < n; ++i) shifted.at(i, i) -= sigma;
        std::vector<double> rhs(static_cast<std::size_t>(n));
        for (index_t i = 0; i < n; ++i) rhs[static_cast<std::size_t>(i)] = r(i, v);
        auto want = dense_solve(shifted, rhs);
        double num = 0.0, den = 0.0;
        for (index_t i = 0; i < n; ++i) {
            num += (w(i, v) - want[static_cast<std::size_t>(i)]) * (w(i, v) - want[static_cast<std::size_t>(i)]);
            den += want[static_cast<std::size_t>(i)] * want[static_cast<std::size_t>(i)];
        }
        CHECK(std::sqrt(num) <= 1e-8 * std::sqrt(den));
    }
}

TEST_CASE("fom truncates on Krylov breakdown") {
    // r is an exact eigenvector of the tile: the space closes after one step
    oracle::Dense k(2, 2);
    k.at(0, 0) = 2.0;
    k.at(1, 1) = 3.0;
    auto tile = tile_from_dense(k);
    BlockVector r(2, 1);
    r(0, 0) = 6.0;
    auto w = fom_solve_tile(tile, std::vector<double>{0.0}, r, 2);
    CHECK(w(0, 0) == doctest::Approx(3.0));
    CHECK(w(1, 0) == 0.0);
}

TEST_CASE("fom truncates when the tile dimension is below m") {
    oracle::Dense k(2, 2);
    k.at(0, 0) = 3.0;
    k.at(1, 1) = 5.0;
    auto tile = tile_from_dense(k);
    BlockVector r(2, 1);
    r(0, 0) = 6.0;
    r(1, 0) = 10.0;
    auto w = fom_solve_tile(tile, std::vector<double>{0.0}, r, 9);  // m > dim
    CHECK(w(0, 0) == doctest::Approx(2.0));
    CHECK(w(1, 0) == doctest::Approx(2.0));
}

TEST_CASE("fom shift invariance is bitwise") {
    const index_t n = 12;
    auto dense = random_spd_dense(n, 41);
    auto tile = tile_from_dense(dense);
    const double sigma = 0.731;
    oracle::Dense shifted = dense;
    for (index_t i = 0; i < n; ++i) shifted.at(i, i) -= sigma;
    auto tile_shifted = tile_from_dense(shifted);
    BlockVector r = random_block(n, 2, 42);
    auto w1 = fom_solve_tile(tile, std::vector<double>{sigma, sigma}, r, 4);
    auto w2 = fom_solve_tile(tile_shifted, std::vector<double>{0.0, 0.0}, r, 4);
    CHECK(w1.data == w2.data);
}

TEST_CASE("singular projection surfaces, preconditioner falls back") {
    oracle::Dense k(1, 1);
    k.at(0, 0) = 5.0;
    auto tile = tile_from_dense(k);
    BlockVector r(1, 1);
    r(0, 0) = 2.0;
    CHECK_THROWS_AS(fom_solve_tile(tile, std::vector<double>{5.0}, r, 1), SingularProjection);

    DiagonalTileSet set;
    set.tile_offsets = {0, 1};
    set.tiles.push_back(tile);
    std::int64_t fallbacks = 0;
    auto w = apply_preconditioner(set, std::vector<double>{5.0}, r, FomConfig{1}, nullptr, &fallbacks);
    CHECK(fallbacks == 1);
    CHECK(w(0, 0) == 2.0);  // raw residual column
}

TEST_CASE("apply_preconditioner with 1x1 tiles is Jacobi scaling") {
    const index_t n = 6;
    std::vector<double> d = {2.0, 4.0, 5.0, 8.0, 10.0, 0.5};
    auto l = build_csb_coo({}, n, n, {0, n}, {0, n});
    std::vector<index_t> offsets(static_cast<std::size_t>(n) + 1);
    for (index_t i = 0; i <= n; ++i) offsets[static_cast<std::size_t>(i)] = i;
    auto tiles = extract_tiles(l, d, offsets);
    BlockVector r = random_block(n, 3, 50);
    auto w = apply_preconditioner(tiles, std::vector<double>{0.0, 0.0, 0.0}, r, FomConfig{1});
    for (index_t i = 0; i < n; ++i)
        for (index_t v = 0; v < 3; ++v)
            CHECK(w(i, v) == doctest::Approx(r(i, v) / d[static_cast<std::size_t>(i)]).epsilon(1e-14));
}

TEST_CASE("identity tiles give W = R") {
    const index_t n = 9;
    std::vector<double> d(static_cast<std::size_t>(n), 1.0);
    auto l = build_csb_coo({}, n, n, {0, n}, {0, n});
    auto tiles = extract_tiles(l, d, {0, 3, 6, 9});
    BlockVector r = random_block(n, 2, 51);
    auto w = apply_preconditioner(tiles, std::vector<double>{0.0, 0.0}, r, FomConfig{4});
    for (std::size_t i = 0; i < r.data.size(); ++i) CHECK(w.data[i] == doctest::Approx(r.data[i]).epsilon(1e-14));
}

TEST_CASE("block-diagonal full-dimension solve matches dense oracle") {
    // 60x60 with three SPD 20x20 tiles
    const index_t n = 60;
    std::vector<Triple> lower;
    std::vector<double> diag(static_cast<std::size_t>(n), 0.0);
    std::vector<oracle::Dense> dense_tiles;
    for (int t = 0; t < 3; ++t) {
        auto dt = random_spd_dense(20, 60 + static_cast<std::uint64_t>(t));
        dense_tiles.push_back(dt);
        const index_t base = 20 * t;
        for (index_t i = 0; i < 20; ++i) {
            diag[static_cast<std::size_t>(base + i)] = dt.at(i, i);
            for (index_t j = 0; j < i; ++j)
                if (dt.at(i, j) != 0.0) lower.push_back({base + i, base + j, dt.at(i, j)});
        }
    }
    auto l = build_csb_coo(lower, n, n, {0, n}, {0, n});
    auto tiles = extract_tiles(l, diag, {0, 20, 40, 60});
    BlockVector r = random_block(n, 2, 70);
    auto w = apply_preconditioner(tiles, std::vector<double>{0.0, 0.0}, r, FomConfig{20});
    for (int t = 0; t < 3; ++t) {
        const index_t base = 20 * t;
        for (index_t v = 0; v < 2; ++v) {
            std::vector<double> rhs(20);
            for (index_t i = 0; i < 20; ++i) rhs[static_cast<std::size_t>(i)] = r(base + i, v);
            auto want = dense_solve(dense_tiles[static_cast<std::size_t>(t)], rhs);
            double num = 0.0, den = 0.0;
            for (index_t i = 0; i < 20; ++i) {
                const double dd = w(base + i, v) - want[static_cast<std::size_t>(i)];
                num += dd * dd;
                den += want[static_cast<std::size_t>(i)] * want[static_cast<std::size_t>(i)];
            }
            CHECK(std::sqrt(num) <= 1e-8 * std::sqrt(den));
        }
    }
}

TEST_CASE("tile processing order does not change the result") {
    const index_t n = 48;
    auto lower = oracle::random_lower_triples(n, 150, 80);
    std::vector<double> diag(static_cast<std::size_t>(n));
    std::mt19937_64 rng(81);
    std::uniform_real_distribution<double> u(1.0, 4.0);
    for (auto& x : diag) x = u(rng);
    auto l = build_csb_coo(lower, n, n, {0, n}, {0, n});
    auto tiles = extract_tiles(l, diag, {0, 5, 17, 30, 48});
    BlockVector r = random_block(n, 4, 82);
    std::vector<double> shifts = {0.1, 0.2, 0.3, 0.4};
    auto serial = apply_preconditioner(tiles, shifts, r, FomConfig{4});
    ThreadPool pool(4);
    auto threaded = apply_preconditioner(tiles, shifts, r, FomConfig{4}, &pool);
    CHECK(serial.data == threaded.data);
}

TEST_CASE("fom config validation") {
    CHECK_THROWS_AS(FomConfig{0}.validate(), BadParams);
    CHECK_NOTHROW(FomConfig{4}.validate());
}
