// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "blockeig/kernels.hpp"
#include "oracles.hpp"

using namespace blockeig;

namespace {

const KernelVariant kVariants[] = {KernelVariant::baseline(), KernelVariant::fused_atomic(),
                                   KernelVariant::cache_blocked()};

// per-element bound from the operation contract:
// 1e-12 * max|H| * max|W| * (max nonzeros per output row)
double element_bound(const CsbCooMatrix& h, const BlockVector& w, bool trans) {
    std::vector<index_t> per_row(static_cast<std::size_t>(trans ? h.ncols : h.nrows), 0);
    for (const auto& t : to_triples(h)) ++per_row[static_cast<std::size_t>(trans ? t.col : t.row)];
    index_t maxnnz = 1;
    for (auto c : per_row) maxnnz = std::max(maxnnz, c);
    return 1e-12 * std::max(1.0, h.max_abs_value()) * std::max(1.0, max_abs(w)) *
           static_cast<double>(maxnnz);
}

void check_close(const BlockVector& got, const BlockVector& want, double bound) {
    REQUIRE(got.same_shape(want));
    for (std::size_t i = 0; i < got.data.size(); ++i)
        CHECK(std::abs(got.data[i] - want.data[i]) <= bound);
}

}  // namespace

TEST_CASE("identity SpMM returns W") {
    std::vector<Triple> ts = {{0, 0, 1.0}, {1, 1, 1.0}, {2, 2, 1.0}};
    auto h = build_csb_coo(ts, 3, 3, {0, 3}, {0, 3});
    BlockVector w(3, 2);
    for (index_t r = 0; r < 3; ++r)
        for (index_t v = 0; v < 2; ++v) w(r, v) = static_cast<double>(r + 1);
    for (const auto& variant : kVariants) {
        BlockVector u(3, 2);
        spmm_notrans(h, w, u, variant);
        check_close(u, w, 0.0);
    }
}

TEST_CASE("zero matrix leaves the accumulator untouched") {
    auto h = build_csb_coo({}, 6, 6, {0, 3, 6}, {0, 3, 6});
    BlockVector w = random_block(6, 4, 1);
    BlockVector u(6, 4);
    std::fill(u.data.begin(), u.data.end(), 1.0);
    for (const auto& variant : kVariants) {
        spmm_notrans(h, w, u, variant);
        for (double x : u.data) CHECK(x == 1.0);
    }
}

TEST_CASE("accumulation semantics: U += H*W") {
    std::vector<Triple> ts = {{0, 1, 2.0}};
    auto h = build_csb_coo(ts, 2, 2, {0, 2}, {0, 2});
    BlockVector w(2, 1);
    w(1, 0) = 3.0;
    BlockVector u(2, 1);
    u(0, 0) = 10.0;
    spmm_notrans(h, w, u, KernelVariant::baseline());
    CHECK(u(0, 0) == 16.0);
}

TEST_CASE("all variants match the dense multiply oracle") {
    const auto ts = oracle::random_triples(64, 64, 400, 21);
    auto boundaries = uniform_boundaries(64, 16);
    auto h = build_csb_coo(ts, 64, 64, boundaries, boundaries);
    auto dense = oracle::dense_from_triples(ts, 64, 64);
    BlockVector w = random_block(64, 8, 22);
    auto want = oracle::dense_apply(dense, w);
    const double bound = element_bound(h, w, false);
    for (const auto& variant : kVariants) {
        BlockVector u(64, 8);
        spmm_notrans(h, w, u, variant);
        check_close(u, want, bound);
    }
}

TEST_CASE("hand-computed transpose multiply") {
    // H = [[1,0,2],[0,3,0]], W = [1;1] -> U += H^T W = [1,3,2]^T
    std::vector<Triple> ts = {{0, 0, 1.0}, {0, 2, 2.0}, {1, 1, 3.0}};
    auto h = build_csb_coo(ts, 2, 3, {0, 2}, {0, 3});
    BlockVector w(2, 1);
    w(0, 0) = 1.0;
    w(1, 0) = 1.0;
    for (const auto& variant : kVariants) {
        BlockVector u(3, 1);
        spmm_trans(h, w, u, variant);
        CHECK(u(0, 0) == doctest::Approx(1.0));
        CHECK(u(1, 0) == doctest::Approx(3.0));
        CHECK(u(2, 0) == doctest::Approx(2.0));
    }
}

TEST_CASE("trans equals notrans on the explicitly transposed matrix") {
    const auto ts = oracle::random_triples(48, 36, 300, 5);
    auto h = build_csb_coo(ts, 48, 36, uniform_boundaries(48, 12), uniform_boundaries(36, 12));
    std::vector<Triple> tts;
    for (const auto& t : ts) tts.push_back({t.col, t.row, t.value});
    auto ht = build_csb_coo(tts, 36, 48, uniform_boundaries(36, 12), uniform_boundaries(48, 12));
    BlockVector w = random_block(48, 4, 6);
    BlockVector u1(36, 4), u2(36, 4);
    spmm_trans(h, w, u1, KernelVariant::baseline());
    spmm_notrans(ht, w, u2, KernelVariant::baseline());
    const double bound = element_bound(h, w, true);
    check_close(u1, u2, bound);
}

TEST_CASE("transpose of identity adds W") {
    std::vector<Triple> ts;
    for (index_t i = 0; i < 5; ++i) ts.push_back({i, i, 1.0});
    auto h = build_csb_coo(ts, 5, 5, {0, 3, 5}, {0, 3, 5});
    BlockVector w = random_block(5, 3, 9);
    BlockVector u(5, 3);
    spmm_trans(h, w, u, KernelVariant::fused_atomic());
    check_close(u, w, 0.0);
}

TEST_CASE("variant equivalence within 1e-10 relative Frobenius") {
    ThreadPool pool(4);
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const index_t n = 96;
        const auto ts = oracle::random_triples(n, n, 1200, 100 + seed);
        auto h = build_csb_coo(ts, n, n, uniform_boundaries(n, 24), uniform_boundaries(n, 24));
        BlockVector w = random_block(n, 8, 200 + seed);
        BlockVector ub(n, 8), uf(n, 8), uc(n, 8);
        spmm_notrans(h, w, ub, KernelVariant::baseline(), &pool);
        spmm_notrans(h, w, uf, KernelVariant::fused_atomic(), &pool);
        spmm_notrans(h, w, uc, KernelVariant::cache_blocked(32), &pool);
        CHECK(rel_frobenius_distance(ub, uf) < 1e-10);
        CHECK(rel_frobenius_distance(ub, uc) < 1e-10);
    }
}

TEST_CASE("trans variants match the oracle and each other under workers") {
    ThreadPool pool(4);
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const index_t nrows = 80, ncols = 64;
        const auto ts = oracle::random_triples(nrows, ncols, 900, 300 + seed);
        auto h = build_csb_coo(ts, nrows, ncols, uniform_boundaries(nrows, 20),
                               uniform_boundaries(ncols, 16));
        BlockVector w = random_block(nrows, 8, 400 + seed);
        std::vector<Triple> tts;
        for (const auto& t : ts) tts.push_back({t.col, t.row, t.value});
        auto dense_t = oracle::dense_from_triples(tts, ncols, nrows);
        auto want = oracle::dense_apply(dense_t, w);
        const double bound = element_bound(h, w, true);
        BlockVector ub(ncols, 8), uf(ncols, 8), uc(ncols, 8);
        spmm_trans(h, w, ub, KernelVariant::baseline(), &pool);
        spmm_trans(h, w, uf, KernelVariant::fused_atomic(), &pool);
        spmm_trans(h, w, uc, KernelVariant::cache_blocked(48), &pool);
        check_close(ub, want, bound);
        check_close(uf, want, bound);
        check_close(uc, want, bound);
        CHECK(rel_frobenius_distance(ub, uf) < 1e-10);
        CHECK(rel_frobenius_distance(ub, uc) < 1e-10);
    }
}

TEST_CASE("linearity in the multivector argument") {
    const auto ts = oracle::random_triples(40, 40, 220, 31);
    auto h = build_csb_coo(ts, 40, 40, uniform_boundaries(40, 13), uniform_boundaries(40, 13));
    BlockVector w1 = random_block(40, 3, 32), w2 = random_block(40, 3, 33);
    const double alpha = 0.7, beta = -1.3;
    BlockVector mix(40, 3);
    for (std::size_t i = 0; i < mix.data.size(); ++i)
        mix.data[i] = alpha * w1.data[i] + beta * w2.data[i];
    BlockVector u_mix(40, 3), u1(40, 3), u2(40, 3);
    spmm_notrans(h, mix, u_mix, KernelVariant::cache_blocked());
    spmm_notrans(h, w1, u1, KernelVariant::cache_blocked());
    spmm_notrans(h, w2, u2, KernelVariant::cache_blocked());
    for (std::size_t i = 0; i < mix.data.size(); ++i)
        CHECK(u_mix.data[i] ==
              doctest::Approx(alpha * u1.data[i] + beta * u2.data[i]).epsilon(1e-10));
}

TEST_CASE("transpose adjointness <H W, V> = <W, H^T V>") {
    const auto ts = oracle::random_triples(50, 30, 260, 41);
    auto h = build_csb_coo(ts, 50, 30, uniform_boundaries(50, 17), uniform_boundaries(30, 11));
    BlockVector w = random_block(30, 2, 42), v = random_block(50, 2, 43);
    BlockVector hw(50, 2), htv(30, 2);
    spmm_notrans(h, w, hw, KernelVariant::baseline());
    spmm_trans(h, v, htv, KernelVariant::baseline());
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < hw.data.size(); ++i) lhs += hw.data[i] * v.data[i];
    for (std::size_t i = 0; i < htv.data.size(); ++i) rhs += w.data[i] * htv.data[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-11));
}

TEST_CASE("dimension mismatches are rejected") {
    auto h = build_csb_coo({}, 4, 6, {0, 4}, {0, 6});
    BlockVector w(4, 2), u(4, 2);
    CHECK_THROWS_AS(spmm_notrans(h, w, u, KernelVariant::baseline()), DimensionMismatch);
    BlockVector w2(6, 2), u2(6, 2);
    CHECK_THROWS_AS(spmm_trans(h, w2, u2, KernelVariant::baseline()), DimensionMismatch);
    BlockVector wok(6, 2), uok(4, 3);
    CHECK_THROWS_AS(spmm_notrans(h, wok, uok, KernelVariant::baseline()), DimensionMismatch);
    auto sq = build_csb_coo({}, 6, 6, {0, 6}, {0, 6});
    CHECK_THROWS_AS(spmm_notrans(sq, wok, wok, KernelVariant::baseline()), BadParams);
}

TEST_CASE("apply_symmetric: diagonal only") {
    auto l = build_csb_coo({}, 3, 3, {0, 3}, {0, 3});
    std::vector<double> d = {2.0, 2.0, 2.0};
    BlockVector w(3, 1);
    for (index_t r = 0; r < 3; ++r) w(r, 0) = 1.0;
    auto u = apply_symmetric(l, d, w, KernelVariant::baseline());
    for (index_t r = 0; r < 3; ++r) CHECK(u(r, 0) == 2.0);
}

TEST_CASE("apply_symmetric: mirror of a single lower entry") {
    std::vector<Triple> ts = {{2, 0, 5.0}};
    auto l = build_csb_coo(ts, 3, 3, {0, 3}, {0, 3});
    std::vector<double> d = {0.0, 0.0, 0.0};
    BlockVector e0(3, 1), e2(3, 1);
    e0(0, 0) = 1.0;
    e2(2, 0) = 1.0;
    auto u0 = apply_symmetric(l, d, e0, KernelVariant::baseline());
    CHECK(u0(2, 0) == 5.0);
    CHECK(u0(0, 0) == 0.0);
    auto u2 = apply_symmetric(l, d, e2, KernelVariant::baseline());
    CHECK(u2(0, 0) == 5.0);
    CHECK(u2(2, 0) == 0.0);
}

TEST_CASE("apply_symmetric matches the dense symmetric oracle") {
    const index_t n = 128;
    auto lower = oracle::random_lower_triples(n, 500, 51);
    std::vector<double> diag(static_cast<std::size_t>(n));
    std::mt19937_64 rng(52);
    std::uniform_real_distribution<double> dv(0.5, 2.0);
    for (auto& x : diag) x = dv(rng);
    auto boundaries = uniform_boundaries(n, 32);
    auto l = build_csb_coo(lower, n, n, boundaries, boundaries);
    auto dense = oracle::dense_from_lower(lower, diag, n);
    BlockVector w = random_block(n, 8, 53);
    auto want = oracle::dense_apply(dense, w);
    for (const auto& variant : kVariants) {
        auto u = apply_symmetric(l, diag, w, variant);
        const double bound = 2.0 * element_bound(l, w, false);
        check_close(u, want, bound);
    }
}

TEST_CASE("apply_symmetric rejects non-lower storage") {
    std::vector<Triple> ts = {{0, 0, 1.0}};
    auto notl = build_csb_coo(ts, 2, 2, {0, 2}, {0, 2});
    std::vector<double> d = {1.0, 1.0};
    BlockVector w(2, 1);
    CHECK_THROWS_AS(apply_symmetric(notl, d, w, KernelVariant::baseline()), NotStrictlyLower);
}

TEST_CASE("forced sharing: one block, many workers") {
    // a single stored block cannot be split conflict-free, so fused variants
    // must fall back to atomic accumulation and still be exact
    const index_t n = 64;
    const auto ts = oracle::random_triples(n, n, 800, 71);
    auto h = build_csb_coo(ts, n, n, {0, n}, {0, n});
    auto dense = oracle::dense_from_triples(ts, n, n);
    BlockVector w = random_block(n, 8, 72);
    auto want = oracle::dense_apply(dense, w);
    const double bound = element_bound(h, w, false);
    ThreadPool pool(4);
    for (const auto& variant : {KernelVariant::fused_atomic(), KernelVariant::cache_blocked(64)}) {
        BlockVector u(n, 8);
        spmm_notrans(h, w, u, variant, &pool);
        check_close(u, want, bound);
        BlockVector ut(n, 8);
        spmm_trans(h, w, ut, variant, &pool);
        auto dense_t = oracle::Dense(n, n);
        for (const auto& t : ts) dense_t.at(t.col, t.row) += t.value;
        check_close(ut, oracle::dense_apply(dense_t, w), bound);
    }
}

TEST_CASE("multi-worker baseline is bit-identical to serial") {
    const index_t n = 120;
    const auto ts = oracle::random_triples(n, n, 2000, 61);
    auto h = build_csb_coo(ts, n, n, uniform_boundaries(n, 16), uniform_boundaries(n, 16));
    BlockVector w = random_block(n, 8, 62);
    BlockVector serial(n, 8), threaded(n, 8);
    spmm_notrans(h, w, serial, KernelVariant::baseline());
    ThreadPool pool(4);
    spmm_notrans(h, w, threaded, KernelVariant::baseline(), &pool);
    CHECK(serial.data == threaded.data);
}

TEST_CASE("variant validation") {
    KernelVariant v = KernelVariant::cache_blocked(0);
    CHECK_THROWS_AS(v.validate(), BadParams);
    CHECK(KernelVariant::cache_blocked().cache_size == 256);
    CHECK(KernelVariant::cache_blocked().vector_width == 256);
    CHECK(variant_from_name("baseline").tag == KernelTag::Baseline);
    CHECK_THROWS_AS(variant_from_name("wat"), BadParams);
}
