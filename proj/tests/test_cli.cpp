// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "blockeig/driver.hpp"
#include "oracles.hpp"

using namespace blockeig;
using nlohmann::json;

namespace {

json strip_timings(json j) {
    if (j.is_object()) {
        j.erase("timings");
        json out = json::object();
        for (auto& [key, val] : j.items())
            if (key.rfind("t_", 0) != 0) out[key] = strip_timings(val);
        return out;
    }
    if (j.is_array()) {
        json out = json::array();
        for (auto& e : j) out.push_back(strip_timings(e));
        return out;
    }
    return j;
}

}  // namespace

TEST_CASE("matrix market: identity file") {
    std::istringstream in(
        "%%MatrixMarket matrix coordinate real symmetric\n"
        "% a comment\n"
        "3 3 3\n"
        "1 1 1.0\n2 2 1.0\n3 3 1.0\n");
    auto m = ingest_matrix_market(in);
    CHECK(m.n == 3);
    CHECK(m.lower.empty());
    CHECK(m.diag == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("matrix market: upper-given entry is mirrored to lower") {
    std::istringstream in(
        "%%MatrixMarket matrix coordinate real symmetric\n"
        "3 3 1\n"
        "1 3 2.5\n");
    auto m = ingest_matrix_market(in);
    REQUIRE(m.lower.size() == 1);
    CHECK(m.lower[0].row == 2);
    CHECK(m.lower[0].col == 0);
    CHECK(m.lower[0].value == 2.5);
}

TEST_CASE("matrix market: write/read round trip") {
    SymmetricCoo m;
    m.n = 6;
    m.lower = oracle::random_lower_triples(6, 8, 5);
    m.diag = {1.0, 0.0, 3.0, 4.0, 0.5, 6.0};
    std::stringstream buf;
    write_matrix_market(buf, m);
    auto r = ingest_matrix_market(buf);
    CHECK(r.n == m.n);
    CHECK(oracle::triples_equal_as_multisets(r.lower, m.lower));
    CHECK(r.diag == m.diag);
}

TEST_CASE("matrix market: header rejection") {
    std::istringstream general(
        "%%MatrixMarket matrix coordinate real general\n"
        "2 2 1\n1 1 1.0\n");
    CHECK_THROWS_AS(ingest_matrix_market(general), NotSymmetricHeader);
    std::istringstream arr("%%MatrixMarket matrix array real symmetric\n2 2\n1\n2\n3\n");
    CHECK_THROWS_AS(ingest_matrix_market(arr), ParseError);
    std::istringstream rect(
        "%%MatrixMarket matrix coordinate real symmetric\n"
        "2 3 1\n1 1 1.0\n");
    CHECK_THROWS_AS(ingest_matrix_market(rect), ParseError);
    std::istringstream truncated(
        "%%MatrixMarket matrix coordinate real symmetric\n"
        "3 3 2\n1 1 1.0\n");
    CHECK_THROWS_AS(ingest_matrix_market(truncated), ParseError);
}

TEST_CASE("generator: banded with bandwidth 0 is diagonal-only") {
    SynthParams p;
    p.kind = SynthKind::Banded;
    p.n = 20;
    p.bandwidth = 0;
    p.seed = 3;
    auto m = generate_synthetic(p);
    CHECK(m.coo.lower.empty());
    for (double d : m.coo.diag) CHECK(d > 0.0);
}

TEST_CASE("generator: identical seeds give identical matrices") {
    SynthParams p;
    p.kind = SynthKind::Random;
    p.n = 200;
    p.density = 0.03;
    p.seed = 77;
    auto a = generate_synthetic(p);
    auto b = generate_synthetic(p);
    CHECK(a.coo.diag == b.coo.diag);
    REQUIRE(a.coo.lower.size() == b.coo.lower.size());
    for (std::size_t i = 0; i < a.coo.lower.size(); ++i) {
        CHECK(a.coo.lower[i].row == b.coo.lower[i].row);
        CHECK(a.coo.lower[i].col == b.coo.lower[i].col);
        CHECK(a.coo.lower[i].value == b.coo.lower[i].value);
    }
    CHECK(a.tile_offsets == b.tile_offsets);
    p.seed = 78;
    auto c = generate_synthetic(p);
    CHECK(a.coo.diag != c.coo.diag);
}

TEST_CASE("generator: measured density within 10% of target") {
    SynthParams p;
    p.kind = SynthKind::Random;
    p.n = 1000;
    p.density = 0.02;
    p.seed = 9;
    auto m = generate_synthetic(p);
    const double measured = 2.0 * static_cast<double>(m.coo.lower.size()) /
                            (static_cast<double>(p.n) * static_cast<double>(p.n - 1));
    CHECK(measured == doctest::Approx(0.02).epsilon(0.10));
}

TEST_CASE("generator: tiles never cross block boundaries") {
    SynthParams p;
    p.kind = SynthKind::BlockTile;
    p.n = 700;
    p.block_extent = 256;
    p.tile_max = 300;
    p.seed = 12;
    auto m = generate_synthetic(p);
    CHECK(m.tile_offsets.front() == 0);
    CHECK(m.tile_offsets.back() == p.n);
    for (std::size_t t = 0; t + 1 < m.tile_offsets.size(); ++t) {
        const index_t lo = m.tile_offsets[t], hi = m.tile_offsets[t + 1];
        CHECK(lo / p.block_extent == (hi - 1) / p.block_extent);  // one block each
    }
    // blocktile kind actually clusters nonzeros in tiles
    CHECK(!m.coo.lower.empty());
    // and the CSB + tile extraction pipeline accepts it
    auto bounds = uniform_boundaries(p.n, p.block_extent);
    auto l = build_csb_coo(m.coo.lower, p.n, p.n, bounds, bounds);
    CHECK_NOTHROW(extract_tiles(l, m.coo.diag, m.tile_offsets));
}

TEST_CASE("generator parameter validation") {
    SynthParams p;
    p.n = 5;
    CHECK_THROWS_AS(generate_synthetic(p), BadParams);
    p.n = 100;
    p.density = 0.9;
    CHECK_THROWS_AS(generate_synthetic(p), BadParams);
    CHECK_THROWS_AS(synth_kind_from_name("fancy"), BadParams);
}

TEST_CASE("cmd_solve produces a report with oracle-verified eigenvalues") {
    DriverArgs args;
    args.gen = "banded";
    args.n = 200;
    args.bandwidth = 4;
    args.k = 3;
    args.nb = 6;
    args.tol = 1e-9;
    args.seed = 21;
    std::ostringstream out, err;
    const int rc = cmd_solve(args, out, err);
    REQUIRE(rc == 0);
    auto j = json::parse(out.str());
    CHECK(j["schema"] == "blockeig/run-report/v1");
    CHECK(j["converged"] == true);
    CHECK(j["eigenvalues"].size() == 3);
    CHECK(j["config"]["nb"] == 6);
    CHECK(j["precond_stats"]["tiles"].get<int>() > 0);
    CHECK(j["history"].size() == j["iterations"].get<std::size_t>());

    // oracle comparison on the same generated matrix
    SynthParams p;
    p.kind = SynthKind::Banded;
    p.n = args.n;
    p.bandwidth = args.bandwidth;
    p.block_extent = args.block_extent;
    p.seed = args.seed;
    auto m = generate_synthetic(p);
    auto dense = oracle::dense_from_lower(m.coo.lower, m.coo.diag, p.n);
    auto want = oracle::dense_sym_eigenvalues(dense);
    for (int v = 0; v < 3; ++v)
        CHECK(std::abs(j["eigenvalues"][static_cast<std::size_t>(v)].get<double>() -
                       want[static_cast<std::size_t>(v)]) <=
              1e-7 * std::abs(want[static_cast<std::size_t>(v)]));
}

TEST_CASE("cmd_solve through the distributed layer reports comm volume") {
    DriverArgs args;
    args.gen = "random";
    args.n = 150;
    args.density = 0.03;
    args.k = 2;
    args.nb = 4;
    args.nd = 3;
    args.tol = 1e-7;
    std::ostringstream out, err;
    REQUIRE(cmd_solve(args, out, err) == 0);
    auto j = json::parse(out.str());
    CHECK(j["comm"]["volume_doubles"].get<std::int64_t>() > 0);
    CHECK(j["config"]["nd"] == 3);
}

TEST_CASE("cmd_explain_layout emits the 15-rank map") {
    std::ostringstream out, err;
    REQUIRE(cmd_explain_layout(5, 0, out, err) == 0);
    auto j = json::parse(out.str());
    CHECK(j["n_ranks"] == 15);
    CHECK(j["group_size"] == 3);
    for (const auto& g : j["row_groups"]) CHECK(g.size() == 3);
    for (const auto& g : j["col_groups"]) CHECK(g.size() == 3);
    std::ostringstream out2;
    REQUIRE(cmd_explain_layout(5, 30, out2, err) == 0);
    auto j2 = json::parse(out2.str());
    CHECK(j2["segments"].size() == 15);
    CHECK_THROWS_AS(build_layout(4), EvenNd);
    std::ostringstream out3;
    CHECK(cmd_explain_layout(4, 0, out3, err) == kExitInput);
}

TEST_CASE("cmd_bench grid with correctness gates") {
    DriverArgs args;
    args.gen = "random";
    args.n = 400;
    args.density = 0.02;
    args.nb = 8;
    args.reps = 3;
    args.sweep_cache = {64, 256};
    std::ostringstream out, err;
    REQUIRE(cmd_bench(args, out, err) == 0);
    auto j = json::parse(out.str());
    const auto& grid = j["bench"]["grid"];
    REQUIRE(grid.size() == 4);  // baseline, fused, 2 cache sizes
    for (const auto& row : grid) {
        CHECK(row["gate_ok"] == true);
        CHECK(row.contains("seconds_median"));
    }
    CHECK(grid[2]["cache_size"] == 64);
}

TEST_CASE("cache file round trip through the driver") {
    const std::string path = "/tmp/blockeig_test_cache.bin";
    std::filesystem::remove(path);
    DriverArgs args;
    args.gen = "banded";
    args.n = 120;
    args.bandwidth = 3;
    args.k = 2;
    args.nb = 4;
    args.cache_path = path;
    std::ostringstream out1, err;
    REQUIRE(cmd_solve(args, out1, err) == 0);
    auto j1 = json::parse(out1.str());
    CHECK(j1["config"]["input"]["cache_hit"] == false);
    REQUIRE(std::filesystem::exists(path));
    std::ostringstream out2;
    REQUIRE(cmd_solve(args, out2, err) == 0);
    auto j2 = json::parse(out2.str());
    CHECK(j2["config"]["input"]["cache_hit"] == true);
    CHECK(j1["eigenvalues"] == j2["eigenvalues"]);
    std::filesystem::remove(path);
}

TEST_CASE("driver exit codes") {
    std::ostringstream out, err;
    DriverArgs missing;
    missing.mm_path = "/nonexistent/file.mtx";
    CHECK(cmd_solve(missing, out, err) == kExitInput);

    DriverArgs both;  // neither input given
    both.gen = "";
    both.mm_path = "";
    CHECK(cmd_solve(both, out, err) == kExitUsage);

    DriverArgs strict;
    strict.gen = "random";
    strict.n = 150;
    strict.density = 0.03;
    strict.k = 2;
    strict.nb = 4;
    strict.maxiter = 1;
    strict.strict = true;
    strict.tol = 1e-14;
    CHECK(cmd_solve(strict, out, err) == kExitNumerical);
}

TEST_CASE("cmd_solve honors the kernel variant flag") {
    std::vector<json> reports;
    for (const char* variant : {"baseline", "fused-atomic", "cache-blocked"}) {
        DriverArgs args;
        args.gen = "random";
        args.n = 200;
        args.density = 0.03;
        args.k = 3;
        args.nb = 6;
        args.tol = 1e-9;
        args.seed = 44;
        args.variant = variant;
        std::ostringstream out, err;
        REQUIRE(cmd_solve(args, out, err) == 0);
        auto j = json::parse(out.str());
        CHECK(j["config"]["variant"] == variant);
        CHECK(j["converged"] == true);
        reports.push_back(j);
    }
    for (std::size_t r = 1; r < reports.size(); ++r)
        for (int v = 0; v < 3; ++v)
            CHECK(reports[r]["eigenvalues"][static_cast<std::size_t>(v)].get<double>() ==
                  doctest::Approx(reports[0]["eigenvalues"][static_cast<std::size_t>(v)].get<double>())
                      .epsilon(1e-9));
}

TEST_CASE("BLOCKEIG_THREADS env var is the worker-count fallback") {
    DriverArgs args;
    args.gen = "banded";
    args.n = 60;
    args.bandwidth = 2;
    args.k = 2;
    args.nb = 4;
    args.threads = 0;  // unset -> env decides
    setenv("BLOCKEIG_THREADS", "3", 1);
    std::ostringstream out, err;
    REQUIRE(cmd_solve(args, out, err) == 0);
    unsetenv("BLOCKEIG_THREADS");
    auto j = json::parse(out.str());
    CHECK(j["config"]["threads"] == 3);
    std::ostringstream out2;
    REQUIRE(cmd_solve(args, out2, err) == 0);
    CHECK(json::parse(out2.str())["config"]["threads"] == 1);
}

TEST_CASE("reports are bit-identical modulo timings for a fixed seed") {
    DriverArgs args;
    args.gen = "random";
    args.n = 250;
    args.density = 0.02;
    args.k = 3;
    args.nb = 6;
    args.seed = 33;
    args.threads = 1;
    std::ostringstream a, b, err;
    REQUIRE(cmd_solve(args, a, err) == 0);
    REQUIRE(cmd_solve(args, b, err) == 0);
    auto ja = strip_timings(json::parse(a.str()));
    auto jb = strip_timings(json::parse(b.str()));
    CHECK(ja.dump() == jb.dump());
}
