// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "blockeig/dist.hpp"
#include "blockeig/lobpcg.hpp"
#include "blockeig/matrix_market.hpp"
#include "blockeig/synth.hpp"

namespace blockeig {

/// Exit codes shared by the driver entry points.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,
    kExitInput = 3,
    kExitNumerical = 4,
};

struct DriverArgs {
    // solver knobs
    int k = 5;
    int nb = 0;  // 0 -> k + 3
    double tol = 1e-6;
    int maxiter = 500;
    int fom_iters = 4;
    std::string variant = "baseline";
    int cache_size = 256;
    int vector_width = 256;
    int nd = 1;
    int threads = 0;  // 0 -> BLOCKEIG_THREADS env, else 1
    std::uint64_t seed = 1;

    // input selection (exactly one of mm / gen)
    std::string mm_path;
    std::string gen;  // banded | blocktile | random
    index_t n = 1000;
    double density = 0.02;
    index_t bandwidth = 8;
    index_t block_extent = 4000;
    std::string cache_path;

    bool no_precond = false;
    bool strict = false;

    // bench
    std::vector<int> sweep_cache = {64, 256, 1024};
    int reps = 11;
};

namespace detail {

inline int resolve_threads(const DriverArgs& a) {
    if (a.threads > 0) return a.threads;
    if (const char* env = std::getenv("BLOCKEIG_THREADS")) {
        const int t = std::atoi(env);
        if (t > 0) return t;
    }
    return 1;
}

inline void check_finite(const nlohmann::json& j) {
    if (j.is_number_float()) {
        if (!std::isfinite(j.get<double>())) throw Error("report: non-finite float");
    } else if (j.is_array() || j.is_object()) {
        for (const auto& e : j) check_finite(e);
    }
}

inline nlohmann::json size_histogram(const std::vector<index_t>& sizes) {
    // power-of-two buckets: [1,2), [2,4), ...
    nlohmann::json buckets = nlohmann::json::array();
    std::vector<std::int64_t> counts;
    for (index_t s : sizes) {
        int b = 0;
        index_t hi = 2;
        while (s >= hi) {
            hi *= 2;
            ++b;
        }
        if (static_cast<std::size_t>(b) >= counts.size()) counts.resize(static_cast<std::size_t>(b) + 1, 0);
        ++counts[static_cast<std::size_t>(b)];
    }
    index_t lo = 1;
    for (std::size_t b = 0; b < counts.size(); ++b) {
        buckets.push_back({{"min_size", lo}, {"max_size", 2 * lo - 1}, {"count", counts[b]}});
        lo *= 2;
    }
    return buckets;
}

struct LoadedProblem {
    SymmetricCoo coo;                  // lower triples may be empty when loaded from cache
    std::vector<index_t> tile_offsets;
    CsbCooMatrix l;
    nlohmann::json input_echo;
};

inline LoadedProblem load_problem(const DriverArgs& a) {
    if (a.mm_path.empty() == a.gen.empty())
        throw BadParams("choose exactly one input: --mm FILE or --gen KIND");

    LoadedProblem p;
    std::mt19937_64 tile_rng(a.seed + 0x7157);
    if (!a.mm_path.empty()) {
        p.coo = ingest_matrix_market_file(a.mm_path);
        p.tile_offsets = detail::draw_tile_offsets(p.coo.n, std::min(a.block_extent, p.coo.n), 4,
                                                   512, tile_rng);
        p.input_echo = {{"mm", a.mm_path}, {"block_extent", a.block_extent}};
    } else {
        SynthParams sp;
        sp.kind = synth_kind_from_name(a.gen);
        sp.n = a.n;
        sp.density = a.density;
        sp.bandwidth = a.bandwidth;
        sp.block_extent = a.block_extent;
        sp.seed = a.seed;
        auto sm = generate_synthetic(sp);
        p.coo = std::move(sm.coo);
        p.tile_offsets = std::move(sm.tile_offsets);
        p.input_echo = {{"gen", a.gen}, {"n", a.n},      {"density", a.density},
                        {"bandwidth", a.bandwidth},      {"block_extent", a.block_extent}};
    }

    const index_t extent = std::min(a.block_extent, p.coo.n);
    bool loaded_from_cache = false;
    if (!a.cache_path.empty() && std::filesystem::exists(a.cache_path)) {
        std::ifstream is(a.cache_path, std::ios::binary);
        if (!is) throw ParseError("cannot open cache " + a.cache_path);
        p.l = load_csb(is);
        const auto dlen = read_pod<std::uint64_t>(is);
        std::vector<double> diag(dlen);
        is.read(reinterpret_cast<char*>(diag.data()),
                static_cast<std::streamsize>(dlen * sizeof(double)));
        if (!is) throw ParseError("cache: truncated diagonal section");
        if (p.l.nrows != p.coo.n || static_cast<index_t>(dlen) != p.coo.n)
            throw ParseError("cache: dimensions do not match the input matrix");
        p.coo.diag = std::move(diag);
        loaded_from_cache = true;
    } else {
        auto bounds = uniform_boundaries(p.coo.n, extent);
        p.l = build_csb_coo(p.coo.lower, p.coo.n, p.coo.n, bounds, bounds);
        if (!a.cache_path.empty()) {
            std::ofstream os(a.cache_path, std::ios::binary);
            if (!os) throw ParseError("cannot write cache " + a.cache_path);
            save_csb(os, p.l);
            write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(p.coo.diag.size()));
            os.write(reinterpret_cast<const char*>(p.coo.diag.data()),
                     static_cast<std::streamsize>(p.coo.diag.size() * sizeof(double)));
        }
    }
    p.input_echo["cache"] = a.cache_path.empty() ? nlohmann::json(nullptr)
                                                 : nlohmann::json(a.cache_path);
    p.input_echo["cache_hit"] = loaded_from_cache;
    return p;
}

inline nlohmann::json config_echo(const DriverArgs& a, const LoadedProblem& p, int threads) {
    return {{"k", a.k},
            {"nb", a.nb > 0 ? a.nb : a.k + 3},
            {"tol", a.tol},
            {"maxiter", a.maxiter},
            {"fom_iters", a.fom_iters},
            {"variant", a.variant},
            {"cache_size", a.cache_size},
            {"vector_width", a.vector_width},
            {"nd", a.nd},
            {"threads", threads},
            {"seed", a.seed},
            {"no_precond", a.no_precond},
            {"input", p.input_echo}};
}

inline int map_error_exit(const Error& e, std::ostream& err) {
    err << "error: " << e.what() << "\n";
    if (dynamic_cast<const BadParams*>(&e)) return kExitUsage;
    if (dynamic_cast<const BreakdownUnrecoverable*>(&e)) return kExitNumerical;
    return kExitInput;
}

inline void emit(const nlohmann::json& j, std::ostream& os) {
    check_finite(j);
    os << j.dump(2) << "\n";
}

}  // namespace detail

/// `solve` entry point: load or generate the operator, run the eigensolver
/// (optionally through the simulated distributed layer), emit a RunReport.
inline int cmd_solve(const DriverArgs& args, std::ostream& out, std::ostream& err) {
    try {
        auto problem = detail::load_problem(args);
        const index_t n = problem.coo.n;
        const int threads = detail::resolve_threads(args);
        std::unique_ptr<ThreadPool> pool =
            threads > 1 ? std::make_unique<ThreadPool>(threads) : nullptr;

        KernelVariant variant = variant_from_name(args.variant);
        variant.cache_size = args.cache_size;
        variant.vector_width = args.vector_width;

        SolverConfig cfg;
        cfg.k = args.k;
        cfg.nb = args.nb;
        cfg.tol = args.tol;
        cfg.maxiter = args.maxiter;
        cfg.fom.iterations = args.fom_iters;
        cfg.variant = variant;
        cfg.seed = args.seed;
        cfg.pool = pool.get();

        std::optional<DiagonalTileSet> tiles;
        if (!args.no_precond)
            tiles.emplace(extract_tiles(problem.l, problem.coo.diag, problem.tile_offsets));

        SolveResult res;
        SimComm comm;
        if (args.nd > 1) {
            auto layout = build_layout(args.nd);
            std::vector<index_t> boundaries(static_cast<std::size_t>(args.nd) + 1);
            for (int g = 0; g <= args.nd; ++g)
                boundaries[static_cast<std::size_t>(g)] = n * g / args.nd;
            auto pb = partition_matrix(problem.coo.lower, problem.coo.diag, layout, boundaries,
                                       std::min(args.block_extent, n));
            auto op = distributed_operator(pb, variant, comm, pool.get());
            res = lobpcg_solve(op, n, tiles ? &*tiles : nullptr, nullptr, cfg);
        } else {
            SymmetricOperator h(problem.l, problem.coo.diag, variant, pool.get());
            res = lobpcg_solve(h, tiles ? &*tiles : nullptr, nullptr, cfg);
        }

        nlohmann::json j;
        j["schema"] = "blockeig/run-report/v1";
        j["command"] = "solve";
        j["config"] = detail::config_echo(args, problem, threads);
        j["n"] = n;
        j["nnz_lower"] = problem.l.nnz();
        j["eigenvalues"] = res.lambda;
        j["converged"] = res.converged;
        j["iterations"] = res.history.records.size();
        j["operator_calls"] = res.history.operator_calls;
        double t_spmm = 0.0, t_precond = 0.0, t_dense = 0.0, t_total = 0.0;
        auto& hist = j["history"] = nlohmann::json::array();
        for (const auto& rec : res.history.records) {
            hist.push_back({{"iter", rec.iter},
                            {"theta", rec.theta},
                            {"residual_norms", rec.residual_norms},
                            {"n_converged", rec.n_converged},
                            {"t_spmm", rec.t_spmm},
                            {"t_precond", rec.t_precond},
                            {"t_dense", rec.t_dense},
                            {"t_total", rec.t_total}});
            t_spmm += rec.t_spmm;
            t_precond += rec.t_precond;
            t_dense += rec.t_dense;
            t_total += rec.t_total;
        }
        if (!res.history.records.empty())
            j["residual_norms"] = std::vector<double>(
                res.history.records.back().residual_norms.begin(),
                res.history.records.back().residual_norms.begin() + args.k);
        j["timings"] = {{"spmm", t_spmm}, {"precond", t_precond}, {"densela", t_dense}, {"total", t_total}};
        if (args.nd > 1)
            j["comm"] = {{"volume_doubles", comm.volume_doubles},
                         {"collective_calls", comm.collective_calls}};
        if (tiles)
            j["precond_stats"] = {{"tiles", tiles->count()},
                                  {"fallbacks", res.history.precond_fallbacks},
                                  {"size_histogram", detail::size_histogram(tiles->sizes())}};
        j["restarts"] = res.history.restarts;
        detail::emit(j, out);

        if (!res.converged && args.strict) {
            err << "error: not converged within maxiter (strict mode)\n";
            return kExitNumerical;
        }
        return kExitOk;
    } catch (const Error& e) {
        return detail::map_error_exit(e, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    }
}

/// `bench` entry point: time the kernel variants over the cache-size sweep.
/// Every timed output is checked against the Baseline result first; a grid
/// row that fails the gate reports no timing.
inline int cmd_bench(const DriverArgs& args, std::ostream& out, std::ostream& err) {
    try {
        auto problem = detail::load_problem(args);
        const index_t n = problem.coo.n;
        const int threads = detail::resolve_threads(args);
        std::unique_ptr<ThreadPool> pool =
            threads > 1 ? std::make_unique<ThreadPool>(threads) : nullptr;
        if (args.reps < 1) throw BadParams("bench: reps must be positive");

        const int nb = args.nb > 0 ? args.nb : args.k + 3;
        BlockVector w = random_block(n, nb, args.seed);

        struct GridEntry {
            KernelVariant variant;
            bool has_cache = false;
        };
        std::vector<GridEntry> grid;
        grid.push_back({KernelVariant::baseline(), false});
        grid.push_back({KernelVariant::fused_atomic(), false});
        for (int cs : args.sweep_cache)
            grid.push_back({KernelVariant::cache_blocked(cs, args.vector_width), true});

        BlockVector baseline_u;
        bool all_gates_ok = true;
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& entry : grid) {
            SymmetricOperator h(problem.l, problem.coo.diag, entry.variant, pool.get());
            BlockVector u(n, nb);
            h.apply(w, u);  // warmup + gate value
            bool gate_ok = true;
            if (entry.variant.tag == KernelTag::Baseline && !entry.has_cache && baseline_u.nrows == 0) {
                baseline_u = u;
            } else {
                gate_ok = rel_frobenius_distance(u, baseline_u) <= 1e-10;
            }
            nlohmann::json row = {{"variant", entry.variant.name()}, {"gate_ok", gate_ok}};
            if (entry.has_cache) row["cache_size"] = entry.variant.cache_size;
            if (gate_ok) {
                std::vector<double> times;
                times.reserve(static_cast<std::size_t>(args.reps));
                for (int rep = 0; rep < args.reps; ++rep) {
                    const auto t0 = std::chrono::steady_clock::now();
                    h.apply(w, u);
                    const auto t1 = std::chrono::steady_clock::now();
                    times.push_back(std::chrono::duration<double>(t1 - t0).count());
                }
                std::sort(times.begin(), times.end());
                row["seconds_median"] = times[times.size() / 2];
                row["seconds_min"] = times.front();
            } else {
                all_gates_ok = false;
            }
            rows.push_back(row);
        }

        nlohmann::json j;
        j["schema"] = "blockeig/run-report/v1";
        j["command"] = "bench";
        j["config"] = detail::config_echo(args, problem, threads);
        j["n"] = n;
        j["nnz_lower"] = problem.l.nnz();
        j["bench"] = {{"reps", args.reps}, {"nvec", nb}, {"grid", rows}};
        detail::emit(j, out);
        if (!all_gates_ok) {
            err << "error: a kernel variant failed the baseline-equivalence gate\n";
            return kExitNumerical;
        }
        return kExitOk;
    } catch (const Error& e) {
        return detail::map_error_exit(e, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    }
}

/// `explain-layout` entry point: dump the rank map, groups and (when a
/// dimension is given) the segment table.
inline int cmd_explain_layout(int nd, index_t n, std::ostream& out, std::ostream& err) {
    try {
        auto layout = build_layout(nd);
        nlohmann::json j;
        if (n > 0) {
            std::vector<index_t> boundaries(static_cast<std::size_t>(nd) + 1);
            for (int g = 0; g <= nd; ++g) boundaries[static_cast<std::size_t>(g)] = n * g / nd;
            std::vector<double> unit_diag(static_cast<std::size_t>(n), 1.0);
            auto pb = partition_matrix({}, unit_diag, layout, boundaries,
                                       std::min<index_t>(4000, n));
            j = layout_to_json(layout, &pb);
        } else {
            j = layout_to_json(layout);
        }
        detail::emit(j, out);
        return kExitOk;
    } catch (const Error& e) {
        return detail::map_error_exit(e, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    }
}

}  // namespace blockeig
