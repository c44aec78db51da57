// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
//
// blockeig command line: solve / bench / explain-layout.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "blockeig/driver.hpp"

namespace {

void add_common_flags(CLI::App* cmd, blockeig::DriverArgs& args, std::string& out_path) {
    cmd->add_option("--k", args.k, "number of eigenpairs to compute");
    cmd->add_option("--nb", args.nb, "block width (0 means k + 3)");
    cmd->add_option("--tol", args.tol, "relative residual tolerance");
    cmd->add_option("--maxiter", args.maxiter, "iteration cap");
    cmd->add_option("--fom-iters", args.fom_iters, "Krylov steps per preconditioner tile solve");
    cmd->add_option("--variant", args.variant, "kernel variant: baseline | fused-atomic | cache-blocked");
    cmd->add_option("--cache-size", args.cache_size, "cache-blocked chunk length");
    cmd->add_option("--vector-width", args.vector_width, "cache-blocked vector length (advisory)");
    cmd->add_option("--nd", args.nd, "odd partition count for the simulated distributed run");
    cmd->add_option("--threads", args.threads, "worker count")->envname("BLOCKEIG_THREADS");
    cmd->add_option("--seed", args.seed, "random seed");
    cmd->add_option("--out", out_path, "write the JSON report to a file instead of stdout");
    cmd->add_option("--mm", args.mm_path, "Matrix Market input file (coordinate real symmetric)");
    cmd->add_option("--gen", args.gen, "synthetic input: banded | blocktile | random");
    cmd->add_option("--n", args.n, "synthetic matrix dimension");
    cmd->add_option("--density", args.density, "synthetic random density");
    cmd->add_option("--bandwidth", args.bandwidth, "synthetic banded bandwidth");
    cmd->add_option("--block-extent", args.block_extent, "CSB block extent");
    cmd->add_option("--cache", args.cache_path, "binary CSB cache file (read if present, else written)");
    cmd->add_flag("--no-precond", args.no_precond, "disable the FOM tile preconditioner");
    cmd->add_flag("--strict", args.strict, "exit 4 when the solve does not converge");
}

int run_with_out(const std::string& out_path, const std::function<int(std::ostream&)>& fn) {
    if (out_path.empty()) return fn(std::cout);
    std::ofstream os(out_path);
    if (!os) {
        std::cerr << "error: cannot open " << out_path << " for writing\n";
        return blockeig::kExitInput;
    }
    return fn(os);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"blockeig: block-iterative sparse symmetric eigensolver"};
    app.require_subcommand(1);

    blockeig::DriverArgs args;
    std::string out_path;
    std::string sweep_spec;

    auto* solve = app.add_subcommand("solve", "run the eigensolver and emit a JSON report");
    add_common_flags(solve, args, out_path);

    auto* bench = app.add_subcommand("bench", "time the SpMM kernel variants over a sweep");
    add_common_flags(bench, args, out_path);
    bench->add_option("--sweep", sweep_spec, "sweep spec, e.g. cache=64,256,1024");
    bench->add_option("--reps", args.reps, "timed repetitions per grid entry");

    int nd = 5;
    blockeig::index_t layout_n = 0;
    auto* explain = app.add_subcommand("explain-layout", "dump the triangular rank layout as JSON");
    explain->add_option("--nd", nd, "odd partition count")->required();
    explain->add_option("--n", layout_n, "matrix dimension (adds the segment table)");
    explain->add_option("--out", out_path, "write the JSON to a file instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : blockeig::kExitUsage;
    }

    if (!sweep_spec.empty()) {
        if (sweep_spec.rfind("cache=", 0) != 0) {
            std::cerr << "error: --sweep expects cache=v1,v2,...\n";
            return blockeig::kExitUsage;
        }
        args.sweep_cache.clear();
        std::stringstream ss(sweep_spec.substr(6));
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                args.sweep_cache.push_back(std::stoi(item));
            } catch (...) {
                std::cerr << "error: bad sweep value '" << item << "'\n";
                return blockeig::kExitUsage;
            }
        }
        if (args.sweep_cache.empty()) {
            std::cerr << "error: empty sweep\n";
            return blockeig::kExitUsage;
        }
    }

    if (solve->parsed())
        return run_with_out(out_path, [&](std::ostream& os) { return blockeig::cmd_solve(args, os, std::cerr); });
    if (bench->parsed())
        return run_with_out(out_path, [&](std::ostream& os) { return blockeig::cmd_bench(args, os, std::cerr); });
    return run_with_out(out_path, [&](std::ostream& os) {
        return blockeig::cmd_explain_layout(nd, layout_n, os, std::cerr);
    });
}
