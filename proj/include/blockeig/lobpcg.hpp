// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "blockeig/densela.hpp"
#include "blockeig/kernels.hpp"
#include "blockeig/precond.hpp"

namespace blockeig {

/// out = H * in. Implementations: SymmetricOperator::apply, the distributed
/// wrapper, or any user closure with the same contract.
using Operator = std::function<void(const BlockVector& in, BlockVector& out)>;

struct SolverState;

struct SolverConfig {
    int k = 5;
    int nb = 0;  // block width; 0 means k + 3
    double tol = 1e-6;
    int maxiter = 500;
    FomConfig fom;
    KernelVariant variant;
    std::uint64_t seed = 1234;
    ThreadPool* pool = nullptr;
    /// optional per-iteration hook, called after each completed iteration
    std::function<void(const SolverState&, int)> observer;

    int block_width() const { return nb > 0 ? nb : k + 3; }

    void validate(index_t n) const {
        const int width = block_width();
        if (k < 1 || k > width) throw BadParams("SolverConfig: need 1 <= k <= nb");
        if (static_cast<index_t>(width) * 3 > n)
            throw BadParams("SolverConfig: operator dimension must be at least 3*nb");
        if (!(tol > 0.0)) throw BadParams("SolverConfig: tol must be positive");
        if (maxiter < 1) throw BadParams("SolverConfig: maxiter must be positive");
        fom.validate();
        variant.validate();
    }
};

/// Working blocks of the iteration. P and HP are empty until the first
/// search direction exists.
struct SolverState {
    BlockVector x, w, p, hx, hw, hp;
    std::vector<double> theta;           // nb Ritz values, ascending
    std::vector<double> residual_norms;  // nb
    int n_converged = 0;
    bool p_active = false;
};

struct IterationRecord {
    int iter = 0;
    std::vector<double> theta;
    std::vector<double> residual_norms;
    int n_converged = 0;
    double t_spmm = 0.0, t_precond = 0.0, t_dense = 0.0, t_total = 0.0;
};

struct ConvergenceHistory {
    std::vector<IterationRecord> records;
    std::int64_t operator_calls = 0;
    std::int64_t precond_fallbacks = 0;
    int restarts = 0;  // iterations that dropped P to recover
};

struct SolveResult {
    std::vector<double> lambda;  // k smallest Ritz values
    BlockVector x;               // matching k columns
    ConvergenceHistory history;
    bool converged = false;  // false means maxiter was reached
};

struct RayleighRitzResult {
    SmallDense c1, c2, c3;  // c3 is 0x0 when P is absent
    std::vector<double> theta;
};

namespace detail {

inline void place_block(SmallDense& g, int roff, int coff, const SmallDense& blk) {
    for (int j = 0; j < blk.ncols; ++j)
        for (int i = 0; i < blk.nrows; ++i) g.at(roff + i, coff + j) = blk.at(i, j);
}

inline void mirror_lower(SmallDense& g) {
    for (int j = 0; j < g.ncols; ++j)
        for (int i = j + 1; i < g.nrows; ++i) g.at(j, i) = g.at(i, j);
}

inline SmallDense rows_slice(const SmallDense& c, int begin, int count) {
    SmallDense out(count, c.ncols);
    for (int j = 0; j < c.ncols; ++j)
        for (int i = 0; i < count; ++i) out.at(i, j) = c.at(begin + i, j);
    return out;
}

}  // namespace detail

/// Projected eigenproblem on span[X W P]: assembles the Gram matrix G = S^T H S
/// and overlap O = S^T S from their six (three, when P is absent)
/// lower-triangle sub-blocks, mirrors them symmetric, and extracts the k_keep
/// smallest eigenpairs. The coefficient block C comes back split conformally
/// with (X, W, P).
inline RayleighRitzResult rayleigh_ritz(const BlockVector& x, const BlockVector& w,
                                        const BlockVector* p, const BlockVector& hx,
                                        const BlockVector& hw, const BlockVector* hp, int k_keep,
                                        ThreadPool* pool = nullptr) {
    const int nb = static_cast<int>(x.nvec);
    const bool with_p = p != nullptr;
    if (w.nvec != nb || (with_p && p->nvec != nb))
        throw DimensionMismatch("rayleigh_ritz: basis parts must share nvec");
    if ((with_p && hp == nullptr) || (!with_p && hp != nullptr))
        throw DimensionMismatch("rayleigh_ritz: P and HP must be given together");
    const int dim = with_p ? 3 * nb : 2 * nb;

    SmallDense g(dim, dim), o(dim, dim);
    detail::place_block(g, 0, 0, gram(x, hx, pool));
    detail::place_block(g, nb, 0, gram(w, hx, pool));
    detail::place_block(g, nb, nb, gram(w, hw, pool));
    detail::place_block(o, 0, 0, gram(x, x, pool));
    detail::place_block(o, nb, 0, gram(w, x, pool));
    detail::place_block(o, nb, nb, gram(w, w, pool));
    if (with_p) {
        detail::place_block(g, 2 * nb, 0, gram(*p, hx, pool));
        detail::place_block(g, 2 * nb, nb, gram(*p, hw, pool));
        detail::place_block(g, 2 * nb, 2 * nb, gram(*p, *hp, pool));
        detail::place_block(o, 2 * nb, 0, gram(*p, x, pool));
        detail::place_block(o, 2 * nb, nb, gram(*p, w, pool));
        detail::place_block(o, 2 * nb, 2 * nb, gram(*p, *p, pool));
    }
    detail::mirror_lower(g);
    detail::mirror_lower(o);

    SygvResult eig;
    try {
        eig = sygv_lowest(g, o, k_keep, 1e-10);
    } catch (const NotPositiveDefinite& e) {
        throw BasisDegenerate(std::string("rayleigh_ritz: overlap matrix failed Cholesky (") +
                              e.what() + ")");
    }

    RayleighRitzResult out;
    out.theta = std::move(eig.d);
    out.c1 = detail::rows_slice(eig.c, 0, nb);
    out.c2 = detail::rows_slice(eig.c, nb, nb);
    if (with_p) out.c3 = detail::rows_slice(eig.c, 2 * nb, nb);
    return out;
}

struct UpdatedBlocks {
    BlockVector x, hx, p, hp;
};

/// The updating formula and its H-image recurrences:
///   X+ = X C1 + W C2 + P C3,      P+ = W C2 + P C3,
///   HX+ = HX C1 + HW C2 + HP C3,  HP+ = HW C2 + HP C3.
/// No operator application happens here; H-images are linear combinations of
/// the cached ones.
inline UpdatedBlocks update_blocks(const BlockVector& x, const BlockVector& w,
                                   const BlockVector* p, const BlockVector& hx,
                                   const BlockVector& hw, const BlockVector* hp,
                                   const SmallDense& c1, const SmallDense& c2,
                                   const SmallDense& c3, ThreadPool* pool = nullptr) {
    if (c1.nrows != static_cast<int>(x.nvec) || c2.nrows != static_cast<int>(w.nvec) ||
        c1.ncols != c2.ncols)
        throw DimensionMismatch("update_blocks: coefficient blocks do not conform");
    const bool with_p = p != nullptr;
    if (with_p && (c3.nrows != static_cast<int>(p->nvec) || c3.ncols != c1.ncols))
        throw DimensionMismatch("update_blocks: C3 does not conform to P");

    UpdatedBlocks out;
    out.p = block_times_small(w, c2, pool);
    out.hp = block_times_small(hw, c2, pool);
    if (with_p) {
        block_times_small_add(out.p, *p, c3, pool);
        block_times_small_add(out.hp, *hp, c3, pool);
    }
    out.x = block_times_small(x, c1, pool);
    out.hx = block_times_small(hx, c1, pool);
    for (std::size_t i = 0; i < out.x.data.size(); ++i) {
        out.x.data[i] += out.p.data[i];
        out.hx.data[i] += out.hp.data[i];
    }
    return out;
}

/// R(:,v) = HX(:,v) - theta_v X(:,v).
inline BlockVector residual_block(const BlockVector& hx, const BlockVector& x,
                                  std::span<const double> theta, ThreadPool* pool = nullptr) {
    require_same_shape(hx, x, "residual_block");
    if (static_cast<index_t>(theta.size()) != x.nvec)
        throw DimensionMismatch("residual_block: one theta per column required");
    BlockVector r(x.nrows, x.nvec);
    parallel_chunks(pool, x.nrows, [&](index_t rb, index_t re, int) {
        for (index_t row = rb; row < re; ++row) {
            const double* hxr = hx.row(row);
            const double* xr = x.row(row);
            double* rr = r.row(row);
            for (index_t v = 0; v < x.nvec; ++v) rr[v] = hxr[v] - theta[static_cast<std::size_t>(v)] * xr[v];
        }
    });
    return r;
}

/// Column v is converged when ||R(:,v)|| <= tol * max(1, |theta_v|) * ||X(:,v)||.
/// n_converged counts converged columns among the first k only.
inline std::pair<std::vector<char>, int> convergence_check(const BlockVector& r,
                                                           const BlockVector& x,
                                                           std::span<const double> theta,
                                                           double tol, int k) {
    require_same_shape(r, x, "convergence_check");
    std::vector<char> flags(static_cast<std::size_t>(x.nvec), 0);
    int n_converged = 0;
    for (index_t v = 0; v < x.nvec; ++v) {
        const double rn = column_norm(r, v);
        const double xn = column_norm(x, v);
        const double bound = tol * std::max(1.0, std::abs(theta[static_cast<std::size_t>(v)])) * xn;
        if (rn <= bound) {
            flags[static_cast<std::size_t>(v)] = 1;
            if (v < k) ++n_converged;
        }
    }
    return {std::move(flags), n_converged};
}

namespace detail {

inline SmallDense negated(SmallDense m) {
    for (auto& v : m.data) v = -v;
    return m;
}

// one classical block Gram-Schmidt pass: w -= basis * (basis^T w)
inline void project_out(BlockVector& w, const BlockVector& basis, ThreadPool* pool) {
    const SmallDense coeff = gram(basis, w, pool);
    block_times_small_add(w, basis, negated(coeff), pool);
}

// Orthonormalize A, applying the identical column operations to its cached
// H-image. A CholQR transform is only taken when the Gram factor is safely
// conditioned (strict pivot floor); otherwise plain column scaling. Both
// paths keep HA = H A to machine precision, whereas an ill-conditioned
// R^{-1} applied to A and HA separately would amplify roundoff and corrupt
// the recurrence.
inline void orthonormalize_pair(BlockVector& a, BlockVector& ha, ThreadPool* pool) {
    const SmallDense b = gram(a, a, pool);
    try {
        const SmallDense r = cholesky_floored(b, 1e-8);
        trsm_right_inv(a, r, pool);
        trsm_right_inv(ha, r, pool);
        return;
    } catch (const NotPositiveDefinite&) {
    }
    for (index_t v = 0; v < a.nvec; ++v) {
        const double an = column_norm(a, v);
        if (an > 1e-300) {
            scale_column(a, v, 1.0 / an);
            scale_column(ha, v, 1.0 / an);
        }
    }
}

struct PhaseTimer {
    using clock = std::chrono::steady_clock;
    clock::time_point start = clock::now();
    double take() {
        const auto now = clock::now();
        const double s = std::chrono::duration<double>(now - start).count();
        start = now;
        return s;
    }
};

}  // namespace detail

/// Block preconditioned eigensolver for the k smallest eigenpairs of a
/// symmetric operator. Follows the standard flow: one operator application
/// per iteration (on W only), Rayleigh-Ritz over [X W P], recurrence-updated
/// H-images, Cholesky-QR basis hygiene, per-column convergence tracking.
/// `precond` may be null (unpreconditioned). Returns converged = false when
/// maxiter is exhausted (best-so-far results are still filled in).
inline SolveResult lobpcg_solve(const Operator& op, index_t n, const DiagonalTileSet* precond,
                                const BlockVector* x0, const SolverConfig& cfg) {
    cfg.validate(n);
    const int nb = cfg.block_width();
    const int k = cfg.k;
    ThreadPool* pool = cfg.pool;
    if (precond && precond->dim() != n)
        throw DimensionMismatch("lobpcg_solve: preconditioner dimension mismatch");

    SolveResult result;
    ConvergenceHistory& history = result.history;
    auto apply_op = [&](const BlockVector& in, BlockVector& out) {
        op(in, out);
        ++history.operator_calls;
    };

    SolverState st;
    if (x0) {
        if (x0->nrows != n || x0->nvec != nb)
            throw DimensionMismatch("lobpcg_solve: X0 must be n x nb");
        st.x = *x0;
    } else {
        st.x = random_block(n, nb, cfg.seed);
    }
    qr_of_transpose(st.x, pool);  // RankDeficient here means X0 was not independent

    st.hx = BlockVector(n, nb);
    apply_op(st.x, st.hx);

    {
        // initial Rayleigh-Ritz on X alone
        SmallDense g = gram(st.x, st.hx, pool);
        detail::mirror_lower(g);
        SmallDense o = gram(st.x, st.x, pool);
        SygvResult eig;
        try {
            eig = sygv_lowest(g, o, nb, 1e-10);
        } catch (const NotPositiveDefinite&) {
            throw BreakdownUnrecoverable("lobpcg_solve: initial block is degenerate");
        }
        st.theta = eig.d;
        st.x = block_times_small(st.x, eig.c, pool);
        st.hx = block_times_small(st.hx, eig.c, pool);
    }
    BlockVector r = residual_block(st.hx, st.x, st.theta, pool);

    bool converged = false;
    for (int iter = 1; iter <= cfg.maxiter; ++iter) {
        detail::PhaseTimer total_timer;
        double t_spmm = 0.0, t_precond = 0.0;
        detail::PhaseTimer phase;

        // W = K^{-1} R on the raw residual
        if (precond) {
            std::vector<double> shifts(static_cast<std::size_t>(nb));
            for (int v = 0; v < nb; ++v)
                shifts[static_cast<std::size_t>(v)] = st.theta[static_cast<std::size_t>(std::min(v, k - 1))];
            st.w = apply_preconditioner(*precond, shifts, r, cfg.fom, pool,
                                        &history.precond_fallbacks);
        } else {
            st.w = r;
        }
        t_precond = phase.take();

        // hygiene: orthonormalize W, project out [X P], renormalize. W has
        // no cached H-image yet, so these transforms are free of recurrence
        // consistency concerns.
        try {
            qr_of_transpose(st.w, pool);
        } catch (const RankDeficient&) {
            // residual block collapsed (typically everything converged past
            // tol); restart the search directions from a seeded random block
            st.w = random_block(n, nb, cfg.seed + static_cast<std::uint64_t>(iter) * 7919u);
            qr_of_transpose(st.w, pool);
        }
        detail::project_out(st.w, st.x, pool);
        if (st.p_active) detail::project_out(st.w, st.p, pool);
        try {
            qr_of_transpose(st.w, pool);
        } catch (const RankDeficient&) {
            // W fell inside span[X P]; keep the projected block and let the
            // overlap guard in the projected solve arbitrate
        }
        phase.take();  // dense time, folded into the remainder below

        st.hw = BlockVector(n, nb);
        apply_op(st.w, st.hw);
        t_spmm = phase.take();

        RayleighRitzResult rr;
        bool dropped_p = false;
        try {
            rr = rayleigh_ritz(st.x, st.w, st.p_active ? &st.p : nullptr, st.hx, st.hw,
                               st.p_active ? &st.hp : nullptr, nb, pool);
        } catch (const BasisDegenerate&) {
            if (!st.p_active)
                throw BreakdownUnrecoverable("lobpcg_solve: 2-block basis failed Cholesky");
            // drop the search directions for this iteration and retry
            dropped_p = true;
            ++history.restarts;
            try {
                rr = rayleigh_ritz(st.x, st.w, nullptr, st.hx, st.hw, nullptr, nb, pool);
            } catch (const BasisDegenerate&) {
                throw BreakdownUnrecoverable("lobpcg_solve: basis repair failed twice");
            }
        }
        const bool with_p = st.p_active && !dropped_p;

        auto upd = update_blocks(st.x, st.w, with_p ? &st.p : nullptr, st.hx, st.hw,
                                 with_p ? &st.hp : nullptr, rr.c1, rr.c2, rr.c3, pool);
        st.x = std::move(upd.x);
        st.hx = std::move(upd.hx);
        st.p = std::move(upd.p);
        st.hp = std::move(upd.hp);
        st.theta = rr.theta;
        st.p_active = true;

        // keep the search directions orthogonal to X and near-orthonormal so
        // the overlap matrix stays well conditioned as P shrinks; HP tracks
        // every column operation (GEMM projections and guarded CholQR), so
        // HP = H P is preserved
        {
            const SmallDense xtp = gram(st.x, st.p, pool);
            block_times_small_add(st.p, st.x, detail::negated(xtp), pool);
            block_times_small_add(st.hp, st.hx, detail::negated(xtp), pool);
            detail::orthonormalize_pair(st.p, st.hp, pool);
        }

        r = residual_block(st.hx, st.x, st.theta, pool);
        auto [flags, n_conv] = convergence_check(r, st.x, st.theta, cfg.tol, k);
        st.n_converged = n_conv;
        st.residual_norms.assign(static_cast<std::size_t>(nb), 0.0);
        for (int v = 0; v < nb; ++v) st.residual_norms[static_cast<std::size_t>(v)] = column_norm(r, v);

        IterationRecord rec;
        rec.iter = iter;
        rec.theta = st.theta;
        rec.residual_norms = st.residual_norms;
        rec.n_converged = n_conv;
        rec.t_spmm = t_spmm;
        rec.t_precond = t_precond;
        rec.t_total = total_timer.take();
        rec.t_dense = std::max(0.0, rec.t_total - t_spmm - t_precond);
        history.records.push_back(std::move(rec));

        if (cfg.observer) cfg.observer(st, iter);
        if (n_conv >= k) {
            converged = true;
            break;
        }
    }

    result.converged = converged;
    result.lambda.assign(st.theta.begin(), st.theta.begin() + k);
    result.x = BlockVector(n, k);
    for (index_t row = 0; row < n; ++row)
        for (int v = 0; v < k; ++v) result.x(row, v) = st.x(row, v);
    return result;
}

/// Convenience overload: solve with a half-stored matrix directly.
inline SolveResult lobpcg_solve(const SymmetricOperator& h, const DiagonalTileSet* precond,
                                const BlockVector* x0, const SolverConfig& cfg) {
    return lobpcg_solve([&h](const BlockVector& in, BlockVector& out) { h.apply(in, out); },
                        h.dim(), precond, x0, cfg);
}

}  // namespace blockeig
