// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <span>
#include <string>
#include <vector>

#include "blockeig/csb.hpp"
#include "blockeig/thread_pool.hpp"

namespace blockeig {

enum class KernelTag { Baseline, FusedAtomic, CacheBlocked };

/// Selects one of the three local SpMM strategies.
///
/// Baseline parallelizes over whole output row blocks, so workers never share
/// an output row. FusedAtomic flattens the (row-block, col-block) pair loop to
/// create more, smaller tasks; output rows can then be shared between workers
/// and element updates on shared row blocks are atomic. CacheBlocked adds an
/// inner level of blocking: each block's nonzeros are staged in worker-private
/// index/value buffers of length cache_size before the multiply loop runs.
struct KernelVariant {
    KernelTag tag = KernelTag::Baseline;
    int cache_size = 256;    // CacheBlocked chunk length
    int vector_width = 256;  // CacheBlocked, advisory

    static KernelVariant baseline() { return {KernelTag::Baseline}; }
    static KernelVariant fused_atomic() { return {KernelTag::FusedAtomic}; }
    static KernelVariant cache_blocked(int cache = 256, int vec = 256) {
        return {KernelTag::CacheBlocked, cache, vec};
    }

    void validate() const {
        if (cache_size < 1) throw BadParams("KernelVariant: cache_size must be >= 1");
        if (vector_width < 1) throw BadParams("KernelVariant: vector_width must be >= 1");
    }

    const char* name() const {
        switch (tag) {
            case KernelTag::Baseline: return "baseline";
            case KernelTag::FusedAtomic: return "fused-atomic";
            case KernelTag::CacheBlocked: return "cache-blocked";
        }
        return "?";
    }
};

inline KernelVariant variant_from_name(const std::string& s) {
    if (s == "baseline") return KernelVariant::baseline();
    if (s == "fused-atomic") return KernelVariant::fused_atomic();
    if (s == "cache-blocked") return KernelVariant::cache_blocked();
    throw BadParams("unknown kernel variant '" + s + "'");
}

namespace detail {

inline void add_rows(double* u, const double* w, double v, index_t nvec) {
    for (index_t ii = 0; ii < nvec; ++ii) u[ii] += v * w[ii];
}

inline void add_rows_atomic(double* u, const double* w, double v, index_t nvec) {
    for (index_t ii = 0; ii < nvec; ++ii)
        std::atomic_ref<double>(u[ii]).fetch_add(v * w[ii], std::memory_order_relaxed);
}

// One nonempty block of H viewed from the direction of a multiply:
// out_base/in_base are already resolved for the (no)trans case.
struct BlockTask {
    index_t k_begin, k_end;
    index_t out_base, in_base;
    index_t out_block;  // output-side block id, for conflict marking
    bool swap_indices;  // trans: local col indexes the output row
};

inline void run_block_plain(const CsbCooMatrix& h, const BlockTask& t, const BlockVector& win,
                            BlockVector& uout) {
    const index_t nvec = win.nvec;
    for (index_t k = t.k_begin; k < t.k_end; ++k) {
        const index_t lr = h.local_rows[static_cast<std::size_t>(k)];
        const index_t lc = h.local_cols[static_cast<std::size_t>(k)];
        const index_t out_r = t.out_base + (t.swap_indices ? lc : lr);
        const index_t in_r = t.in_base + (t.swap_indices ? lr : lc);
        add_rows(uout.row(out_r), win.row(in_r), h.values[static_cast<std::size_t>(k)], nvec);
    }
}

inline void run_block_atomic(const CsbCooMatrix& h, const BlockTask& t, const BlockVector& win,
                             BlockVector& uout) {
    const index_t nvec = win.nvec;
    for (index_t k = t.k_begin; k < t.k_end; ++k) {
        const index_t lr = h.local_rows[static_cast<std::size_t>(k)];
        const index_t lc = h.local_cols[static_cast<std::size_t>(k)];
        const index_t out_r = t.out_base + (t.swap_indices ? lc : lr);
        const index_t in_r = t.in_base + (t.swap_indices ? lr : lc);
        add_rows_atomic(uout.row(out_r), win.row(in_r), h.values[static_cast<std::size_t>(k)], nvec);
    }
}

// CacheBlocked: stage cache_size nonzeros (pre-resolved row/col/value) into
// worker-private arrays, then run the fused multiply loop over the stage.
struct StageBuffers {
    std::vector<index_t> out_r, in_r;
    std::vector<double> val;
    explicit StageBuffers(int cap)
        : out_r(static_cast<std::size_t>(cap)),
          in_r(static_cast<std::size_t>(cap)),
          val(static_cast<std::size_t>(cap)) {}
};

inline void run_block_staged(const CsbCooMatrix& h, const BlockTask& t, const BlockVector& win,
                             BlockVector& uout, StageBuffers& st, int cache_size, bool atomic) {
    const index_t nvec = win.nvec;
    for (index_t kv = t.k_begin; kv < t.k_end; kv += cache_size) {
        const index_t kvmax = std::min<index_t>(cache_size, t.k_end - kv);
        for (index_t k = 0; k < kvmax; ++k) {
            const index_t lr = h.local_rows[static_cast<std::size_t>(kv + k)];
            const index_t lc = h.local_cols[static_cast<std::size_t>(kv + k)];
            st.out_r[static_cast<std::size_t>(k)] = t.out_base + (t.swap_indices ? lc : lr);
            st.in_r[static_cast<std::size_t>(k)] = t.in_base + (t.swap_indices ? lr : lc);
            st.val[static_cast<std::size_t>(k)] = h.values[static_cast<std::size_t>(kv + k)];
        }
        if (atomic) {
            for (index_t k = 0; k < kvmax; ++k)
                add_rows_atomic(uout.row(st.out_r[static_cast<std::size_t>(k)]),
                                win.row(st.in_r[static_cast<std::size_t>(k)]),
                                st.val[static_cast<std::size_t>(k)], nvec);
        } else {
            for (index_t k = 0; k < kvmax; ++k)
                add_rows(uout.row(st.out_r[static_cast<std::size_t>(k)]),
                         win.row(st.in_r[static_cast<std::size_t>(k)]),
                         st.val[static_cast<std::size_t>(k)], nvec);
        }
    }
}

// Nonempty block tasks in output-major order (all tasks writing one output
// block are consecutive).
inline std::vector<BlockTask> block_tasks(const CsbCooMatrix& h, bool trans) {
    std::vector<BlockTask> tasks;
    const index_t nout = trans ? h.ncolblks : h.nrowblks;
    const index_t nin = trans ? h.nrowblks : h.ncolblks;
    for (index_t ob = 0; ob < nout; ++ob) {
        for (index_t ib = 0; ib < nin; ++ib) {
            const index_t bi = trans ? ib : ob;
            const index_t bj = trans ? ob : ib;
            const index_t b = h.block_index(bi, bj);
            const index_t nnz = h.block_nnz[static_cast<std::size_t>(b)];
            if (nnz == 0) continue;
            BlockTask t;
            t.k_begin = h.block_nnz_offsets[static_cast<std::size_t>(b)];
            t.k_end = t.k_begin + nnz;
            t.out_base = trans ? h.col_offsets[static_cast<std::size_t>(bj)]
                               : h.row_offsets[static_cast<std::size_t>(bi)];
            t.in_base = trans ? h.row_offsets[static_cast<std::size_t>(bi)]
                              : h.col_offsets[static_cast<std::size_t>(bj)];
            t.out_block = ob;
            t.swap_indices = trans;
            tasks.push_back(t);
        }
    }
    return tasks;
}

// Contiguous chunk boundaries over the task list, balanced by nnz.
inline std::vector<std::size_t> chunk_boundaries(const std::vector<BlockTask>& tasks, int nchunks) {
    std::vector<std::size_t> bounds(static_cast<std::size_t>(nchunks) + 1, tasks.size());
    bounds[0] = 0;
    index_t total = 0;
    for (const auto& t : tasks) total += t.k_end - t.k_begin;
    index_t acc = 0;
    std::size_t p = 0;
    for (int c = 1; c < nchunks; ++c) {
        const index_t target = total * c / nchunks;
        while (p < tasks.size() && acc < target) {
            acc += tasks[p].k_end - tasks[p].k_begin;
            ++p;
        }
        bounds[static_cast<std::size_t>(c)] = p;
    }
    return bounds;
}

// Fused-pair driver shared by FusedAtomic and CacheBlocked. Chunk splits are
// snapped to output-block changepoints whenever the balance allows, so
// atomic updates are paid exactly where a block has more pair-tasks than fit
// one worker and its rows really are written concurrently.
inline void run_fused(const CsbCooMatrix& h, const BlockVector& win, BlockVector& uout, bool trans,
                      const KernelVariant& variant, ThreadPool* pool) {
    const auto tasks = block_tasks(h, trans);
    if (tasks.empty()) return;
    const int nw = pool_width(pool);
    const int nchunks = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(nw), tasks.size()));
    auto bounds = chunk_boundaries(tasks, nchunks);
    if (nchunks > 1) {
        std::vector<std::size_t> cps = {0};
        for (std::size_t p = 1; p < tasks.size(); ++p)
            if (tasks[p].out_block != tasks[p - 1].out_block) cps.push_back(p);
        cps.push_back(tasks.size());
        for (int c = 1; c < nchunks; ++c) {
            std::size_t& b = bounds[static_cast<std::size_t>(c)];
            b = std::max(b, bounds[static_cast<std::size_t>(c) - 1]);
            const auto it = std::lower_bound(cps.begin(), cps.end(), b);
            std::size_t lo = b, hi = b;
            if (it == cps.end() || *it != b) {
                hi = (it == cps.end()) ? tasks.size() : *it;
                lo = *std::prev(it);
            }
            const std::size_t snapped = (b - lo <= hi - b) ? lo : hi;
            if (snapped > bounds[static_cast<std::size_t>(c) - 1]) b = snapped;
        }
    }

    std::vector<char> shared_out;
    if (nchunks > 1) {
        const index_t nout = trans ? h.ncolblks : h.nrowblks;
        std::vector<int> first(static_cast<std::size_t>(nout), -1), last(static_cast<std::size_t>(nout), -1);
        for (int c = 0; c < nchunks; ++c) {
            for (std::size_t p = bounds[static_cast<std::size_t>(c)]; p < bounds[static_cast<std::size_t>(c) + 1]; ++p) {
                const auto ob = static_cast<std::size_t>(tasks[p].out_block);
                if (first[ob] < 0) first[ob] = c;
                last[ob] = c;
            }
        }
        shared_out.resize(static_cast<std::size_t>(nout), 0);
        for (std::size_t ob = 0; ob < shared_out.size(); ++ob)
            shared_out[ob] = (first[ob] >= 0 && first[ob] != last[ob]) ? 1 : 0;
    }

    auto body = [&](int c) {
        if (c >= nchunks) return;
        StageBuffers stage(variant.tag == KernelTag::CacheBlocked ? variant.cache_size : 1);
        for (std::size_t p = bounds[static_cast<std::size_t>(c)]; p < bounds[static_cast<std::size_t>(c) + 1]; ++p) {
            const BlockTask& t = tasks[p];
            const bool atomic =
                !shared_out.empty() && shared_out[static_cast<std::size_t>(t.out_block)] != 0;
            if (variant.tag == KernelTag::CacheBlocked)
                run_block_staged(h, t, win, uout, stage, variant.cache_size, atomic);
            else if (atomic)
                run_block_atomic(h, t, win, uout);
            else
                run_block_plain(h, t, win, uout);
        }
    };
    if (nchunks == 1)
        body(0);
    else
        pool->run(body);
}

inline void run_baseline(const CsbCooMatrix& h, const BlockVector& win, BlockVector& uout,
                         bool trans, ThreadPool* pool) {
    const index_t nout = trans ? h.ncolblks : h.nrowblks;
    const index_t nin = trans ? h.nrowblks : h.ncolblks;
    parallel_jobs(pool, nout, [&](index_t ob, int) {
        for (index_t ib = 0; ib < nin; ++ib) {
            const index_t bi = trans ? ib : ob;
            const index_t bj = trans ? ob : ib;
            const index_t b = h.block_index(bi, bj);
            const index_t nnz = h.block_nnz[static_cast<std::size_t>(b)];
            if (nnz == 0) continue;
            BlockTask t;
            t.k_begin = h.block_nnz_offsets[static_cast<std::size_t>(b)];
            t.k_end = t.k_begin + nnz;
            t.out_base = trans ? h.col_offsets[static_cast<std::size_t>(bj)]
                               : h.row_offsets[static_cast<std::size_t>(bi)];
            t.in_base = trans ? h.row_offsets[static_cast<std::size_t>(bi)]
                              : h.col_offsets[static_cast<std::size_t>(bj)];
            t.out_block = ob;
            t.swap_indices = trans;
            run_block_plain(h, t, win, uout);
        }
    });
}

inline void check_spmm_shapes(const CsbCooMatrix& h, const BlockVector& w, const BlockVector& u,
                              bool trans) {
    const index_t need_w = trans ? h.nrows : h.ncols;
    const index_t need_u = trans ? h.ncols : h.nrows;
    if (w.nrows != need_w || u.nrows != need_u || w.nvec != u.nvec)
        throw DimensionMismatch("spmm: operand shapes do not conform to the matrix");
    if (w.data.data() == u.data.data()) throw BadParams("spmm: W and U must not alias");
}

}  // namespace detail

/// U += H * W. The accumulator is not cleared.
inline void spmm_notrans(const CsbCooMatrix& h, const BlockVector& w, BlockVector& u,
                         const KernelVariant& variant, ThreadPool* pool = nullptr) {
    variant.validate();
    detail::check_spmm_shapes(h, w, u, false);
    if (variant.tag == KernelTag::Baseline)
        detail::run_baseline(h, w, u, false, pool);
    else
        detail::run_fused(h, w, u, false, variant, pool);
}

/// U += H^T * W. Separate from spmm_notrans so callers can interleave the
/// two multiplies with other work.
inline void spmm_trans(const CsbCooMatrix& h, const BlockVector& w, BlockVector& u,
                       const KernelVariant& variant, ThreadPool* pool = nullptr) {
    variant.validate();
    detail::check_spmm_shapes(h, w, u, true);
    if (variant.tag == KernelTag::Baseline)
        detail::run_baseline(h, w, u, true, pool);
    else
        detail::run_fused(h, w, u, true, variant, pool);
}

/// U = (L + L^T + diag(D)) * W for a strictly-lower L; the half-stored
/// realization of a symmetric multiply. Validates L on every call; use
/// SymmetricOperator for repeated applies.
inline BlockVector apply_symmetric(const CsbCooMatrix& l, std::span<const double> d,
                                   const BlockVector& w, const KernelVariant& variant,
                                   ThreadPool* pool = nullptr) {
    if (l.nrows != l.ncols) throw DimensionMismatch("apply_symmetric: matrix must be square");
    if (!is_strictly_lower(l))
        throw NotStrictlyLower("apply_symmetric: stored entry with row <= col");
    if (static_cast<index_t>(d.size()) != l.nrows || w.nrows != l.nrows)
        throw DimensionMismatch("apply_symmetric: diagonal or multivector length mismatch");
    BlockVector u(l.nrows, w.nvec);
    spmm_notrans(l, w, u, variant, pool);
    spmm_trans(l, w, u, variant, pool);
    parallel_chunks(pool, l.nrows, [&](index_t rb, index_t re, int) {
        for (index_t r = rb; r < re; ++r) {
            const double dr = d[static_cast<std::size_t>(r)];
            double* ur = u.row(r);
            const double* wr = w.row(r);
            for (index_t v = 0; v < w.nvec; ++v) ur[v] += dr * wr[v];
        }
    });
    return u;
}

/// Half-stored symmetric operator validated once at construction. Holds a
/// reference to the matrix; the caller keeps it alive.
class SymmetricOperator {
public:
    SymmetricOperator(const CsbCooMatrix& l, std::vector<double> diag, KernelVariant variant,
                      ThreadPool* pool = nullptr)
        : l_(&l), diag_(std::move(diag)), variant_(variant), pool_(pool) {
        variant_.validate();
        if (l.nrows != l.ncols) throw DimensionMismatch("SymmetricOperator: matrix must be square");
        if (static_cast<index_t>(diag_.size()) != l.nrows)
            throw DimensionMismatch("SymmetricOperator: diagonal length mismatch");
        if (!is_strictly_lower(l))
            throw NotStrictlyLower("SymmetricOperator: stored entry with row <= col");
    }

    index_t dim() const { return l_->nrows; }
    const CsbCooMatrix& matrix() const { return *l_; }
    const std::vector<double>& diag() const { return diag_; }

    /// out = H * in (overwrites out).
    void apply(const BlockVector& in, BlockVector& out) const {
        if (!in.same_shape(out) || in.nrows != l_->nrows)
            throw DimensionMismatch("SymmetricOperator::apply: shape mismatch");
        out.set_zero();
        spmm_notrans(*l_, in, out, variant_, pool_);
        spmm_trans(*l_, in, out, variant_, pool_);
        parallel_chunks(pool_, l_->nrows, [&](index_t rb, index_t re, int) {
            for (index_t r = rb; r < re; ++r) {
                const double dr = diag_[static_cast<std::size_t>(r)];
                double* ur = out.row(r);
                const double* wr = in.row(r);
                for (index_t v = 0; v < in.nvec; ++v) ur[v] += dr * wr[v];
            }
        });
    }

private:
    const CsbCooMatrix* l_;
    std::vector<double> diag_;
    KernelVariant variant_;
    ThreadPool* pool_;
};

}  // namespace blockeig
