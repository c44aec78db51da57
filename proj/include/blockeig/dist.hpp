// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>
#include <optional>
#include <span>
#include <vector>

#include "blockeig/densela.hpp"
#include "blockeig/kernels.hpp"
#include "blockeig/lobpcg.hpp"

namespace blockeig {

/// One stored sub-matrix position. (i, j) is the position in the full
/// symmetric matrix; transposed means the block lives in the upper wedge and
/// its data is the transpose of the lower-triangle sub-matrix (j, i).
struct StoredBlock {
    int i = 0;
    int j = 0;
    bool transposed = false;
};

/// The triangular partition of a half-stored symmetric matrix over
/// n_d(n_d+1)/2 ranks. The stored-block set is
///   {(i, j) : (i - j) mod n_d <= (n_d - 1) / 2}
/// which keeps every unordered block pair exactly once and moves a few
/// upper-wedge blocks in transposed form so that every row group and every
/// column group has exactly (n_d + 1)/2 members. Ranks number the stored
/// blocks in column-major order (by stored column, then stored row).
struct TriangularLayout {
    int nd = 0;
    int n_ranks = 0;
    std::vector<StoredBlock> rank_to_block;
    std::vector<std::vector<int>> row_groups;  // nd groups of (nd+1)/2 ranks
    std::vector<std::vector<int>> col_groups;
    std::vector<int> diagonal_ranks;  // rank holding (g, g)

    int rank_of(int i, int j) const {
        for (int r = 0; r < n_ranks; ++r)
            if (rank_to_block[static_cast<std::size_t>(r)].i == i &&
                rank_to_block[static_cast<std::size_t>(r)].j == j)
                return r;
        return -1;
    }
};

inline TriangularLayout build_layout(int nd) {
    if (nd < 1 || nd % 2 == 0) throw EvenNd("build_layout: n_d must be odd and positive");
    TriangularLayout lt;
    lt.nd = nd;
    lt.n_ranks = nd * (nd + 1) / 2;
    lt.row_groups.assign(static_cast<std::size_t>(nd), {});
    lt.col_groups.assign(static_cast<std::size_t>(nd), {});
    lt.diagonal_ranks.assign(static_cast<std::size_t>(nd), -1);
    const int half = (nd - 1) / 2;
    for (int j = 0; j < nd; ++j) {
        for (int i = 0; i < nd; ++i) {
            if ((((i - j) % nd) + nd) % nd > half) continue;
            const int rank = static_cast<int>(lt.rank_to_block.size());
            lt.rank_to_block.push_back({i, j, i < j});
            lt.row_groups[static_cast<std::size_t>(i)].push_back(rank);
            lt.col_groups[static_cast<std::size_t>(j)].push_back(rank);
            if (i == j) lt.diagonal_ranks[static_cast<std::size_t>(i)] = rank;
        }
    }
    // construction sanity: group sizes are forced by the stored-block set
    for (int g = 0; g < nd; ++g) {
        if (static_cast<int>(lt.row_groups[static_cast<std::size_t>(g)].size()) != (nd + 1) / 2 ||
            static_cast<int>(lt.col_groups[static_cast<std::size_t>(g)].size()) != (nd + 1) / 2)
            throw Error("build_layout: group size invariant violated");
    }
    return lt;
}

/// One contiguous slice of a sub-vector owned by a rank.
struct Segment {
    int rank = -1;
    index_t begin = 0;  // global row range [begin, end)
    index_t end = 0;

    index_t len() const { return end - begin; }
};

/// Communication accounting for the simulated collectives. Volumes count
/// doubles that cross a rank boundary under a flat (tree-less) model.
struct SimComm {
    std::int64_t volume_doubles = 0;
    std::int64_t collective_calls = 0;
};

/// A partitioned problem: the layout plus per-rank local matrices, the
/// diagonal slices held by diagonal ranks, and the segment table.
struct DistProblem {
    TriangularLayout layout;
    std::vector<index_t> boundaries;  // nd + 1 sub-matrix boundaries over [0, n)
    index_t n = 0;
    std::vector<CsbCooMatrix> rank_matrix;
    std::vector<std::vector<double>> rank_diag;          // empty unless diagonal rank
    std::vector<std::vector<Segment>> vector_segments;   // per sub-vector, ascending rank
    std::vector<Segment> segment_of_rank;                // the one segment each rank owns

    index_t sub_len(int g) const {
        return boundaries[static_cast<std::size_t>(g) + 1] - boundaries[static_cast<std::size_t>(g)];
    }
};

/// Split the global strictly-lower COO + diagonal across the layout.
/// Entries destined for a transposed-stored block are transposed on ingest,
/// so reassembling all ranks (undoing the transposition) reproduces the
/// global lower triangle exactly.
inline DistProblem partition_matrix(std::span<const Triple> lower, std::span<const double> diag,
                                    const TriangularLayout& layout,
                                    const std::vector<index_t>& boundaries,
                                    index_t intra_block_extent = 4000) {
    DistProblem pb;
    pb.layout = layout;
    pb.boundaries = boundaries;
    if (boundaries.size() != static_cast<std::size_t>(layout.nd) + 1)
        throw BadParams("partition_matrix: need nd + 1 boundaries");
    if (boundaries.front() != 0 || boundaries.back() <= 0)
        throw BadParams("partition_matrix: boundaries must start at 0");
    for (std::size_t i = 1; i < boundaries.size(); ++i)
        if (boundaries[i] <= boundaries[i - 1])
            throw BadParams("partition_matrix: boundaries must be strictly increasing");
    pb.n = boundaries.back();
    if (static_cast<index_t>(diag.size()) != pb.n)
        throw DimensionMismatch("partition_matrix: diagonal length mismatch");

    std::vector<std::int32_t> blk_of(static_cast<std::size_t>(pb.n));
    for (int g = 0; g < layout.nd; ++g)
        for (index_t r = boundaries[static_cast<std::size_t>(g)]; r < boundaries[static_cast<std::size_t>(g) + 1]; ++r)
            blk_of[static_cast<std::size_t>(r)] = g;

    std::vector<std::vector<int>> rank_at(static_cast<std::size_t>(layout.nd),
                                          std::vector<int>(static_cast<std::size_t>(layout.nd), -1));
    for (int r = 0; r < layout.n_ranks; ++r) {
        const auto& b = layout.rank_to_block[static_cast<std::size_t>(r)];
        rank_at[static_cast<std::size_t>(b.i)][static_cast<std::size_t>(b.j)] = r;
    }

    std::vector<std::vector<Triple>> rank_triples(static_cast<std::size_t>(layout.n_ranks));
    for (const Triple& e : lower) {
        if (e.row < 0 || e.row >= pb.n || e.col < 0 || e.col >= pb.n)
            throw IndexOutOfRange("partition_matrix: entry outside the matrix");
        if (e.row <= e.col)
            throw NotStrictlyLower("partition_matrix: input must be strictly lower");
        const int bi = blk_of[static_cast<std::size_t>(e.row)];
        const int bj = blk_of[static_cast<std::size_t>(e.col)];
        int rk = rank_at[static_cast<std::size_t>(bi)][static_cast<std::size_t>(bj)];
        if (rk >= 0) {
            rank_triples[static_cast<std::size_t>(rk)].push_back(
                {e.row - boundaries[static_cast<std::size_t>(bi)],
                 e.col - boundaries[static_cast<std::size_t>(bj)], e.value});
        } else {
            // lands on the transposed-stored mirror block
            rk = rank_at[static_cast<std::size_t>(bj)][static_cast<std::size_t>(bi)];
            rank_triples[static_cast<std::size_t>(rk)].push_back(
                {e.col - boundaries[static_cast<std::size_t>(bj)],
                 e.row - boundaries[static_cast<std::size_t>(bi)], e.value});
        }
    }

    pb.rank_matrix.reserve(static_cast<std::size_t>(layout.n_ranks));
    pb.rank_diag.resize(static_cast<std::size_t>(layout.n_ranks));
    for (int r = 0; r < layout.n_ranks; ++r) {
        const auto& b = layout.rank_to_block[static_cast<std::size_t>(r)];
        const index_t rows = boundaries[static_cast<std::size_t>(b.i) + 1] - boundaries[static_cast<std::size_t>(b.i)];
        const index_t cols = boundaries[static_cast<std::size_t>(b.j) + 1] - boundaries[static_cast<std::size_t>(b.j)];
        pb.rank_matrix.push_back(build_csb_coo(rank_triples[static_cast<std::size_t>(r)], rows, cols,
                                               uniform_boundaries(rows, std::min(intra_block_extent, rows)),
                                               uniform_boundaries(cols, std::min(intra_block_extent, cols))));
        if (b.i == b.j) {
            const auto lo = boundaries[static_cast<std::size_t>(b.i)];
            const auto hi = boundaries[static_cast<std::size_t>(b.i) + 1];
            pb.rank_diag[static_cast<std::size_t>(r)].assign(diag.begin() + lo, diag.begin() + hi);
        }
    }

    // segment table: each sub-vector split near-evenly over its column group
    pb.vector_segments.resize(static_cast<std::size_t>(layout.nd));
    pb.segment_of_rank.assign(static_cast<std::size_t>(layout.n_ranks), {});
    const int gsize = (layout.nd + 1) / 2;
    for (int g = 0; g < layout.nd; ++g) {
        const index_t lo = boundaries[static_cast<std::size_t>(g)];
        const index_t len = pb.sub_len(g);
        for (int m = 0; m < gsize; ++m) {
            Segment s;
            s.rank = layout.col_groups[static_cast<std::size_t>(g)][static_cast<std::size_t>(m)];
            s.begin = lo + len * m / gsize;
            s.end = lo + len * (m + 1) / gsize;
            pb.vector_segments[static_cast<std::size_t>(g)].push_back(s);
            pb.segment_of_rank[static_cast<std::size_t>(s.rank)] = s;
        }
    }
    return pb;
}

/// Undo the per-rank storage back to global lower triples + diagonal;
/// the reassembly oracle for tests.
inline std::pair<std::vector<Triple>, std::vector<double>> reassemble(const DistProblem& pb) {
    std::vector<Triple> lower;
    std::vector<double> diag(static_cast<std::size_t>(pb.n), 0.0);
    for (int r = 0; r < pb.layout.n_ranks; ++r) {
        const auto& b = pb.layout.rank_to_block[static_cast<std::size_t>(r)];
        const index_t roff = pb.boundaries[static_cast<std::size_t>(b.i)];
        const index_t coff = pb.boundaries[static_cast<std::size_t>(b.j)];
        for (const Triple& t : to_triples(pb.rank_matrix[static_cast<std::size_t>(r)])) {
            if (b.transposed)
                lower.push_back({coff + t.col, roff + t.row, t.value});
            else
                lower.push_back({roff + t.row, coff + t.col, t.value});
        }
        if (!pb.rank_diag[static_cast<std::size_t>(r)].empty())
            for (index_t i = 0; i < static_cast<index_t>(pb.rank_diag[static_cast<std::size_t>(r)].size()); ++i)
                diag[static_cast<std::size_t>(roff + i)] = pb.rank_diag[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)];
    }
    return {std::move(lower), std::move(diag)};
}

/// Scatter a full multivector into per-rank segments (row ranges per the
/// segment table).
inline std::vector<BlockVector> partition_vectors(const BlockVector& v, const DistProblem& pb) {
    if (v.nrows != pb.n) throw DimensionMismatch("partition_vectors: vector length != n");
    std::vector<BlockVector> segs(static_cast<std::size_t>(pb.layout.n_ranks));
    for (int r = 0; r < pb.layout.n_ranks; ++r) {
        const Segment& s = pb.segment_of_rank[static_cast<std::size_t>(r)];
        BlockVector seg(s.len(), v.nvec);
        for (index_t row = s.begin; row < s.end; ++row)
            for (index_t vv = 0; vv < v.nvec; ++vv) seg(row - s.begin, vv) = v(row, vv);
        segs[static_cast<std::size_t>(r)] = std::move(seg);
    }
    return segs;
}

/// Inverse of partition_vectors.
inline BlockVector gather_solution(const std::vector<BlockVector>& segs, const DistProblem& pb) {
    if (segs.size() != static_cast<std::size_t>(pb.layout.n_ranks))
        throw DimensionMismatch("gather_solution: one segment per rank required");
    index_t nvec = 0;
    for (const auto& s : segs)
        if (s.nrows > 0) nvec = s.nvec;
    BlockVector v(pb.n, nvec);
    for (int r = 0; r < pb.layout.n_ranks; ++r) {
        const Segment& s = pb.segment_of_rank[static_cast<std::size_t>(r)];
        const BlockVector& seg = segs[static_cast<std::size_t>(r)];
        if (seg.nrows != s.len() || seg.nvec != nvec)
            throw DimensionMismatch("gather_solution: segment shape mismatch");
        for (index_t row = s.begin; row < s.end; ++row)
            for (index_t vv = 0; vv < nvec; ++vv) v(row, vv) = seg(row - s.begin, vv);
    }
    return v;
}

/// The five-step distributed symmetric SpMM over the simulated ranks:
///   1. AllGatherV of W segments within each column group;
///   2. broadcast of the diagonal rank's gathered sub-vector across its row
///      group (feeds the transpose multiplies);
///   3. local SpMM / transpose SpMM on every rank (diagonal ranks split the
///      symmetric block as L + D in the forward pass and L^T in the
///      transpose pass);
///   4. reduction of forward products along each row group onto the diagonal
///      rank, added to its local output;
///   5. ReduceScatter of the per-column-group outputs back into segments.
/// All reductions sum in ascending rank order. Each rank performs at most
/// one forward and one transpose local SpMM per call.
inline std::vector<BlockVector> distributed_spmm(const DistProblem& pb,
                                                 const std::vector<BlockVector>& wsegs,
                                                 const KernelVariant& variant, SimComm& comm,
                                                 ThreadPool* pool = nullptr) {
    const auto& lt = pb.layout;
    if (wsegs.size() != static_cast<std::size_t>(lt.n_ranks))
        throw ProtocolDeadlock("distributed_spmm: a rank is missing from the collective");
    index_t nvec = wsegs.empty() ? 0 : wsegs[0].nvec;
    for (int r = 0; r < lt.n_ranks; ++r) {
        const Segment& s = pb.segment_of_rank[static_cast<std::size_t>(r)];
        if (wsegs[static_cast<std::size_t>(r)].nrows != s.len() ||
            wsegs[static_cast<std::size_t>(r)].nvec != nvec)
            throw ProtocolDeadlock("distributed_spmm: rank " + std::to_string(r) +
                                   " contributed a mismatched segment");
    }

    // step 1: allgatherv inside each column group
    std::vector<BlockVector> gathered(static_cast<std::size_t>(lt.nd));
    for (int g = 0; g < lt.nd; ++g) {
        const index_t len = pb.sub_len(g);
        BlockVector wg(len, nvec);
        const index_t lo = pb.boundaries[static_cast<std::size_t>(g)];
        for (const Segment& s : pb.vector_segments[static_cast<std::size_t>(g)]) {
            const BlockVector& seg = wsegs[static_cast<std::size_t>(s.rank)];
            for (index_t row = s.begin; row < s.end; ++row)
                for (index_t vv = 0; vv < nvec; ++vv) wg(row - lo, vv) = seg(row - s.begin, vv);
            comm.volume_doubles += (len - s.len()) * nvec;  // what this member receives
        }
        ++comm.collective_calls;
        gathered[static_cast<std::size_t>(g)] = std::move(wg);
    }

    // step 2: diagonal rank broadcasts its gathered sub-vector along the row
    // group; in the simulation members read the shared buffer, volume counts
    // the sends
    for (int g = 0; g < lt.nd; ++g) {
        const int members = static_cast<int>(lt.row_groups[static_cast<std::size_t>(g)].size());
        comm.volume_doubles += static_cast<index_t>(members - 1) * pb.sub_len(g) * nvec;
        ++comm.collective_calls;
    }

    // step 3: local multiplies
    std::vector<BlockVector> fwd(static_cast<std::size_t>(lt.n_ranks));
    std::vector<BlockVector> trn(static_cast<std::size_t>(lt.n_ranks));
    for (int r = 0; r < lt.n_ranks; ++r) {
        const auto& b = lt.rank_to_block[static_cast<std::size_t>(r)];
        const CsbCooMatrix& h = pb.rank_matrix[static_cast<std::size_t>(r)];
        const BlockVector& w_col = gathered[static_cast<std::size_t>(b.j)];  // W_j
        const BlockVector& w_row = gathered[static_cast<std::size_t>(b.i)];  // W_i via row bcast
        BlockVector u_fwd(h.nrows, nvec);
        BlockVector u_trn(h.ncols, nvec);
        spmm_notrans(h, w_col, u_fwd, variant, pool);
        spmm_trans(h, w_row, u_trn, variant, pool);
        if (b.i == b.j) {
            const auto& d = pb.rank_diag[static_cast<std::size_t>(r)];
            for (index_t row = 0; row < h.nrows; ++row)
                for (index_t vv = 0; vv < nvec; ++vv)
                    u_fwd(row, vv) += d[static_cast<std::size_t>(row)] * w_col(row, vv);
        }
        fwd[static_cast<std::size_t>(r)] = std::move(u_fwd);
        trn[static_cast<std::size_t>(r)] = std::move(u_trn);
    }

    // step 4: reduce forward products along each row group onto the diagonal
    // rank, ascending rank order, then fold into its local transpose output
    for (int g = 0; g < lt.nd; ++g) {
        const index_t len = pb.sub_len(g);
        BlockVector sum(len, nvec);
        int members = 0;
        for (int r : lt.row_groups[static_cast<std::size_t>(g)]) {
            const BlockVector& part = fwd[static_cast<std::size_t>(r)];
            for (std::size_t idx = 0; idx < sum.data.size(); ++idx) sum.data[idx] += part.data[idx];
            ++members;
        }
        comm.volume_doubles += static_cast<index_t>(members - 1) * len * nvec;
        ++comm.collective_calls;
        const int droot = lt.diagonal_ranks[static_cast<std::size_t>(g)];
        BlockVector& local = trn[static_cast<std::size_t>(droot)];
        for (std::size_t idx = 0; idx < local.data.size(); ++idx) local.data[idx] += sum.data[idx];
    }

    // step 5: reduce-scatter inside each column group
    std::vector<BlockVector> usegs(static_cast<std::size_t>(lt.n_ranks));
    for (int g = 0; g < lt.nd; ++g) {
        const index_t lo = pb.boundaries[static_cast<std::size_t>(g)];
        const index_t len = pb.sub_len(g);
        BlockVector sum(len, nvec);
        int members = 0;
        for (int r : lt.col_groups[static_cast<std::size_t>(g)]) {
            const BlockVector& part = trn[static_cast<std::size_t>(r)];
            for (std::size_t idx = 0; idx < sum.data.size(); ++idx) sum.data[idx] += part.data[idx];
            ++members;
        }
        comm.volume_doubles += static_cast<index_t>(members - 1) * len * nvec;
        ++comm.collective_calls;
        for (const Segment& s : pb.vector_segments[static_cast<std::size_t>(g)]) {
            BlockVector seg(s.len(), nvec);
            for (index_t row = s.begin; row < s.end; ++row)
                for (index_t vv = 0; vv < nvec; ++vv) seg(row - s.begin, vv) = sum(row - lo, vv);
            usegs[static_cast<std::size_t>(s.rank)] = std::move(seg);
        }
    }
    return usegs;
}

/// World AllReduce of per-rank partial Gram matrices, summed in ascending
/// rank order; every rank would hold the identical result.
inline SmallDense distributed_gram_allreduce(const TriangularLayout& layout,
                                             std::span<const SmallDense> partials, SimComm& comm) {
    if (partials.size() != static_cast<std::size_t>(layout.n_ranks))
        throw ProtocolDeadlock("distributed_gram_allreduce: one partial per rank required");
    SmallDense sum = partials[0];
    for (int r = 1; r < layout.n_ranks; ++r) {
        const SmallDense& p = partials[static_cast<std::size_t>(r)];
        if (p.nrows != sum.nrows || p.ncols != sum.ncols)
            throw ProtocolDeadlock("distributed_gram_allreduce: rank " + std::to_string(r) +
                                   " contributed a mismatched partial");
        for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += p.data[i];
    }
    comm.volume_doubles +=
        2 * static_cast<std::int64_t>(layout.n_ranks - 1) * static_cast<std::int64_t>(sum.data.size());
    ++comm.collective_calls;
    return sum;
}

/// Wrap a partitioned problem as an operator callback for the solver:
/// scatter the input block, run the distributed SpMM, gather the result.
/// The problem and comm are captured by reference and must outlive the
/// returned callback.
inline Operator distributed_operator(const DistProblem& pb, KernelVariant variant, SimComm& comm,
                                     ThreadPool* pool = nullptr) {
    return [&pb, variant, &comm, pool](const BlockVector& in, BlockVector& out) {
        auto wsegs = partition_vectors(in, pb);
        auto usegs = distributed_spmm(pb, wsegs, variant, comm, pool);
        out = gather_solution(usegs, pb);
    };
}

/// Layout dump used by tests and the CLI explain-layout command.
inline nlohmann::json layout_to_json(const TriangularLayout& lt, const DistProblem* pb = nullptr) {
    nlohmann::json j;
    j["schema"] = "blockeig/layout/v1";
    j["nd"] = lt.nd;
    j["n_ranks"] = lt.n_ranks;
    j["group_size"] = (lt.nd + 1) / 2;
    auto& ranks = j["ranks"] = nlohmann::json::array();
    for (int r = 0; r < lt.n_ranks; ++r) {
        const auto& b = lt.rank_to_block[static_cast<std::size_t>(r)];
        ranks.push_back({{"rank", r}, {"row_block", b.i}, {"col_block", b.j}, {"transposed", b.transposed}});
    }
    j["row_groups"] = lt.row_groups;
    j["col_groups"] = lt.col_groups;
    j["diagonal_ranks"] = lt.diagonal_ranks;
    if (pb) {
        auto& segs = j["segments"] = nlohmann::json::array();
        for (int g = 0; g < lt.nd; ++g)
            for (const Segment& s : pb->vector_segments[static_cast<std::size_t>(g)])
                segs.push_back({{"sub_vector", g}, {"rank", s.rank}, {"begin", s.begin}, {"end", s.end}});
        j["boundaries"] = pb->boundaries;
    }
    return j;
}

}  // namespace blockeig
