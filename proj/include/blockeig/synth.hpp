// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "blockeig/matrix_market.hpp"

namespace blockeig {

enum class SynthKind { Banded, BlockTile, Random };

inline SynthKind synth_kind_from_name(const std::string& s) {
    if (s == "banded") return SynthKind::Banded;
    if (s == "blocktile") return SynthKind::BlockTile;
    if (s == "random") return SynthKind::Random;
    throw BadParams("unknown generator kind '" + s + "'");
}

inline const char* synth_kind_name(SynthKind k) {
    switch (k) {
        case SynthKind::Banded: return "banded";
        case SynthKind::BlockTile: return "blocktile";
        case SynthKind::Random: return "random";
    }
    return "?";
}

struct SynthParams {
    SynthKind kind = SynthKind::Random;
    index_t n = 1000;
    double density = 0.02;        // Random: populated fraction of off-diagonal pairs
    index_t bandwidth = 8;        // Banded
    index_t block_extent = 4000;  // CSB blocking the matrix will use; tiles never cross it
    index_t tile_min = 4;         // log-uniform tile size draw (many small, few large)
    index_t tile_max = 512;
    double diag_spread = 5.0;     // spread of the random diagonal component
    double dominance = 1.0;       // multiple of the off-diagonal row sum added to the diagonal
    std::uint64_t seed = 1;

    void validate() const {
        if (n < 10) throw BadParams("generate_synthetic: n must be at least 10");
        if (kind == SynthKind::Random && (density <= 0.0 || density > 0.5))
            throw BadParams("generate_synthetic: density must lie in (0, 0.5]");
        if (bandwidth < 0) throw BadParams("generate_synthetic: bandwidth must be non-negative");
        if (block_extent < 1 || block_extent > kMaxBlockExtent)
            throw BadParams("generate_synthetic: bad block extent");
        if (tile_min < 1 || tile_max < tile_min)
            throw BadParams("generate_synthetic: bad tile size range");
        if (dominance < 0.0) throw BadParams("generate_synthetic: dominance must be non-negative");
    }
};

struct SynthMatrix {
    SymmetricCoo coo;
    std::vector<index_t> tile_offsets;  // nested inside the block boundaries
};

namespace detail {

// log-uniform tile sizes, clipped so no tile crosses a multiple of
// block_extent (the preconditioner requires tiles nested in blocks)
inline std::vector<index_t> draw_tile_offsets(index_t n, index_t block_extent, index_t tile_min,
                                              index_t tile_max, std::mt19937_64& rng) {
    const index_t lo_size = std::max<index_t>(1, std::min(tile_min, n));
    const index_t hi_size = std::max(lo_size, std::min(tile_max, n));
    std::uniform_real_distribution<double> u(std::log(static_cast<double>(lo_size)),
                                             std::log(static_cast<double>(hi_size)));
    std::vector<index_t> offsets = {0};
    while (offsets.back() < n) {
        const index_t at = offsets.back();
        index_t size = static_cast<index_t>(std::llround(std::exp(u(rng))));
        size = std::max<index_t>(1, size);
        const index_t block_end = ((at / block_extent) + 1) * block_extent;
        index_t next = std::min({at + size, block_end, n});
        offsets.push_back(next);
    }
    return offsets;
}

}  // namespace detail

/// Deterministic synthetic symmetric operators: banded, clustered block/tile
/// structure, or uniformly random sparsity. The diagonal is fully populated
/// and (at dominance >= 1) dominant, giving a positive, well-separated low
/// spectrum. Tile offsets for the preconditioner are drawn log-uniform
/// (many small tiles, few large ones) and never cross a block boundary.
inline SynthMatrix generate_synthetic(const SynthParams& p) {
    p.validate();
    std::mt19937_64 rng(p.seed);
    std::uniform_real_distribution<double> val(-1.0, 1.0);

    SynthMatrix out;
    out.coo.n = p.n;
    out.tile_offsets = detail::draw_tile_offsets(p.n, p.block_extent, p.tile_min, p.tile_max, rng);

    auto& lower = out.coo.lower;
    switch (p.kind) {
        case SynthKind::Banded: {
            for (index_t i = 0; i < p.n; ++i)
                for (index_t d = 1; d <= p.bandwidth && d <= i; ++d)
                    lower.push_back({i, i - d, val(rng)});
            break;
        }
        case SynthKind::Random: {
            const auto target = static_cast<index_t>(
                std::llround(p.density * static_cast<double>(p.n) * static_cast<double>(p.n - 1) / 2.0));
            std::unordered_set<std::uint64_t> used;
            used.reserve(static_cast<std::size_t>(target) * 2);
            std::uniform_int_distribution<index_t> draw(0, p.n - 1);
            while (static_cast<index_t>(used.size()) < target) {
                index_t r = draw(rng), c = draw(rng);
                if (r == c) continue;
                if (r < c) std::swap(r, c);
                const std::uint64_t key =
                    static_cast<std::uint64_t>(r) * static_cast<std::uint64_t>(p.n) + static_cast<std::uint64_t>(c);
                if (used.insert(key).second) lower.push_back({r, c, val(rng)});
            }
            break;
        }
        case SynthKind::BlockTile: {
            // dense-ish diagonal tiles plus sparse couplings between tile
            // pairs inside the same block
            std::uniform_real_distribution<double> coin(0.0, 1.0);
            const double tile_fill = 0.3, coupling_fill = 0.01;
            const auto& off = out.tile_offsets;
            for (std::size_t t = 0; t + 1 < off.size(); ++t) {
                for (index_t i = off[t]; i < off[t + 1]; ++i)
                    for (index_t j = off[t]; j < i; ++j)
                        if (coin(rng) < tile_fill) lower.push_back({i, j, val(rng)});
            }
            for (std::size_t t = 1; t + 1 < off.size(); ++t) {
                // couple tile t with tile t-1 when both lie in one block
                if (off[t - 1] / p.block_extent != (off[t + 1] - 1) / p.block_extent) continue;
                for (index_t i = off[t]; i < off[t + 1]; ++i)
                    for (index_t j = off[t - 1]; j < off[t]; ++j)
                        if (coin(rng) < coupling_fill) lower.push_back({i, j, val(rng)});
            }
            break;
        }
    }

    out.coo.diag.assign(static_cast<std::size_t>(p.n), 0.0);
    std::vector<double> rowabs(static_cast<std::size_t>(p.n), 0.0);
    for (const Triple& t : lower) {
        rowabs[static_cast<std::size_t>(t.row)] += std::abs(t.value);
        rowabs[static_cast<std::size_t>(t.col)] += std::abs(t.value);
    }
    std::uniform_real_distribution<double> spread(0.0, p.diag_spread);
    for (index_t i = 0; i < p.n; ++i)
        out.coo.diag[static_cast<std::size_t>(i)] =
            0.5 + spread(rng) + p.dominance * rowabs[static_cast<std::size_t>(i)];
    return out;
}

}  // namespace blockeig
