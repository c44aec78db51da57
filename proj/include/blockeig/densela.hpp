// Copyright (c) 2026 The blockeig developers.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "blockeig/block_vector.hpp"
#include "blockeig/thread_pool.hpp"

namespace blockeig {

/// Small dense matrix in column-major order. Everything here operates at the
/// projected-problem scale (dimension at most 3*nb), so all kernels are
/// unblocked and single-pass.
struct SmallDense {
    int nrows = 0;
    int ncols = 0;
    std::vector<double> data;

    SmallDense() = default;
    SmallDense(int r, int c) : nrows(r), ncols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    static SmallDense identity(int n) {
        SmallDense m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    double& at(int i, int j) { return data[static_cast<std::size_t>(j) * nrows + i]; }
    double at(int i, int j) const { return data[static_cast<std::size_t>(j) * nrows + i]; }

    double max_abs() const {
        double m = 0.0;
        for (double v : data) m = std::max(m, std::abs(v));
        return m;
    }

    double frobenius() const {
        double s = 0.0;
        for (double v : data) s += v * v;
        return std::sqrt(s);
    }
};

inline SmallDense matmul(const SmallDense& a, const SmallDense& b) {
    if (a.ncols != b.nrows) throw DimensionMismatch("matmul: inner dimensions differ");
    SmallDense c(a.nrows, b.ncols);
    for (int j = 0; j < b.ncols; ++j)
        for (int k = 0; k < a.ncols; ++k) {
            const double bkj = b.at(k, j);
            if (bkj == 0.0) continue;
            for (int i = 0; i < a.nrows; ++i) c.at(i, j) += a.at(i, k) * bkj;
        }
    return c;
}

inline SmallDense transpose(const SmallDense& a) {
    SmallDense t(a.ncols, a.nrows);
    for (int j = 0; j < a.ncols; ++j)
        for (int i = 0; i < a.nrows; ++i) t.at(j, i) = a.at(i, j);
    return t;
}

/// A^T B over row-major multivectors: entry (p, q) = sum_r A(r,p) B(r,q).
/// When A and B are the same object the result is symmetrized on return.
inline SmallDense gram(const BlockVector& a, const BlockVector& b, ThreadPool* pool = nullptr) {
    if (a.nrows != b.nrows) throw DimensionMismatch("gram: row counts differ");
    const int p = static_cast<int>(a.nvec), q = static_cast<int>(b.nvec);
    const int nw = pool_width(pool);
    std::vector<SmallDense> partial(static_cast<std::size_t>(nw), SmallDense(p, q));
    parallel_chunks(pool, a.nrows, [&](index_t rb, index_t re, int w) {
        SmallDense& g = partial[static_cast<std::size_t>(w)];
        for (index_t r = rb; r < re; ++r) {
            const double* ar = a.row(r);
            const double* br = b.row(r);
            for (int jq = 0; jq < q; ++jq) {
                const double bv = br[jq];
                double* col = &g.data[static_cast<std::size_t>(jq) * p];
                for (int ip = 0; ip < p; ++ip) col[ip] += ar[ip] * bv;
            }
        }
    });
    SmallDense g = std::move(partial[0]);
    for (int w = 1; w < nw; ++w)
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += partial[static_cast<std::size_t>(w)].data[i];
    if (&a == &b || a.data.data() == b.data.data()) {
        for (int j = 0; j < q; ++j)
            for (int i = 0; i < j; ++i) {
                const double s = 0.5 * (g.at(i, j) + g.at(j, i));
                g.at(i, j) = s;
                g.at(j, i) = s;
            }
    }
    return g;
}

/// Upper-triangular Cholesky factor: B = R^T R. Throws NotPositiveDefinite
/// with the index of the first non-positive pivot.
inline SmallDense cholesky(const SmallDense& b) {
    if (b.nrows != b.ncols) throw DimensionMismatch("cholesky: matrix must be square");
    const int n = b.nrows;
    SmallDense r(n, n);
    for (int j = 0; j < n; ++j) {
        double piv = b.at(j, j);
        for (int k = 0; k < j; ++k) piv -= r.at(k, j) * r.at(k, j);
        if (!(piv > 0.0))
            throw NotPositiveDefinite("cholesky: non-positive pivot at index " + std::to_string(j), j);
        const double rjj = std::sqrt(piv);
        r.at(j, j) = rjj;
        for (int i = j + 1; i < n; ++i) {
            double s = b.at(j, i);
            for (int k = 0; k < j; ++k) s -= r.at(k, j) * r.at(k, i);
            r.at(j, i) = s / rjj;
        }
    }
    return r;
}

/// W <- W R^{-1} in place, forward substitution row by row over the
/// row-major layout.
inline void trsm_right_inv(BlockVector& w, const SmallDense& r, ThreadPool* pool = nullptr) {
    if (r.nrows != r.ncols || r.nrows != static_cast<int>(w.nvec))
        throw DimensionMismatch("trsm_right_inv: triangular factor does not conform");
    const int n = r.nrows;
    double dmin = std::numeric_limits<double>::infinity(), dmax = 0.0;
    for (int j = 0; j < n; ++j) {
        const double d = std::abs(r.at(j, j));
        dmin = std::min(dmin, d);
        dmax = std::max(dmax, d);
    }
    if (!(dmin > 1e-14 * dmax))
        throw SingularTriangular("trsm_right_inv: triangular factor is numerically singular");
    parallel_chunks(pool, w.nrows, [&](index_t rb, index_t re, int) {
        for (index_t row = rb; row < re; ++row) {
            double* x = w.row(row);
            for (int j = 0; j < n; ++j) {
                double s = x[j];
                for (int i = 0; i < j; ++i) s -= x[i] * r.at(i, j);
                x[j] = s / r.at(j, j);
            }
        }
    });
}

namespace detail {

// Cholesky with a relative pivot floor. The orthonormalization uses this
// instead of the exact-contract cholesky() so that a Gram matrix whose true
// pivot is zero up to roundoff is classified as a failure rather than
// factored into garbage.
inline SmallDense cholesky_floored(const SmallDense& b, double rel_floor) {
    const int n = b.nrows;
    double dmax = 0.0;
    for (int i = 0; i < n; ++i) dmax = std::max(dmax, std::abs(b.at(i, i)));
    const double floor = rel_floor * std::max(dmax, 1e-300);
    SmallDense r(n, n);
    for (int j = 0; j < n; ++j) {
        double piv = b.at(j, j);
        for (int k = 0; k < j; ++k) piv -= r.at(k, j) * r.at(k, j);
        if (!(piv > floor))
            throw NotPositiveDefinite("cholesky: pivot below floor at index " + std::to_string(j), j);
        const double rjj = std::sqrt(piv);
        r.at(j, j) = rjj;
        for (int i = j + 1; i < n; ++i) {
            double s = b.at(j, i);
            for (int k = 0; k < j; ++k) s -= r.at(k, j) * r.at(k, i);
            r.at(j, i) = s / rjj;
        }
    }
    return r;
}

// Householder reduction of a symmetric matrix to tridiagonal form with
// accumulated transformation, followed by implicit-shift QL. Classic
// tred2/tql2 pair, 0-based, column-major working copy.
inline void tred2(int n, std::vector<double>& z, std::vector<double>& d, std::vector<double>& e) {
    auto Z = [&](int i, int j) -> double& { return z[static_cast<std::size_t>(j) * n + i]; };
    for (int i = n - 1; i >= 1; --i) {
        const int l = i - 1;
        double h = 0.0, scale = 0.0;
        if (l > 0) {
            for (int k = 0; k <= l; ++k) scale += std::abs(Z(i, k));
            if (scale == 0.0) {
                e[static_cast<std::size_t>(i)] = Z(i, l);
            } else {
                for (int k = 0; k <= l; ++k) {
                    Z(i, k) /= scale;
                    h += Z(i, k) * Z(i, k);
                }
                double f = Z(i, l);
                double g = (f >= 0.0) ? -std::sqrt(h) : std::sqrt(h);
                e[static_cast<std::size_t>(i)] = scale * g;
                h -= f * g;
                Z(i, l) = f - g;
                f = 0.0;
                for (int j = 0; j <= l; ++j) {
                    Z(j, i) = Z(i, j) / h;
                    g = 0.0;
                    for (int k = 0; k <= j; ++k) g += Z(j, k) * Z(i, k);
                    for (int k = j + 1; k <= l; ++k) g += Z(k, j) * Z(i, k);
                    e[static_cast<std::size_t>(j)] = g / h;
                    f += e[static_cast<std::size_t>(j)] * Z(i, j);
                }
                const double hh = f / (h + h);
                for (int j = 0; j <= l; ++j) {
                    f = Z(i, j);
                    const double gg = e[static_cast<std::size_t>(j)] - hh * f;
                    e[static_cast<std::size_t>(j)] = gg;
                    for (int k = 0; k <= j; ++k) Z(j, k) -= f * e[static_cast<std::size_t>(k)] + gg * Z(i, k);
                }
            }
        } else {
            e[static_cast<std::size_t>(i)] = Z(i, l);
        }
        d[static_cast<std::size_t>(i)] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for (int i = 0; i < n; ++i) {
        const int l = i - 1;
        if (d[static_cast<std::size_t>(i)] != 0.0) {
            for (int j = 0; j <= l; ++j) {
                double g = 0.0;
                for (int k = 0; k <= l; ++k) g += Z(i, k) * Z(k, j);
                for (int k = 0; k <= l; ++k) Z(k, j) -= g * Z(k, i);
            }
        }
        d[static_cast<std::size_t>(i)] = Z(i, i);
        Z(i, i) = 1.0;
        for (int j = 0; j <= l; ++j) {
            Z(j, i) = 0.0;
            Z(i, j) = 0.0;
        }
    }
}

inline void tql2(int n, std::vector<double>& d, std::vector<double>& e, std::vector<double>& z) {
    auto Z = [&](int i, int j) -> double& { return z[static_cast<std::size_t>(j) * n + i]; };
    for (int i = 1; i < n; ++i) e[static_cast<std::size_t>(i - 1)] = e[static_cast<std::size_t>(i)];
    e[static_cast<std::size_t>(n - 1)] = 0.0;
    for (int l = 0; l < n; ++l) {
        int iter = 0, m = l;
        do {
            for (m = l; m < n - 1; ++m) {
                const double dd = std::abs(d[static_cast<std::size_t>(m)]) + std::abs(d[static_cast<std::size_t>(m + 1)]);
                if (std::abs(e[static_cast<std::size_t>(m)]) <= std::numeric_limits<double>::epsilon() * dd) break;
            }
            if (m != l) {
                if (iter++ == 64) throw Error("tql2: eigenvalue iteration failed to converge");
                double g = (d[static_cast<std::size_t>(l + 1)] - d[static_cast<std::size_t>(l)]) /
                           (2.0 * e[static_cast<std::size_t>(l)]);
                double r = std::hypot(g, 1.0);
                g = d[static_cast<std::size_t>(m)] - d[static_cast<std::size_t>(l)] +
                    e[static_cast<std::size_t>(l)] / (g + std::copysign(r, g));
                double s = 1.0, c = 1.0, p = 0.0;
                int i = m - 1;
                for (; i >= l; --i) {
                    double f = s * e[static_cast<std::size_t>(i)];
                    const double b = c * e[static_cast<std::size_t>(i)];
                    r = std::hypot(f, g);
                    e[static_cast<std::size_t>(i + 1)] = r;
                    if (r == 0.0) {
                        d[static_cast<std::size_t>(i + 1)] -= p;
                        e[static_cast<std::size_t>(m)] = 0.0;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[static_cast<std::size_t>(i + 1)] - p;
                    r = (d[static_cast<std::size_t>(i)] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[static_cast<std::size_t>(i + 1)] = g + p;
                    g = c * r - b;
                    for (int k = 0; k < n; ++k) {
                        f = Z(k, i + 1);
                        Z(k, i + 1) = s * Z(k, i) + c * f;
                        Z(k, i) = c * Z(k, i) - s * f;
                    }
                }
                if (r == 0.0 && i >= l) continue;
                d[static_cast<std::size_t>(l)] -= p;
                e[static_cast<std::size_t>(l)] = g;
                e[static_cast<std::size_t>(m)] = 0.0;
            }
        } while (m != l);
    }
}

struct SymEig {
    std::vector<double> values;  // ascending
    SmallDense vectors;          // matching columns, orthonormal
};

/// Full spectrum of a symmetric matrix via tridiagonalization + implicit QL.
inline SymEig sym_eig(const SmallDense& a) {
    if (a.nrows != a.ncols) throw DimensionMismatch("sym_eig: matrix must be square");
    const int n = a.nrows;
    SymEig out;
    out.values.assign(static_cast<std::size_t>(n), 0.0);
    out.vectors = SmallDense(n, n);
    if (n == 0) return out;
    std::vector<double> z = a.data;
    std::vector<double> e(static_cast<std::size_t>(n), 0.0);
    tred2(n, z, out.values, e);
    tql2(n, out.values, e, z);
    // sort ascending, permute vector columns accordingly
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return out.values[static_cast<std::size_t>(x)] < out.values[static_cast<std::size_t>(y)]; });
    std::vector<double> vals(static_cast<std::size_t>(n));
    SmallDense vecs(n, n);
    for (int j = 0; j < n; ++j) {
        vals[static_cast<std::size_t>(j)] = out.values[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
        for (int i = 0; i < n; ++i)
            vecs.at(i, j) = z[static_cast<std::size_t>(order[static_cast<std::size_t>(j)]) * n + i];
    }
    out.values = std::move(vals);
    out.vectors = std::move(vecs);
    return out;
}

inline void normalize_column_signs(SmallDense& c) {
    for (int j = 0; j < c.ncols; ++j) {
        int arg = 0;
        double best = -1.0;
        for (int i = 0; i < c.nrows; ++i) {
            const double v = std::abs(c.at(i, j));
            if (v > best) {
                best = v;
                arg = i;
            }
        }
        if (c.at(arg, j) < 0.0)
            for (int i = 0; i < c.nrows; ++i) c.at(i, j) = -c.at(i, j);
    }
}

}  // namespace detail

struct SygvResult {
    SmallDense c;            // dim x k eigenvector columns, B-orthonormal
    std::vector<double> d;   // k smallest eigenvalues, ascending
};

/// k smallest eigenpairs of the symmetric pencil (Ahat, Bhat), Bhat SPD.
/// Reduced to a standard problem through Bhat = R^T R and back-transformed;
/// columns satisfy C^T Bhat C = I and are sign-normalized so the
/// largest-magnitude entry of each column is positive. `pivot_floor` > 0
/// additionally rejects a Bhat whose Cholesky pivots fall below
/// pivot_floor * max diag: a numerically singular overlap matrix must
/// surface as NotPositiveDefinite rather than amplify into garbage.
inline SygvResult sygv_lowest(const SmallDense& ahat, const SmallDense& bhat, int k,
                              double pivot_floor = 0.0) {
    if (ahat.nrows != ahat.ncols || bhat.nrows != bhat.ncols || ahat.nrows != bhat.nrows)
        throw DimensionMismatch("sygv_lowest: pencil matrices must be square and conforming");
    const int n = ahat.nrows;
    if (k < 1 || k > n) throw BadParams("sygv_lowest: k out of range");
    const SmallDense r = pivot_floor > 0.0 ? detail::cholesky_floored(bhat, pivot_floor)
                                           : cholesky(bhat);  // NotPositiveDefinite propagates

    // M = R^-T Ahat R^-1
    // step 1: Y = R^-T Ahat  (forward substitution down each column of Ahat)
    SmallDense y(n, n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            double s = ahat.at(i, j);
            for (int t = 0; t < i; ++t) s -= r.at(t, i) * y.at(t, j);
            y.at(i, j) = s / r.at(i, i);
        }
    }
    // step 2: M = Y R^-1  (M R = Y, solve column by column)
    SmallDense m(n, n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            double s = y.at(i, j);
            for (int t = 0; t < j; ++t) s -= m.at(i, t) * r.at(t, j);
            m.at(i, j) = s / r.at(j, j);
        }
    }
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < j; ++i) {
            const double s = 0.5 * (m.at(i, j) + m.at(j, i));
            m.at(i, j) = s;
            m.at(j, i) = s;
        }

    const auto eig = detail::sym_eig(m);

    // back-transform the k leftmost columns: C = R^-1 Q_k
    SygvResult out;
    out.c = SmallDense(n, k);
    out.d.assign(eig.values.begin(), eig.values.begin() + k);
    for (int j = 0; j < k; ++j) {
        for (int i = n - 1; i >= 0; --i) {
            double s = eig.vectors.at(i, j);
            for (int t = i + 1; t < n; ++t) s -= r.at(i, t) * out.c.at(t, j);
            out.c.at(i, j) = s / r.at(i, i);
        }
    }
    detail::normalize_column_signs(out.c);
    return out;
}

/// Orthonormalize the columns of X in place (X becomes Q) and return the
/// upper-triangular Rfac with X_original = Q * Rfac. CholeskyQR with one
/// reorthogonalization pass; RankDeficient after two Cholesky failures.
inline SmallDense qr_of_transpose(BlockVector& x, ThreadPool* pool = nullptr) {
    if (x.nvec > x.nrows)
        throw DimensionMismatch("qr_of_transpose: more columns than rows");
    const int nb = static_cast<int>(x.nvec);
    SmallDense rtot = SmallDense::identity(nb);
    int failures = 0;
    for (int pass = 0; pass < 2; ++pass) {
        SmallDense b = gram(x, x, pool);
        SmallDense r;
        bool ok = false;
        try {
            r = detail::cholesky_floored(b, 1e-14);
            ok = true;
        } catch (const NotPositiveDefinite&) {
            if (++failures >= 2)
                throw RankDeficient("qr_of_transpose: Gram Cholesky failed twice");
        }
        if (!ok) {
            // one diagonal-boost retry for the failing pass
            double dmax = 0.0;
            for (int i = 0; i < nb; ++i) dmax = std::max(dmax, b.at(i, i));
            const double delta = std::max(dmax, 1.0) * 1e-12 * nb;
            for (int i = 0; i < nb; ++i) b.at(i, i) += delta;
            try {
                r = detail::cholesky_floored(b, 1e-14);
            } catch (const NotPositiveDefinite&) {
                throw RankDeficient("qr_of_transpose: Gram matrix is numerically rank deficient");
            }
        }
        trsm_right_inv(x, r, pool);
        rtot = matmul(r, rtot);
    }
    return rtot;
}

/// Y = X * C for a row-major multivector and a small coefficient matrix.
inline BlockVector block_times_small(const BlockVector& x, const SmallDense& c,
                                     ThreadPool* pool = nullptr) {
    if (static_cast<int>(x.nvec) != c.nrows)
        throw DimensionMismatch("block_times_small: coefficient rows must match nvec");
    BlockVector y(x.nrows, c.ncols);
    parallel_chunks(pool, x.nrows, [&](index_t rb, index_t re, int) {
        for (index_t r = rb; r < re; ++r) {
            const double* xr = x.row(r);
            double* yr = y.row(r);
            for (int j = 0; j < c.ncols; ++j) {
                double s = 0.0;
                for (int i = 0; i < c.nrows; ++i) s += xr[i] * c.at(i, j);
                yr[j] = s;
            }
        }
    });
    return y;
}

/// Y += X * C.
inline void block_times_small_add(BlockVector& y, const BlockVector& x, const SmallDense& c,
                                  ThreadPool* pool = nullptr) {
    if (static_cast<int>(x.nvec) != c.nrows || static_cast<int>(y.nvec) != c.ncols ||
        y.nrows != x.nrows)
        throw DimensionMismatch("block_times_small_add: shapes do not conform");
    parallel_chunks(pool, x.nrows, [&](index_t rb, index_t re, int) {
        for (index_t r = rb; r < re; ++r) {
            const double* xr = x.row(r);
            double* yr = y.row(r);
            for (int j = 0; j < c.ncols; ++j) {
                double s = 0.0;
                for (int i = 0; i < c.nrows; ++i) s += xr[i] * c.at(i, j);
                yr[j] += s;
            }
        }
    });
}

}  // namespace blockeig
