// SPDX-License-Identifier: Apache-2.0
//
// fddpilot: GMM-based pilot design and channel estimation for FDD MIMO systems
// Copyright (C) 2026 The fddpilot authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

namespace fddpilot
{

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;
using Index = Eigen::Index;

// All randomness flows through this engine; streams are derived, never shared.
using Rng = std::mt19937_64;

inline constexpr double kPi = std::numbers::pi;

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Independent RNG stream identified by a master seed and a path of indices,
/// e.g. make_stream(seed, {purpose, user, block}). The result does not depend
/// on the order in which streams are created, so parallel workers reproduce
/// the sequential run exactly.
inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
{
    std::uint64_t h = splitmix64(seed);
    for (std::uint64_t p : path)
        h = splitmix64(h ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
    return Rng(h);
}

/// Matrix of i.i.d. CN(0, 1) entries.
inline CMatrix complex_normal(Rng &rng, Index rows, Index cols)
{
    std::normal_distribution<double> nd(0.0, std::sqrt(0.5));
    CMatrix g(rows, cols);
    for (Index c = 0; c < cols; ++c)
        for (Index r = 0; r < rows; ++r)
        {
            const double re = nd(rng);
            const double im = nd(rng);
            g(r, c) = cplx(re, im);
        }
    return g;
}

inline CMatrix kron(const CMatrix &a, const CMatrix &b)
{
    CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

inline CMatrix hermitian_part(const CMatrix &a)
{
    return 0.5 * (a + a.adjoint());
}

/// Rotate every column so that its largest-magnitude entry (first one on ties)
/// is real and positive. Fixes the phase ambiguity of eigen/singular vectors.
inline void normalize_column_phases(CMatrix &vectors)
{
    for (Index c = 0; c < vectors.cols(); ++c)
    {
        Index arg = 0;
        double best = -1.0;
        for (Index r = 0; r < vectors.rows(); ++r)
        {
            const double m = std::abs(vectors(r, c));
            if (m > best)
            {
                best = m;
                arg = r;
            }
        }
        if (best > 0.0)
            vectors.col(c) *= std::conj(vectors(arg, c)) / best;
    }
}

struct HermitianEigen
{
    RVector values;  // descending
    CMatrix vectors; // columns, phase-normalized
};

/// Eigendecomposition of a Hermitian matrix, eigenvalues in descending order.
/// Exactly equal eigenvalues keep the solver's index order (lowest first).
inline HermitianEigen eigh_descending(const CMatrix &a)
{
    Eigen::SelfAdjointEigenSolver<CMatrix> es(a);
    const Index n = a.rows();
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    const RVector &ev = es.eigenvalues();
    std::stable_sort(order.begin(), order.end(), [&](Index x, Index y) { return ev(x) > ev(y); });

    HermitianEigen out{RVector(n), CMatrix(n, n)};
    for (Index i = 0; i < n; ++i)
    {
        out.values(i) = ev(order[static_cast<std::size_t>(i)]);
        out.vectors.col(i) = es.eigenvectors().col(order[static_cast<std::size_t>(i)]);
    }
    normalize_column_phases(out.vectors);
    return out;
}

/// Eigenvalues only, ascending; negative round-off is clamped to zero.
inline RVector psd_eigenvalues(const CMatrix &a)
{
    Eigen::SelfAdjointEigenSolver<CMatrix> es(a, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseMax(0.0);
}

inline double spectral_norm(const CMatrix &a)
{
    if (a.size() == 0)
        return 0.0;
    Eigen::JacobiSVD<CMatrix> svd(a);
    return svd.singularValues()(0);
}

} // namespace fddpilot
