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

#include "fddpilot/types.hpp"

#include <cstring>
#include <stdexcept>

namespace fddpilot
{

/// Pilot matrix P (n_p x N_tx): row p is the p-th transmitted pilot vector.
/// rho is the per-vector power budget; the total budget is rho * n_p.
struct PilotMatrix
{
    CMatrix p;
    double rho = 1.0;

    Index n_pilots() const { return p.rows(); }
    Index n_tx() const { return p.cols(); }

    double total_power() const { return p.squaredNorm(); }

    /// Total-power feasibility: tr(P P^H) <= rho * n_p.
    bool within_budget(double tol = 1e-9) const
    {
        return total_power() <= rho * static_cast<double>(n_pilots()) + tol;
    }

    /// Sub-unitary: every row has norm sqrt(rho).
    bool is_sub_unitary(double tol = 1e-9) const
    {
        for (Index r = 0; r < p.rows(); ++r)
            if (std::abs(p.row(r).norm() - std::sqrt(rho)) > tol)
                return false;
        return true;
    }

    /// Bitwise equality of the entries; used for the BS/MT agreement check.
    bool bit_identical(const PilotMatrix &other) const
    {
        return p.rows() == other.p.rows() && p.cols() == other.p.cols() &&
               std::memcmp(p.data(), other.p.data(), sizeof(cplx) * static_cast<std::size_t>(p.size())) == 0;
    }

    /// FNV-1a over the raw entries.
    std::uint64_t hash() const
    {
        std::uint64_t h = 1469598103934665603ULL;
        const auto *bytes = reinterpret_cast<const unsigned char *>(p.data());
        const std::size_t n = sizeof(cplx) * static_cast<std::size_t>(p.size());
        for (std::size_t i = 0; i < n; ++i)
        {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
        h ^= static_cast<std::uint64_t>(p.rows()) * 0x9E3779B97F4A7C15ULL;
        return h;
    }
};

/// Applies (P kron I_{n_rx}) to h = vec(H) through the matrix form vec(H P^T).
inline CVector apply_pilot(const PilotMatrix &pilot, const CVector &h, Index n_rx)
{
    const Index n_tx = pilot.n_tx();
    if (h.size() != n_tx * n_rx)
        throw std::invalid_argument("apply_pilot: channel length does not match pilot and receive dimensions");
    Eigen::Map<const CMatrix> hm(h.data(), n_rx, n_tx);
    CMatrix y = hm * pilot.p.transpose();
    return Eigen::Map<const CVector>(y.data(), y.size());
}

} // namespace fddpilot
