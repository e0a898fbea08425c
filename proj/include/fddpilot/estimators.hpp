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

// Reference estimators: LMMSE with the true covariance, LMMSE with a global
// sample covariance, and OMP with genie-aided sparsity order.

#pragma once

#include "fddpilot/channel_model.hpp"
#include "fddpilot/gmm.hpp"
#include "fddpilot/pilot_matrix.hpp"
#include "fddpilot/types.hpp"

#include <limits>
#include <stdexcept>
#include <vector>

namespace fddpilot
{

/// C (P kron I)^H ((P kron I) C (P kron I)^H + noise I)^-1 y with C = C_tx kron C_rx,
/// evaluated through the side eigendecompositions.
inline CVector genie_lmmse(const CVector &y, const PilotMatrix &pilot, const ChannelStats &stats, double noise_var)
{
    const GmmModel single(RVector::Ones(1), {stats.cov_tx}, RVector::Ones(1), {stats.cov_rx});
    return ObservationModel(single, pilot, noise_var).component_estimate(0, y);
}

/// Dense linear filter W with h_hat = W y for an arbitrary N x N covariance.
inline CMatrix lmmse_filter(const PilotMatrix &pilot, const CMatrix &cov, double noise_var)
{
    const Index n = cov.rows();
    if (cov.cols() != n || n % pilot.n_tx() != 0)
        throw std::invalid_argument("lmmse_filter: covariance size must be N_tx * N_rx");
    if (!(noise_var > 0.0))
        throw std::invalid_argument("lmmse_filter: noise_var must be > 0");
    const Index n_rx = n / pilot.n_tx();
    const CMatrix a = kron(pilot.p, CMatrix::Identity(n_rx, n_rx));
    const CMatrix ca = cov * a.adjoint();
    CMatrix cy = hermitian_part(a * ca);
    cy.diagonal().array() += noise_var;
    Eigen::LDLT<CMatrix> ldlt(cy);
    return ldlt.solve(ca.adjoint()).adjoint();
}

/// LMMSE with sample_cov in place of the true covariance.
inline CVector sample_cov_lmmse(const CVector &y, const PilotMatrix &pilot, const CMatrix &sample_cov, double noise_var)
{
    return lmmse_filter(pilot, sample_cov, noise_var) * y;
}

/// (1/M) X X^H over the columns of X.
inline CMatrix sample_covariance(const CMatrix &samples)
{
    if (samples.cols() < 1)
        throw std::invalid_argument("sample_covariance: need at least one sample");
    CMatrix c = CMatrix::Zero(samples.rows(), samples.rows());
    c.selfadjointView<Eigen::Lower>().rankUpdate(samples, 1.0 / static_cast<double>(samples.cols()));
    return CMatrix(c.selfadjointView<Eigen::Lower>());
}

/// Angular grid u_c = -1 + 2c / (O n), atoms exp(i pi m u_c) / sqrt(n).
inline CMatrix angular_dictionary(Index n, int oversampling = 2)
{
    if (n < 1 || oversampling < 1)
        throw std::invalid_argument("angular_dictionary: need n >= 1 and oversampling >= 1");
    const Index width = n * oversampling;
    CMatrix d(n, width);
    for (Index c = 0; c < width; ++c)
    {
        const double u = -1.0 + 2.0 * static_cast<double>(c) / static_cast<double>(width);
        for (Index m = 0; m < n; ++m)
            d(m, c) = std::polar(1.0 / std::sqrt(static_cast<double>(n)), kPi * static_cast<double>(m) * u);
    }
    return d;
}

/// Transmit dictionary for MISO; D_tx kron D_rx otherwise.
inline CMatrix omp_dictionary(Index n_tx, Index n_rx, int oversampling = 2)
{
    const CMatrix dtx = angular_dictionary(n_tx, oversampling);
    if (n_rx == 1)
        return dtx;
    return kron(dtx, angular_dictionary(n_rx, oversampling));
}

struct OmpResult
{
    CVector h;
    Index order = 0; // selected sparsity; 0 means the zero estimate won
};

/// Greedy OMP on (P kron I) D with least-squares refits. Every order
/// s = 0..n_p N_rx is a candidate; the one closest to true_h is returned.
inline OmpResult omp_genie(const CVector &y, const PilotMatrix &pilot, const CMatrix &dictionary, const CVector &true_h)
{
    const Index n = dictionary.rows();
    if (n % pilot.n_tx() != 0 || true_h.size() != n)
        throw std::invalid_argument("omp_genie_estimate: dictionary rows must equal N_tx * N_rx");
    const Index n_rx = n / pilot.n_tx();
    if (y.size() != pilot.n_pilots() * n_rx)
        throw std::invalid_argument("omp_genie_estimate: observation length must be n_p * N_rx");

    CMatrix a(y.size(), dictionary.cols());
    for (Index c = 0; c < dictionary.cols(); ++c)
        a.col(c) = apply_pilot(pilot, dictionary.col(c), n_rx);
    const RVector norms = a.colwise().norm().transpose();

    OmpResult best{CVector::Zero(n), 0};
    double best_err = true_h.squaredNorm();
    const Index s_max = std::min(y.size(), dictionary.cols());
    const double y_norm = y.norm();
    std::vector<Index> support;
    std::vector<char> used(static_cast<std::size_t>(dictionary.cols()), 0);
    CVector residual = y;

    for (Index s = 1; s <= s_max; ++s)
    {
        if (residual.norm() <= 1e-13 * y_norm)
            break;
        const CVector corr = a.adjoint() * residual;
        Index pick = -1;
        double pick_val = -1.0;
        for (Index c = 0; c < a.cols(); ++c)
        {
            if (used[static_cast<std::size_t>(c)] || !(norms(c) > 0.0))
                continue;
            const double v = std::abs(corr(c)) / norms(c);
            if (v > pick_val)
            {
                pick_val = v;
                pick = c;
            }
        }
        if (pick < 0)
            break;
        used[static_cast<std::size_t>(pick)] = 1;
        support.push_back(pick);

        CMatrix a_s(a.rows(), static_cast<Index>(support.size()));
        CMatrix d_s(n, static_cast<Index>(support.size()));
        for (std::size_t i = 0; i < support.size(); ++i)
        {
            a_s.col(static_cast<Index>(i)) = a.col(support[i]);
            d_s.col(static_cast<Index>(i)) = dictionary.col(support[i]);
        }
        const CVector x = Eigen::CompleteOrthogonalDecomposition<CMatrix>(a_s).solve(y);
        residual = y - a_s * x;
        CVector h = d_s * x;
        const double err = (h - true_h).squaredNorm();
        if (err < best_err)
        {
            best_err = err;
            best = OmpResult{std::move(h), s};
        }
    }
    return best;
}

inline CVector omp_genie_estimate(const CVector &y, const PilotMatrix &pilot, const CMatrix &dictionary,
                                  double /*noise_var*/, const CVector &true_h)
{
    return omp_genie(y, pilot, dictionary, true_h).h;
}

} // namespace fddpilot
