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

// Spatial channel statistics (ULA, Laplacian angular spread), Kronecker
// channel realizations, datasets, and noisy pilot observations.
//
// Conventions fixed repo-wide:
//   H is N_rx x N_tx, h = vec(H) stacks the columns of H.
//   Full covariance C = C_tx kron C_rx, observation y = (P kron I) h + n.

#pragma once

#include "fddpilot/parallel.hpp"
#include "fddpilot/pilot_matrix.hpp"
#include "fddpilot/types.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fddpilot
{

struct ScenarioConfig
{
    int n_tx = 16;
    int n_rx = 4;
    int n_pilots = 4;
    int n_users = 1;
    double snr_db = 10.0;
    double rho = 1.0;
    int n_blocks = 5; // horizon T, blocks 0..T
    std::uint64_t seed = 1;

    double spread_tx_deg = 2.0;
    double spread_rx_deg = 35.0;
    int quad_points = 2048;
    int n_clusters = 1;

    int dim() const { return n_tx * n_rx; }

    /// sigma_n^2 with SNR := 1 / sigma_n^2.
    double noise_var() const { return std::pow(10.0, -snr_db / 10.0); }

    void validate() const
    {
        if (n_tx < 1 || n_rx < 1)
            throw std::invalid_argument("ScenarioConfig: antenna counts must be >= 1");
        if (n_pilots < 1 || n_pilots > n_tx)
            throw std::invalid_argument("ScenarioConfig: n_pilots must lie in [1, n_tx]");
        if (n_users < 1)
            throw std::invalid_argument("ScenarioConfig: n_users must be >= 1");
        if (!(rho > 0.0))
            throw std::invalid_argument("ScenarioConfig: rho must be > 0");
        if (n_blocks < 0)
            throw std::invalid_argument("ScenarioConfig: n_blocks must be >= 0");
        if (!(spread_tx_deg > 0.0) || !(spread_rx_deg > 0.0))
            throw std::invalid_argument("ScenarioConfig: angular spreads must be > 0");
        if (quad_points < 64)
            throw std::invalid_argument("ScenarioConfig: quad_points must be >= 64");
        if (n_clusters < 1)
            throw std::invalid_argument("ScenarioConfig: n_clusters must be >= 1");
    }
};

/// Transmit/receive covariance pair of one user; the full covariance is
/// cov_tx kron cov_rx and is only built on request.
struct ChannelStats
{
    CMatrix cov_tx;
    CMatrix cov_rx;
    std::vector<double> delta; // cluster angles: tx centers first, then rx centers

    Index n_tx() const { return cov_tx.rows(); }
    Index n_rx() const { return cov_rx.rows(); }
    CMatrix full_covariance() const { return kron(cov_tx, cov_rx); }
};

struct ChannelSample
{
    CVector h;
    int block_index = 0;
    int user_index = 0;
};

struct ObservationBatch
{
    CVector y;
    PilotMatrix pilot;
    double noise_var = 1.0;
};

/// a(theta)_m = exp(i pi m sin(theta)), m = 0..n-1 (half-wavelength ULA).
inline CVector steering_vector(double theta, Index n)
{
    if (n < 1)
        throw std::invalid_argument("steering_vector: n must be >= 1");
    CVector a(n);
    const double s = std::sin(theta);
    for (Index m = 0; m < n; ++m)
        a(m) = std::polar(1.0, kPi * static_cast<double>(m) * s);
    return a;
}

/// Spatial covariance of a ULA under a truncated Laplacian power density.
///
/// Periodic trapezoidal rule on [-pi, pi) with the grid anchored at the first
/// center angle, so the kink of the Laplacian falls on a node. Each cluster's
/// density is truncated to [-pi, pi] and normalized on the grid to sum to one;
/// clusters are averaged with equal weights. The result is Toeplitz with unit
/// diagonal, then Hermitian-symmetrized.
inline CMatrix side_covariance(std::span<const double> center_angles, double spread_deg, Index n,
                               int quad_points = 2048)
{
    if (center_angles.empty())
        throw std::invalid_argument("side_covariance: need at least one center angle");
    if (!(spread_deg > 0.0))
        throw std::invalid_argument("side_covariance: spread must be > 0");
    if (quad_points < 64)
        throw std::invalid_argument("side_covariance: quad_points must be >= 64");
    if (n < 1)
        throw std::invalid_argument("side_covariance: n must be >= 1");

    const double scale = (spread_deg * kPi / 180.0) / std::sqrt(2.0); // Laplace scale b, std = sqrt(2) b
    const std::size_t q = static_cast<std::size_t>(quad_points);
    const double step = 2.0 * kPi / static_cast<double>(quad_points);

    std::vector<double> theta(q);
    for (std::size_t i = 0; i < q; ++i)
    {
        double t = center_angles[0] + step * static_cast<double>(i);
        t = std::remainder(t, 2.0 * kPi); // into [-pi, pi]
        theta[i] = t;
    }

    std::vector<double> weight(q, 0.0);
    for (double mu : center_angles)
    {
        std::vector<double> g(q);
        double total = 0.0;
        for (std::size_t i = 0; i < q; ++i)
        {
            g[i] = std::exp(-std::abs(theta[i] - mu) / scale);
            total += g[i];
        }
        if (!(total > 0.0) || !std::isfinite(total))
            throw std::runtime_error("side_covariance: density normalization failed");
        for (std::size_t i = 0; i < q; ++i)
            weight[i] += g[i] / total / static_cast<double>(center_angles.size());
    }

    // c_k = sum_q w_q exp(i pi k sin(theta_q)); C[m, l] = c_{m - l}.
    // Powers of z_q = exp(i pi sin(theta_q)) by recurrence over k, vectorized
    // across the nodes and resynchronized every 64 steps.
    Eigen::ArrayXd phase(static_cast<Index>(q)), w(static_cast<Index>(q));
    for (std::size_t i = 0; i < q; ++i)
    {
        phase(static_cast<Index>(i)) = kPi * std::sin(theta[i]);
        w(static_cast<Index>(i)) = weight[i];
    }
    const Eigen::ArrayXd z_re = phase.cos(), z_im = phase.sin();
    Eigen::ArrayXd re = Eigen::ArrayXd::Ones(static_cast<Index>(q)), im = Eigen::ArrayXd::Zero(static_cast<Index>(q));
    CVector c(n);
    for (Index k = 0; k < n; ++k)
    {
        if (k > 0 && k % 64 == 0)
        {
            re = (phase * static_cast<double>(k)).cos();
            im = (phase * static_cast<double>(k)).sin();
        }
        c(k) = cplx((w * re).sum(), (w * im).sum());
        const Eigen::ArrayXd next_re = re * z_re - im * z_im;
        im = re * z_im + im * z_re;
        re = next_re;
    }

    CMatrix cov(n, n);
    for (Index m = 0; m < n; ++m)
        for (Index l = 0; l < n; ++l)
            cov(m, l) = m >= l ? c(m - l) : std::conj(c(l - m));
    cov = hermitian_part(cov);

    if (!cov.allFinite())
        throw std::runtime_error("side_covariance: non-finite quadrature result");
    return cov;
}

/// Rebuilds the covariance pair from cluster angles (tx centers, then rx centers).
inline ChannelStats stats_from_delta(const ScenarioConfig &config, std::vector<double> delta)
{
    const std::size_t nc = static_cast<std::size_t>(config.n_clusters);
    if (delta.size() != 2 * nc)
        throw std::invalid_argument("stats_from_delta: expected two angles per cluster");
    std::span<const double> tx(delta.data(), nc);
    std::span<const double> rx(delta.data() + nc, nc);
    ChannelStats stats;
    stats.cov_tx = side_covariance(tx, config.spread_tx_deg, config.n_tx, config.quad_points);
    stats.cov_rx = side_covariance(rx, config.spread_rx_deg, config.n_rx, config.quad_points);
    stats.delta = std::move(delta);
    return stats;
}

/// Draws uniform cluster angles on [-pi/2, pi/2] for both sides.
inline std::vector<double> sample_delta(Rng &rng, const ScenarioConfig &config)
{
    std::uniform_real_distribution<double> angle(-kPi / 2.0, kPi / 2.0);
    std::vector<double> delta(2 * static_cast<std::size_t>(config.n_clusters));
    for (double &d : delta)
        d = angle(rng);
    return delta;
}

inline ChannelStats sample_scenario_stats(Rng &rng, const ScenarioConfig &config)
{
    config.validate();
    return stats_from_delta(config, sample_delta(rng, config));
}

/// Checks the ChannelStats invariants; returns an empty string when valid.
inline std::string check_channel_stats(const ChannelStats &stats)
{
    auto check_side = [](const CMatrix &c, const char *name) -> std::string {
        if (c.rows() != c.cols() || c.rows() == 0)
            return std::string(name) + " is not square";
        if ((c - c.adjoint()).cwiseAbs().maxCoeff() > 1e-12)
            return std::string(name) + " is not Hermitian";
        if (Eigen::SelfAdjointEigenSolver<CMatrix>(c, Eigen::EigenvaluesOnly).eigenvalues().minCoeff() < -1e-10)
            return std::string(name) + " is not positive semidefinite";
        if (std::abs(c.trace().real() - static_cast<double>(c.rows())) > 1e-8)
            return std::string(name) + " trace differs from its dimension";
        return {};
    };
    if (auto e = check_side(stats.cov_tx, "cov_tx"); !e.empty())
        return e;
    return check_side(stats.cov_rx, "cov_rx");
}

/// Square-root factor F with F F^H = C, from the eigendecomposition.
/// Throws on inputs with clearly negative eigenvalues.
inline CMatrix psd_sqrt_factor(const CMatrix &c)
{
    Eigen::SelfAdjointEigenSolver<CMatrix> es(c);
    const RVector &ev = es.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < -1e-9 * scale)
        throw std::runtime_error("psd_sqrt_factor: matrix is indefinite");
    return es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

/// Matrix-normal sampler: H = F_rx G F_tx^T, hence vec(H) ~ CN(0, C_tx kron C_rx).
class ChannelSampler
{
  public:
    explicit ChannelSampler(const ChannelStats &stats)
        : factor_tx_(psd_sqrt_factor(stats.cov_tx)), factor_rx_(psd_sqrt_factor(stats.cov_rx))
    {
    }

    CVector draw(Rng &rng) const
    {
        CMatrix g = complex_normal(rng, factor_rx_.rows(), factor_tx_.rows());
        CMatrix h = factor_rx_ * g * factor_tx_.transpose();
        return Eigen::Map<const CVector>(h.data(), h.size());
    }

  private:
    CMatrix factor_tx_;
    CMatrix factor_rx_;
};

inline ChannelSample draw_channel(Rng &rng, const ChannelStats &stats, int block_index = 0, int user_index = 0)
{
    return ChannelSample{ChannelSampler(stats).draw(rng), block_index, user_index};
}

/// Channels as columns of an N x M matrix, plus the angles that generated each
/// one (ChannelStats are rebuilt with stats_from_delta on demand).
struct Dataset
{
    int n_tx = 0;
    int n_rx = 0;
    CMatrix samples;
    std::vector<std::vector<double>> deltas;

    Index size() const { return samples.cols(); }
    ChannelSample sample(Index m) const { return ChannelSample{samples.col(m), 0, static_cast<int>(m)}; }
};

/// M samples, each with freshly drawn angles. Unit-diagonal side covariances
/// give E[||h||^2] = N_tx N_rx exactly, so no empirical rescaling is applied.
/// One value is drawn from rng; sample m then uses its own derived stream.
inline Dataset generate_dataset(Rng &rng, const ScenarioConfig &config, Index m)
{
    config.validate();
    if (m < 1)
        throw std::invalid_argument("generate_dataset: need at least one sample");
    const std::uint64_t base = rng();

    Dataset ds;
    ds.n_tx = config.n_tx;
    ds.n_rx = config.n_rx;
    ds.samples.resize(config.dim(), m);
    ds.deltas.resize(static_cast<std::size_t>(m));
    parallel_for(static_cast<std::size_t>(m), [&](std::size_t i) {
        Rng local = make_stream(base, {i});
        auto delta = sample_delta(local, config);
        ChannelStats stats = stats_from_delta(config, delta);
        ds.samples.col(static_cast<Index>(i)) = ChannelSampler(stats).draw(local);
        ds.deltas[i] = std::move(delta);
    });
    return ds;
}

/// y = vec(H P^T + N) with N i.i.d. CN(0, noise_var); P kron I is never formed.
inline ObservationBatch observe(Rng &rng, const ChannelSample &h, const PilotMatrix &pilot, double noise_var,
                                Index n_rx)
{
    if (!(noise_var >= 0.0))
        throw std::invalid_argument("observe: noise_var must be >= 0");
    ObservationBatch out{apply_pilot(pilot, h.h, n_rx), pilot, noise_var};
    if (noise_var > 0.0)
        out.y += std::sqrt(noise_var) * complex_normal(rng, out.y.size(), 1);
    return out;
}

} // namespace fddpilot
