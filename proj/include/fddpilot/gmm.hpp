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

// Zero-mean Gaussian mixture with Kronecker-structured component covariances
// C_k = C_tx[k_tx] kron C_rx[k_rx], k = k_tx * K_rx + k_rx.
//
// Fitting: EM with means pinned at zero, run separately on the rows (transmit
// side) and the columns (receive side) of the training channel matrices.
// Inference: responsibilities, MAP feedback index and the GMM estimator, all
// evaluated in the Kronecker eigenbasis without forming N x N matrices.

#pragma once

#include "fddpilot/channel_model.hpp"
#include "fddpilot/parallel.hpp"
#include "fddpilot/pilot_matrix.hpp"
#include "fddpilot/types.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace fddpilot
{

struct EmOptions
{
    int max_iters = 300;
    double tol = 1e-5;       // stop when the average log-likelihood gains less than this
    double reg_scale = 1e-6; // eigenvalue floor eps = reg_scale * tr(C) / d; 0 disables the floor
};

struct EmResult
{
    RVector weights;
    std::vector<CMatrix> covs;
    std::vector<double> loglik; // average log-likelihood per E-step
    int iterations = 0;
    bool converged = false;
    std::vector<std::string> warnings;
    int floor_events = 0; // M-step covariances lifted to the eigenvalue floor
};

namespace detail
{

inline RVector row_logsumexp(const RMatrix &logp)
{
    RVector out(logp.rows());
    for (Index m = 0; m < logp.rows(); ++m)
    {
        const double mx = logp.row(m).maxCoeff();
        if (!std::isfinite(mx))
        {
            out(m) = mx;
            continue;
        }
        out(m) = mx + std::log((logp.row(m).array() - mx).exp().sum());
    }
    return out;
}

inline void regularize(CMatrix &c, double reg_scale)
{
    const double d = static_cast<double>(c.rows());
    double eps = reg_scale * c.trace().real() / d;
    if (!(eps > 0.0))
        eps = reg_scale;
    c.diagonal().array() += eps;
}

// Weighted zero-mean covariance updates; weights are uniform on the first call.
inline void em_m_step(const CMatrix &data, const RMatrix &resp, EmResult &res, const EmOptions &opt,
                      bool update_weights)
{
    const Index d = data.rows();
    const Index m = data.cols();
    const Index k = resp.cols();
    std::vector<std::string> warnings(static_cast<std::size_t>(k));
    std::vector<int> floored(static_cast<std::size_t>(k), 0);
    // 10 eps keeps 1 / N_k finite when a component's responsibilities underflow
    RVector counts = resp.colwise().sum().transpose().array() + 10.0 * std::numeric_limits<double>::epsilon();
    const double data_power = data.squaredNorm() / static_cast<double>(m * d);

    parallel_for(static_cast<std::size_t>(k), [&](std::size_t ks) {
        const Index kk = static_cast<Index>(ks);
        const double nk = counts(kk);
        CMatrix c = CMatrix::Zero(d, d);
        if (nk > 0.0)
        {
            CMatrix scaled = data * resp.col(kk).cwiseSqrt().asDiagonal();
            c.selfadjointView<Eigen::Lower>().rankUpdate(scaled, 1.0 / nk);
            c = CMatrix(c.selfadjointView<Eigen::Lower>());
        }
        else
        {
            c = CMatrix::Identity(d, d);
        }
        if (nk < static_cast<double>(d))
        {
            const double eps = std::max(opt.reg_scale, 1e-12) *
                               std::max(c.trace().real() / static_cast<double>(d), data_power);
            c.diagonal().array() += eps;
            warnings[ks] = "component " + std::to_string(kk) + " collapsed (effective count below " +
                           std::to_string(d) + "), covariance regularized";
        }
        else if (opt.reg_scale > 0.0)
        {
            const double floor = opt.reg_scale * c.trace().real() / static_cast<double>(d);
            const double low = Eigen::SelfAdjointEigenSolver<CMatrix>(c, Eigen::EigenvaluesOnly).eigenvalues()(0);
            if (low < floor)
            {
                c.diagonal().array() += floor;
                floored[ks] = 1;
            }
        }
        res.covs[ks] = std::move(c);
    });
    for (auto &w : warnings)
        if (!w.empty() && std::find(res.warnings.begin(), res.warnings.end(), w) == res.warnings.end())
            res.warnings.push_back(std::move(w));
    for (int f : floored)
        res.floor_events += f;
    if (update_weights)
        res.weights = counts / counts.sum();
}

// Column kk of logp: log pi_k + log N_C(x_m; 0, C_k). Regularizes on failed factorization.
inline void em_e_step(const CMatrix &data, EmResult &res, const EmOptions &opt, RMatrix &logp)
{
    const Index d = data.rows();
    const Index k = static_cast<Index>(res.covs.size());
    std::vector<std::string> warnings(static_cast<std::size_t>(k));
    parallel_for(static_cast<std::size_t>(k), [&](std::size_t ks) {
        const Index kk = static_cast<Index>(ks);
        CMatrix &c = res.covs[ks];
        Eigen::LLT<CMatrix> llt(c);
        for (int attempt = 0; llt.info() != Eigen::Success && attempt < 8; ++attempt)
        {
            regularize(c, std::max(opt.reg_scale, 1e-12) * std::pow(10.0, attempt));
            llt.compute(c);
            warnings[ks] = "component " + std::to_string(kk) + " not positive definite, covariance regularized";
        }
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("fit_em_zero_mean: covariance factorization failed");
        const CMatrix l = llt.matrixL();
        double logdet = 0.0;
        for (Index i = 0; i < d; ++i)
            logdet += 2.0 * std::log(l(i, i).real());
        const CMatrix l_inv = llt.matrixL().solve(CMatrix::Identity(d, d));
        const CMatrix z = l_inv * data;
        const double w = res.weights(kk);
        const double logw = w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
        logp.col(kk) = (-z.colwise().squaredNorm().transpose().array() +
                        (logw - static_cast<double>(d) * std::log(kPi) - logdet))
                           .matrix();
    });
    for (auto &w : warnings)
        if (!w.empty() && std::find(res.warnings.begin(), res.warnings.end(), w) == res.warnings.end())
            res.warnings.push_back(std::move(w));
}

} // namespace detail

/// EM for a zero-mean complex Gaussian mixture on the columns of `data` (d x M).
///
/// Initialization draws Dirichlet(1, ..., 1) responsibilities per sample,
/// applies one M-step for the covariances and sets uniform weights. Each
/// iteration runs E-step, convergence check, M-step. Effective counts carry
/// 10 machine epsilons so starved components stay finite. A collapsed
/// component (effective count < d) gets reg_scale times the larger of its own
/// and the data's per-entry power added to the diagonal, with a warning; any
/// other covariance whose smallest eigenvalue is below
/// eps = reg_scale * tr(C) / d is lifted by eps * I (counted in floor_events). The final
/// parameters are the ones evaluated by the last recorded log-likelihood
/// whenever the run converged.
inline EmResult fit_em_zero_mean(Rng &rng, const CMatrix &data, int k, const EmOptions &opt = {})
{
    const Index d = data.rows();
    const Index m = data.cols();
    if (k < 1)
        throw std::invalid_argument("fit_em_zero_mean: k must be >= 1");
    if (d < 1)
        throw std::invalid_argument("fit_em_zero_mean: dimension must be >= 1");
    if (m < k)
        throw std::invalid_argument("fit_em_zero_mean: need at least k samples");
    if (opt.max_iters < 1)
        throw std::invalid_argument("fit_em_zero_mean: max_iters must be >= 1");

    RMatrix resp(m, k);
    std::exponential_distribution<double> expo(1.0);
    for (Index i = 0; i < m; ++i)
    {
        for (Index j = 0; j < k; ++j)
            resp(i, j) = expo(rng);
        resp.row(i) /= resp.row(i).sum();
    }

    EmResult res;
    res.covs.resize(static_cast<std::size_t>(k));
    res.weights = RVector::Constant(k, 1.0 / static_cast<double>(k));
    detail::em_m_step(data, resp, res, opt, false);

    RMatrix logp(m, k);
    double prev = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < opt.max_iters; ++it)
    {
        detail::em_e_step(data, res, opt, logp);
        const RVector lse = detail::row_logsumexp(logp);
        const double ll = lse.mean();
        if (!std::isfinite(ll))
            throw std::runtime_error("fit_em_zero_mean: non-finite log-likelihood at iteration " + std::to_string(it));
        res.loglik.push_back(ll);
        res.iterations = it + 1;
        if (it > 0 && ll - prev < opt.tol)
        {
            res.converged = true;
            break;
        }
        prev = ll;
        for (Index i = 0; i < m; ++i)
            resp.row(i) = (logp.row(i).array() - lse(i)).exp();
        detail::em_m_step(data, resp, res, opt, true);
    }
    return res;
}

struct Responsibilities
{
    RVector probs;
};

struct FeedbackIndex
{
    int k_star = 0;
    int bit_width = 0; // ceil(log2 K); exact B when K is a power of two
};

/// Zero-mean GMM with Kronecker-factored covariances.
class GmmModel
{
  public:
    GmmModel() = default;

    /// Combined weights pi_k = pi_tx[k_tx] * pi_rx[k_rx].
    GmmModel(RVector weights_tx, std::vector<CMatrix> cov_tx, RVector weights_rx, std::vector<CMatrix> cov_rx)
        : cov_tx_(std::move(cov_tx)), cov_rx_(std::move(cov_rx)), weights_tx_(std::move(weights_tx)),
          weights_rx_(std::move(weights_rx))
    {
        if (weights_tx_.size() != static_cast<Index>(cov_tx_.size()) ||
            weights_rx_.size() != static_cast<Index>(cov_rx_.size()))
            throw std::invalid_argument("GmmModel: weight and covariance counts differ");
        weights_.resize(weights_tx_.size() * weights_rx_.size());
        for (Index a = 0; a < weights_tx_.size(); ++a)
            for (Index b = 0; b < weights_rx_.size(); ++b)
                weights_(a * weights_rx_.size() + b) = weights_tx_(a) * weights_rx_(b);
        validate();
    }

    /// Arbitrary combined weights over the K_tx * K_rx grid; nonnegative,
    /// rescaled to sum to one.
    GmmModel(RVector weights, std::vector<CMatrix> cov_tx, std::vector<CMatrix> cov_rx)
        : cov_tx_(std::move(cov_tx)), cov_rx_(std::move(cov_rx)), weights_(std::move(weights))
    {
        if (weights_.size() != static_cast<Index>(cov_tx_.size() * cov_rx_.size()))
            throw std::invalid_argument("GmmModel: need K_tx * K_rx weights");
        if ((weights_.array() < 0.0).any() || !(weights_.sum() > 0.0))
            throw std::invalid_argument("GmmModel: weights must be nonnegative with positive sum");
        weights_ /= weights_.sum();
        validate();
    }

    Index num_components() const { return weights_.size(); }
    Index k_tx() const { return static_cast<Index>(cov_tx_.size()); }
    Index k_rx() const { return static_cast<Index>(cov_rx_.size()); }
    Index n_tx() const { return cov_tx_.front().rows(); }
    Index n_rx() const { return cov_rx_.front().rows(); }
    Index dim() const { return n_tx() * n_rx(); }

    const RVector &weights() const { return weights_; }
    double weight(Index k) const { return weights_(k); }
    const RVector &side_weights_tx() const { return weights_tx_; }
    const RVector &side_weights_rx() const { return weights_rx_; }

    Index tx_index(Index k) const { return k / k_rx(); }
    Index rx_index(Index k) const { return k % k_rx(); }
    Index component_index(Index a, Index b) const { return a * k_rx() + b; }

    const CMatrix &cov_tx(Index a) const { return cov_tx_[static_cast<std::size_t>(a)]; }
    const CMatrix &cov_rx(Index b) const { return cov_rx_[static_cast<std::size_t>(b)]; }
    const std::vector<CMatrix> &tx_covariances() const { return cov_tx_; }
    const std::vector<CMatrix> &rx_covariances() const { return cov_rx_; }

    /// Component k as a covariance pair (no angles attached).
    ChannelStats component_stats(Index k) const { return ChannelStats{cov_tx(tx_index(k)), cov_rx(rx_index(k)), {}}; }

    CMatrix component_covariance(Index k) const { return kron(cov_tx(tx_index(k)), cov_rx(rx_index(k))); }

    FeedbackIndex feedback(int k_star) const
    {
        return FeedbackIndex{k_star, static_cast<int>(std::bit_width(static_cast<std::uint64_t>(num_components() - 1)))};
    }

  private:
    void validate() const
    {
        if (cov_tx_.empty() || cov_rx_.empty())
            throw std::invalid_argument("GmmModel: need at least one component per side");
        for (const auto &c : cov_tx_)
            if (c.rows() != cov_tx_.front().rows() || c.cols() != c.rows())
                throw std::invalid_argument("GmmModel: inconsistent transmit covariance shapes");
        for (const auto &c : cov_rx_)
            if (c.rows() != cov_rx_.front().rows() || c.cols() != c.rows())
                throw std::invalid_argument("GmmModel: inconsistent receive covariance shapes");
        if ((weights_.array() < 0.0).any() || std::abs(weights_.sum() - 1.0) > 1e-12)
            throw std::invalid_argument("GmmModel: weights must form a probability vector");
    }

    std::vector<CMatrix> cov_tx_;
    std::vector<CMatrix> cov_rx_;
    RVector weights_;
    RVector weights_tx_;
    RVector weights_rx_;
};

struct KroneckerFitReport
{
    EmResult tx;
    EmResult rx; // empty when N_rx = 1
};

/// Rows of each N_rx x N_tx sample (transposed to columns) as transmit-side data.
inline CMatrix transmit_side_samples(const CMatrix &samples, Index n_tx, Index n_rx)
{
    CMatrix out(n_tx, samples.cols() * n_rx);
    for (Index m = 0; m < samples.cols(); ++m)
    {
        Eigen::Map<const CMatrix> h(samples.col(m).data(), n_rx, n_tx);
        out.middleCols(m * n_rx, n_rx) = h.transpose();
    }
    return out;
}

/// Columns of each N_rx x N_tx sample as receive-side data.
inline CMatrix receive_side_samples(const CMatrix &samples, Index n_tx, Index n_rx)
{
    CMatrix out(n_rx, samples.cols() * n_tx);
    for (Index m = 0; m < samples.cols(); ++m)
        out.middleCols(m * n_tx, n_tx) = Eigen::Map<const CMatrix>(samples.col(m).data(), n_rx, n_tx);
    return out;
}

/// Separate zero-mean GMMs on the transmit and receive marginals, combined
/// into K = k_tx * k_rx Kronecker components. The transmit side consumes rng
/// first; with N_rx = 1 the receive side is the fixed [1] with one component.
inline GmmModel fit_kronecker_gmm(Rng &rng, const CMatrix &samples, Index n_tx, Index n_rx, int k_tx, int k_rx,
                                  const EmOptions &opt = {}, KroneckerFitReport *report = nullptr)
{
    if (samples.rows() != n_tx * n_rx)
        throw std::invalid_argument("fit_kronecker_gmm: sample length must be n_tx * n_rx");
    if (k_tx < 1 || k_rx < 1)
        throw std::invalid_argument("fit_kronecker_gmm: component counts must be >= 1");

    KroneckerFitReport local;
    KroneckerFitReport &rep = report ? *report : local;
    rep.tx = fit_em_zero_mean(rng, transmit_side_samples(samples, n_tx, n_rx), k_tx, opt);
    if (n_rx == 1)
    {
        rep.rx = EmResult{};
        return GmmModel(rep.tx.weights, rep.tx.covs, RVector::Ones(1), {CMatrix::Ones(1, 1)});
    }
    rep.rx = fit_em_zero_mean(rng, receive_side_samples(samples, n_tx, n_rx), k_rx, opt);
    return GmmModel(rep.tx.weights, rep.tx.covs, rep.rx.weights, rep.rx.covs);
}

inline RVector normalize_log_weights(const RVector &logp)
{
    const double mx = logp.maxCoeff();
    if (!std::isfinite(mx))
        throw std::runtime_error("responsibilities: all component densities vanish");
    RVector p = (logp.array() - mx).exp();
    return p / p.sum();
}

/// Lowest index among the maxima.
inline int argmax_lowest(const RVector &v)
{
    Index best = 0;
    for (Index k = 1; k < v.size(); ++k)
        if (v(k) > v(best))
            best = k;
    return static_cast<int>(best);
}

/// GMM of the observations for one pilot and noise level.
///
/// Component k = (a, b) has C_y = (P C_tx[a] P^H) kron C_rx[b] + noise I.
/// With P C_tx[a] P^H = V S V^H and C_rx[b] = W T W^H,
///   C_y = (V kron W)(S kron T + noise I)(V kron W)^H,
/// so log-determinants, quadratic forms and the LMMSE filters need only the
/// side eigendecompositions.
class ObservationModel
{
  public:
    ObservationModel(const GmmModel &model, const PilotMatrix &pilot, double noise_var)
        : noise_var_(noise_var), n_tx_(model.n_tx()), n_rx_(model.n_rx()), n_p_(pilot.n_pilots()),
          k_rx_(model.k_rx())
    {
        if (!(noise_var > 0.0))
            throw std::invalid_argument("ObservationModel: noise_var must be > 0");
        if (pilot.n_tx() != model.n_tx())
            throw std::invalid_argument("ObservationModel: pilot width differs from N_tx");

        tx_.resize(static_cast<std::size_t>(model.k_tx()));
        for (Index a = 0; a < model.k_tx(); ++a)
        {
            const CMatrix &ctx = model.cov_tx(a);
            auto eig = eigh_descending(hermitian_part(pilot.p * ctx * pilot.p.adjoint()));
            TxPart &part = tx_[static_cast<std::size_t>(a)];
            part.s = eig.values.cwiseMax(0.0);
            part.conj_v = eig.vectors.conjugate();
            part.v_t = eig.vectors.transpose();
            part.lift = (eig.vectors.adjoint() * pilot.p * ctx).conjugate();
        }
        rx_.resize(static_cast<std::size_t>(model.k_rx()));
        for (Index b = 0; b < model.k_rx(); ++b)
        {
            auto eig = eigh_descending(model.cov_rx(b));
            RxPart &part = rx_[static_cast<std::size_t>(b)];
            part.t = eig.values.cwiseMax(0.0);
            part.w = eig.vectors;
            part.w_adj = eig.vectors.adjoint();
            part.wt = eig.vectors * part.t.asDiagonal();
        }

        const Index k = model.num_components();
        log_weights_.resize(k);
        log_det_.resize(k);
        for (Index kk = 0; kk < k; ++kk)
        {
            const double w = model.weight(kk);
            log_weights_(kk) = w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
            log_det_(kk) = denominators(kk).array().log().sum();
        }
    }

    Index num_components() const { return log_weights_.size(); }
    double noise_var() const { return noise_var_; }
    double log_det(Index k) const { return log_det_(k); }

    /// Dense C_y for component k (inspection and tests only).
    CMatrix covariance(Index k) const
    {
        const TxPart &tx = tx_[static_cast<std::size_t>(k / k_rx_)];
        const RxPart &rx = rx_[static_cast<std::size_t>(k % k_rx_)];
        const CMatrix v = tx.conj_v.conjugate();
        const CMatrix basis = kron(v, rx.w);
        const RMatrix den = denominators(k);
        const RVector diag = Eigen::Map<const RVector>(den.data(), den.size());
        return basis * diag.asDiagonal() * basis.adjoint();
    }

    /// (C_y^k)^{-1} y.
    CVector apply_inverse(Index k, const CVector &y) const
    {
        const TxPart &tx = tx_[static_cast<std::size_t>(k / k_rx_)];
        const RxPart &rx = rx_[static_cast<std::size_t>(k % k_rx_)];
        CMatrix zt = whitened(k, observation_matrix(y) * tx.conj_v);
        CMatrix z = rx.w * zt * tx.v_t;
        return Eigen::Map<const CVector>(z.data(), z.size());
    }

    Responsibilities responsibilities(const CVector &y) const { return Responsibilities{posterior(y, nullptr)}; }

    FeedbackIndex map_feedback(const CVector &y) const
    {
        const RVector p = posterior(y, nullptr);
        return FeedbackIndex{argmax_lowest(p), static_cast<int>(std::bit_width(static_cast<std::uint64_t>(p.size() - 1)))};
    }

    /// Per-component LMMSE estimate C_k (P kron I)^H (C_y^k)^{-1} y.
    CVector component_estimate(Index k, const CVector &y) const
    {
        const TxPart &tx = tx_[static_cast<std::size_t>(k / k_rx_)];
        const RxPart &rx = rx_[static_cast<std::size_t>(k % k_rx_)];
        CMatrix zt = whitened(k, observation_matrix(y) * tx.conj_v);
        CMatrix h = rx.wt * zt * tx.lift;
        return Eigen::Map<const CVector>(h.data(), h.size());
    }

    struct Inference
    {
        Responsibilities resp;
        FeedbackIndex feedback;
        CVector estimate;
    };

    /// Responsibilities, MAP index and the GMM estimate sum_k p(k|y) h_k in one pass.
    Inference infer(const CVector &y) const
    {
        std::vector<CMatrix> whitened_all;
        const RVector p = posterior(y, &whitened_all);
        CMatrix h = CMatrix::Zero(n_rx_, n_tx_);
        for (std::size_t a = 0; a < tx_.size(); ++a)
        {
            CMatrix acc = CMatrix::Zero(n_rx_, n_p_);
            bool any = false;
            for (Index b = 0; b < k_rx_; ++b)
            {
                const Index k = static_cast<Index>(a) * k_rx_ + b;
                if (p(k) == 0.0)
                    continue;
                acc.noalias() += p(k) * (rx_[static_cast<std::size_t>(b)].wt * whitened_all[static_cast<std::size_t>(k)]);
                any = true;
            }
            if (any)
                h.noalias() += acc * tx_[a].lift;
        }
        const int k_star = argmax_lowest(p);
        return Inference{Responsibilities{p}, FeedbackIndex{k_star, static_cast<int>(std::bit_width(static_cast<std::uint64_t>(p.size() - 1)))},
                         Eigen::Map<const CVector>(h.data(), h.size())};
    }

    CVector estimate(const CVector &y) const { return infer(y).estimate; }

  private:
    struct TxPart
    {
        RVector s;      // eigenvalues of P C_tx P^H, descending
        CMatrix conj_v; // conj(V)
        CMatrix v_t;    // V^T
        CMatrix lift;   // conj(V^H P C_tx), n_p x N_tx
    };
    struct RxPart
    {
        RVector t;
        CMatrix w;
        CMatrix w_adj;
        CMatrix wt; // W diag(t)
    };

    Eigen::Map<const CMatrix> observation_matrix(const CVector &y) const
    {
        if (y.size() != n_p_ * n_rx_)
            throw std::invalid_argument("ObservationModel: observation length must be n_p * N_rx");
        return Eigen::Map<const CMatrix>(y.data(), n_rx_, n_p_);
    }

    // D(l, i) = s_i t_l + noise, matching the S kron T diagonal at index i * N_rx + l.
    RMatrix denominators(Index k) const
    {
        const TxPart &tx = tx_[static_cast<std::size_t>(k / k_rx_)];
        const RxPart &rx = rx_[static_cast<std::size_t>(k % k_rx_)];
        RMatrix d = rx.t * tx.s.transpose();
        d.array() += noise_var_;
        return d;
    }

    // W^H (Y conj(V)) divided elementwise by D.
    CMatrix whitened(Index k, const CMatrix &y_conj_v) const
    {
        const RxPart &rx = rx_[static_cast<std::size_t>(k % k_rx_)];
        CMatrix yt = rx.w_adj * y_conj_v;
        return yt.cwiseQuotient(denominators(k).cast<cplx>());
    }

    RVector posterior(const CVector &y, std::vector<CMatrix> *whitened_out) const
    {
        auto ym = observation_matrix(y);
        const Index k = num_components();
        RVector logp(k);
        if (whitened_out)
            whitened_out->resize(static_cast<std::size_t>(k));
        for (std::size_t a = 0; a < tx_.size(); ++a)
        {
            const CMatrix y_conj_v = ym * tx_[a].conj_v;
            for (Index b = 0; b < k_rx_; ++b)
            {
                const Index kk = static_cast<Index>(a) * k_rx_ + b;
                const CMatrix yt = rx_[static_cast<std::size_t>(b)].w_adj * y_conj_v;
                const RMatrix den = denominators(kk);
                const double quad = (yt.cwiseAbs2().array() / den.array()).sum();
                logp(kk) = log_weights_(kk) - log_det_(kk) - quad;
                if (whitened_out)
                    (*whitened_out)[static_cast<std::size_t>(kk)] = yt.cwiseQuotient(den.cast<cplx>());
            }
        }
        return normalize_log_weights(logp);
    }

    double noise_var_;
    Index n_tx_, n_rx_, n_p_, k_rx_;
    std::vector<TxPart> tx_;
    std::vector<RxPart> rx_;
    RVector log_weights_;
    RVector log_det_;
};

inline ObservationModel observation_component_params(const GmmModel &model, const PilotMatrix &pilot,
                                                     double noise_var)
{
    return ObservationModel(model, pilot, noise_var);
}

inline Responsibilities responsibilities_observation(const GmmModel &model, const CVector &y,
                                                     const PilotMatrix &pilot, double noise_var)
{
    return ObservationModel(model, pilot, noise_var).responsibilities(y);
}

inline FeedbackIndex map_feedback(const GmmModel &model, const CVector &y, const PilotMatrix &pilot, double noise_var)
{
    return ObservationModel(model, pilot, noise_var).map_feedback(y);
}

inline CVector gmm_estimate(const GmmModel &model, const CVector &y, const PilotMatrix &pilot, double noise_var)
{
    return ObservationModel(model, pilot, noise_var).estimate(y);
}

/// p(k | h) with C_k = C_tx kron C_rx, evaluated in the side eigenbases.
/// Throws when a component covariance is singular.
inline Responsibilities responsibilities_channel(const GmmModel &model, const CVector &h)
{
    const Index n_tx = model.n_tx();
    const Index n_rx = model.n_rx();
    if (h.size() != n_tx * n_rx)
        throw std::invalid_argument("responsibilities_channel: channel length must be N_tx * N_rx");
    Eigen::Map<const CMatrix> hm(h.data(), n_rx, n_tx);

    std::vector<HermitianEigen> rx;
    for (Index b = 0; b < model.k_rx(); ++b)
        rx.push_back(eigh_descending(model.cov_rx(b)));

    RVector logp(model.num_components());
    for (Index a = 0; a < model.k_tx(); ++a)
    {
        const auto tx = eigh_descending(model.cov_tx(a));
        const CMatrix h_conj_u = hm * tx.vectors.conjugate();
        for (Index b = 0; b < model.k_rx(); ++b)
        {
            const Index k = model.component_index(a, b);
            const RMatrix lam = rx[static_cast<std::size_t>(b)].values * tx.values.transpose();
            if (!(lam.minCoeff() > 0.0))
                throw std::runtime_error("responsibilities_channel: singular component covariance");
            const CMatrix ht = rx[static_cast<std::size_t>(b)].vectors.adjoint() * h_conj_u;
            const double w = model.weight(k);
            logp(k) = (w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity()) - lam.array().log().sum() -
                      (ht.cwiseAbs2().array() / lam.array()).sum();
        }
    }
    return Responsibilities{normalize_log_weights(logp)};
}

/// Observation models keyed by (pilot, noise level); safe for concurrent use.
class ObservationModelCache
{
  public:
    explicit ObservationModelCache(const GmmModel &model) : model_(&model) {}

    std::shared_ptr<const ObservationModel> get(const PilotMatrix &pilot, double noise_var)
    {
        std::uint64_t key = pilot.hash();
        std::uint64_t bits;
        std::memcpy(&bits, &noise_var, sizeof bits);
        key ^= splitmix64(bits);
        {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = entries_.find(key);
            if (it != entries_.end())
                for (const auto &e : it->second)
                    if (e.noise_var == noise_var && e.pilot.bit_identical(pilot))
                        return e.model;
        }
        auto built = std::make_shared<const ObservationModel>(*model_, pilot, noise_var);
        std::lock_guard<std::mutex> lock(mutex_);
        entries_[key].push_back(Entry{pilot, noise_var, built});
        return built;
    }

    std::size_t size() const
    {
        std::lock_guard<std::mutex> lock(mutex_);
        std::size_t n = 0;
        for (const auto &kv : entries_)
            n += kv.second.size();
        return n;
    }

  private:
    struct Entry
    {
        PilotMatrix pilot;
        double noise_var;
        std::shared_ptr<const ObservationModel> model;
    };
    const GmmModel *model_;
    mutable std::mutex mutex_;
    std::unordered_map<std::uint64_t, std::vector<Entry>> entries_;
};

} // namespace fddpilot
