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

// Pilot construction and optimization.
//
// Single user: eigenvector pilots of the transmit covariance, one per GMM
// component, collected in a codebook.
// Multiple users: fixed-point iterations on the sum of conditional mutual
// informations
//   f(P) = sum_j log det(I + (P C_tx,j P^H) kron C_rx,j / noise),
// subject to tr(P P^H) = rho * n_p, and on its lower bound with
// C_rx,j replaced by tr(C_rx,j).
//
// Gradients are Wirtinger derivatives with respect to conj(P). For real f,
// the directional derivative along D is 2 Re tr(G^H D).

#pragma once

#include "fddpilot/channel_model.hpp"
#include "fddpilot/gmm.hpp"
#include "fddpilot/pilot_matrix.hpp"
#include "fddpilot/types.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fddpilot
{

struct PilotCodebook
{
    std::vector<PilotMatrix> entries;

    std::size_t size() const { return entries.size(); }
    const PilotMatrix &operator[](std::size_t k) const { return entries.at(k); }
};

/// sqrt(rho) times the conjugate-transposed n_p dominant eigenvectors of cov_tx.
inline PilotMatrix genie_pilot_su(const CMatrix &cov_tx, Index n_p, double rho)
{
    if (n_p < 1 || n_p > cov_tx.rows())
        throw std::invalid_argument("genie_pilot_su: need 1 <= n_p <= N_tx");
    const auto eig = eigh_descending(hermitian_part(cov_tx));
    return PilotMatrix{std::sqrt(rho) * eig.vectors.leftCols(n_p).adjoint(), rho};
}

inline PilotMatrix genie_pilot_su(const ChannelStats &stats, Index n_p, double rho)
{
    return genie_pilot_su(stats.cov_tx, n_p, rho);
}

/// Entry k is the eigenvector pilot of the transmit factor of component k.
inline PilotCodebook build_pilot_codebook(const GmmModel &model, Index n_p, double rho)
{
    std::vector<PilotMatrix> side;
    for (Index a = 0; a < model.k_tx(); ++a)
        side.push_back(genie_pilot_su(model.cov_tx(a), n_p, rho));
    PilotCodebook book;
    book.entries.reserve(static_cast<std::size_t>(model.num_components()));
    for (Index k = 0; k < model.num_components(); ++k)
        book.entries.push_back(side[static_cast<std::size_t>(model.tx_index(k))]);
    return book;
}

/// First n_p rows of the unitary N_tx-point DFT, scaled to row norm sqrt(rho).
inline PilotMatrix dft_pilot_su(Index n_tx, Index n_p, double rho)
{
    if (n_p < 1 || n_p > n_tx)
        throw std::invalid_argument("dft_pilot_su: need 1 <= n_p <= N_tx");
    CMatrix p(n_p, n_tx);
    const double scale = std::sqrt(rho / static_cast<double>(n_tx));
    for (Index r = 0; r < n_p; ++r)
        for (Index c = 0; c < n_tx; ++c)
            p(r, c) = scale * std::polar(1.0, -2.0 * kPi * static_cast<double>((r * c) % n_tx) / static_cast<double>(n_tx));
    return PilotMatrix{p, rho};
}

/// Unit-norm DFT-style columns exp(-2 pi i m c / (O N)) / sqrt(N), c = 0..O N - 1.
inline CMatrix dft_dictionary(Index n, int oversampling)
{
    if (n < 1 || oversampling < 1)
        throw std::invalid_argument("dft_dictionary: need n >= 1 and oversampling >= 1");
    const Index width = n * oversampling;
    CMatrix d(n, width);
    for (Index c = 0; c < width; ++c)
        for (Index m = 0; m < n; ++m)
            d(m, c) = std::polar(1.0 / std::sqrt(static_cast<double>(n)),
                                 -2.0 * kPi * static_cast<double>((m * c) % width) / static_cast<double>(width));
    return d;
}

/// Evenly spaced dictionary columns c_i = floor(i * O * N_tx / n_p).
inline std::vector<Index> dft_columns_even(Index n_tx, Index n_p, int oversampling)
{
    const Index width = n_tx * oversampling;
    std::vector<Index> cols(static_cast<std::size_t>(n_p));
    for (Index i = 0; i < n_p; ++i)
        cols[static_cast<std::size_t>(i)] = (i * width) / n_p;
    return cols;
}

/// n_p distinct dictionary columns drawn uniformly (partial Fisher-Yates).
inline std::vector<Index> dft_columns_random(Rng &rng, Index n_tx, Index n_p, int oversampling)
{
    const Index width = n_tx * oversampling;
    std::vector<Index> pool(static_cast<std::size_t>(width));
    std::iota(pool.begin(), pool.end(), Index{0});
    for (Index i = 0; i < n_p; ++i)
    {
        std::uniform_int_distribution<Index> pick(i, width - 1);
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
    }
    pool.resize(static_cast<std::size_t>(n_p));
    return pool;
}

/// Rows are the selected dictionary columns, each scaled to norm sqrt(rho).
inline PilotMatrix dft_pilot_mu(Index n_tx, Index n_p, double rho, int oversampling, const std::vector<Index> &columns)
{
    if (static_cast<Index>(columns.size()) != n_p || n_p < 1 || n_p > n_tx * oversampling)
        throw std::invalid_argument("dft_pilot_mu: need n_p <= oversampling * N_tx distinct columns");
    const CMatrix dict = dft_dictionary(n_tx, oversampling);
    CMatrix p(n_p, n_tx);
    for (Index i = 0; i < n_p; ++i)
        p.row(i) = std::sqrt(rho) * dict.col(columns[static_cast<std::size_t>(i)]).transpose();
    return PilotMatrix{p, rho};
}

/// Evenly spaced columns when rng is null, seeded random columns otherwise.
inline PilotMatrix dft_pilot_mu(Index n_tx, Index n_p, double rho, int oversampling = 2, Rng *rng = nullptr)
{
    if (n_p < 1 || n_p > n_tx * oversampling)
        throw std::invalid_argument("dft_pilot_mu: need 1 <= n_p <= oversampling * N_tx");
    const auto cols = rng ? dft_columns_random(*rng, n_tx, n_p, oversampling) : dft_columns_even(n_tx, n_p, oversampling);
    return dft_pilot_mu(n_tx, n_p, rho, oversampling, cols);
}

enum class PowerNormalization
{
    per_row, // every row has norm sqrt(rho)
    total    // tr(P P^H) = rho * n_p
};

/// i.i.d. CN(0, 1) entries, then normalized.
inline PilotMatrix random_pilot(Rng &rng, Index n_tx, Index n_p, double rho,
                                PowerNormalization mode = PowerNormalization::per_row)
{
    CMatrix p = complex_normal(rng, n_p, n_tx);
    if (mode == PowerNormalization::per_row)
        for (Index r = 0; r < n_p; ++r)
            p.row(r) *= std::sqrt(rho) / p.row(r).norm();
    else
        p *= std::sqrt(rho * static_cast<double>(n_p)) / p.norm();
    return PilotMatrix{p, rho};
}

/// Largest sine of the principal angles between the row spaces of a and b.
inline double row_space_distance(const CMatrix &a, const CMatrix &b)
{
    Eigen::HouseholderQR<CMatrix> qa(a.adjoint());
    Eigen::HouseholderQR<CMatrix> qb(b.adjoint());
    const CMatrix ua = qa.householderQ() * CMatrix::Identity(a.cols(), a.rows());
    const CMatrix ub = qb.householderQ() * CMatrix::Identity(b.cols(), b.rows());
    return spectral_norm(ua - ub * (ub.adjoint() * ua));
}

// ---------------------------------------------------------------------------
// Objectives

/// Factored sum-CMI: sum_j sum_{i,l} log(1 + s_{j,i} t_{j,l} / noise).
inline double sum_cmi(const PilotMatrix &pilot, const std::vector<ChannelStats> &stats, double noise_var)
{
    double f = 0.0;
    for (const auto &st : stats)
    {
        const RVector s = psd_eigenvalues(hermitian_part(pilot.p * st.cov_tx * pilot.p.adjoint()));
        const RVector t = psd_eigenvalues(st.cov_rx);
        for (Index i = 0; i < s.size(); ++i)
            for (Index l = 0; l < t.size(); ++l)
                f += std::log1p(s(i) * t(l) / noise_var);
    }
    return f;
}

/// Dense sum-CMI through the explicit Kronecker product; reference path for tests.
inline double sum_cmi_dense(const PilotMatrix &pilot, const std::vector<ChannelStats> &stats, double noise_var)
{
    double f = 0.0;
    for (const auto &st : stats)
    {
        const Index n_rx = st.cov_rx.rows();
        const CMatrix a = kron(pilot.p, CMatrix::Identity(n_rx, n_rx));
        CMatrix m = a * kron(st.cov_tx, st.cov_rx) * a.adjoint() / noise_var;
        m.diagonal().array() += 1.0;
        Eigen::LLT<CMatrix> llt(hermitian_part(m));
        const CMatrix l = llt.matrixL();
        f += 2.0 * l.diagonal().real().array().log().sum();
    }
    return f;
}

/// Lower bound sum_j log det(I + tr(C_rx,j) P C_tx,j P^H / noise).
inline double lower_bound(const PilotMatrix &pilot, const std::vector<ChannelStats> &stats, double noise_var)
{
    double f = 0.0;
    const Index n_p = pilot.n_pilots();
    for (const auto &st : stats)
    {
        const double tau = st.cov_rx.trace().real();
        CMatrix m = tau * pilot.p * st.cov_tx * pilot.p.adjoint() / noise_var;
        m.diagonal().array() += 1.0;
        Eigen::LLT<CMatrix> llt(hermitian_part(m));
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("lower_bound: matrix not positive definite");
        const CMatrix l = llt.matrixL();
        for (Index i = 0; i < n_p; ++i)
            f += 2.0 * std::log(l(i, i).real());
    }
    return f;
}

// ---------------------------------------------------------------------------
// Kronecker-diagonal SVD

struct KronDiagTerm
{
    double alpha;
    RVector beta;  // length n_p
    RVector gamma; // length N_rx
};

/// diag(d) = sum_i alpha_i diag(beta_i kron gamma_i), from the real SVD of the
/// N_rx x n_p column-major reshape of d. Returns all min(n_p, N_rx) terms;
/// each gamma has its largest-magnitude entry positive.
inline std::vector<KronDiagTerm> kron_diag_svd(const RVector &d, Index n_p, Index n_rx)
{
    if (d.size() != n_p * n_rx)
        throw std::invalid_argument("kron_diag_svd: length must be n_p * N_rx");
    if (!d.allFinite())
        throw std::invalid_argument("kron_diag_svd: entries must be finite");
    Eigen::Map<const RMatrix> r(d.data(), n_rx, n_p);
    Eigen::JacobiSVD<RMatrix> svd(r, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Index n = std::min(n_p, n_rx);
    std::vector<KronDiagTerm> out;
    out.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i)
    {
        RVector gamma = svd.matrixU().col(i);
        RVector beta = svd.matrixV().col(i);
        Index arg;
        gamma.cwiseAbs().maxCoeff(&arg);
        if (gamma(arg) < 0.0)
        {
            gamma = -gamma;
            beta = -beta;
        }
        out.push_back(KronDiagTerm{svd.singularValues()(i), std::move(beta), std::move(gamma)});
    }
    return out;
}

inline RVector kron_diag_reconstruct(const std::vector<KronDiagTerm> &terms, Index n_p, Index n_rx)
{
    RVector d = RVector::Zero(n_p * n_rx);
    for (const auto &term : terms)
        for (Index p = 0; p < n_p; ++p)
            d.segment(p * n_rx, n_rx) += term.alpha * term.beta(p) * term.gamma;
    return d;
}

// ---------------------------------------------------------------------------
// Gradients

/// Receive-side eigenvalues and trace per user; fixed over the iterations.
struct ReceiveSide
{
    RVector t;
    double tau;
};

inline std::vector<ReceiveSide> receive_sides(const std::vector<ChannelStats> &stats)
{
    std::vector<ReceiveSide> out;
    out.reserve(stats.size());
    for (const auto &st : stats)
        out.push_back(ReceiveSide{eigh_descending(hermitian_part(st.cov_rx)).values.cwiseMax(0.0), st.cov_rx.trace().real()});
    return out;
}

/// Per-user transmit-side quantities for one iterate.
struct CmiWorkspace
{
    RVector s;                       // eigenvalues of P C_tx P^H
    CMatrix v;                       // eigenvectors of P C_tx P^H
    RVector d;                       // diag((I + S kron T / noise)^-1), index i * N_rx + l
    std::vector<KronDiagTerm> terms; // Kronecker-diagonal SVD of d
};

namespace detail
{

// Gradient and objective in one pass.
inline CMatrix cmi_gradient_impl(const PilotMatrix &pilot, const std::vector<ChannelStats> &stats,
                                 const std::vector<ReceiveSide> &rx, double noise_var, double *objective,
                                 std::vector<CmiWorkspace> *workspaces)
{
    const Index n_p = pilot.n_pilots();
    CMatrix g = CMatrix::Zero(n_p, pilot.n_tx());
    double f = 0.0;
    if (workspaces)
        workspaces->resize(stats.size());
    for (std::size_t j = 0; j < stats.size(); ++j)
    {
        const CMatrix pc = pilot.p * stats[j].cov_tx;
        auto eig = eigh_descending(hermitian_part(pc * pilot.p.adjoint()));
        const RVector s = eig.values.cwiseMax(0.0);
        const RVector &t = rx[j].t;
        const Index n_rx = t.size();
        RVector d(n_p * n_rx);
        for (Index i = 0; i < n_p; ++i)
            for (Index l = 0; l < n_rx; ++l)
            {
                const double x = s(i) * t(l) / noise_var;
                d(i * n_rx + l) = 1.0 / (1.0 + x);
                f += std::log1p(x);
            }
        auto terms = kron_diag_svd(d, n_p, n_rx);
        RVector weight = RVector::Zero(n_p);
        for (const auto &term : terms)
            weight += (term.alpha * term.gamma.dot(t)) * term.beta;
        g.noalias() += eig.vectors * ((weight / noise_var).asDiagonal() * (eig.vectors.adjoint() * pc));
        if (workspaces)
            (*workspaces)[j] = CmiWorkspace{s, std::move(eig.vectors), std::move(d), std::move(terms)};
    }
    if (objective)
        *objective = f;
    return g;
}

inline CMatrix lower_bound_gradient_impl(const PilotMatrix &pilot, const std::vector<ChannelStats> &stats,
                                         const std::vector<ReceiveSide> &rx, double noise_var, double *objective)
{
    const Index n_p = pilot.n_pilots();
    CMatrix g = CMatrix::Zero(n_p, pilot.n_tx());
    double f = 0.0;
    for (std::size_t j = 0; j < stats.size(); ++j)
    {
        const CMatrix ptc = rx[j].tau * (pilot.p * stats[j].cov_tx);
        CMatrix m = hermitian_part(ptc * pilot.p.adjoint() / noise_var);
        m.diagonal().array() += 1.0;
        Eigen::LLT<CMatrix> llt(m);
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("lower_bound_gradient: matrix not positive definite");
        const CMatrix l = llt.matrixL();
        f += 2.0 * l.diagonal().real().array().log().sum();
        g.noalias() += llt.solve(ptc) / noise_var;
    }
    if (objective)
        *objective = f;
    return g;
}

} // namespace detail

/// d sum_cmi / d conj(P), assembled from the side eigendecompositions and the
/// Kronecker-diagonal SVD of (I + S kron T / noise)^-1.
inline CMatrix cmi_gradient(const PilotMatrix &pilot, const std::vector<ChannelStats> &stats, double noise_var,
                            std::vector<CmiWorkspace> *workspaces = nullptr)
{
    return detail::cmi_gradient_impl(pilot, stats, receive_sides(stats), noise_var, nullptr, workspaces);
}

/// d lower_bound / d conj(P) = sum_j (I + tau_j P C_tx,j P^H / noise)^-1 P tau_j C_tx,j / noise.
inline CMatrix lower_bound_gradient(const PilotMatrix &pilot, const std::vector<ChannelStats> &stats,
                                    double noise_var)
{
    return detail::lower_bound_gradient_impl(pilot, stats, receive_sides(stats), noise_var, nullptr);
}

/// ||F - lambda P|| / ||lambda P|| with lambda = Re<F, P> / ||P||^2.
inline double stationarity_residual(const CMatrix &f, const CMatrix &p)
{
    const double lambda = (p.adjoint() * f).trace().real() / p.squaredNorm();
    return (f - lambda * p).norm() / (lambda * p).norm();
}

// ---------------------------------------------------------------------------
// Optimizers

enum class InitKind
{
    random,
    dft
};

enum class ObjectiveKind
{
    full_cmi,
    lower_bound
};

struct OptimizerOptions
{
    InitKind init_kind = InitKind::dft;
    int l_max = 500;
    double epsilon = 1e-3;
    ObjectiveKind objective_kind = ObjectiveKind::full_cmi;
    int dft_oversampling = 2;
    bool random_dft_columns = false; // seeded column choice instead of evenly spaced
    std::uint64_t init_seed = 0;     // random init and random DFT columns
    bool record_iterates = false;

    void validate() const
    {
        if (!(epsilon > 0.0))
            throw std::invalid_argument("OptimizerOptions: epsilon must be > 0");
        if (l_max < 1)
            throw std::invalid_argument("OptimizerOptions: l_max must be >= 1");
        if (dft_oversampling < 1)
            throw std::invalid_argument("OptimizerOptions: dft_oversampling must be >= 1");
    }
};

struct OptimizerTrace
{
    std::vector<double> objective; // objective[l] at iterate l; objective[0] is the initialization
    std::vector<double> step_norm; // spectral norm of P_l - P_{l-1}
    std::vector<CMatrix> iterates; // P_0, P_1, ... when recorded
    int iterations = 0;
    bool converged = false; // stopped by epsilon rather than l_max
};

struct OptimizerResult
{
    PilotMatrix pilot;
    OptimizerTrace trace;
};

/// Starting point with tr(P P^H) = rho * n_p.
inline PilotMatrix initial_pilot(Index n_tx, Index n_p, double rho, const OptimizerOptions &opt)
{
    if (opt.init_kind == InitKind::random)
    {
        Rng rng = make_stream(opt.init_seed, {0x1417});
        return random_pilot(rng, n_tx, n_p, rho, PowerNormalization::total);
    }
    if (opt.random_dft_columns)
    {
        Rng rng = make_stream(opt.init_seed, {0xDF7});
        return dft_pilot_mu(n_tx, n_p, rho, opt.dft_oversampling, &rng);
    }
    return dft_pilot_mu(n_tx, n_p, rho, opt.dft_oversampling, nullptr);
}

namespace detail
{

template <typename GradientFn>
OptimizerResult fixed_point_iteration(const PilotMatrix &init, const OptimizerOptions &opt, GradientFn &&gradient)
{
    const double budget = init.rho * static_cast<double>(init.n_pilots());
    OptimizerResult res{init, {}};
    PilotMatrix &p = res.pilot;
    OptimizerTrace &tr = res.trace;
    if (opt.record_iterates)
        tr.iterates.push_back(p.p);

    auto fail = [&](const std::string &why) {
        std::ostringstream os;
        os << "pilot optimizer: " << why << " at iteration " << tr.iterations;
        if (!tr.objective.empty())
            os << " (last objective " << tr.objective.back() << ")";
        throw std::runtime_error(os.str());
    };

    for (int l = 1;; ++l)
    {
        double f = 0.0;
        CMatrix g = gradient(p, &f);
        tr.objective.push_back(f);
        const double power = g.squaredNorm();
        if (!std::isfinite(power) || !(power > 0.0))
            fail("degenerate gradient");
        CMatrix next = std::sqrt(budget / power) * g;
        if (!next.allFinite())
            fail("non-finite iterate");
        const double step = spectral_norm(next - p.p);
        p.p = std::move(next);
        tr.step_norm.push_back(step);
        tr.iterations = l;
        if (opt.record_iterates)
            tr.iterates.push_back(p.p);
        if (step < opt.epsilon)
        {
            tr.converged = true;
            break;
        }
        if (l >= opt.l_max)
            break;
    }
    double f = 0.0;
    gradient(p, &f);
    tr.objective.push_back(f);
    return res;
}

} // namespace detail

/// Sum-CMI fixed-point iteration: P <- F(P) rescaled to tr(P P^H) = rho * n_p,
/// until the spectral norm of the step drops below epsilon or l_max is hit.
inline OptimizerResult optimize_pilot_full(const std::vector<ChannelStats> &stats, double noise_var, Index n_p,
                                           double rho, const OptimizerOptions &opt, const PilotMatrix *init = nullptr)
{
    opt.validate();
    if (stats.empty())
        throw std::invalid_argument("optimize_pilot_full: need at least one user");
    const Index n_tx = stats.front().cov_tx.rows();
    const PilotMatrix start = init ? *init : initial_pilot(n_tx, n_p, rho, opt);
    const auto rx = receive_sides(stats);
    return detail::fixed_point_iteration(start, opt, [&](const PilotMatrix &p, double *f) {
        return detail::cmi_gradient_impl(p, stats, rx, noise_var, f, nullptr);
    });
}

/// Same iteration on the lower bound with tau_j = tr(C_rx,j).
inline OptimizerResult optimize_pilot_lower_bound(const std::vector<ChannelStats> &stats, double noise_var, Index n_p,
                                                  double rho, const OptimizerOptions &opt,
                                                  const PilotMatrix *init = nullptr)
{
    opt.validate();
    if (stats.empty())
        throw std::invalid_argument("optimize_pilot_lower_bound: need at least one user");
    const Index n_tx = stats.front().cov_tx.rows();
    const PilotMatrix start = init ? *init : initial_pilot(n_tx, n_p, rho, opt);
    const auto rx = receive_sides(stats);
    return detail::fixed_point_iteration(start, opt, [&](const PilotMatrix &p, double *f) {
        return detail::lower_bound_gradient_impl(p, stats, rx, noise_var, f);
    });
}

/// Dispatches on options.objective_kind.
inline OptimizerResult optimize_pilot(const std::vector<ChannelStats> &stats, double noise_var, Index n_p, double rho,
                                      const OptimizerOptions &opt, const PilotMatrix *init = nullptr)
{
    return opt.objective_kind == ObjectiveKind::full_cmi ? optimize_pilot_full(stats, noise_var, n_p, rho, opt, init)
                                                         : optimize_pilot_lower_bound(stats, noise_var, n_p, rho, opt, init);
}

} // namespace fddpilot
