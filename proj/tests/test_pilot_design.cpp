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

#include <catch_amalgamated.hpp>

#include "fddpilot/channel_model.hpp"
#include "fddpilot/gmm.hpp"
#include "fddpilot/pilot_design.hpp"

using namespace fddpilot;

namespace
{

double max_abs(const CMatrix &a) { return a.cwiseAbs().maxCoeff(); }

CMatrix random_psd(Rng &rng, Index n, Index rank = -1)
{
    const CMatrix a = complex_normal(rng, n, rank < 0 ? n : rank);
    CMatrix c = a * a.adjoint();
    return c * (static_cast<double>(n) / c.trace().real());
}

std::vector<ChannelStats> random_users(Rng &rng, Index n_tx, Index n_rx, Index j)
{
    std::vector<ChannelStats> out;
    for (Index u = 0; u < j; ++u)
        out.push_back(ChannelStats{random_psd(rng, n_tx), random_psd(rng, n_rx), {}});
    return out;
}

PilotMatrix orthonormal_pilot(Rng &rng, Index n_tx, Index n_p, double rho)
{
    const Eigen::HouseholderQR<CMatrix> qr(complex_normal(rng, n_tx, n_tx));
    const CMatrix q = qr.householderQ();
    return PilotMatrix{std::sqrt(rho) * q.leftCols(n_p).adjoint(), rho};
}

// Linear-MMSE error tr(C - C A^H (A C A^H + noise I)^-1 A C) for y = A h + n.
double lmmse_error(const CMatrix &c, const CMatrix &a, double noise)
{
    CMatrix cy = a * c * a.adjoint();
    cy.diagonal().array() += noise;
    return (c - c * a.adjoint() * cy.ldlt().solve(a * c)).trace().real();
}

// d/d conj(P) of sum_j log det(I + A C_j A^H / noise), A = P kron I, by the
// dense matrix derivative followed by a partial trace over the receive index.
CMatrix dense_gradient(const PilotMatrix &pilot, const std::vector<ChannelStats> &stats, double noise)
{
    const Index n_p = pilot.n_pilots(), n_tx = pilot.n_tx();
    CMatrix g = CMatrix::Zero(n_p, n_tx);
    for (const auto &st : stats)
    {
        const Index n_rx = st.n_rx();
        const CMatrix a = kron(pilot.p, CMatrix::Identity(n_rx, n_rx));
        const CMatrix c = st.full_covariance();
        CMatrix m = a * c * a.adjoint() / noise;
        m.diagonal().array() += 1.0;
        const CMatrix da = m.ldlt().solve(a * c) / noise;
        for (Index i = 0; i < n_p; ++i)
            for (Index col = 0; col < n_tx; ++col)
                for (Index l = 0; l < n_rx; ++l)
                    g(i, col) += da(i * n_rx + l, col * n_rx + l);
    }
    return g;
}

double directional_fd(const PilotMatrix &p, const CMatrix &dir, const std::vector<ChannelStats> &st, double noise,
                      double h = 1e-5)
{
    const PilotMatrix plus{p.p + h * dir, p.rho}, minus{p.p - h * dir, p.rho};
    return (sum_cmi(plus, st, noise) - sum_cmi(minus, st, noise)) / (2.0 * h);
}

} // namespace

TEST_CASE("genie pilot takes the dominant transmit eigenvectors", "[pilot][su]")
{
    RVector diag(5);
    diag << 0.3, 2.0, 0.1, 1.5, 1.1;
    const PilotMatrix p = genie_pilot_su(CMatrix(diag.cast<cplx>().asDiagonal()), 3, 2.0);
    CMatrix expect = CMatrix::Zero(3, 5);
    expect(0, 1) = expect(1, 3) = expect(2, 4) = std::sqrt(2.0);
    CHECK(max_abs(p.p - expect) < 1e-12);

    Rng rng(1);
    for (int i = 0; i < 20; ++i)
    {
        const PilotMatrix q = genie_pilot_su(random_psd(rng, 7), 1 + i % 7, 1.7);
        CHECK(max_abs(q.p * q.p.adjoint() - 1.7 * CMatrix::Identity(q.n_pilots(), q.n_pilots())) < 1e-10);
        CHECK(q.is_sub_unitary(1e-9));
    }
    CHECK_THROWS_AS(genie_pilot_su(CMatrix::Identity(3, 3), 4, 1.0), std::invalid_argument);
}

TEST_CASE("genie pilot beats random orthonormal pilots", "[pilot][su]")
{
    Rng rng(2);
    for (int inst = 0; inst < 5; ++inst)
    {
        const ChannelStats st{random_psd(rng, 8, 3), random_psd(rng, 2), {}};
        const double noise = 0.1;
        const CMatrix c = st.full_covariance();
        const auto mse = [&](const PilotMatrix &p) {
            return lmmse_error(c, kron(p.p, CMatrix::Identity(2, 2)), noise);
        };
        const double genie = mse(genie_pilot_su(st, 2, 1.0));
        for (int r = 0; r < 200; ++r)
            CHECK(genie <= mse(orthonormal_pilot(rng, 8, 2, 1.0)) + 1e-12);
    }
}

TEST_CASE("pilot codebook follows the transmit components", "[pilot][su]")
{
    Rng rng(3);
    std::vector<CMatrix> tx{random_psd(rng, 6), random_psd(rng, 6), random_psd(rng, 6)};
    std::vector<CMatrix> rx{random_psd(rng, 2), random_psd(rng, 2)};
    const GmmModel model(RVector::Constant(3, 1.0 / 3), tx, RVector::Constant(2, 0.5), rx);
    const PilotCodebook book = build_pilot_codebook(model, 2, 1.5);
    REQUIRE(book.size() == 6);
    for (Index k = 0; k < 6; ++k)
    {
        const PilotMatrix &p = book[static_cast<std::size_t>(k)];
        CHECK(max_abs(p.p * p.p.adjoint() - 1.5 * CMatrix::Identity(2, 2)) < 1e-10);
        const PilotMatrix genie = genie_pilot_su(tx[static_cast<std::size_t>(model.tx_index(k))], 2, 1.5);
        CHECK(row_space_distance(p.p, genie.p) < 1e-8);
    }

    const GmmModel flat(RVector::Ones(1), std::vector<CMatrix>{CMatrix::Identity(4, 4)}, RVector::Ones(1),
                        std::vector<CMatrix>{CMatrix::Identity(1, 1)});
    const PilotCodebook a = build_pilot_codebook(flat, 3, 1.0), b = build_pilot_codebook(flat, 3, 1.0);
    CHECK(a[0].bit_identical(b[0]));
    CHECK(max_abs(a[0].p * a[0].p.adjoint() - CMatrix::Identity(3, 3)) < 1e-12);
}

TEST_CASE("row space distance measures principal angles", "[pilot]")
{
    Rng rng(4);
    const CMatrix a = complex_normal(rng, 2, 5);
    const CMatrix mix = complex_normal(rng, 2, 2);
    CHECK(row_space_distance(a, mix * a) < 1e-12);
    CMatrix e1 = CMatrix::Zero(1, 3), e2 = CMatrix::Zero(1, 3);
    e1(0, 0) = 1.0;
    e2(0, 1) = 1.0;
    CHECK(std::abs(row_space_distance(e1, e2) - 1.0) < 1e-12);
}

TEST_CASE("DFT pilots", "[pilot][dft]")
{
    for (Index n : {1, 4, 7})
    {
        const PilotMatrix su = dft_pilot_su(n, n, 2.0);
        CHECK(max_abs(su.p * su.p.adjoint() - 2.0 * CMatrix::Identity(n, n)) < 1e-12);
        const PilotMatrix mu = dft_pilot_mu(n, n, 2.0, 1);
        CHECK(max_abs(mu.p * mu.p.adjoint() - 2.0 * CMatrix::Identity(n, n)) < 1e-12);
    }
    const PilotMatrix su = dft_pilot_su(8, 3, 0.5);
    CHECK(su.is_sub_unitary(1e-12));
    CHECK(std::abs(su.p(1, 1) - std::sqrt(0.5 / 8.0) * std::polar(1.0, -2.0 * kPi / 8.0)) < 1e-15);

    const auto even = dft_columns_even(8, 4, 2);
    CHECK(even == std::vector<Index>{0, 4, 8, 12});
    Rng a(5), b(5);
    const PilotMatrix ra = dft_pilot_mu(8, 5, 1.0, 2, &a), rb = dft_pilot_mu(8, 5, 1.0, 2, &b);
    CHECK(ra.bit_identical(rb));
    CHECK(ra.is_sub_unitary(1e-12));
    Rng c(6);
    for (int i = 0; i < 50; ++i)
    {
        auto cols = dft_columns_random(c, 4, 8, 2);
        std::sort(cols.begin(), cols.end());
        CHECK(std::adjacent_find(cols.begin(), cols.end()) == cols.end());
        CHECK(cols.front() >= 0);
        CHECK(cols.back() < 8);
    }
    const CMatrix dict = dft_dictionary(6, 3);
    CHECK(dict.cols() == 18);
    CHECK((dict.colwise().norm().array() - 1.0).abs().maxCoeff() < 1e-14);
    CHECK_THROWS_AS(dft_pilot_mu(4, 9, 1.0, 2), std::invalid_argument);
    CHECK_THROWS_AS(dft_pilot_su(4, 5, 1.0), std::invalid_argument);
}

TEST_CASE("random pilots meet the requested normalization", "[pilot]")
{
    Rng rng(7);
    const PilotMatrix rows = random_pilot(rng, 6, 3, 2.0, PowerNormalization::per_row);
    CHECK(rows.is_sub_unitary(1e-12));
    const PilotMatrix total = random_pilot(rng, 6, 3, 2.0, PowerNormalization::total);
    CHECK(std::abs(total.total_power() - 6.0) < 1e-12);
    CHECK(total.within_budget());
}

TEST_CASE("sum CMI closed forms and dense agreement", "[pilot][cmi]")
{
    Rng rng(8);
    const std::vector<ChannelStats> scalar{ChannelStats{CMatrix::Identity(1, 1), CMatrix::Identity(1, 1), {}}};
    const PilotMatrix p1{CMatrix::Constant(1, 1, cplx(std::sqrt(2.0), 0.0)), 2.0};
    CHECK(std::abs(sum_cmi(p1, scalar, 0.1) - std::log(1.0 + 2.0 / 0.1)) < 1e-12);

    const std::vector<ChannelStats> users = random_users(rng, 8, 3, 3);
    CHECK(sum_cmi(PilotMatrix{CMatrix::Zero(4, 8), 1.0}, users, 0.1) == 0.0);
    CHECK(lower_bound(PilotMatrix{CMatrix::Zero(4, 8), 1.0}, users, 0.1) == 0.0);
    for (int i = 0; i < 20; ++i)
    {
        const PilotMatrix p = random_pilot(rng, 8, 4, 1.0);
        const double noise = 0.05 + 0.1 * i;
        CHECK(std::abs(sum_cmi(p, users, noise) - sum_cmi_dense(p, users, noise)) < 1e-9);
    }
}

TEST_CASE("CMI gradient matches central finite differences", "[pilot][gradient]")
{
    Rng rng(9);
    double worst = 0.0;
    for (int inst = 0; inst < 30; ++inst)
    {
        const Index n_rx = 1 + inst % 3, n_p = 2 + inst % 3, j = 1 + (inst / 3) % 3;
        const auto users = random_users(rng, 8, n_rx, j);
        const PilotMatrix p = random_pilot(rng, 8, n_p, 1.0);
        const double noise = 0.3;
        const CMatrix g = cmi_gradient(p, users, noise);
        const CMatrix dir = complex_normal(rng, n_p, 8);
        const double analytic = 2.0 * (g.adjoint() * dir).trace().real();
        worst = std::max(worst, std::abs(directional_fd(p, dir, users, noise) - analytic) / std::abs(analytic));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("CMI gradient matches the dense partial-trace derivative", "[pilot][gradient]")
{
    Rng rng(10);
    for (int inst = 0; inst < 20; ++inst)
    {
        const Index n_rx = 1 + inst % 4, n_p = 1 + inst % 5;
        const auto users = random_users(rng, 6, n_rx, 1 + inst % 3);
        const PilotMatrix p = random_pilot(rng, 6, n_p, 1.0);
        CHECK(max_abs(cmi_gradient(p, users, 0.2) - dense_gradient(p, users, 0.2)) < 1e-10);
    }
}

TEST_CASE("CMI gradient special cases", "[pilot][gradient]")
{
    Rng rng(11);
    const auto users = random_users(rng, 6, 3, 2);
    CHECK(max_abs(cmi_gradient(PilotMatrix{CMatrix::Zero(3, 6), 1.0}, users, 0.1)) == 0.0);

    // Single receive antenna: sum_j (1/noise)(I + P t_j C_j P^H / noise)^-1 P t_j C_j.
    std::vector<ChannelStats> miso;
    for (int j = 0; j < 3; ++j)
        miso.push_back(ChannelStats{random_psd(rng, 6), CMatrix::Constant(1, 1, cplx(0.5 + j, 0.0)), {}});
    const PilotMatrix p = random_pilot(rng, 6, 3, 1.0);
    const double noise = 0.2;
    CMatrix expect = CMatrix::Zero(3, 6);
    for (const auto &st : miso)
    {
        const double t = st.cov_rx(0, 0).real();
        CMatrix m = CMatrix::Identity(3, 3) + t * p.p * st.cov_tx * p.p.adjoint() / noise;
        expect += m.inverse() * p.p * (t * st.cov_tx) / noise;
    }
    CHECK(max_abs(cmi_gradient(p, miso, noise) - expect) < 1e-11);
    CHECK(max_abs(lower_bound_gradient(p, miso, noise) - expect) < 1e-11);

    std::vector<CmiWorkspace> ws;
    cmi_gradient(p, users, noise, &ws);
    REQUIRE(ws.size() == 2);
    for (std::size_t j = 0; j < 2; ++j)
    {
        CHECK((ws[j].s.array() >= 0.0).all());
        CHECK((kron_diag_reconstruct(ws[j].terms, 3, 3) - ws[j].d).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("lower bound gradient matches finite differences", "[pilot][gradient]")
{
    Rng rng(12);
    for (int inst = 0; inst < 10; ++inst)
    {
        const auto users = random_users(rng, 6, 1 + inst % 3, 1 + inst % 2);
        const PilotMatrix p = random_pilot(rng, 6, 3, 1.0);
        const CMatrix g = lower_bound_gradient(p, users, 0.2);
        const CMatrix dir = complex_normal(rng, 3, 6);
        const double h = 1e-5;
        const double fd = (lower_bound(PilotMatrix{p.p + h * dir, 1.0}, users, 0.2) -
                           lower_bound(PilotMatrix{p.p - h * dir, 1.0}, users, 0.2)) /
                          (2.0 * h);
        const double analytic = 2.0 * (g.adjoint() * dir).trace().real();
        CHECK(std::abs(fd - analytic) / std::abs(analytic) < 1e-6);
    }
}

TEST_CASE("Kronecker-diagonal SVD", "[pilot][kron]")
{
    SECTION("all ones")
    {
        const auto terms = kron_diag_svd(RVector::Ones(12), 3, 4);
        REQUIRE(terms.size() == 3);
        CHECK(std::abs(terms[0].alpha - std::sqrt(12.0)) < 1e-12);
        CHECK(terms[1].alpha < 1e-12);
        CHECK(terms[2].alpha < 1e-12);
        std::vector<KronDiagTerm> first{terms[0]};
        CHECK((kron_diag_reconstruct(first, 3, 4) - RVector::Ones(12)).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("exact Kronecker structure")
    {
        RVector b(3), g(2);
        b << 1.0, 2.0, 0.5;
        g << 3.0, 0.25;
        RVector d(6);
        for (Index i = 0; i < 3; ++i)
            for (Index l = 0; l < 2; ++l)
                d(i * 2 + l) = b(i) * g(l);
        const auto terms = kron_diag_svd(d, 3, 2);
        REQUIRE(terms.size() == 2);
        CHECK(terms[1].alpha < 1e-12);
        // beta * alpha ~ b and gamma ~ g up to a reciprocal scale
        const double sb = terms[0].alpha * terms[0].beta(0) / b(0);
        CHECK(((terms[0].alpha * terms[0].beta) / sb - b).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((terms[0].gamma * sb - g).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("random reconstruction")
    {
        Rng rng(13);
        std::uniform_real_distribution<double> u(0.01, 1.0);
        for (int inst = 0; inst < 500; ++inst)
        {
            const Index n_p = 1 + inst % 8, n_rx = 1 + (inst / 8) % 8;
            RVector d(n_p * n_rx);
            for (Index i = 0; i < d.size(); ++i)
                d(i) = u(rng);
            const auto terms = kron_diag_svd(d, n_p, n_rx);
            CHECK(static_cast<Index>(terms.size()) == std::min(n_p, n_rx));
            CHECK((kron_diag_reconstruct(terms, n_p, n_rx) - d).cwiseAbs().maxCoeff() < 1e-12);
            for (std::size_t i = 1; i < terms.size(); ++i)
                CHECK(terms[i].alpha <= terms[i - 1].alpha);
        }
    }
    CHECK_THROWS_AS(kron_diag_svd(RVector::Ones(5), 2, 3), std::invalid_argument);
}

TEST_CASE("lower bound relations", "[pilot][bound]")
{
    Rng rng(14);
    for (int inst = 0; inst < 500; ++inst)
    {
        const auto users = random_users(rng, 5, 1 + inst % 4, 1 + inst % 3);
        const PilotMatrix p = random_pilot(rng, 5, 1 + inst % 5, 1.0);
        const double noise = 0.01 + 0.5 * (inst % 7);
        CHECK(lower_bound(p, users, noise) <= sum_cmi(p, users, noise) + 1e-9);
    }
    // rank-one receive covariances give equality
    for (int inst = 0; inst < 100; ++inst)
    {
        std::vector<ChannelStats> users;
        for (int j = 0; j < 2; ++j)
            users.push_back(ChannelStats{random_psd(rng, 5), random_psd(rng, 3, 1), {}});
        const PilotMatrix p = random_pilot(rng, 5, 3, 1.0);
        CHECK(std::abs(lower_bound(p, users, 0.1) - sum_cmi(p, users, 0.1)) < 1e-9);
    }
    // N_rx = 1 equality
    std::vector<ChannelStats> miso{ChannelStats{random_psd(rng, 5), CMatrix::Identity(1, 1), {}}};
    const PilotMatrix p = random_pilot(rng, 5, 2, 1.0);
    CHECK(std::abs(lower_bound(p, miso, 0.3) - sum_cmi(p, miso, 0.3)) < 1e-12);
}

TEST_CASE("isotropic receive covariance maximizes CMI at fixed trace", "[pilot][bound]")
{
    Rng rng(15);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int inst = 0; inst < 200; ++inst)
    {
        const Index n_rx = 2 + inst % 3;
        std::vector<ChannelStats> perturbed, isotropic;
        for (int j = 0; j < 2; ++j)
        {
            RVector diag(n_rx);
            for (Index l = 0; l < n_rx; ++l)
                diag(l) = u(rng);
            const double tau = diag.sum();
            const CMatrix ctx = random_psd(rng, 6);
            perturbed.push_back(ChannelStats{ctx, diag.cast<cplx>().asDiagonal(), {}});
            isotropic.push_back(ChannelStats{ctx, (tau / static_cast<double>(n_rx)) * CMatrix::Identity(n_rx, n_rx), {}});
        }
        const PilotMatrix p = random_pilot(rng, 6, 3, 1.0);
        CHECK(sum_cmi(p, isotropic, 0.2) > sum_cmi(p, perturbed, 0.2));
    }
}

TEST_CASE("stationarity residual", "[pilot]")
{
    Rng rng(16);
    const CMatrix p = complex_normal(rng, 3, 5);
    CHECK(stationarity_residual(2.5 * p, p) < 1e-15);
    CHECK(stationarity_residual(complex_normal(rng, 3, 5), p) > 0.1);
}

TEST_CASE("full optimizer keeps the budget and reaches a stationary point", "[pilot][optimizer]")
{
    Rng rng(17);
    OptimizerOptions opt;
    opt.record_iterates = true;
    for (int inst = 0; inst < 15; ++inst)
    {
        const Index n_p = 2 + inst % 3;
        const auto users = random_users(rng, 8, 1 + inst % 3, 1 + inst % 3);
        const double noise = 0.1;
        const OptimizerResult res = optimize_pilot_full(users, noise, n_p, 1.0, opt);
        for (const auto &it : res.trace.iterates)
            CHECK(std::abs(it.squaredNorm() - static_cast<double>(n_p)) < 1e-10);
        CHECK(static_cast<int>(res.trace.iterates.size()) == res.trace.iterations + 1);
        CHECK(res.trace.objective.size() == res.trace.iterates.size());
        CHECK(res.trace.objective.back() >= res.trace.objective.front());
        CHECK(std::abs(res.trace.objective.back() - sum_cmi(res.pilot, users, noise)) < 1e-9);
        const PilotMatrix init = initial_pilot(8, n_p, 1.0, opt);
        CHECK(res.trace.objective.front() == Catch::Approx(sum_cmi(init, users, noise)).epsilon(1e-12));
        CHECK(res.trace.converged);
        CHECK(stationarity_residual(cmi_gradient(res.pilot, users, noise), res.pilot.p) < 1e-3);
    }
}

TEST_CASE("isotropic single user keeps the iterate on the budget", "[pilot][optimizer]")
{
    const std::vector<ChannelStats> users{ChannelStats{CMatrix::Identity(6, 6), CMatrix::Identity(1, 1), {}}};
    OptimizerOptions opt;
    opt.record_iterates = true;
    const OptimizerResult res = optimize_pilot_full(users, 0.5, 3, 2.0, opt);
    for (const auto &it : res.trace.iterates)
        CHECK(std::abs(it.squaredNorm() - 6.0) < 1e-10);
    CHECK(res.trace.converged);
}

TEST_CASE("lower-bound optimizer", "[pilot][optimizer]")
{
    Rng rng(18);
    OptimizerOptions opt;
    opt.record_iterates = true;
    opt.objective_kind = ObjectiveKind::lower_bound;
    for (int inst = 0; inst < 10; ++inst)
    {
        const auto users = random_users(rng, 8, 2, 1 + inst % 3);
        const OptimizerResult res = optimize_pilot(users, 0.1, 3, 1.0, opt);
        for (const auto &it : res.trace.iterates)
            CHECK(std::abs(it.squaredNorm() - 3.0) < 1e-10);
        CHECK(res.trace.converged);
        CHECK(stationarity_residual(lower_bound_gradient(res.pilot, users, 0.1), res.pilot.p) < 1e-3);
        CHECK(std::abs(res.trace.objective.back() - lower_bound(res.pilot, users, 0.1)) < 1e-9);
    }
}

TEST_CASE("single-user lower-bound optimum spans the dominant eigenspace", "[pilot][optimizer]")
{
    RVector ev(6);
    ev << 3.0, 1.5, 0.8, 0.4, 0.2, 0.1;
    Rng rng(19);
    const Eigen::HouseholderQR<CMatrix> qr(complex_normal(rng, 6, 6));
    const CMatrix u = qr.householderQ();
    const CMatrix c = u * ev.cast<cplx>().asDiagonal() * u.adjoint();
    const std::vector<ChannelStats> users{ChannelStats{c, CMatrix::Identity(2, 2), {}}};
    OptimizerOptions opt;
    opt.objective_kind = ObjectiveKind::lower_bound;
    opt.epsilon = 1e-8;
    opt.l_max = 5000;
    const OptimizerResult res = optimize_pilot(users, 0.01, 2, 1.0, opt);
    CHECK(res.trace.converged);
    CHECK(row_space_distance(res.pilot.p, genie_pilot_su(c, 2, 1.0).p) < 1e-3);
}

TEST_CASE("single receive antenna: both optimizers produce the same iterates", "[pilot][optimizer]")
{
    Rng rng(20);
    for (int inst = 0; inst < 5; ++inst)
    {
        std::vector<ChannelStats> users;
        for (int j = 0; j < 3; ++j)
            users.push_back(ChannelStats{random_psd(rng, 8), CMatrix::Identity(1, 1), {}});
        OptimizerOptions opt;
        opt.record_iterates = true;
        opt.l_max = 50;
        const OptimizerResult full = optimize_pilot_full(users, 0.1, 3, 1.0, opt);
        opt.objective_kind = ObjectiveKind::lower_bound;
        const OptimizerResult lb = optimize_pilot(users, 0.1, 3, 1.0, opt);
        REQUIRE(full.trace.iterates.size() == lb.trace.iterates.size());
        for (std::size_t i = 0; i < full.trace.iterates.size(); ++i)
            CHECK(max_abs(full.trace.iterates[i] - lb.trace.iterates[i]) < 1e-9);
    }
}

TEST_CASE("optimizers are bit-reproducible", "[pilot][optimizer]")
{
    Rng rng(21);
    const auto users = random_users(rng, 8, 2, 3);
    for (InitKind init : {InitKind::dft, InitKind::random})
        for (ObjectiveKind obj : {ObjectiveKind::full_cmi, ObjectiveKind::lower_bound})
        {
            OptimizerOptions opt;
            opt.init_kind = init;
            opt.objective_kind = obj;
            opt.init_seed = 44;
            const auto a = optimize_pilot(users, 0.1, 3, 1.0, opt);
            const auto b = optimize_pilot(users, 0.1, 3, 1.0, opt);
            CHECK(a.pilot.bit_identical(b.pilot));
            CHECK(a.trace.iterations == b.trace.iterations);
        }
}

TEST_CASE("optimizer options are validated", "[pilot][optimizer]")
{
    OptimizerOptions opt;
    opt.epsilon = 0.0;
    CHECK_THROWS_AS(opt.validate(), std::invalid_argument);
    opt = {};
    opt.l_max = 0;
    CHECK_THROWS_AS(opt.validate(), std::invalid_argument);
    CHECK_THROWS_AS(optimize_pilot_full({}, 0.1, 2, 1.0, OptimizerOptions{}), std::invalid_argument);
}
