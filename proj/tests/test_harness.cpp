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

#include "fddpilot/harness.hpp"

#include <sstream>

using namespace fddpilot;

namespace
{

double max_abs(const CMatrix &a) { return a.cwiseAbs().maxCoeff(); }

ScenarioConfig small_scenario()
{
    ScenarioConfig sc;
    sc.n_tx = 8;
    sc.n_rx = 2;
    sc.n_pilots = 2;
    sc.n_blocks = 2;
    sc.seed = 17;
    return sc;
}

ExperimentSpec small_spec()
{
    ExperimentSpec spec;
    spec.scenario = small_scenario();
    spec.n_train = 600;
    spec.n_eval = 40;
    spec.k_tx = 4;
    spec.k_rx = 2;
    spec.em.max_iters = 15;
    spec.bootstrap_resamples = 200;
    spec.schemes = {parse_scheme("gmm:gmm"), parse_scheme("dft:gmm"), parse_scheme("genie:genie_lmmse")};
    return spec;
}

GmmModel small_model(const ScenarioConfig &sc, int k_tx, int k_rx)
{
    Rng rng(3);
    const Dataset ds = generate_dataset(rng, sc, 400);
    EmOptions em;
    em.max_iters = 15;
    return fit_kronecker_gmm(rng, ds.samples, sc.n_tx, sc.n_rx, k_tx, k_rx, em);
}

std::string csv_without_wall(const ExperimentResult &r)
{
    ExperimentResult copy = r;
    for (auto &row : copy.rows)
        row.wall_ms = 0.0;
    std::ostringstream os;
    write_csv(os, copy);
    return os.str();
}

} // namespace

TEST_CASE("NMSE definition", "[harness][nmse]")
{
    Rng rng(1);
    std::vector<CVector> h{complex_normal(rng, 4, 1), complex_normal(rng, 4, 1)};
    CHECK(evaluate_nmse(h, h) == 0.0);

    std::vector<CVector> truth{CVector::Zero(2), CVector::Zero(2)};
    truth[0] << cplx(1, 0), cplx(0, 2);
    truth[1] << cplx(-1, 1), cplx(3, 0);
    std::vector<CVector> est{CVector::Zero(2), CVector::Zero(2)};
    est[0] << cplx(1, 1), cplx(0, 0);
    est[1] << cplx(0, 1), cplx(3, -1);
    // errors: |i|^2 + |2i|^2 = 5 and |-1|^2 + |i|^2 = 2, so (5 + 2) / (2 * 2)
    CHECK(std::abs(evaluate_nmse(truth, est) - 7.0 / 4.0) < 1e-15);

    ScenarioConfig sc = small_scenario();
    Rng drng(2);
    const Dataset ds = generate_dataset(drng, sc, 5000);
    std::vector<CVector> all, zeros;
    for (Index m = 0; m < ds.size(); ++m)
    {
        all.push_back(ds.samples.col(m));
        zeros.push_back(CVector::Zero(16));
    }
    CHECK(std::abs(evaluate_nmse(all, zeros) - 1.0) < 0.03);

    CHECK_THROWS_AS(evaluate_nmse({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(evaluate_nmse(h, {h[0]}), std::invalid_argument);
}

TEST_CASE("bootstrap helpers", "[harness][stats]")
{
    Rng rng(4);
    const std::vector<double> constant(50, 2.5);
    const auto ci = bootstrap_mean_ci(constant, 300, rng);
    CHECK(ci.lo == 2.5);
    CHECK(ci.hi == 2.5);

    std::normal_distribution<double> n(1.0, 1.0);
    std::vector<double> x(400);
    for (double &v : x)
        v = n(rng);
    const auto ci2 = bootstrap_mean_ci(x, 1000, rng);
    CHECK(ci2.lo < mean_of(x));
    CHECK(ci2.hi > mean_of(x));
    CHECK(ci2.hi - ci2.lo < 0.3);
    CHECK(ci2.hi - ci2.lo > 0.1);

    std::vector<double> a(100), b(100);
    for (std::size_t i = 0; i < a.size(); ++i)
    {
        a[i] = n(rng);
        b[i] = a[i] + 0.5;
    }
    CHECK(paired_order_confidence(a, b, 500, rng) == 1.0);
    CHECK(paired_order_confidence(b, a, 500, rng) == 0.0);
    CHECK(std::isnan(mean_of({})));
}

TEST_CASE("names parse and print", "[harness]")
{
    CHECK(parse_mode("su") == Mode::single_user);
    CHECK(parse_mode("multi_user") == Mode::multi_user);
    CHECK(parse_sweep("components") == SweepKind::components);
    const SchemeSpec s = parse_scheme("random:gmm:8");
    CHECK(s.pilot == PilotScheme::random);
    CHECK(s.estimator == EstimatorKind::gmm);
    CHECK(s.label() == "random@8");
    CHECK(parse_scheme("genie:genie_lmmse").label() == "genie");
    for (auto e : {EstimatorKind::gmm, EstimatorKind::genie_lmmse, EstimatorKind::sample_lmmse, EstimatorKind::omp})
        CHECK(parse_estimator(to_string(e)) == e);
    CHECK_THROWS_AS(parse_scheme("gmm"), std::invalid_argument);
    CHECK_THROWS_AS(parse_pilot_scheme("bogus"), std::invalid_argument);
    CHECK(split_components(64, 4, 4) == std::pair{16, 4});
    CHECK(split_components(64, 4, 1) == std::pair{64, 1});
    CHECK(split_components(6, 4, 4) == std::pair{6, 1});
}

TEST_CASE("single-user protocol block structure", "[harness][su]")
{
    const ScenarioConfig sc = small_scenario();
    const GmmModel model = small_model(sc, 4, 2);
    const PilotCodebook book = build_pilot_codebook(model, 2, 1.0);
    Rng srng(5);
    const ChannelStats user = sample_scenario_stats(srng, sc);

    SECTION("horizon zero is a single DFT block")
    {
        ProtocolOptions opt;
        opt.n_blocks = 0;
        opt.n_pilots = 2;
        opt.record_pilots = true;
        Rng rng(6);
        const ProtocolTrace tr = run_single_user_protocol(rng, model, book, user, opt);
        CHECK(tr.sq_error.rows() == 1);
        REQUIRE(tr.pilots.size() == 1);
        CHECK(tr.pilots[0].bit_identical(dft_pilot_su(8, 2, 1.0)));
    }
    SECTION("pilots follow the previous feedback")
    {
        ProtocolOptions opt;
        opt.n_blocks = 6;
        opt.n_pilots = 2;
        opt.record_pilots = true;
        Rng rng(7);
        const ProtocolTrace tr = run_single_user_protocol(rng, model, book, user, opt);
        REQUIRE(tr.pilots.size() == 7);
        for (std::size_t t = 1; t < 7; ++t)
            CHECK(tr.pilots[t].bit_identical(book[static_cast<std::size_t>(tr.feedback[t - 1][0])]));
    }
    SECTION("one component gives a static pilot after the first block")
    {
        const GmmModel one = small_model(sc, 1, 1);
        const PilotCodebook single = build_pilot_codebook(one, 2, 1.0);
        ProtocolOptions opt;
        opt.n_blocks = 4;
        opt.n_pilots = 2;
        opt.record_pilots = true;
        Rng rng(8);
        const ProtocolTrace tr = run_single_user_protocol(rng, one, single, user, opt);
        for (std::size_t t = 1; t < tr.pilots.size(); ++t)
        {
            CHECK(tr.pilots[t].bit_identical(single[0]));
            CHECK(tr.feedback[t][0] == 0);
        }
    }
    SECTION("codebook size must match the model")
    {
        ProtocolOptions opt;
        opt.n_pilots = 2;
        Rng rng(9);
        CHECK_THROWS_AS(run_single_user_protocol(rng, model, PilotCodebook{}, user, opt), std::invalid_argument);
        opt.pilot = PilotScheme::dft;
        opt.estimators = {EstimatorKind::sample_lmmse};
        CHECK_THROWS_AS(run_single_user_protocol(rng, model, book, user, opt), std::invalid_argument);
    }
}

TEST_CASE("protocols are causal under truncated replay", "[harness][causality]")
{
    const ScenarioConfig sc = small_scenario();
    const GmmModel model = small_model(sc, 4, 2);
    const PilotCodebook book = build_pilot_codebook(model, 2, 1.0);
    Rng srng(10);
    std::vector<ChannelStats> users;
    for (int j = 0; j < 3; ++j)
        users.push_back(sample_scenario_stats(srng, sc));

    ProtocolOptions opt;
    opt.n_pilots = 2;
    opt.record_pilots = true;
    opt.estimators = {EstimatorKind::gmm, EstimatorKind::genie_lmmse};
    opt.n_blocks = 5;
    ProtocolOptions shorter = opt;
    shorter.n_blocks = 2;

    Rng a(11), b(11);
    const ProtocolTrace full = run_single_user_protocol(a, model, book, users[0], opt);
    const ProtocolTrace cut = run_single_user_protocol(b, model, book, users[0], shorter);
    for (int t = 0; t <= 2; ++t)
    {
        CHECK(full.pilots[static_cast<std::size_t>(t)].bit_identical(cut.pilots[static_cast<std::size_t>(t)]));
        CHECK(full.feedback[static_cast<std::size_t>(t)] == cut.feedback[static_cast<std::size_t>(t)]);
        CHECK((full.sq_error.row(t) - cut.sq_error.row(t)).cwiseAbs().maxCoeff() == 0.0);
    }

    Rng c(12), d(12);
    const ProtocolTrace mfull = run_multi_user_protocol(c, model, users, opt);
    const ProtocolTrace mcut = run_multi_user_protocol(d, model, users, shorter);
    for (int t = 0; t <= 2; ++t)
    {
        CHECK(mfull.pilots[static_cast<std::size_t>(t)].bit_identical(mcut.pilots[static_cast<std::size_t>(t)]));
        CHECK(mfull.feedback[static_cast<std::size_t>(t)] == mcut.feedback[static_cast<std::size_t>(t)]);
    }
}

TEST_CASE("multi-user protocol", "[harness][mu]")
{
    const ScenarioConfig sc = small_scenario();
    const GmmModel model = small_model(sc, 4, 2);
    Rng srng(13);
    std::vector<ChannelStats> users;
    for (int j = 0; j < 3; ++j)
        users.push_back(sample_scenario_stats(srng, sc));

    SECTION("first block uses evenly spaced DFT columns and every later block is checked")
    {
        ProtocolOptions opt;
        opt.n_pilots = 2;
        opt.n_blocks = 3;
        opt.record_pilots = true;
        Rng rng(14);
        const ProtocolTrace tr = run_multi_user_protocol(rng, model, users, opt);
        CHECK(tr.pilots[0].bit_identical(dft_pilot_mu(8, 2, 1.0, 2)));
        CHECK(tr.pilot_checks == 3 * 3);
        for (std::size_t t = 1; t < tr.pilots.size(); ++t)
        {
            std::vector<ChannelStats> comps;
            for (int k : tr.feedback[t - 1])
                comps.push_back(model.component_stats(k));
            CHECK(tr.pilots[t].bit_identical(optimize_pilot(comps, opt.noise_var, 2, 1.0, opt.optimizer).pilot));
            CHECK(std::abs(tr.pilots[t].total_power() - 2.0) < 1e-10);
        }
    }
    SECTION("single user with the lower-bound optimizer matches the codebook subspace")
    {
        ProtocolOptions opt;
        opt.n_pilots = 2;
        opt.n_blocks = 2;
        opt.record_pilots = true;
        opt.optimizer.objective_kind = ObjectiveKind::lower_bound;
        opt.optimizer.epsilon = 1e-9;
        opt.optimizer.l_max = 20000;
        const PilotCodebook book = build_pilot_codebook(model, 2, 1.0);
        Rng rng(15);
        const ProtocolTrace tr = run_multi_user_protocol(rng, model, {users[0]}, opt);
        for (std::size_t t = 1; t < tr.pilots.size(); ++t)
        {
            const int k = tr.feedback[t - 1][0];
            CHECK(row_space_distance(tr.pilots[t].p, book[static_cast<std::size_t>(k)].p) < 1e-3);
        }
    }
    SECTION("identical indices reproduce the single-user design")
    {
        OptimizerOptions o;
        const ChannelStats comp = model.component_stats(3);
        const auto one = optimize_pilot({comp}, 0.1, 2, 1.0, o);
        const auto three = optimize_pilot({comp, comp, comp}, 0.1, 2, 1.0, o);
        CHECK(max_abs(one.pilot.p - three.pilot.p) < 1e-10);
    }
    SECTION("genie pilot is fixed over the blocks")
    {
        ProtocolOptions opt;
        opt.pilot = PilotScheme::genie;
        opt.estimators = {EstimatorKind::genie_lmmse};
        opt.n_pilots = 2;
        opt.n_blocks = 2;
        opt.record_pilots = true;
        Rng rng(16);
        const ProtocolTrace tr = run_multi_user_protocol(rng, model, users, opt);
        CHECK(tr.pilots[0].bit_identical(tr.pilots[2]));
        CHECK(tr.pilot_checks == 0);
    }
}

TEST_CASE("experiment output: rows, determinism and worker invariance", "[harness][experiment]")
{
    ExperimentSpec spec = small_spec();
    spec.sweep_values = {10.0};
    set_worker_count(1);
    const ExperimentResult a = run_experiment(spec);
    set_worker_count(3);
    const ExperimentResult b = run_experiment(spec);
    set_worker_count(0);
    CHECK(a.failures.empty());
    CHECK(a.rows.size() == spec.schemes.size());
    for (const auto &r : a.rows)
    {
        CHECK(r.n_samples == 40);
        CHECK(r.ci_lo <= r.mean_nmse);
        CHECK(r.ci_hi >= r.mean_nmse);
        CHECK(std::abs(r.nmse_db - 10.0 * std::log10(r.mean_nmse)) < 1e-12);
    }
    CHECK(csv_without_wall(a) == csv_without_wall(b));

    std::ostringstream os;
    write_csv(os, a);
    std::istringstream is(os.str());
    std::string header;
    std::getline(is, header);
    CHECK(header == "sweep_name,sweep_value,pilot_scheme,estimator,mean_nmse,nmse_db,ci_lo,ci_hi,n_samples,seed,wall_ms");
    std::string line;
    int n = 0;
    while (std::getline(is, line))
    {
        CHECK(std::count(line.begin(), line.end(), ',') == 10);
        ++n;
    }
    CHECK(n == 3);
}

TEST_CASE("NMSE decreases with SNR for every scheme", "[harness][experiment]")
{
    ExperimentSpec spec = small_spec();
    spec.sweep_values = {0.0, 10.0, 20.0};
    spec.schemes.push_back(parse_scheme("dft:sample_lmmse"));
    spec.schemes.push_back(parse_scheme("random:gmm"));
    const ExperimentResult r = run_experiment(spec);
    REQUIRE(r.failures.empty());
    for (const auto &s : spec.schemes)
    {
        const auto *lo = r.find(0.0, s.label(), to_string(s.estimator));
        const auto *mid = r.find(10.0, s.label(), to_string(s.estimator));
        const auto *hi = r.find(20.0, s.label(), to_string(s.estimator));
        REQUIRE(lo);
        REQUIRE(mid);
        REQUIRE(hi);
        CHECK(mid->mean_nmse < lo->mean_nmse);
        CHECK(hi->mean_nmse < mid->mean_nmse);
    }
}

TEST_CASE("block and component sweeps", "[harness][experiment]")
{
    ExperimentSpec spec = small_spec();
    spec.sweep = SweepKind::block;
    spec.sweep_values = {0.0, 1.0, 2.0};
    spec.schemes = {parse_scheme("gmm:gmm")};
    const ExperimentResult blocks = run_experiment(spec);
    REQUIRE(blocks.rows.size() == 3);
    CHECK(blocks.rows[0].sweep_name == "block");
    CHECK(blocks.rows[2].sweep_value == 2.0);

    spec.sweep = SweepKind::components;
    spec.sweep_values = {2.0, 8.0};
    const ExperimentResult comps = run_experiment(spec);
    REQUIRE(comps.failures.empty());
    CHECK(comps.rows.size() == 2);

    spec.sweep = SweepKind::l_max;
    CHECK_THROWS_AS(run_experiment(spec), std::invalid_argument);
}

TEST_CASE("multi-user experiment counts pilot checks", "[harness][experiment]")
{
    ExperimentSpec spec = small_spec();
    spec.mode = Mode::multi_user;
    spec.scenario.n_users = 2;
    spec.n_constellations = 4;
    spec.schemes = {parse_scheme("gmm:gmm"), parse_scheme("dft:gmm")};
    const ExperimentResult r = run_experiment(spec);
    REQUIRE(r.failures.empty());
    CHECK(r.rows.size() == 2);
    CHECK(r.rows[0].n_samples == 4);
    // 4 constellations x 2 users x 2 adaptive blocks
    CHECK(r.pilot_checks == 16);
}

TEST_CASE("failed groups produce flagged rows and the run continues", "[harness][experiment]")
{
    ExperimentSpec spec = small_spec();
    spec.sweep = SweepKind::components;
    spec.sweep_values = {100000.0, 2.0};
    spec.schemes = {parse_scheme("gmm:gmm")};
    const ExperimentResult r = run_experiment(spec);
    REQUIRE(r.rows.size() == 2);
    CHECK(r.failures.size() == 1);
    CHECK(std::isnan(r.rows[0].mean_nmse));
    CHECK(r.rows[0].n_samples == 0);
    CHECK(std::isfinite(r.rows[1].mean_nmse));
}

TEST_CASE("experiment specs are validated", "[harness][experiment]")
{
    ExperimentSpec spec = small_spec();
    spec.sweep_values.clear();
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = small_spec();
    spec.sweep = SweepKind::block;
    spec.sweep_values = {5.0};
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = small_spec();
    spec.schemes.clear();
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = small_spec();
    spec.schemes = {parse_scheme("gmm:gmm:9")};
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}
