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

// fddpilot_cli fit | codebook | run | check
//
// Every config key can be overridden on the command line with --key value.

#include "fddpilot/fddpilot.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace fddpilot;

namespace
{

ConfigMap overrides_from(const std::vector<std::string> &rest)
{
    ConfigMap out;
    for (std::size_t i = 0; i < rest.size(); ++i)
    {
        std::string arg = rest[i];
        if (arg.rfind("--", 0) != 0)
            throw std::invalid_argument("unexpected argument: " + arg);
        arg = arg.substr(2);
        std::string value;
        if (const auto eq = arg.find('='); eq != std::string::npos)
        {
            value = arg.substr(eq + 1);
            arg = arg.substr(0, eq);
        }
        else
        {
            if (i + 1 >= rest.size())
                throw std::invalid_argument("missing value for --" + arg);
            value = rest[++i];
        }
        std::replace(arg.begin(), arg.end(), '-', '_');
        out[arg] = value;
    }
    return out;
}

ExperimentSpec load_spec(const std::string &config_path, const std::vector<std::string> &rest)
{
    ExperimentSpec spec;
    if (!config_path.empty())
        apply_config(parse_config_file(config_path), spec);
    apply_config(overrides_from(rest), spec);
    return spec;
}

int cmd_fit(const std::string &config, const std::vector<std::string> &rest, const std::string &out,
            const std::string &dataset_out)
{
    ExperimentSpec spec = load_spec(config, rest);
    spec.scenario.validate();
    std::cerr << "generating " << spec.n_train << " training channels\n";
    OfflineStage offline(spec);
    if (!dataset_out.empty())
        write_dataset(dataset_out, offline.training_set());
    const int k_rx = spec.scenario.n_rx == 1 ? 1 : spec.k_rx;
    std::cerr << "fitting K_tx = " << spec.k_tx << ", K_rx = " << k_rx << "\n";
    KroneckerFitReport report;
    const GmmModel &model = offline.model(spec.k_tx, k_rx, &report);
    write_gmm(out, model);
    write_json(out + ".json", gmm_sidecar(model, spec.scenario, spec.em, spec.n_train, report));
    for (const auto &w : report.tx.warnings)
        std::cerr << "warning (tx): " << w << "\n";
    for (const auto &w : report.rx.warnings)
        std::cerr << "warning (rx): " << w << "\n";
    std::cerr << "wrote " << out << " (" << model.num_components() << " components)\n";
    return 0;
}

int cmd_codebook(const std::string &config, const std::vector<std::string> &rest, const std::string &model_path,
                 const std::string &out, const std::string &csv)
{
    ExperimentSpec spec = load_spec(config, rest);
    const GmmModel model = read_gmm(model_path);
    const PilotCodebook book = build_pilot_codebook(model, spec.scenario.n_pilots, spec.scenario.rho);
    write_pilots(out, book.entries);
    if (!csv.empty())
    {
        std::ofstream os(csv);
        write_pilots_csv(os, book.entries);
    }
    std::cerr << "wrote " << book.size() << " pilot matrices to " << out << "\n";
    return 0;
}

int cmd_run(const std::string &config, const std::vector<std::string> &rest)
{
    ExperimentSpec spec = load_spec(config, rest);
    const ExperimentResult result = run_experiment(spec, nullptr, &std::cerr);
    if (spec.output_path.empty() || spec.output_path == "-")
        write_csv(std::cout, result);
    else
    {
        std::ofstream os(spec.output_path);
        if (!os)
            throw std::runtime_error("cannot open " + spec.output_path);
        write_csv(os, result);
        std::cerr << "wrote " << result.rows.size() << " rows to " << spec.output_path << "\n";
    }
    if (spec.mode == Mode::multi_user)
        std::cerr << "BS/MT pilot agreement checks: " << result.pilot_checks << "\n";
    return result.failures.empty() ? 0 : 2;
}

ChannelStats random_stats(Rng &rng, Index n_tx, Index n_rx)
{
    auto psd = [&](Index n) {
        CMatrix a = complex_normal(rng, n, n);
        CMatrix c = a * a.adjoint();
        return CMatrix(c * (static_cast<double>(n) / c.trace().real()));
    };
    return ChannelStats{psd(n_tx), psd(n_rx), {}};
}

// Quick invariant pass over the main building blocks.
int cmd_check()
{
    int failed = 0;
    auto report = [&](const std::string &name, bool ok, const std::string &detail) {
        std::cout << (ok ? "PASS " : "FAIL ") << name << "  " << detail << "\n";
        if (!ok)
            ++failed;
    };
    auto sci = [](double v) {
        std::ostringstream os;
        os << std::scientific << std::setprecision(3) << v;
        return os.str();
    };
    Rng rng(20261017);

    {
        double worst = 0.0;
        for (int inst = 0; inst < 10; ++inst)
        {
            std::vector<ChannelStats> st{random_stats(rng, 6, 2), random_stats(rng, 6, 2)};
            PilotMatrix p{complex_normal(rng, 3, 6), 1.0};
            const CMatrix g = cmi_gradient(p, st, 0.3);
            const CMatrix d = complex_normal(rng, 3, 6);
            const double h = 1e-5;
            PilotMatrix pp{p.p + h * d, 1.0}, pm{p.p - h * d, 1.0};
            const double fd = (sum_cmi(pp, st, 0.3) - sum_cmi(pm, st, 0.3)) / (2 * h);
            const double an = 2.0 * (g.adjoint() * d).trace().real();
            worst = std::max(worst, std::abs(fd - an) / std::max(1e-12, std::abs(an)));
        }
        report("gradient_vs_finite_difference", worst < 1e-6, "max rel err " + sci(worst));
    }
    {
        double worst = -1e300;
        for (int inst = 0; inst < 200; ++inst)
        {
            std::vector<ChannelStats> st{random_stats(rng, 5, 3)};
            PilotMatrix p{complex_normal(rng, 2, 5), 1.0};
            worst = std::max(worst, lower_bound(p, st, 0.5) - sum_cmi(p, st, 0.5));
        }
        report("lower_bound_below_sum_cmi", worst <= 1e-9, "max excess " + sci(worst));
    }
    {
        double worst = 0.0;
        for (int inst = 0; inst < 200; ++inst)
        {
            const Index np = 1 + inst % 5, nr = 1 + (inst / 5) % 5;
            RVector d = RVector::Random(np * nr).cwiseAbs() + RVector::Constant(np * nr, 0.1);
            worst = std::max(worst, (kron_diag_reconstruct(kron_diag_svd(d, np, nr), np, nr) - d).cwiseAbs().maxCoeff());
        }
        report("kron_diag_svd_reconstruction", worst < 1e-12, "max abs err " + sci(worst));
    }
    {
        const CMatrix x = complex_normal(rng, 4, 500);
        Rng em_rng(1);
        const auto res = fit_em_zero_mean(em_rng, x, 1);
        const double err = (res.covs[0] - x * x.adjoint() / 500.0).cwiseAbs().maxCoeff();
        report("em_single_component_closed_form", err < 1e-10, "max abs err " + sci(err));
    }
    {
        const ChannelStats st = random_stats(rng, 6, 3);
        const GmmModel single(RVector::Ones(1), {st.cov_tx}, RVector::Ones(1), {st.cov_rx});
        const PilotMatrix p{complex_normal(rng, 2, 6), 1.0};
        const ObservationModel om(single, p, 0.2);
        const CMatrix a = kron(p.p, CMatrix::Identity(3, 3));
        CMatrix dense = a * st.full_covariance() * a.adjoint();
        dense.diagonal().array() += 0.2;
        const double err = (om.covariance(0) - dense).cwiseAbs().maxCoeff();
        report("observation_covariance_factored_vs_dense", err < 1e-10, "max abs err " + sci(err));
    }
    {
        std::vector<ChannelStats> st{random_stats(rng, 8, 2), random_stats(rng, 8, 2)};
        OptimizerOptions opt;
        const auto a = optimize_pilot_full(st, 0.1, 3, 1.0, opt);
        const auto b = optimize_pilot_full(st, 0.1, 3, 1.0, opt);
        report("optimizer_bit_reproducible", a.pilot.bit_identical(b.pilot),
               std::to_string(a.trace.iterations) + " iterations");
    }
    std::cout << (failed ? "check failed" : "all checks passed") << "\n";
    return failed ? 1 : 0;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"GMM-based pilot design and channel estimation for FDD MIMO systems"};
    app.require_subcommand(1);

    std::string config;
    std::string out = "model.gmm";
    std::string dataset_out;
    std::string model_path;
    std::string codebook_out = "codebook.bin";
    std::string csv;

    auto *fit = app.add_subcommand("fit", "generate training data and fit the Kronecker GMM");
    fit->add_option("-c,--config", config, "config file (key = value)");
    fit->add_option("-o,--out", out, "model output path");
    fit->add_option("--dataset-out", dataset_out, "also write the training set");
    fit->allow_extras();

    auto *codebook = app.add_subcommand("codebook", "build the single-user pilot codebook of a model");
    codebook->add_option("-c,--config", config, "config file (key = value)");
    codebook->add_option("-m,--model", model_path, "model file")->required();
    codebook->add_option("-o,--out", codebook_out, "pilot container output path");
    codebook->add_option("--csv", csv, "also write the codebook as CSV");
    codebook->allow_extras();

    auto *run = app.add_subcommand("run", "run an experiment and write the CSV result table");
    run->add_option("-c,--config", config, "config file (key = value)");
    run->allow_extras();

    auto *check = app.add_subcommand("check", "run the quick invariant and oracle checks");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (*fit)
            return cmd_fit(config, fit->remaining(), out, dataset_out);
        if (*codebook)
            return cmd_codebook(config, codebook->remaining(), model_path, codebook_out, csv);
        if (*run)
            return cmd_run(config, run->remaining());
        if (*check)
            return cmd_check();
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
