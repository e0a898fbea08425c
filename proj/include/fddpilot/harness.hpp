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

// Offline fitting, the online feedback protocols over fading blocks and the
// Monte-Carlo NMSE experiments.
//
// Random streams: every channel, noise and pilot draw comes from a stream
// derived from (seed, purpose, sweep point, user or constellation, block), so
// pilot schemes see identical channels and results do not depend on the
// number of workers.

#pragma once

#include "fddpilot/channel_model.hpp"
#include "fddpilot/estimators.hpp"
#include "fddpilot/gmm.hpp"
#include "fddpilot/parallel.hpp"
#include "fddpilot/pilot_design.hpp"
#include "fddpilot/types.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace fddpilot
{

enum class Mode
{
    single_user,
    multi_user
};

enum class PilotScheme
{
    gmm,
    dft,
    random,
    genie
};

enum class EstimatorKind
{
    gmm,
    genie_lmmse,
    sample_lmmse,
    omp
};

enum class SweepKind
{
    snr,
    block,
    components,
    l_max
};

inline std::string to_string(Mode m) { return m == Mode::single_user ? "single_user" : "multi_user"; }

inline std::string to_string(PilotScheme p)
{
    switch (p)
    {
    case PilotScheme::gmm: return "gmm";
    case PilotScheme::dft: return "dft";
    case PilotScheme::random: return "random";
    case PilotScheme::genie: return "genie";
    }
    return "?";
}

inline std::string to_string(EstimatorKind e)
{
    switch (e)
    {
    case EstimatorKind::gmm: return "gmm";
    case EstimatorKind::genie_lmmse: return "genie_lmmse";
    case EstimatorKind::sample_lmmse: return "sample_lmmse";
    case EstimatorKind::omp: return "omp";
    }
    return "?";
}

inline std::string to_string(SweepKind s)
{
    switch (s)
    {
    case SweepKind::snr: return "snr";
    case SweepKind::block: return "block";
    case SweepKind::components: return "components";
    case SweepKind::l_max: return "l_max";
    }
    return "?";
}

inline Mode parse_mode(const std::string &s)
{
    if (s == "single_user" || s == "su")
        return Mode::single_user;
    if (s == "multi_user" || s == "mu")
        return Mode::multi_user;
    throw std::invalid_argument("unknown mode: " + s);
}

inline PilotScheme parse_pilot_scheme(const std::string &s)
{
    for (auto p : {PilotScheme::gmm, PilotScheme::dft, PilotScheme::random, PilotScheme::genie})
        if (s == to_string(p))
            return p;
    throw std::invalid_argument("unknown pilot scheme: " + s);
}

inline EstimatorKind parse_estimator(const std::string &s)
{
    for (auto e : {EstimatorKind::gmm, EstimatorKind::genie_lmmse, EstimatorKind::sample_lmmse, EstimatorKind::omp})
        if (s == to_string(e))
            return e;
    throw std::invalid_argument("unknown estimator: " + s);
}

inline SweepKind parse_sweep(const std::string &s)
{
    for (auto k : {SweepKind::snr, SweepKind::block, SweepKind::components, SweepKind::l_max})
        if (s == to_string(k))
            return k;
    throw std::invalid_argument("unknown sweep: " + s);
}

// ---------------------------------------------------------------------------
// Statistics

/// (1 / (N M)) sum_m ||h_m - h_hat_m||^2.
inline double evaluate_nmse(const std::vector<CVector> &truths, const std::vector<CVector> &estimates)
{
    if (truths.empty())
        throw std::invalid_argument("evaluate_nmse: empty input");
    if (truths.size() != estimates.size())
        throw std::invalid_argument("evaluate_nmse: collections differ in length");
    const Index n = truths.front().size();
    double acc = 0.0;
    for (std::size_t m = 0; m < truths.size(); ++m)
    {
        if (truths[m].size() != n || estimates[m].size() != n)
            throw std::invalid_argument("evaluate_nmse: inconsistent vector lengths");
        acc += (truths[m] - estimates[m]).squaredNorm();
    }
    return acc / (static_cast<double>(n) * static_cast<double>(truths.size()));
}

inline double mean_of(const std::vector<double> &x)
{
    if (x.empty())
        return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double v : x)
        s += v;
    return s / static_cast<double>(x.size());
}

struct ConfidenceInterval
{
    double lo = std::numeric_limits<double>::quiet_NaN();
    double hi = std::numeric_limits<double>::quiet_NaN();
};

/// Percentile bootstrap interval of the mean.
inline ConfidenceInterval bootstrap_mean_ci(const std::vector<double> &x, int resamples, Rng &rng, double level = 0.95)
{
    if (x.empty() || resamples < 1)
        return {};
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    std::vector<double> means(static_cast<std::size_t>(resamples));
    for (auto &m : means)
    {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            s += x[pick(rng)];
        m = s / static_cast<double>(x.size());
    }
    std::sort(means.begin(), means.end());
    const double alpha = 0.5 * (1.0 - level);
    const auto r = static_cast<double>(resamples);
    const auto lo = static_cast<std::size_t>(std::floor(alpha * r));
    const auto hi = std::min(means.size() - 1, static_cast<std::size_t>(std::ceil((1.0 - alpha) * r)) - 1);
    return ConfidenceInterval{means[lo], means[hi]};
}

/// Fraction of paired resamples in which mean(a) < mean(b).
inline double paired_order_confidence(const std::vector<double> &a, const std::vector<double> &b, int resamples,
                                      Rng &rng)
{
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("paired_order_confidence: need equal, nonempty samples");
    std::uniform_int_distribution<std::size_t> pick(0, a.size() - 1);
    int wins = 0;
    for (int r = 0; r < resamples; ++r)
    {
        double sa = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
        {
            const std::size_t j = pick(rng);
            sa += a[j];
            sb += b[j];
        }
        if (sa < sb)
            ++wins;
    }
    return static_cast<double>(wins) / static_cast<double>(resamples);
}

// ---------------------------------------------------------------------------
// Protocols

struct ProtocolOptions
{
    PilotScheme pilot = PilotScheme::gmm;
    std::vector<EstimatorKind> estimators{EstimatorKind::gmm};
    int n_blocks = 5; // blocks t = 0..n_blocks
    Index n_pilots = 4;
    double rho = 1.0;
    double noise_var = 0.1;
    int dft_oversampling = 2;
    const CMatrix *sample_cov = nullptr;     // sample_lmmse
    const CMatrix *omp_dictionary = nullptr; // omp
    OptimizerOptions optimizer;              // multi-user GMM pilots
    OptimizerOptions genie_optimizer{InitKind::random, 500, 1e-3, ObjectiveKind::full_cmi, 2, false, 0, false};
    bool record_pilots = false;
};

struct ProtocolState
{
    std::vector<int> feedback; // k*_{j,t-1} per user; empty before the first block
    PilotMatrix pilot;
    int block = 0;
};

struct ProtocolTrace
{
    RMatrix sq_error;                       // (T + 1) x estimators: ||h - h_hat||^2 / N, mean over users
    std::vector<std::vector<int>> feedback; // [block][user]
    std::vector<PilotMatrix> pilots;        // per block, when recorded
    int pilot_checks = 0;                   // BS/MT agreement checks performed
};

namespace detail
{

inline void require_estimator_inputs(const ProtocolOptions &opt)
{
    for (auto e : opt.estimators)
    {
        if (e == EstimatorKind::sample_lmmse && !opt.sample_cov)
            throw std::invalid_argument("protocol: sample_lmmse needs a sample covariance");
        if (e == EstimatorKind::omp && !opt.omp_dictionary)
            throw std::invalid_argument("protocol: omp needs a dictionary");
    }
}

inline bool needs_gmm_inference(const ProtocolOptions &opt)
{
    return opt.pilot == PilotScheme::gmm ||
           std::find(opt.estimators.begin(), opt.estimators.end(), EstimatorKind::gmm) != opt.estimators.end();
}

// Estimates for one observation; gmm_estimate is the already computed GMM output.
inline void record_errors(const ProtocolOptions &opt, const CVector &h, const CVector &y, const PilotMatrix &pilot,
                          const ChannelStats &stats, const CVector *gmm_estimate, RMatrix &acc, int t)
{
    const double n = static_cast<double>(h.size());
    for (std::size_t e = 0; e < opt.estimators.size(); ++e)
    {
        CVector est;
        switch (opt.estimators[e])
        {
        case EstimatorKind::gmm: est = *gmm_estimate; break;
        case EstimatorKind::genie_lmmse: est = genie_lmmse(y, pilot, stats, opt.noise_var); break;
        case EstimatorKind::sample_lmmse: est = sample_cov_lmmse(y, pilot, *opt.sample_cov, opt.noise_var); break;
        case EstimatorKind::omp: est = omp_genie_estimate(y, pilot, *opt.omp_dictionary, opt.noise_var, h); break;
        }
        acc(t, static_cast<Index>(e)) += (h - est).squaredNorm() / n;
    }
}

} // namespace detail

/// One user over blocks t = 0..T with fixed statistics and i.i.d. channels.
/// GMM pilots: DFT at t = 0, then codebook[k*_{t-1}] from the previous
/// observation. One value is drawn from rng; block t uses streams (t, purpose).
inline ProtocolTrace run_single_user_protocol(Rng &rng, const GmmModel &model, const PilotCodebook &codebook,
                                              const ChannelStats &stats, const ProtocolOptions &opt,
                                              ObservationModelCache *cache = nullptr)
{
    detail::require_estimator_inputs(opt);
    if (opt.pilot == PilotScheme::gmm && static_cast<Index>(codebook.size()) != model.num_components())
        throw std::invalid_argument("run_single_user_protocol: codebook size differs from K");
    const std::uint64_t base = rng();
    const Index n_tx = stats.n_tx();
    const Index n_rx = stats.n_rx();
    const int blocks = opt.n_blocks + 1;
    const bool infer = detail::needs_gmm_inference(opt);
    const bool cacheable = cache && (opt.pilot == PilotScheme::gmm || opt.pilot == PilotScheme::dft);
    const ChannelSampler sampler(stats);

    ProtocolTrace trace;
    trace.sq_error = RMatrix::Zero(blocks, static_cast<Index>(opt.estimators.size()));
    std::optional<PilotMatrix> fixed;
    if (opt.pilot == PilotScheme::dft)
        fixed = dft_pilot_su(n_tx, opt.n_pilots, opt.rho);
    else if (opt.pilot == PilotScheme::genie)
        fixed = genie_pilot_su(stats, opt.n_pilots, opt.rho);

    ProtocolState state;
    for (int t = 0; t < blocks; ++t)
    {
        state.block = t;
        if (fixed)
            state.pilot = *fixed;
        else if (opt.pilot == PilotScheme::random)
        {
            Rng prng = make_stream(base, {static_cast<std::uint64_t>(t), 2});
            state.pilot = random_pilot(prng, n_tx, opt.n_pilots, opt.rho);
        }
        else if (state.feedback.empty())
            state.pilot = dft_pilot_su(n_tx, opt.n_pilots, opt.rho);
        else
            state.pilot = codebook[static_cast<std::size_t>(state.feedback.front())];
        if (state.pilot.n_pilots() != opt.n_pilots)
            throw std::invalid_argument("run_single_user_protocol: pilot has the wrong number of rows");

        Rng hrng = make_stream(base, {static_cast<std::uint64_t>(t), 0});
        Rng nrng = make_stream(base, {static_cast<std::uint64_t>(t), 1});
        const CVector h = sampler.draw(hrng);
        const CVector y = observe(nrng, ChannelSample{h, t, 0}, state.pilot, opt.noise_var, n_rx).y;

        CVector gmm_h;
        if (infer)
        {
            std::shared_ptr<const ObservationModel> om =
                cacheable ? cache->get(state.pilot, opt.noise_var)
                          : std::make_shared<const ObservationModel>(model, state.pilot, opt.noise_var);
            auto out = om->infer(y);
            gmm_h = std::move(out.estimate);
            state.feedback = {out.feedback.k_star};
        }
        trace.feedback.push_back(state.feedback);
        if (opt.record_pilots)
            trace.pilots.push_back(state.pilot);
        detail::record_errors(opt, h, y, state.pilot, stats, infer ? &gmm_h : nullptr, trace.sq_error, t);
    }
    return trace;
}

/// J users sharing one pilot per block. GMM pilots: evenly spaced DFT columns
/// at t = 0; afterwards the BS runs the optimizer on the component
/// covariances selected by k*_{j,t-1}, and every MT repeats the computation
/// from the broadcast indices. Any bitwise difference throws.
inline ProtocolTrace run_multi_user_protocol(Rng &rng, const GmmModel &model, const std::vector<ChannelStats> &stats_list,
                                             const ProtocolOptions &opt)
{
    detail::require_estimator_inputs(opt);
    if (stats_list.empty())
        throw std::invalid_argument("run_multi_user_protocol: need at least one user");
    const std::uint64_t base = rng();
    const Index n_tx = stats_list.front().n_tx();
    const Index n_rx = stats_list.front().n_rx();
    const std::size_t n_users = stats_list.size();
    const int blocks = opt.n_blocks + 1;
    const bool infer = detail::needs_gmm_inference(opt);

    std::vector<ChannelSampler> samplers;
    samplers.reserve(n_users);
    for (const auto &st : stats_list)
        samplers.emplace_back(st);

    ProtocolTrace trace;
    trace.sq_error = RMatrix::Zero(blocks, static_cast<Index>(opt.estimators.size()));

    std::optional<PilotMatrix> genie;
    if (opt.pilot == PilotScheme::genie)
    {
        OptimizerOptions g = opt.genie_optimizer;
        g.init_seed = splitmix64(base ^ 0x6E1E);
        genie = optimize_pilot(stats_list, opt.noise_var, opt.n_pilots, opt.rho, g).pilot;
    }

    ProtocolState state;
    for (int t = 0; t < blocks; ++t)
    {
        state.block = t;
        switch (opt.pilot)
        {
        case PilotScheme::genie: state.pilot = *genie; break;
        case PilotScheme::random: {
            Rng prng = make_stream(base, {static_cast<std::uint64_t>(t), 2});
            state.pilot = random_pilot(prng, n_tx, opt.n_pilots, opt.rho);
            break;
        }
        case PilotScheme::dft: {
            Rng prng = make_stream(base, {static_cast<std::uint64_t>(t), 3});
            state.pilot = dft_pilot_mu(n_tx, opt.n_pilots, opt.rho, opt.dft_oversampling, &prng);
            break;
        }
        case PilotScheme::gmm:
            if (state.feedback.empty())
                state.pilot = dft_pilot_mu(n_tx, opt.n_pilots, opt.rho, opt.dft_oversampling, nullptr);
            else
            {
                auto design = [&](const std::vector<int> &indices) {
                    std::vector<ChannelStats> comps;
                    comps.reserve(indices.size());
                    for (int k : indices)
                        comps.push_back(model.component_stats(k));
                    return optimize_pilot(comps, opt.noise_var, opt.n_pilots, opt.rho, opt.optimizer).pilot;
                };
                state.pilot = design(state.feedback);
                for (std::size_t j = 0; j < n_users; ++j)
                {
                    const std::vector<int> broadcast = state.feedback;
                    const PilotMatrix at_mt = design(broadcast);
                    ++trace.pilot_checks;
                    if (!at_mt.bit_identical(state.pilot))
                        throw std::runtime_error("run_multi_user_protocol: BS and MT " + std::to_string(j) +
                                                 " computed different pilots at block " + std::to_string(t));
                }
            }
            break;
        }
        if (opt.record_pilots)
            trace.pilots.push_back(state.pilot);

        std::shared_ptr<const ObservationModel> om;
        if (infer)
            om = std::make_shared<const ObservationModel>(model, state.pilot, opt.noise_var);
        std::vector<int> next(n_users, 0);
        for (std::size_t j = 0; j < n_users; ++j)
        {
            Rng hrng = make_stream(base, {static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(t), 0});
            Rng nrng = make_stream(base, {static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(t), 1});
            const CVector h = samplers[j].draw(hrng);
            const CVector y = observe(nrng, ChannelSample{h, t, static_cast<int>(j)}, state.pilot, opt.noise_var, n_rx).y;
            CVector gmm_h;
            if (infer)
            {
                auto out = om->infer(y);
                gmm_h = std::move(out.estimate);
                next[j] = out.feedback.k_star;
            }
            detail::record_errors(opt, h, y, state.pilot, stats_list[j], infer ? &gmm_h : nullptr, trace.sq_error, t);
        }
        trace.sq_error.row(t) /= static_cast<double>(n_users);
        if (infer)
            state.feedback = next;
        trace.feedback.push_back(next);
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Experiments

struct SchemeSpec
{
    PilotScheme pilot = PilotScheme::gmm;
    EstimatorKind estimator = EstimatorKind::gmm;
    int n_pilots = 0; // 0: scenario.n_pilots

    std::string label() const
    {
        std::string s = to_string(pilot);
        if (n_pilots > 0)
            s += "@" + std::to_string(n_pilots);
        return s;
    }
};

/// "pilot:estimator" or "pilot:estimator:n_p".
inline SchemeSpec parse_scheme(const std::string &text)
{
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ':');)
        parts.push_back(item);
    if (parts.size() < 2 || parts.size() > 3)
        throw std::invalid_argument("scheme must look like pilot:estimator[:n_pilots], got " + text);
    SchemeSpec s{parse_pilot_scheme(parts[0]), parse_estimator(parts[1]), 0};
    if (parts.size() == 3)
        s.n_pilots = std::stoi(parts[2]);
    return s;
}

struct ExperimentSpec
{
    ScenarioConfig scenario;
    Mode mode = Mode::single_user;
    SweepKind sweep = SweepKind::snr;
    std::vector<double> sweep_values{10.0};
    std::vector<SchemeSpec> schemes{{PilotScheme::gmm, EstimatorKind::gmm, 0}};
    Index n_train = 20000;
    Index n_eval = 2000;
    int n_constellations = 100;
    int k_tx = 16;
    int k_rx = 4;
    EmOptions em;
    OptimizerOptions optimizer;
    int omp_oversampling = 2;
    int bootstrap_resamples = 1000;
    std::string output_path;

    void validate() const
    {
        scenario.validate();
        if (sweep_values.empty())
            throw std::invalid_argument("ExperimentSpec: sweep needs at least one value");
        if (schemes.empty())
            throw std::invalid_argument("ExperimentSpec: need at least one scheme");
        if (n_train < 1 || n_eval < 1)
            throw std::invalid_argument("ExperimentSpec: n_train and n_eval must be >= 1");
        if (k_tx < 1 || k_rx < 1)
            throw std::invalid_argument("ExperimentSpec: component counts must be >= 1");
        if (bootstrap_resamples < 1)
            throw std::invalid_argument("ExperimentSpec: bootstrap_resamples must be >= 1");
        optimizer.validate();
        for (const auto &s : schemes)
            if (s.n_pilots < 0 || s.n_pilots > scenario.n_tx)
                throw std::invalid_argument("ExperimentSpec: scheme n_pilots must lie in [0, n_tx]");
        if (mode == Mode::multi_user)
        {
            if (n_constellations < 1)
                throw std::invalid_argument("ExperimentSpec: n_constellations must be >= 1");
            if (scenario.n_users > n_eval)
                throw std::invalid_argument("ExperimentSpec: evaluation pool smaller than the user count");
        }
        if (sweep == SweepKind::l_max && mode != Mode::multi_user)
            throw std::invalid_argument("ExperimentSpec: l_max sweeps need multi_user mode");
        for (double v : sweep_values)
        {
            if (sweep == SweepKind::block && (v < 0 || v > scenario.n_blocks || v != std::floor(v)))
                throw std::invalid_argument("ExperimentSpec: block sweep values must be integers in [0, n_blocks]");
            if ((sweep == SweepKind::components || sweep == SweepKind::l_max) && (v < 1 || v != std::floor(v)))
                throw std::invalid_argument("ExperimentSpec: component and l_max sweep values must be positive integers");
        }
    }
};

/// Side split of a total component count: K_rx = k_rx when N_rx > 1 and it
/// divides K, otherwise 1.
inline std::pair<int, int> split_components(int k_total, int k_rx, int n_rx)
{
    const int rx = (n_rx > 1 && k_rx >= 1 && k_total % k_rx == 0) ? k_rx : 1;
    return {k_total / rx, rx};
}

struct ResultRow
{
    std::string sweep_name;
    double sweep_value = 0.0;
    std::string pilot_scheme;
    std::string estimator;
    double mean_nmse = std::numeric_limits<double>::quiet_NaN();
    double nmse_db = std::numeric_limits<double>::quiet_NaN();
    double ci_lo = std::numeric_limits<double>::quiet_NaN();
    double ci_hi = std::numeric_limits<double>::quiet_NaN();
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
    double wall_ms = 0.0;
    std::vector<double> samples; // per user (SU) or per constellation (MU); paired across rows
};

struct ExperimentResult
{
    std::vector<ResultRow> rows;
    std::vector<std::string> failures;
    long pilot_checks = 0;

    const ResultRow *find(double sweep_value, const std::string &pilot, const std::string &estimator) const
    {
        for (const auto &r : rows)
            if (r.sweep_value == sweep_value && r.pilot_scheme == pilot && r.estimator == estimator)
                return &r;
        return nullptr;
    }
};

/// Training set and fitted models shared by all sweep points.
class OfflineStage
{
  public:
    explicit OfflineStage(const ExperimentSpec &spec) : spec_(spec)
    {
        Rng rng = make_stream(spec.scenario.seed, {1});
        train_ = generate_dataset(rng, spec.scenario, spec.n_train);
    }

    const Dataset &training_set() const { return train_; }

    const GmmModel &model(int k_tx, int k_rx, KroneckerFitReport *report = nullptr)
    {
        const auto key = std::make_pair(k_tx, k_rx);
        auto it = models_.find(key);
        if (it == models_.end())
        {
            if (auto f = failed_.find(key); f != failed_.end())
                throw std::runtime_error(f->second);
            Rng rng = make_stream(spec_.scenario.seed, {7, static_cast<std::uint64_t>(k_tx), static_cast<std::uint64_t>(k_rx)});
            KroneckerFitReport rep;
            try
            {
                GmmModel m = fit_kronecker_gmm(rng, train_.samples, spec_.scenario.n_tx, spec_.scenario.n_rx, k_tx,
                                               k_rx, spec_.em, &rep);
                reports_[key] = std::move(rep);
                it = models_.emplace(key, std::move(m)).first;
            }
            catch (const std::exception &e)
            {
                failed_[key] = e.what();
                throw;
            }
        }
        if (report)
            *report = reports_.at(key);
        return it->second;
    }

    const CMatrix &sample_cov()
    {
        if (!sample_cov_)
            sample_cov_ = sample_covariance(train_.samples);
        return *sample_cov_;
    }

    const CMatrix &omp_dict()
    {
        if (!omp_dict_)
            omp_dict_ = omp_dictionary(spec_.scenario.n_tx, spec_.scenario.n_rx, spec_.omp_oversampling);
        return *omp_dict_;
    }

  private:
    ExperimentSpec spec_;
    Dataset train_;
    std::map<std::pair<int, int>, GmmModel> models_;
    std::map<std::pair<int, int>, KroneckerFitReport> reports_;
    std::map<std::pair<int, int>, std::string> failed_;
    std::optional<CMatrix> sample_cov_;
    std::optional<CMatrix> omp_dict_;
};

/// Evaluation users with fresh angles, disjoint from the training streams.
inline std::vector<ChannelStats> evaluation_pool(const ScenarioConfig &scenario, Index n_eval)
{
    std::vector<ChannelStats> pool(static_cast<std::size_t>(n_eval));
    parallel_for(pool.size(), [&](std::size_t u) {
        Rng rng = make_stream(scenario.seed, {2, u});
        pool[u] = stats_from_delta(scenario, sample_delta(rng, scenario));
    });
    return pool;
}

/// J distinct users drawn uniformly from the pool.
inline std::vector<std::size_t> draw_constellation(Rng &rng, std::size_t pool_size, int n_users)
{
    std::vector<std::size_t> idx(pool_size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < static_cast<std::size_t>(n_users); ++i)
    {
        std::uniform_int_distribution<std::size_t> pick(i, pool_size - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(static_cast<std::size_t>(n_users));
    return idx;
}

namespace detail
{

// Per-sample errors [sample][block][estimator] for one pilot group at one sweep point.
using ErrorCube = std::vector<RMatrix>;

inline ErrorCube run_group(const ExperimentSpec &spec, OfflineStage &offline, const std::vector<ChannelStats> &pool,
                           const GmmModel &model, ProtocolOptions opt, std::size_t point, long *pilot_checks)
{
    if (std::find(opt.estimators.begin(), opt.estimators.end(), EstimatorKind::sample_lmmse) != opt.estimators.end())
        opt.sample_cov = &offline.sample_cov();
    if (std::find(opt.estimators.begin(), opt.estimators.end(), EstimatorKind::omp) != opt.estimators.end())
        opt.omp_dictionary = &offline.omp_dict();
    const std::uint64_t seed = spec.scenario.seed;

    if (spec.mode == Mode::single_user)
    {
        PilotCodebook codebook;
        if (opt.pilot == PilotScheme::gmm)
            codebook = build_pilot_codebook(model, opt.n_pilots, opt.rho);
        ObservationModelCache cache(model);
        ErrorCube out(pool.size());
        parallel_for(pool.size(), [&](std::size_t u) {
            Rng rng = make_stream(seed, {4, point, u});
            out[u] = run_single_user_protocol(rng, model, codebook, pool[u], opt, &cache).sq_error;
        });
        return out;
    }

    const auto n_con = static_cast<std::size_t>(spec.n_constellations);
    ErrorCube out(n_con);
    std::vector<long> checks(n_con, 0);
    parallel_for(n_con, [&](std::size_t c) {
        Rng pick = make_stream(seed, {3, c});
        const auto members = draw_constellation(pick, pool.size(), spec.scenario.n_users);
        std::vector<ChannelStats> users;
        for (std::size_t i : members)
            users.push_back(pool[i]);
        Rng rng = make_stream(seed, {5, point, c});
        auto trace = run_multi_user_protocol(rng, model, users, opt);
        out[c] = std::move(trace.sq_error);
        checks[c] = trace.pilot_checks;
    });
    for (long v : checks)
        *pilot_checks += v;
    return out;
}

} // namespace detail

/// Runs every sweep point and scheme; failed groups produce NaN rows and a
/// message in failures, and the run continues.
inline ExperimentResult run_experiment(const ExperimentSpec &spec, OfflineStage *shared_offline = nullptr,
                                       std::ostream *log = nullptr)
{
    spec.validate();
    std::optional<OfflineStage> own;
    if (!shared_offline)
        own.emplace(spec);
    OfflineStage &offline = shared_offline ? *shared_offline : *own;
    const auto pool = evaluation_pool(spec.scenario, spec.n_eval);

    // Pilot groups: schemes sharing (pilot, n_p) share one protocol run.
    struct Group
    {
        PilotScheme pilot;
        int n_pilots;
        std::vector<EstimatorKind> estimators;
        std::vector<std::size_t> scheme_index;
    };
    std::vector<Group> groups;
    for (std::size_t i = 0; i < spec.schemes.size(); ++i)
    {
        const auto &s = spec.schemes[i];
        const int np = s.n_pilots > 0 ? s.n_pilots : spec.scenario.n_pilots;
        auto it = std::find_if(groups.begin(), groups.end(), [&](const Group &g) { return g.pilot == s.pilot && g.n_pilots == np; });
        if (it == groups.end())
        {
            groups.push_back(Group{s.pilot, np, {}, {}});
            it = groups.end() - 1;
        }
        it->estimators.push_back(s.estimator);
        it->scheme_index.push_back(i);
    }

    ExperimentResult result;
    std::vector<double> points = spec.sweep == SweepKind::block ? std::vector<double>{0.0} : spec.sweep_values;
    for (std::size_t point = 0; point < points.size(); ++point)
    {
        ScenarioConfig sc = spec.scenario;
        OptimizerOptions optim = spec.optimizer;
        int k_tx = spec.k_tx, k_rx = spec.k_rx;
        if (sc.n_rx == 1)
            k_rx = 1;
        switch (spec.sweep)
        {
        case SweepKind::snr: sc.snr_db = points[point]; break;
        case SweepKind::components:
            std::tie(k_tx, k_rx) = split_components(static_cast<int>(points[point]), spec.k_rx, sc.n_rx);
            break;
        case SweepKind::l_max: optim.l_max = static_cast<int>(points[point]); break;
        case SweepKind::block: break;
        }

        for (const auto &g : groups)
        {
            std::vector<double> report_values = spec.sweep == SweepKind::block ? spec.sweep_values : std::vector<double>{points[point]};
            const auto t0 = std::chrono::steady_clock::now();
            detail::ErrorCube cube;
            std::string failure;
            try
            {
                const GmmModel &model = offline.model(k_tx, k_rx);
                ProtocolOptions opt;
                opt.pilot = g.pilot;
                opt.estimators = g.estimators;
                opt.n_blocks = sc.n_blocks;
                opt.n_pilots = g.n_pilots;
                opt.rho = sc.rho;
                opt.noise_var = sc.noise_var();
                opt.dft_oversampling = optim.dft_oversampling;
                opt.optimizer = optim;
                cube = detail::run_group(spec, offline, pool, model, opt, point, &result.pilot_checks);
            }
            catch (const std::exception &e)
            {
                failure = to_string(spec.sweep) + "=" + std::to_string(points[point]) + " pilot " + to_string(g.pilot) +
                          ": " + e.what();
                result.failures.push_back(failure);
                if (log)
                    *log << "failed: " << failure << "\n";
            }
            const double wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

            for (double rv : report_values)
            {
                const int block = spec.sweep == SweepKind::block ? static_cast<int>(rv) : sc.n_blocks;
                for (std::size_t e = 0; e < g.estimators.size(); ++e)
                {
                    const SchemeSpec &scheme = spec.schemes[g.scheme_index[e]];
                    ResultRow row;
                    row.sweep_name = to_string(spec.sweep);
                    row.sweep_value = rv;
                    row.pilot_scheme = scheme.label();
                    row.estimator = to_string(scheme.estimator);
                    row.seed = spec.scenario.seed;
                    row.wall_ms = wall_ms;
                    if (failure.empty())
                    {
                        row.samples.reserve(cube.size());
                        for (const auto &m : cube)
                            row.samples.push_back(m(block, static_cast<Index>(e)));
                        row.n_samples = row.samples.size();
                        row.mean_nmse = mean_of(row.samples);
                        row.nmse_db = 10.0 * std::log10(row.mean_nmse);
                        Rng brng = make_stream(spec.scenario.seed, {6, point, static_cast<std::uint64_t>(result.rows.size())});
                        const auto ci = bootstrap_mean_ci(row.samples, spec.bootstrap_resamples, brng);
                        row.ci_lo = ci.lo;
                        row.ci_hi = ci.hi;
                    }
                    result.rows.push_back(std::move(row));
                }
            }
            if (log && failure.empty())
                *log << to_string(spec.sweep) << " point " << point + 1 << "/" << points.size() << " pilot "
                     << to_string(g.pilot) << " done in " << std::fixed << std::setprecision(0) << wall_ms << " ms\n"
                     << std::defaultfloat;
        }
    }
    return result;
}

inline const char *csv_header()
{
    return "sweep_name,sweep_value,pilot_scheme,estimator,mean_nmse,nmse_db,ci_lo,ci_hi,n_samples,seed,wall_ms";
}

inline void write_csv(std::ostream &os, const ExperimentResult &result)
{
    os << csv_header() << "\n";
    for (const auto &r : result.rows)
    {
        std::ostringstream line;
        line << std::setprecision(12) << r.sweep_name << ',' << r.sweep_value << ',' << r.pilot_scheme << ','
             << r.estimator << ',' << r.mean_nmse << ',' << r.nmse_db << ',' << r.ci_lo << ',' << r.ci_hi << ','
             << r.n_samples << ',' << r.seed << ',' << std::fixed << std::setprecision(1) << r.wall_ms;
        os << line.str() << "\n";
    }
}

} // namespace fddpilot
