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

// Persistence and configuration.
//
// Complex container (datasets "FDDPL1", pilot matrices "FDDPM1"), little-endian:
//   char[6] magic | u8 bytes per real (4 or 8) | u8 reserved | u32 dim0 | u32 dim1
//   | u64 count | f64 tag | count * dim0 * dim1 (re, im) pairs
// Datasets: dim0 = N_tx, dim1 = N_rx, each record is vec(H); tag = 0.
// Pilots: dim0 = n_p, dim1 = N_tx, each record is P column-major; tag = rho.
//
// GMM ("FDDGMM1" + pad byte): u32 K_tx, K_rx, N_tx, N_rx | f64 weights[K]
//   | packed lower triangles (column-major, i >= j) of every C_tx, then every C_rx.

#pragma once

#include "fddpilot/channel_model.hpp"
#include "fddpilot/gmm.hpp"
#include "fddpilot/harness.hpp"
#include "fddpilot/pilot_design.hpp"
#include "fddpilot/types.hpp"

#include <json.hpp>

#include <array>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fddpilot
{

namespace io_detail
{

template <typename T>
void put(std::ostream &os, T value)
{
    std::array<unsigned char, sizeof(T)> bytes{};
    std::uint64_t bits = 0;
    if constexpr (std::is_floating_point_v<T>)
    {
        static_assert(sizeof(T) == 8 || sizeof(T) == 4);
        if constexpr (sizeof(T) == 8)
        {
            std::memcpy(&bits, &value, 8);
        }
        else
        {
            std::uint32_t b32;
            std::memcpy(&b32, &value, 4);
            bits = b32;
        }
    }
    else
    {
        bits = static_cast<std::uint64_t>(value);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i)
        bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char *>(bytes.data()), sizeof(T));
}

template <typename T>
T get(std::istream &is)
{
    std::array<unsigned char, sizeof(T)> bytes{};
    is.read(reinterpret_cast<char *>(bytes.data()), sizeof(T));
    if (!is)
        throw std::runtime_error("unexpected end of file");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    T value;
    if constexpr (std::is_floating_point_v<T>)
    {
        if constexpr (sizeof(T) == 8)
        {
            std::memcpy(&value, &bits, 8);
        }
        else
        {
            const auto b32 = static_cast<std::uint32_t>(bits);
            std::memcpy(&value, &b32, 4);
        }
    }
    else
    {
        value = static_cast<T>(bits);
    }
    return value;
}

inline std::ofstream open_out(const std::string &path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot open " + path + " for writing");
    return os;
}

inline std::ifstream open_in(const std::string &path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open " + path);
    return is;
}

struct ContainerHeader
{
    std::uint32_t dim0 = 0;
    std::uint32_t dim1 = 0;
    std::uint64_t count = 0;
    double tag = 0.0;
    int bytes_per_real = 8;
};

inline void write_container(std::ostream &os, const char (&magic)[7], const ContainerHeader &h,
                            const std::vector<const cplx *> &records)
{
    os.write(magic, 6);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(h.bytes_per_real));
    put<std::uint8_t>(os, 0);
    put<std::uint32_t>(os, h.dim0);
    put<std::uint32_t>(os, h.dim1);
    put<std::uint64_t>(os, h.count);
    put<double>(os, h.tag);
    const std::size_t n = static_cast<std::size_t>(h.dim0) * h.dim1;
    for (const cplx *rec : records)
        for (std::size_t i = 0; i < n; ++i)
        {
            if (h.bytes_per_real == 4)
            {
                put<float>(os, static_cast<float>(rec[i].real()));
                put<float>(os, static_cast<float>(rec[i].imag()));
            }
            else
            {
                put<double>(os, rec[i].real());
                put<double>(os, rec[i].imag());
            }
        }
    if (!os)
        throw std::runtime_error("write failed");
}

inline ContainerHeader read_container(std::istream &is, const char (&magic)[7], std::vector<cplx> &data)
{
    char m[6];
    is.read(m, 6);
    if (!is || std::memcmp(m, magic, 6) != 0)
        throw std::runtime_error(std::string("bad magic, expected ") + magic);
    ContainerHeader h;
    h.bytes_per_real = get<std::uint8_t>(is);
    get<std::uint8_t>(is);
    if (h.bytes_per_real != 4 && h.bytes_per_real != 8)
        throw std::runtime_error("unsupported bytes per real");
    h.dim0 = get<std::uint32_t>(is);
    h.dim1 = get<std::uint32_t>(is);
    h.count = get<std::uint64_t>(is);
    h.tag = get<double>(is);
    const std::size_t n = static_cast<std::size_t>(h.dim0) * h.dim1 * h.count;
    data.resize(n);
    for (std::size_t i = 0; i < n; ++i)
    {
        if (h.bytes_per_real == 4)
        {
            const float re = get<float>(is);
            const float im = get<float>(is);
            data[i] = cplx(re, im);
        }
        else
        {
            const double re = get<double>(is);
            const double im = get<double>(is);
            data[i] = cplx(re, im);
        }
    }
    return h;
}

inline constexpr char kDatasetMagic[7] = "FDDPL1";
inline constexpr char kPilotMagic[7] = "FDDPM1";
inline constexpr char kGmmMagic[8] = "FDDGMM1";

} // namespace io_detail

inline void write_dataset(const std::string &path, const Dataset &ds, int bytes_per_real = 8)
{
    auto os = io_detail::open_out(path);
    std::vector<const cplx *> recs;
    for (Index m = 0; m < ds.samples.cols(); ++m)
        recs.push_back(ds.samples.col(m).data());
    io_detail::write_container(os, io_detail::kDatasetMagic,
                               {static_cast<std::uint32_t>(ds.n_tx), static_cast<std::uint32_t>(ds.n_rx),
                                static_cast<std::uint64_t>(ds.samples.cols()), 0.0, bytes_per_real},
                               recs);
}

/// Samples only; the generating angles are not part of the container.
inline Dataset read_dataset(const std::string &path)
{
    auto is = io_detail::open_in(path);
    std::vector<cplx> data;
    const auto h = io_detail::read_container(is, io_detail::kDatasetMagic, data);
    Dataset ds;
    ds.n_tx = static_cast<int>(h.dim0);
    ds.n_rx = static_cast<int>(h.dim1);
    ds.samples = Eigen::Map<const CMatrix>(data.data(), static_cast<Index>(h.dim0 * h.dim1), static_cast<Index>(h.count));
    return ds;
}

inline void write_pilots(const std::string &path, const std::vector<PilotMatrix> &pilots)
{
    if (pilots.empty())
        throw std::invalid_argument("write_pilots: nothing to write");
    const auto &first = pilots.front();
    std::vector<const cplx *> recs;
    for (const auto &p : pilots)
    {
        if (p.p.rows() != first.p.rows() || p.p.cols() != first.p.cols() || p.rho != first.rho)
            throw std::invalid_argument("write_pilots: pilots must share shape and rho");
        recs.push_back(p.p.data());
    }
    auto os = io_detail::open_out(path);
    io_detail::write_container(os, io_detail::kPilotMagic,
                               {static_cast<std::uint32_t>(first.n_pilots()), static_cast<std::uint32_t>(first.n_tx()),
                                static_cast<std::uint64_t>(pilots.size()), first.rho, 8},
                               recs);
}

inline std::vector<PilotMatrix> read_pilots(const std::string &path)
{
    auto is = io_detail::open_in(path);
    std::vector<cplx> data;
    const auto h = io_detail::read_container(is, io_detail::kPilotMagic, data);
    std::vector<PilotMatrix> out;
    const std::size_t n = static_cast<std::size_t>(h.dim0) * h.dim1;
    for (std::uint64_t k = 0; k < h.count; ++k)
        out.push_back(PilotMatrix{Eigen::Map<const CMatrix>(data.data() + k * n, h.dim0, h.dim1), h.tag});
    return out;
}

inline void write_gmm(const std::string &path, const GmmModel &model)
{
    auto os = io_detail::open_out(path);
    os.write(io_detail::kGmmMagic, 7);
    io_detail::put<std::uint8_t>(os, 0);
    io_detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(model.k_tx()));
    io_detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(model.k_rx()));
    io_detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(model.n_tx()));
    io_detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(model.n_rx()));
    for (Index k = 0; k < model.num_components(); ++k)
        io_detail::put<double>(os, model.weight(k));
    auto packed = [&](const CMatrix &c) {
        for (Index j = 0; j < c.cols(); ++j)
            for (Index i = j; i < c.rows(); ++i)
            {
                io_detail::put<double>(os, c(i, j).real());
                io_detail::put<double>(os, c(i, j).imag());
            }
    };
    for (const auto &c : model.tx_covariances())
        packed(c);
    for (const auto &c : model.rx_covariances())
        packed(c);
    if (!os)
        throw std::runtime_error("write_gmm: write failed");
}

/// Covariances are rebuilt as Hermitian matrices from their lower triangles.
inline GmmModel read_gmm(const std::string &path)
{
    auto is = io_detail::open_in(path);
    char m[8];
    is.read(m, 8);
    if (!is || std::memcmp(m, io_detail::kGmmMagic, 7) != 0)
        throw std::runtime_error("read_gmm: bad magic");
    const auto k_tx = io_detail::get<std::uint32_t>(is);
    const auto k_rx = io_detail::get<std::uint32_t>(is);
    const auto n_tx = io_detail::get<std::uint32_t>(is);
    const auto n_rx = io_detail::get<std::uint32_t>(is);
    if (k_tx == 0 || k_rx == 0 || n_tx == 0 || n_rx == 0)
        throw std::runtime_error("read_gmm: zero dimension");
    RVector w(static_cast<Index>(k_tx) * k_rx);
    for (Index k = 0; k < w.size(); ++k)
        w(k) = io_detail::get<double>(is);
    auto unpack = [&](Index n) {
        CMatrix c(n, n);
        for (Index j = 0; j < n; ++j)
            for (Index i = j; i < n; ++i)
            {
                const double re = io_detail::get<double>(is);
                const double im = io_detail::get<double>(is);
                c(i, j) = cplx(re, im);
                c(j, i) = std::conj(c(i, j));
            }
        return c;
    };
    std::vector<CMatrix> tx, rx;
    for (std::uint32_t a = 0; a < k_tx; ++a)
        tx.push_back(unpack(n_tx));
    for (std::uint32_t b = 0; b < k_rx; ++b)
        rx.push_back(unpack(n_rx));
    return GmmModel(w, std::move(tx), std::move(rx));
}

/// Fit metadata written next to a model file.
inline nlohmann::json gmm_sidecar(const GmmModel &model, const ScenarioConfig &scenario, const EmOptions &em,
                                  Index n_train, const KroneckerFitReport &report)
{
    auto vec = [](const RVector &v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    nlohmann::json j;
    j["k_tx"] = model.k_tx();
    j["k_rx"] = model.k_rx();
    j["n_tx"] = model.n_tx();
    j["n_rx"] = model.n_rx();
    j["seed"] = scenario.seed;
    j["n_train"] = n_train;
    j["scenario"] = {{"spread_tx_deg", scenario.spread_tx_deg}, {"spread_rx_deg", scenario.spread_rx_deg},
                     {"n_clusters", scenario.n_clusters}, {"quad_points", scenario.quad_points}};
    j["em"] = {{"max_iters", em.max_iters}, {"tol", em.tol}, {"reg_scale", em.reg_scale}};
    j["weights_tx"] = vec(model.side_weights_tx());
    j["weights_rx"] = vec(model.side_weights_rx());
    j["loglik_tx"] = report.tx.loglik;
    j["loglik_rx"] = report.rx.loglik;
    j["iterations_tx"] = report.tx.iterations;
    j["iterations_rx"] = report.rx.iterations;
    j["converged_tx"] = report.tx.converged;
    j["converged_rx"] = report.rx.converged;
    j["warnings"] = report.tx.warnings;
    for (const auto &w : report.rx.warnings)
        j["warnings"].push_back(w);
    return j;
}

inline void write_json(const std::string &path, const nlohmann::json &j)
{
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("cannot open " + path + " for writing");
    os << j.dump(2) << "\n";
}

/// One sample per row: re_0, im_0, re_1, im_1, ... of vec(H).
inline void write_dataset_csv(std::ostream &os, const Dataset &ds)
{
    os << std::setprecision(17);
    for (Index m = 0; m < ds.samples.cols(); ++m)
    {
        for (Index i = 0; i < ds.samples.rows(); ++i)
            os << (i ? "," : "") << ds.samples(i, m).real() << ',' << ds.samples(i, m).imag();
        os << "\n";
    }
}

/// One pilot row per line, prefixed by the pilot index: k, re, im, re, im, ...
inline void write_pilots_csv(std::ostream &os, const std::vector<PilotMatrix> &pilots)
{
    os << std::setprecision(17);
    for (std::size_t k = 0; k < pilots.size(); ++k)
        for (Index r = 0; r < pilots[k].p.rows(); ++r)
        {
            os << k;
            for (Index c = 0; c < pilots[k].p.cols(); ++c)
                os << ',' << pilots[k].p(r, c).real() << ',' << pilots[k].p(r, c).imag();
            os << "\n";
        }
}

// ---------------------------------------------------------------------------
// Configuration

using ConfigMap = std::map<std::string, std::string>;

inline std::string trim(const std::string &s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Flat "key = value" lines; '#' starts a comment; quotes around values are dropped.
inline ConfigMap parse_config(std::istream &is)
{
    ConfigMap out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line))
    {
        ++lineno;
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i)
        {
            if (line[i] == '"')
                quoted = !quoted;
            else if (line[i] == '#' && !quoted)
            {
                line.resize(i);
                break;
            }
        }
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        if (key.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
        out[key] = value;
    }
    return out;
}

inline ConfigMap parse_config_file(const std::string &path)
{
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("cannot open config " + path);
    return parse_config(is);
}

/// Comma-separated items, optionally wrapped in [ ]; item quotes are dropped.
inline std::vector<std::string> split_list(std::string s)
{
    s = trim(s);
    if (s.size() >= 2 && s.front() == '[' && s.back() == ']')
        s = s.substr(1, s.size() - 2);
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
    {
        item = trim(item);
        if (item.size() >= 2 && item.front() == '"' && item.back() == '"')
            item = item.substr(1, item.size() - 2);
        if (!item.empty())
            out.push_back(item);
    }
    return out;
}

inline bool parse_bool(const std::string &s)
{
    if (s == "true" || s == "1" || s == "yes")
        return true;
    if (s == "false" || s == "0" || s == "no")
        return false;
    throw std::invalid_argument("expected a boolean, got " + s);
}

inline std::vector<std::string> config_keys()
{
    return {"n_tx", "n_rx", "n_pilots", "n_users", "snr_db", "rho", "n_blocks", "seed", "spread_tx_deg",
            "spread_rx_deg", "quad_points", "n_clusters", "mode", "sweep", "sweep_values", "schemes", "n_train",
            "n_eval", "n_constellations", "k_tx", "k_rx", "em_max_iters", "em_tol", "em_reg_scale", "opt_init",
            "opt_l_max", "opt_epsilon", "opt_objective", "dft_oversampling", "opt_random_dft_columns",
            "opt_init_seed", "omp_oversampling", "bootstrap_resamples", "output"};
}

/// Applies config entries to spec; unknown keys throw.
inline void apply_config(const ConfigMap &cfg, ExperimentSpec &spec)
{
    for (const auto &[key, raw] : cfg)
    {
        const std::string v = trim(raw);
        try
        {
            auto &sc = spec.scenario;
            if (key == "n_tx") sc.n_tx = std::stoi(v);
            else if (key == "n_rx") sc.n_rx = std::stoi(v);
            else if (key == "n_pilots") sc.n_pilots = std::stoi(v);
            else if (key == "n_users") sc.n_users = std::stoi(v);
            else if (key == "snr_db") sc.snr_db = std::stod(v);
            else if (key == "rho") sc.rho = std::stod(v);
            else if (key == "n_blocks") sc.n_blocks = std::stoi(v);
            else if (key == "seed") sc.seed = std::stoull(v);
            else if (key == "spread_tx_deg") sc.spread_tx_deg = std::stod(v);
            else if (key == "spread_rx_deg") sc.spread_rx_deg = std::stod(v);
            else if (key == "quad_points") sc.quad_points = std::stoi(v);
            else if (key == "n_clusters") sc.n_clusters = std::stoi(v);
            else if (key == "mode") spec.mode = parse_mode(v);
            else if (key == "sweep") spec.sweep = parse_sweep(v);
            else if (key == "sweep_values")
            {
                spec.sweep_values.clear();
                for (const auto &item : split_list(v))
                    spec.sweep_values.push_back(std::stod(item));
            }
            else if (key == "schemes")
            {
                spec.schemes.clear();
                for (const auto &item : split_list(v))
                    spec.schemes.push_back(parse_scheme(item));
            }
            else if (key == "n_train") spec.n_train = std::stol(v);
            else if (key == "n_eval") spec.n_eval = std::stol(v);
            else if (key == "n_constellations") spec.n_constellations = std::stoi(v);
            else if (key == "k_tx") spec.k_tx = std::stoi(v);
            else if (key == "k_rx") spec.k_rx = std::stoi(v);
            else if (key == "em_max_iters") spec.em.max_iters = std::stoi(v);
            else if (key == "em_tol") spec.em.tol = std::stod(v);
            else if (key == "em_reg_scale") spec.em.reg_scale = std::stod(v);
            else if (key == "opt_init")
            {
                if (v == "dft") spec.optimizer.init_kind = InitKind::dft;
                else if (v == "random") spec.optimizer.init_kind = InitKind::random;
                else throw std::invalid_argument("expected dft or random");
            }
            else if (key == "opt_l_max") spec.optimizer.l_max = std::stoi(v);
            else if (key == "opt_epsilon") spec.optimizer.epsilon = std::stod(v);
            else if (key == "opt_objective")
            {
                if (v == "full_cmi") spec.optimizer.objective_kind = ObjectiveKind::full_cmi;
                else if (v == "lower_bound") spec.optimizer.objective_kind = ObjectiveKind::lower_bound;
                else throw std::invalid_argument("expected full_cmi or lower_bound");
            }
            else if (key == "dft_oversampling") spec.optimizer.dft_oversampling = std::stoi(v);
            else if (key == "opt_random_dft_columns") spec.optimizer.random_dft_columns = parse_bool(v);
            else if (key == "opt_init_seed") spec.optimizer.init_seed = std::stoull(v);
            else if (key == "omp_oversampling") spec.omp_oversampling = std::stoi(v);
            else if (key == "bootstrap_resamples") spec.bootstrap_resamples = std::stoi(v);
            else if (key == "output") spec.output_path = v;
            else throw std::invalid_argument("unknown key");
        }
        catch (const std::invalid_argument &e)
        {
            throw std::invalid_argument("config key '" + key + "' = '" + v + "': " + e.what());
        }
        catch (const std::out_of_range &)
        {
            throw std::invalid_argument("config key '" + key + "' = '" + v + "': value out of range");
        }
    }
}

} // namespace fddpilot
