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

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace fddpilot
{

namespace detail
{
inline std::atomic<int> &worker_override()
{
    static std::atomic<int> value{0};
    return value;
}
} // namespace detail

/// Worker count: explicit override, else FDDPL_THREADS, else hardware concurrency.
inline int worker_count()
{
    if (int o = detail::worker_override().load(); o > 0)
        return o;
    if (const char *env = std::getenv("FDDPL_THREADS"))
    {
        try
        {
            int v = std::stoi(env);
            if (v > 0)
                return v;
        }
        catch (const std::exception &)
        {
        }
    }
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

/// Overrides the worker count for the current process; 0 restores the default.
inline void set_worker_count(int n)
{
    detail::worker_override().store(std::max(0, n));
}

/// Calls fn(i) for i in [0, n). Every index writes only its own output slot,
/// so results do not depend on the number of workers or on scheduling.
/// The first exception thrown by any worker is rethrown on the caller.
template <typename Fn>
void parallel_for(std::size_t n, Fn &&fn)
{
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(worker_count()), n);
    if (workers <= 1)
    {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&]() {
        for (;;)
        {
            const std::size_t i = next.fetch_add(1);
            if (i >= n)
                return;
            try
            {
                fn(i);
            }
            catch (...)
            {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error)
                    error = std::current_exception();
                next.store(n);
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w)
        pool.emplace_back(body);
    body();
    for (auto &t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

} // namespace fddpilot
