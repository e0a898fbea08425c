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

#include "fddpilot/types.hpp"
#include "fddpilot/parallel.hpp"
#include "fddpilot/pilot_matrix.hpp"
#include "fddpilot/channel_model.hpp"
#include "fddpilot/gmm.hpp"
#include "fddpilot/pilot_design.hpp"
#include "fddpilot/estimators.hpp"
#include "fddpilot/harness.hpp"
#include "fddpilot/io.hpp"
