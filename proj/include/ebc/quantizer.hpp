/* Copyright 2026 The ebc Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <map>
#include <string>
#include <vector>

#include "ebc/graph.hpp"
#include "ebc/tensor.hpp"

namespace ebc::quant {

/// Per-tensor symmetric int8: one positive scale, zero point pinned at 0,
/// integer range [-127, 127].
struct QuantParams {
    double scale = 1.0;
    int zero_point = 0;
    int qmin = -127;
    int qmax = 127;
    int bits = 8;
    bool degenerate = false;  // all-zero site, scale fell back to 1.0
};

enum class ObserverTag { MinMax, EMAMinMax, Quantile, EMAQuantile };

struct ObserverKind {
    ObserverTag tag = ObserverTag::EMAQuantile;
    double quantile = 0.9999;    // quantile kinds
    double ema_momentum = 0.9;   // EMA kinds
};

struct ObserverState {
    ObserverKind kind;
    double running_max_abs = 0.0;
    int64_t batches_seen = 0;
};

/// Folds one batch of values into the running statistic. MinMax kinds track
/// max|t|; quantile kinds track the interpolated q-quantile of |t|; EMA
/// kinds blend batches as beta*running + (1-beta)*batch after the first.
void observe(ObserverState& state, const Tensor& t);

/// scale = running_max_abs / 127. An all-zero site is flagged degenerate
/// and falls back to scale 1.0 rather than failing.
QuantParams finalize_params(const ObserverState& state);

/// q = clamp(round_half_even(x / scale), -127, 127).
Tensor quantize_tensor(const Tensor& t, const QuantParams& p);

/// x_hat = q * scale.
Tensor dequantize_tensor(const Tensor& q, const QuantParams& p);

/// Finalized params per tensor site. Activation sites are keyed
/// "<node>.in" (the tensor feeding each Conv/Linear), weight sites
/// "<node>.w" (always exact MinMax).
using SiteParams = std::map<std::string, QuantParams>;

/// Runs fp32 inference over the calibration samples, one observer per
/// activation site, updated in sample order. Expects batchnorm already
/// folded and a single graph input.
SiteParams calibrate(const Graph& g, const std::vector<Tensor>& samples, ObserverKind kind);

/// Rewrites every Conv/Linear as Quantize(input) -> integer kernel with
/// int8 weights and int32 bias at scale sx*sw -> fp32 output. Everything
/// else stays fp32.
Graph convert_int8(const Graph& g, const SiteParams& act_params);

}  // namespace ebc::quant
