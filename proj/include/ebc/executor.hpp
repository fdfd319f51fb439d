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

namespace ebc::exec {

/// Direct cross-correlation with zero padding, d in {1,2,3}.
/// x: [N, Cin, S...], w: [Cout, Cin, K...], bias: [Cout] or null.
/// Accumulates in double for a tight reference.
Tensor conv_nd_f32(const Tensor& x, const Tensor& w, const Tensor* bias,
                   std::span<const int64_t> stride, std::span<const int64_t> pad);

/// Integer convolution: exact int32 accumulation of xq*wq plus bias_i32
/// (quantized at scale sx*sw), then scaled by sx*sw into fp32.
/// Throws AccumulatorOverflow instead of wrapping.
Tensor conv_nd_i8(const Tensor& xq, const Tensor& wq, const Tensor* bias_i32,
                  std::span<const int64_t> stride, std::span<const int64_t> pad, double sx,
                  double sw);

Tensor linear_f32(const Tensor& x, const Tensor& w, const Tensor* bias);
Tensor linear_i8(const Tensor& xq, const Tensor& wq, const Tensor* bias_i32, double sx, double sw);

/// Inference-mode batchnorm: y = gamma*(x-mean)/sqrt(var+eps) + beta.
Tensor batchnorm_f32(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& mean,
                     const Tensor& var, double eps);

/// Kernels with no weights: ReLU, LeakyReLU, Sigmoid, MaxPool,
/// UpsampleNearest, Concat, Add, Linear (fp32, weights passed via node).
Tensor apply_simple(OpKind kind, const std::vector<const Tensor*>& inputs,
                    const std::map<std::string, Attr>& attrs);

/// Executes the graph in topo order; deterministic, bit-identical across
/// repeated runs. Any positive batch extent is accepted where the graph
/// declares the symbolic batch.
std::map<std::string, Tensor> run(const Graph& g, const std::map<std::string, Tensor>& inputs);

/// Like run, but returns every node's output (calibration / debugging hook).
std::map<std::string, Tensor> run_all(const Graph& g, const std::map<std::string, Tensor>& inputs);

struct TilePlan {
    enum class Blend { Mean };
    std::vector<std::vector<int64_t>> starts;  // spatial start per tile
    std::vector<int64_t> window;               // clamped spatial window
    Blend blend = Blend::Mean;
};

/// Sliding-window plan. Per axis: stride = max(1, floor(window*(1-overlap))),
/// starts at multiples of the stride, final start flush with the boundary.
TilePlan plan_tiles(std::span<const int64_t> image_spatial, std::span<const int64_t> window,
                    double overlap);

/// Runs g over every tile and mean-blends overlaps. Requires the graph to
/// map a tile to an output tile of identical spatial extents.
Tensor run_tiled(const Graph& g, const Tensor& image, std::span<const int64_t> window,
                 double overlap);

}  // namespace ebc::exec
