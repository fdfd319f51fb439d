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

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ebc/graph.hpp"
#include "ebc/tensor.hpp"

namespace ebc::train {

enum class LossKind { MSE, BCE };

struct SGDConfig {
    double lr = 1e-3;
    double momentum = 0.9;
    int64_t epochs = 1000;
    int64_t batch_size = 4;
    uint64_t seed = 0;
};

/// Gradients per node id, per weight name.
using GradMap = std::map<std::string, std::map<std::string, Tensor>>;

struct ForwardBackward {
    double loss = 0.0;
    GradMap grads;
};

/// Loss plus analytic reverse-mode gradients for every Conv/Linear weight
/// and bias. The graph must be fp32; Quantize/Dequantize nodes are
/// UnsupportedForTraining. BatchNorm is treated as a frozen affine map.
ForwardBackward forward_backward(const Graph& g, const Tensor& x, const Tensor& target,
                                 LossKind loss);

/// v <- momentum*v + grad; w <- w - lr*v. Velocity map mirrors GradMap.
void sgd_step(Graph& g, const GradMap& grads, const SGDConfig& cfg, GradMap& velocity);

struct FinetuneResult {
    Graph graph;
    std::vector<double> epoch_loss;
};

/// Seeded-shuffle minibatch SGD over (input, target) pairs. Deterministic:
/// identical seed, config, and data give bit-identical weights.
FinetuneResult finetune(const Graph& g, const std::vector<std::pair<Tensor, Tensor>>& data,
                        LossKind loss, const SGDConfig& cfg);

/// Central-difference check over a random subsample of at most max_elems
/// weight elements. Relative error denominator max(|a|,|n|,1e-8); elements
/// whose perturbed passes land within 1e-6 of an activation kink are
/// excluded. Returns the max relative error.
double grad_check(const Graph& g, const Tensor& x, const Tensor& target, LossKind loss,
                  double eps, int64_t max_elems = 200, uint64_t seed = 0);

}  // namespace ebc::train
