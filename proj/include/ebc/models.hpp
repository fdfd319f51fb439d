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

#include "ebc/graph.hpp"

namespace ebc::models {

/// Two-level U-Net: conv/relu encoder, maxpool, bottleneck, nearest
/// upsample, skip concat, conv/relu decoder, 1x1 output conv. Spatial
/// extents must be even. Weights are He-initialized from the seed.
struct UnetConfig {
    int64_t dims = 3;  // 2 or 3
    int64_t in_channels = 1;
    int64_t out_channels = 1;
    int64_t base_channels = 4;
    std::vector<int64_t> spatial;  // declared input spatial extents
    bool final_sigmoid = false;
    bool with_batchnorm = false;
    bool leaky = true;      // LeakyReLU(0.1) activations; plain ReLU otherwise
    bool zero_head = true;  // zero-initialized output conv for stable first steps
    uint64_t seed = 0;
};

Graph make_unet2(const UnetConfig& cfg);

/// Conv -> ReLU -> Conv chain for small experiments.
Graph make_conv_chain(int64_t dims, int64_t in_channels, int64_t hidden, int64_t out_channels,
                      std::vector<int64_t> spatial, uint64_t seed);

}  // namespace ebc::models
