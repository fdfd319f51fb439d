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
#include "ebc/models.hpp"

#include <cmath>

#include "ebc/rng.hpp"

namespace ebc::models {

namespace {

Tensor he_init(std::vector<int64_t> shape, Rng& rng) {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    int64_t fan_in = n / shape[0];
    double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<float> data(static_cast<size_t>(n));
    for (auto& v : data) v = static_cast<float>(rng.normal(0.0, stddev));
    return Tensor::from_f32(std::move(shape), std::move(data));
}

Node conv(const std::string& id, const std::string& input, int64_t in_ch, int64_t out_ch,
          int64_t dims, int64_t k, Rng& rng) {
    Node n;
    n.id = id;
    n.kind = OpKind::Conv;
    n.inputs = {input};
    std::vector<int64_t> wshape = {out_ch, in_ch};
    for (int64_t a = 0; a < dims; ++a) wshape.push_back(k);
    n.weights["w"] = he_init(wshape, rng);
    n.weights["b"] = Tensor::zeros({out_ch}, DType::F32);
    n.attrs["kernel"] = std::vector<int64_t>(static_cast<size_t>(dims), k);
    n.attrs["stride"] = std::vector<int64_t>(static_cast<size_t>(dims), 1);
    n.attrs["pad"] = std::vector<int64_t>(static_cast<size_t>(dims), k / 2);
    return n;
}

Node activation(const std::string& id, const std::string& input, bool leaky) {
    Node n;
    n.id = id;
    n.kind = leaky ? OpKind::LeakyReLU : OpKind::ReLU;
    n.inputs = {input};
    if (leaky) n.attrs["slope"] = 0.1;
    return n;
}

Node batchnorm_identityish(const std::string& id, const std::string& input, int64_t channels,
                           Rng& rng) {
    Node n;
    n.id = id;
    n.kind = OpKind::BatchNorm;
    n.inputs = {input};
    std::vector<float> gamma(static_cast<size_t>(channels)), beta(static_cast<size_t>(channels)),
        mean(static_cast<size_t>(channels)), var(static_cast<size_t>(channels));
    for (int64_t c = 0; c < channels; ++c) {
        gamma[static_cast<size_t>(c)] = static_cast<float>(rng.uniform(0.8, 1.2));
        beta[static_cast<size_t>(c)] = static_cast<float>(rng.uniform(-0.1, 0.1));
        mean[static_cast<size_t>(c)] = static_cast<float>(rng.uniform(-0.1, 0.1));
        var[static_cast<size_t>(c)] = static_cast<float>(rng.uniform(0.8, 1.2));
    }
    n.weights["gamma"] = Tensor::from_f32({channels}, gamma);
    n.weights["beta"] = Tensor::from_f32({channels}, beta);
    n.weights["mean"] = Tensor::from_f32({channels}, mean);
    n.weights["var"] = Tensor::from_f32({channels}, var);
    n.attrs["epsilon"] = 1e-5;
    return n;
}

}  // namespace

Graph make_unet2(const UnetConfig& cfg) {
    require(cfg.dims == 2 || cfg.dims == 3, Err::Precondition, "dims must be 2 or 3");
    require(static_cast<int64_t>(cfg.spatial.size()) == cfg.dims, Err::Precondition,
            "spatial rank must match dims");
    for (int64_t e : cfg.spatial)
        require(e >= 4 && e % 2 == 0, Err::Precondition, "spatial extents must be even and >= 4");

    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    int64_t c = cfg.base_channels;
    Graph g;
    std::vector<int64_t> in_shape = {kSymbolicBatch, cfg.in_channels};
    in_shape.insert(in_shape.end(), cfg.spatial.begin(), cfg.spatial.end());
    g.inputs = {{"x", in_shape}};

    auto push = [&](Node n) -> std::string {
        g.nodes.push_back(std::move(n));
        return g.nodes.back().id;
    };

    std::string enc = push(conv("enc1", "x", cfg.in_channels, c, cfg.dims, 3, rng));
    if (cfg.with_batchnorm) enc = push(batchnorm_identityish("enc1_bn", enc, c, rng));
    enc = push(activation("enc1_act", enc, cfg.leaky));

    Node pool;
    pool.id = "pool1";
    pool.kind = OpKind::MaxPool;
    pool.inputs = {enc};
    pool.attrs["window"] = std::vector<int64_t>(static_cast<size_t>(cfg.dims), 2);
    pool.attrs["stride"] = std::vector<int64_t>(static_cast<size_t>(cfg.dims), 2);
    std::string pooled = push(std::move(pool));

    std::string mid = push(conv("mid1", pooled, c, 2 * c, cfg.dims, 3, rng));
    if (cfg.with_batchnorm) mid = push(batchnorm_identityish("mid1_bn", mid, 2 * c, rng));
    mid = push(activation("mid1_act", mid, cfg.leaky));

    Node up;
    up.id = "up1";
    up.kind = OpKind::UpsampleNearest;
    up.inputs = {mid};
    up.attrs["factor"] = std::vector<int64_t>{2};
    std::string upsampled = push(std::move(up));

    Node cat;
    cat.id = "skip1";
    cat.kind = OpKind::Concat;
    cat.inputs = {enc, upsampled};
    cat.attrs["axis"] = std::vector<int64_t>{1};
    std::string skipped = push(std::move(cat));

    std::string dec = push(conv("dec1", skipped, 3 * c, c, cfg.dims, 3, rng));
    dec = push(activation("dec1_act", dec, cfg.leaky));

    // Zero-initialized head: predictions start at 0, which keeps the first
    // training steps bounded regardless of width.
    Node head = conv("out", dec, c, cfg.out_channels, cfg.dims, 1, rng);
    if (cfg.zero_head) head.weights["w"] = Tensor::zeros(head.weight("w").shape(), DType::F32);
    std::string out = push(std::move(head));
    if (cfg.final_sigmoid) {
        Node s;
        s.id = "out_act";
        s.kind = OpKind::Sigmoid;
        s.inputs = {out};
        out = push(std::move(s));
    }
    g.outputs = {out};
    return g;
}

Graph make_conv_chain(int64_t dims, int64_t in_channels, int64_t hidden, int64_t out_channels,
                      std::vector<int64_t> spatial, uint64_t seed) {
    Rng rng(seed ^ 0xc2b2ae3d27d4eb4full);
    Graph g;
    std::vector<int64_t> in_shape = {kSymbolicBatch, in_channels};
    in_shape.insert(in_shape.end(), spatial.begin(), spatial.end());
    g.inputs = {{"x", in_shape}};
    g.nodes.push_back(conv("c1", "x", in_channels, hidden, dims, 3, rng));
    g.nodes.push_back(activation("a1", "c1", false));
    g.nodes.push_back(conv("c2", "a1", hidden, out_channels, dims, 3, rng));
    g.outputs = {"c2"};
    return g;
}

}  // namespace ebc::models
