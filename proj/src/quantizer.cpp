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
#include "ebc/quantizer.hpp"

#include <algorithm>
#include <cmath>

#include "ebc/executor.hpp"

namespace ebc::quant {

namespace {

double batch_statistic(const ObserverKind& kind, const Tensor& t) {
    auto xd = t.f32();
    if (kind.tag == ObserverTag::MinMax || kind.tag == ObserverTag::EMAMinMax) {
        double m = 0.0;
        for (float v : xd) m = std::max(m, std::abs(static_cast<double>(v)));
        return m;
    }
    // Interpolated order statistic of |t| at quantile q.
    std::vector<double> mag(xd.size());
    for (size_t i = 0; i < xd.size(); ++i) mag[i] = std::abs(static_cast<double>(xd[i]));
    std::sort(mag.begin(), mag.end());
    double pos = kind.quantile * static_cast<double>(mag.size() - 1);
    size_t lo = static_cast<size_t>(std::floor(pos));
    double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= mag.size()) return mag.back();
    return mag[lo] + frac * (mag[lo + 1] - mag[lo]);
}

bool is_ema(ObserverTag tag) {
    return tag == ObserverTag::EMAMinMax || tag == ObserverTag::EMAQuantile;
}

}  // namespace

void observe(ObserverState& state, const Tensor& t) {
    require(t.numel() > 0, Err::EmptyTensor, "cannot observe an empty tensor");
    require(state.kind.quantile > 0.0 && state.kind.quantile <= 1.0, Err::Precondition,
            "quantile must be in (0, 1]");
    require(state.kind.ema_momentum >= 0.0 && state.kind.ema_momentum < 1.0, Err::Precondition,
            "ema momentum must be in [0, 1)");
    double m = batch_statistic(state.kind, t);
    if (is_ema(state.kind.tag)) {
        state.running_max_abs = state.batches_seen == 0
                                    ? m
                                    : state.kind.ema_momentum * state.running_max_abs +
                                          (1.0 - state.kind.ema_momentum) * m;
    } else {
        state.running_max_abs = std::max(state.running_max_abs, m);
    }
    ++state.batches_seen;
}

QuantParams finalize_params(const ObserverState& state) {
    require(state.batches_seen >= 1, Err::Precondition, "observer saw no batches");
    QuantParams p;
    if (state.running_max_abs <= 0.0) {
        p.scale = 1.0;
        p.degenerate = true;
        return p;
    }
    p.scale = state.running_max_abs / 127.0;
    return p;
}

Tensor quantize_tensor(const Tensor& t, const QuantParams& p) {
    require(p.scale > 0.0, Err::Precondition, "scale must be positive");
    Tensor out = Tensor::zeros(t.shape(), DType::I8);
    auto od = out.i8();
    auto xd = t.f32();
    for (size_t i = 0; i < xd.size(); ++i) {
        double q = round_half_even(static_cast<double>(xd[i]) / p.scale);
        od[i] = static_cast<int8_t>(std::clamp(q, static_cast<double>(p.qmin),
                                               static_cast<double>(p.qmax)));
    }
    return out;
}

Tensor dequantize_tensor(const Tensor& q, const QuantParams& p) {
    require(p.scale > 0.0, Err::Precondition, "scale must be positive");
    Tensor out = Tensor::zeros(q.shape(), DType::F32);
    auto od = out.f32();
    auto qd = q.i8();
    for (size_t i = 0; i < qd.size(); ++i)
        od[i] = static_cast<float>(static_cast<double>(qd[i]) * p.scale);
    return out;
}

namespace {

bool quantizable(OpKind kind) { return kind == OpKind::Conv || kind == OpKind::Linear; }

QuantParams weight_params(const Tensor& w) {
    ObserverState s;
    s.kind.tag = ObserverTag::MinMax;
    observe(s, w);
    return finalize_params(s);
}

}  // namespace

SiteParams calibrate(const Graph& g, const std::vector<Tensor>& samples, ObserverKind kind) {
    require(!samples.empty(), Err::Precondition, "calibration needs at least one sample");
    require(g.inputs.size() == 1, Err::Precondition, "calibration expects a single-input graph");
    for (const auto& n : g.nodes)
        require(n.kind != OpKind::BatchNorm, Err::Precondition,
                "fold batchnorm before calibration");

    std::map<std::string, ObserverState> observers;
    for (const auto& n : g.nodes)
        if (quantizable(n.kind)) observers[n.id + ".in"] = ObserverState{kind, 0.0, 0};

    for (const auto& sample : samples) {
        auto values = exec::run_all(g, {{g.inputs[0].name, sample}});
        for (const auto& n : g.nodes) {
            if (!quantizable(n.kind)) continue;
            observe(observers.at(n.id + ".in"), values.at(n.inputs[0]));
        }
    }

    SiteParams params;
    for (auto& [site, state] : observers) params[site] = finalize_params(state);
    for (const auto& n : g.nodes)
        if (quantizable(n.kind)) params[n.id + ".w"] = weight_params(n.weight("w"));
    return params;
}

Graph convert_int8(const Graph& g, const SiteParams& act_params) {
    for (const auto& n : g.nodes)
        require(n.kind != OpKind::BatchNorm, Err::Precondition,
                "fold batchnorm before conversion");

    Graph out;
    out.inputs = g.inputs;
    out.outputs = g.outputs;
    for (const auto& n : g.nodes) {
        if (!quantizable(n.kind) || n.weight("w").dtype() != DType::F32) {
            out.nodes.push_back(n);
            continue;
        }
        auto it = act_params.find(n.id + ".in");
        require(it != act_params.end(), Err::MissingParams,
                n.id + ": no activation params for site " + n.id + ".in");
        const QuantParams& px = it->second;
        QuantParams pw = weight_params(n.weight("w"));

        Node quantize;
        quantize.id = n.id + "__quant_in";
        quantize.kind = OpKind::Quantize;
        quantize.inputs = {n.inputs[0]};
        quantize.attrs["scale"] = px.scale;
        out.nodes.push_back(std::move(quantize));

        Node conv = n;
        conv.inputs = {n.id + "__quant_in"};
        conv.weights["w"] = quantize_tensor(n.weight("w"), pw);
        if (const Tensor* b = n.weight_if("b")) {
            // Bias lives in the accumulator domain at scale sx*sw.
            double bias_scale = px.scale * pw.scale;
            Tensor bq = Tensor::zeros(b->shape(), DType::I32);
            auto qd = bq.i32();
            auto bd = b->f32();
            for (size_t i = 0; i < bd.size(); ++i) {
                double v = round_half_even(static_cast<double>(bd[i]) / bias_scale);
                qd[i] = static_cast<int32_t>(std::clamp(v, -2147483648.0, 2147483647.0));
            }
            conv.weights["b"] = std::move(bq);
        }
        conv.attrs["x_scale"] = px.scale;
        conv.attrs["w_scale"] = pw.scale;
        out.nodes.push_back(std::move(conv));
    }
    return out;
}

}  // namespace ebc::quant
