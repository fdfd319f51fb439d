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
#include "ebc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "ebc/executor.hpp"
#include "ebc/rng.hpp"

namespace ebc::train {

namespace {

constexpr double kBceEps = 1e-7;
constexpr double kKinkEps = 1e-6;

void check_trainable(const Graph& g) {
    require(g.inputs.size() == 1 && g.outputs.size() == 1, Err::Precondition,
            "training expects a single-input single-output graph");
    for (const auto& n : g.nodes) {
        require(n.kind != OpKind::Quantize && n.kind != OpKind::Dequantize,
                Err::UnsupportedForTraining, n.id + ": quantized graphs are not trainable");
        if (n.kind == OpKind::Conv || n.kind == OpKind::Linear)
            require(n.weight("w").dtype() == DType::F32, Err::UnsupportedForTraining,
                    n.id + ": integer weights are not trainable");
    }
}

double loss_value(LossKind loss, std::span<const float> y, std::span<const float> t) {
    require(y.size() == t.size(), Err::ShapeMismatch, "loss shapes differ");
    double total = 0.0;
    double n = static_cast<double>(y.size());
    if (loss == LossKind::MSE) {
        for (size_t i = 0; i < y.size(); ++i) {
            double d = static_cast<double>(y[i]) - t[i];
            total += d * d;
        }
        return total / n;
    }
    for (size_t i = 0; i < y.size(); ++i) {
        double p = std::clamp(static_cast<double>(y[i]), kBceEps, 1.0 - kBceEps);
        total -= t[i] * std::log(p) + (1.0 - t[i]) * std::log(1.0 - p);
    }
    return total / n;
}

Tensor loss_grad(LossKind loss, const Tensor& y, const Tensor& t) {
    auto yd = y.f32();
    auto td = t.f32();
    Tensor g = Tensor::zeros(y.shape(), DType::F32);
    auto gd = g.f32();
    double n = static_cast<double>(yd.size());
    if (loss == LossKind::MSE) {
        for (size_t i = 0; i < yd.size(); ++i)
            gd[i] = static_cast<float>(2.0 * (static_cast<double>(yd[i]) - td[i]) / n);
    } else {
        for (size_t i = 0; i < yd.size(); ++i) {
            double p = std::clamp(static_cast<double>(yd[i]), kBceEps, 1.0 - kBceEps);
            gd[i] = static_cast<float>((-td[i] / p + (1.0 - td[i]) / (1.0 - p)) / n);
        }
    }
    return g;
}

struct NormalizedConv {
    int64_t batch, cin, cout;
    int64_t in[3], kernel[3], stride[3], pad[3], out[3];
};

NormalizedConv normalize_conv(const Node& n, const Tensor& x, const Tensor& gy) {
    const Tensor& w = n.weight("w");
    size_t d = static_cast<size_t>(w.rank() - 2);
    NormalizedConv c{};
    c.batch = x.shape()[0];
    c.cin = x.shape()[1];
    c.cout = w.shape()[0];
    for (int a = 0; a < 3; ++a) {
        c.in[a] = 1;
        c.kernel[a] = 1;
        c.stride[a] = 1;
        c.pad[a] = 0;
        c.out[a] = 1;
    }
    const auto& stride = n.has_attr("stride") ? n.ints("stride") : std::vector<int64_t>(d, 1);
    const auto& pad = n.has_attr("pad") ? n.ints("pad") : std::vector<int64_t>(d, 0);
    for (size_t a = 0; a < d; ++a) {
        size_t slot = 3 - d + a;
        c.in[slot] = x.shape()[2 + a];
        c.kernel[slot] = w.shape()[2 + a];
        c.stride[slot] = stride[a];
        c.pad[slot] = pad[a];
        c.out[slot] = gy.shape()[2 + a];
    }
    return c;
}

// dW, db, dx in one pass over the output rows, mirroring the forward loops.
void conv_backward(const Node& n, const Tensor& x, const Tensor& gy, Tensor& dw_out,
                   Tensor* db_out, Tensor& dx_out) {
    const Tensor& w = n.weight("w");
    NormalizedConv c = normalize_conv(n, x, gy);

    const float* xd = x.f32().data();
    const float* gd = gy.f32().data();
    const float* wd = w.f32().data();
    float* dxd = dx_out.f32().data();

    std::vector<double> dw(static_cast<size_t>(w.numel()), 0.0);
    std::vector<double> db(static_cast<size_t>(c.cout), 0.0);

    const int64_t x_plane = c.in[1] * c.in[2];
    const int64_t x_chan = c.in[0] * x_plane;
    const int64_t w_plane = c.kernel[1] * c.kernel[2];
    const int64_t w_chan = c.kernel[0] * w_plane;
    const int64_t row_elems = c.out[2];

    for (int64_t nb = 0; nb < c.batch; ++nb) {
        const float* xb = xd + nb * c.cin * x_chan;
        float* dxb = dxd + nb * c.cin * x_chan;
        for (int64_t oc = 0; oc < c.cout; ++oc) {
            const float* wb = wd + oc * c.cin * w_chan;
            double* dwb = dw.data() + oc * c.cin * w_chan;
            for (int64_t oz = 0; oz < c.out[0]; ++oz) {
                const int64_t z0 = oz * c.stride[0] - c.pad[0];
                for (int64_t oy = 0; oy < c.out[1]; ++oy) {
                    const int64_t y0 = oy * c.stride[1] - c.pad[1];
                    const float* gyrow =
                        gd + (((nb * c.cout + oc) * c.out[0] + oz) * c.out[1] + oy) * row_elems;
                    for (int64_t i = 0; i < row_elems; ++i) db[static_cast<size_t>(oc)] += gyrow[i];
                    for (int64_t ic = 0; ic < c.cin; ++ic) {
                        const float* xc = xb + ic * x_chan;
                        float* dxc = dxb + ic * x_chan;
                        const float* wc = wb + ic * w_chan;
                        double* dwc = dwb + ic * w_chan;
                        for (int64_t kz = 0; kz < c.kernel[0]; ++kz) {
                            int64_t iz = z0 + kz;
                            if (iz < 0 || iz >= c.in[0]) continue;
                            for (int64_t ky = 0; ky < c.kernel[1]; ++ky) {
                                int64_t iy = y0 + ky;
                                if (iy < 0 || iy >= c.in[1]) continue;
                                const float* xrow = xc + iz * x_plane + iy * c.in[2];
                                float* dxrow = dxc + iz * x_plane + iy * c.in[2];
                                for (int64_t kx = 0; kx < c.kernel[2]; ++kx) {
                                    const int64_t base = kx - c.pad[2];
                                    int64_t ox_lo = 0, ox_hi = row_elems;
                                    if (base < 0)
                                        ox_lo = (-base + c.stride[2] - 1) / c.stride[2];
                                    if (base + (row_elems - 1) * c.stride[2] >= c.in[2])
                                        ox_hi = (c.in[2] - base + c.stride[2] - 1) / c.stride[2];
                                    const double wv = wc[kz * w_plane + ky * c.kernel[2] + kx];
                                    double acc = 0.0;
                                    if (c.stride[2] == 1) {
                                        const float* xk = xrow + base;
                                        float* dxk = dxrow + base;
                                        for (int64_t ox = ox_lo; ox < ox_hi; ++ox) {
                                            acc += static_cast<double>(xk[ox]) * gyrow[ox];
                                            dxk[ox] += static_cast<float>(wv * gyrow[ox]);
                                        }
                                    } else {
                                        for (int64_t ox = ox_lo; ox < ox_hi; ++ox) {
                                            int64_t ix = ox * c.stride[2] + base;
                                            acc += static_cast<double>(xrow[ix]) * gyrow[ox];
                                            dxrow[ix] += static_cast<float>(wv * gyrow[ox]);
                                        }
                                    }
                                    dwc[kz * w_plane + ky * c.kernel[2] + kx] += acc;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    auto dwf = dw_out.f32();
    for (size_t i = 0; i < dw.size(); ++i) dwf[i] = static_cast<float>(dw[i]);
    if (db_out) {
        auto dbf = db_out->f32();
        for (size_t i = 0; i < db.size(); ++i) dbf[i] = static_cast<float>(db[i]);
    }
}

void linear_backward(const Node& n, const Tensor& x, const Tensor& gy, Tensor& dw_out,
                     Tensor* db_out, Tensor& dx_out) {
    const Tensor& w = n.weight("w");
    int64_t in_f = w.shape()[1], out_f = w.shape()[0];
    int64_t rows = x.numel() / in_f;
    const float* xd = x.f32().data();
    const float* gd = gy.f32().data();
    const float* wd = w.f32().data();
    float* dxd = dx_out.f32().data();

    std::vector<double> dw(static_cast<size_t>(w.numel()), 0.0);
    std::vector<double> db(static_cast<size_t>(out_f), 0.0);
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = xd + r * in_f;
        const float* gr = gd + r * out_f;
        float* dxr = dxd + r * in_f;
        for (int64_t o = 0; o < out_f; ++o) {
            double gv = gr[o];
            db[static_cast<size_t>(o)] += gv;
            const float* wr = wd + o * in_f;
            double* dwr = dw.data() + o * in_f;
            for (int64_t i = 0; i < in_f; ++i) {
                dwr[i] += gv * xr[i];
                dxr[i] += static_cast<float>(gv * wr[i]);
            }
        }
    }
    auto dwf = dw_out.f32();
    for (size_t i = 0; i < dw.size(); ++i) dwf[i] = static_cast<float>(dw[i]);
    if (db_out) {
        auto dbf = db_out->f32();
        for (size_t i = 0; i < db.size(); ++i) dbf[i] = static_cast<float>(db[i]);
    }
}

void maxpool_backward(const Node& n, const Tensor& x, const Tensor& gy, Tensor& dx) {
    const auto& window = n.ints("window");
    size_t d = window.size();
    std::vector<int64_t> stride = n.has_attr("stride") ? n.ints("stride") : window;
    std::vector<int64_t> pad(d, 0);
    if (n.has_attr("pad")) pad = n.ints("pad");

    int64_t in[3] = {1, 1, 1}, k[3] = {1, 1, 1}, s[3] = {1, 1, 1}, p[3] = {0, 0, 0},
            out_sp[3] = {1, 1, 1};
    for (size_t a = 0; a < d; ++a) {
        size_t slot = 3 - d + a;
        in[slot] = x.shape()[2 + a];
        k[slot] = window[a];
        s[slot] = stride[a];
        p[slot] = pad[a];
        out_sp[slot] = gy.shape()[2 + a];
    }
    int64_t planes = x.shape()[0] * x.shape()[1];
    int64_t x_plane = in[1] * in[2];
    const float* xd = x.f32().data();
    const float* gd = gy.f32().data();
    float* dxd = dx.f32().data();
    for (int64_t pl = 0; pl < planes; ++pl) {
        const float* src = xd + pl * in[0] * x_plane;
        float* dst = dxd + pl * in[0] * x_plane;
        const float* gplane = gd + pl * out_sp[0] * out_sp[1] * out_sp[2];
        for (int64_t oz = 0; oz < out_sp[0]; ++oz)
            for (int64_t oy = 0; oy < out_sp[1]; ++oy)
                for (int64_t ox = 0; ox < out_sp[2]; ++ox) {
                    // Route to the first occurrence of the max in scan order.
                    float best = -std::numeric_limits<float>::infinity();
                    int64_t best_at = -1;
                    for (int64_t kz = 0; kz < k[0]; ++kz) {
                        int64_t iz = oz * s[0] - p[0] + kz;
                        if (iz < 0 || iz >= in[0]) continue;
                        for (int64_t ky = 0; ky < k[1]; ++ky) {
                            int64_t iy = oy * s[1] - p[1] + ky;
                            if (iy < 0 || iy >= in[1]) continue;
                            for (int64_t kx = 0; kx < k[2]; ++kx) {
                                int64_t ix = ox * s[2] - p[2] + kx;
                                if (ix < 0 || ix >= in[2]) continue;
                                int64_t at = iz * x_plane + iy * in[2] + ix;
                                if (src[at] > best) {
                                    best = src[at];
                                    best_at = at;
                                }
                            }
                        }
                    }
                    if (best_at >= 0)
                        dst[best_at] += gplane[(oz * out_sp[1] + oy) * out_sp[2] + ox];
                }
    }
}

void upsample_backward(int64_t factor, const Tensor& x, const Tensor& gy, Tensor& dx) {
    auto gd = gy.f32();
    auto dxd = dx.f32();
    int64_t in[3] = {1, 1, 1};
    size_t d = x.shape().size() - 2;
    for (size_t a = 0; a < d; ++a) in[3 - d + a] = x.shape()[2 + a];
    int64_t fz = d == 3 ? factor : 1, fy = d >= 2 ? factor : 1, fx = factor;
    int64_t planes = x.shape()[0] * x.shape()[1];

    const float* src = gd.data();
    for (int64_t pl = 0; pl < planes; ++pl) {
        float* dplane = dxd.data() + pl * in[0] * in[1] * in[2];
        for (int64_t oz = 0; oz < in[0] * fz; ++oz)
            for (int64_t oy = 0; oy < in[1] * fy; ++oy) {
                float* row = dplane + ((oz / fz) * in[1] + oy / fy) * in[2];
                for (int64_t ox = 0; ox < in[2] * fx; ++ox) row[ox / fx] += *src++;
            }
    }
}

Tensor& grad_slot(std::map<std::string, Tensor>& grads, const std::string& name,
                  const Tensor& like) {
    auto it = grads.find(name);
    if (it == grads.end()) it = grads.emplace(name, Tensor::zeros(like.shape(), DType::F32)).first;
    return it->second;
}

}  // namespace

ForwardBackward forward_backward(const Graph& g, const Tensor& x, const Tensor& target,
                                 LossKind loss) {
    check_trainable(g);
    auto values = exec::run_all(g, {{g.inputs[0].name, x}});
    const Tensor& y = values.at(g.outputs[0]);

    ForwardBackward result;
    result.loss = loss_value(loss, y.f32(), target.f32());

    std::map<std::string, Tensor> tensor_grads;
    tensor_grads[g.outputs[0]] = loss_grad(loss, y, target);

    auto order = topo_order(g);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Node& n = *g.find(*it);
        auto git = tensor_grads.find(n.id);
        if (git == tensor_grads.end()) continue;  // off the loss path
        const Tensor& gy = git->second;
        const Tensor& in0 = values.at(n.inputs[0]);
        switch (n.kind) {
            case OpKind::Conv: {
                const Tensor& w = n.weight("w");
                Tensor dw = Tensor::zeros(w.shape(), DType::F32);
                Tensor db;
                Tensor* db_ptr = nullptr;
                if (const Tensor* b = n.weight_if("b")) {
                    db = Tensor::zeros(b->shape(), DType::F32);
                    db_ptr = &db;
                }
                Tensor& dx = grad_slot(tensor_grads, n.inputs[0], in0);
                conv_backward(n, in0, gy, dw, db_ptr, dx);
                result.grads[n.id]["w"] = std::move(dw);
                if (db_ptr) result.grads[n.id]["b"] = std::move(db);
                break;
            }
            case OpKind::Linear: {
                const Tensor& w = n.weight("w");
                Tensor dw = Tensor::zeros(w.shape(), DType::F32);
                Tensor db;
                Tensor* db_ptr = nullptr;
                if (const Tensor* b = n.weight_if("b")) {
                    db = Tensor::zeros(b->shape(), DType::F32);
                    db_ptr = &db;
                }
                Tensor& dx = grad_slot(tensor_grads, n.inputs[0], in0);
                linear_backward(n, in0, gy, dw, db_ptr, dx);
                result.grads[n.id]["w"] = std::move(dw);
                if (db_ptr) result.grads[n.id]["b"] = std::move(db);
                break;
            }
            case OpKind::ReLU: {
                Tensor& dx = grad_slot(tensor_grads, n.inputs[0], in0);
                auto xd = in0.f32();
                auto gd = gy.f32();
                auto dxd = dx.f32();
                for (size_t i = 0; i < xd.size(); ++i)
                    if (xd[i] > 0.0f) dxd[i] += gd[i];
                break;
            }
            case OpKind::LeakyReLU: {
                double slope = n.has_attr("slope") ? n.scalar("slope") : 0.01;
                Tensor& dx = grad_slot(tensor_grads, n.inputs[0], in0);
                auto xd = in0.f32();
                auto gd = gy.f32();
                auto dxd = dx.f32();
                for (size_t i = 0; i < xd.size(); ++i)
                    dxd[i] += xd[i] > 0.0f ? gd[i] : static_cast<float>(slope * gd[i]);
                break;
            }
            case OpKind::Sigmoid: {
                const Tensor& out = values.at(n.id);
                Tensor& dx = grad_slot(tensor_grads, n.inputs[0], in0);
                auto yd = out.f32();
                auto gd = gy.f32();
                auto dxd = dx.f32();
                for (size_t i = 0; i < yd.size(); ++i)
                    dxd[i] += static_cast<float>(static_cast<double>(gd[i]) * yd[i] *
                                                 (1.0 - yd[i]));
                break;
            }
            case OpKind::BatchNorm: {
                // Frozen affine: dx = gy * gamma / sqrt(var + eps).
                double eps = n.scalar("epsilon");
                auto gamma = n.weight("gamma").f32();
                auto var = n.weight("var").f32();
                Tensor& dx = grad_slot(tensor_grads, n.inputs[0], in0);
                auto gd = gy.f32();
                auto dxd = dx.f32();
                int64_t channels = in0.shape()[1];
                int64_t spatial = in0.numel() / (in0.shape()[0] * channels);
                for (int64_t nb = 0; nb < in0.shape()[0]; ++nb)
                    for (int64_t ch = 0; ch < channels; ++ch) {
                        double scale =
                            gamma[static_cast<size_t>(ch)] /
                            std::sqrt(static_cast<double>(var[static_cast<size_t>(ch)]) + eps);
                        int64_t off = (nb * channels + ch) * spatial;
                        for (int64_t i = 0; i < spatial; ++i)
                            dxd[static_cast<size_t>(off + i)] +=
                                static_cast<float>(scale * gd[static_cast<size_t>(off + i)]);
                    }
                break;
            }
            case OpKind::MaxPool: {
                Tensor& dx = grad_slot(tensor_grads, n.inputs[0], in0);
                maxpool_backward(n, in0, gy, dx);
                break;
            }
            case OpKind::UpsampleNearest: {
                Tensor& dx = grad_slot(tensor_grads, n.inputs[0], in0);
                upsample_backward(n.ints("factor")[0], in0, gy, dx);
                break;
            }
            case OpKind::Concat: {
                auto gd = gy.f32();
                int64_t batch = gy.shape()[0];
                int64_t total_ch = gy.shape()[1];
                int64_t spatial = gy.numel() / (batch * total_ch);
                int64_t ch_off = 0;
                for (const auto& in_name : n.inputs) {
                    const Tensor& t = values.at(in_name);
                    Tensor& dx = grad_slot(tensor_grads, in_name, t);
                    auto dxd = dx.f32();
                    int64_t ch = t.shape()[1];
                    for (int64_t nb = 0; nb < batch; ++nb) {
                        const float* src = gd.data() + (nb * total_ch + ch_off) * spatial;
                        float* dst = dxd.data() + nb * ch * spatial;
                        for (int64_t i = 0; i < ch * spatial; ++i) dst[i] += src[i];
                    }
                    ch_off += ch;
                }
                break;
            }
            case OpKind::Add: {
                for (const auto& in_name : n.inputs) {
                    const Tensor& t = values.at(in_name);
                    Tensor& dx = grad_slot(tensor_grads, in_name, t);
                    auto dxd = dx.f32();
                    auto gd = gy.f32();
                    for (size_t i = 0; i < gd.size(); ++i) dxd[i] += gd[i];
                }
                break;
            }
            default:
                fail(Err::UnsupportedForTraining,
                     std::string(op_kind_name(n.kind)) + " has no backward");
        }
    }
    return result;
}

void sgd_step(Graph& g, const GradMap& grads, const SGDConfig& cfg, GradMap& velocity) {
    for (const auto& [node_id, by_name] : grads) {
        Node* n = g.find(node_id);
        require(n != nullptr, Err::MissingInput, "gradient for unknown node " + node_id);
        for (const auto& [name, grad] : by_name) {
            auto wit = n->weights.find(name);
            require(wit != n->weights.end(), Err::MissingInput,
                    node_id + ": gradient for unknown weight " + name);
            Tensor& w = wit->second;
            require(w.same_shape(grad), Err::ShapeMismatch,
                    node_id + "." + name + ": gradient shape mismatch");
            Tensor& v = [&]() -> Tensor& {
                auto& slot = velocity[node_id];
                auto it = slot.find(name);
                if (it == slot.end())
                    it = slot.emplace(name, Tensor::zeros(w.shape(), DType::F32)).first;
                return it->second;
            }();
            auto wd = w.f32();
            auto vd = v.f32();
            auto gd = grad.f32();
            for (size_t i = 0; i < wd.size(); ++i) {
                double vn = cfg.momentum * static_cast<double>(vd[i]) + gd[i];
                vd[i] = static_cast<float>(vn);
                wd[i] = static_cast<float>(static_cast<double>(wd[i]) - cfg.lr * vn);
            }
        }
    }
}

namespace {

Tensor stack_batch(const std::vector<const Tensor*>& parts) {
    const Tensor& first = *parts[0];
    std::vector<int64_t> shape = first.shape();
    int64_t batch = 0;
    for (const Tensor* t : parts) batch += t->shape()[0];
    shape[0] = batch;
    Tensor out = Tensor::zeros(shape, first.dtype());
    size_t off = 0;
    for (const Tensor* t : parts) {
        require(std::equal(t->shape().begin() + 1, t->shape().end(), first.shape().begin() + 1),
                Err::ShapeMismatch, "batch samples disagree on shape");
        std::memcpy(out.raw() + off, t->raw(), t->byte_size());
        off += t->byte_size();
    }
    return out;
}

}  // namespace

FinetuneResult finetune(const Graph& g, const std::vector<std::pair<Tensor, Tensor>>& data,
                        LossKind loss, const SGDConfig& cfg) {
    require(!data.empty(), Err::Precondition, "finetune needs data");
    require(cfg.lr >= 0 && cfg.momentum >= 0 && cfg.momentum < 1 && cfg.epochs >= 1 &&
                cfg.batch_size >= 1,
            Err::Precondition, "bad sgd config");

    FinetuneResult result;
    result.graph = g;
    GradMap velocity;
    Rng rng(cfg.seed);

    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        int64_t batches = 0;
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
            std::vector<const Tensor*> xs, ts;
            for (size_t i = at; i < std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
                 ++i) {
                xs.push_back(&data[order[i]].first);
                ts.push_back(&data[order[i]].second);
            }
            Tensor x = stack_batch(xs);
            Tensor t = stack_batch(ts);
            auto fb = forward_backward(result.graph, x, t, loss);
            sgd_step(result.graph, fb.grads, cfg, velocity);
            epoch_loss += fb.loss;
            ++batches;
        }
        result.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
    }
    return result;
}

namespace {

// Double-precision shadow of the forward pass. grad_check differences a
// smooth function instead of the float-quantized one, which keeps the
// noise floor far below the 1e-3 tolerance even for tiny gradients.
struct DTensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t e : shape) n *= e;
        return n;
    }
};

DTensor to_shadow(const Tensor& t) {
    DTensor d;
    d.shape = t.shape();
    auto xd = t.f32();
    d.data.assign(xd.begin(), xd.end());
    return d;
}

struct Norm3 {
    int64_t in[3], k[3], stride[3], pad[3], out[3];
};

Norm3 norm3(const std::vector<int64_t>& x_shape, const std::vector<int64_t>& k,
            const std::vector<int64_t>& stride, const std::vector<int64_t>& pad) {
    Norm3 n{};
    size_t d = k.size();
    for (int a = 0; a < 3; ++a) {
        n.in[a] = 1;
        n.k[a] = 1;
        n.stride[a] = 1;
        n.pad[a] = 0;
        n.out[a] = 1;
    }
    for (size_t a = 0; a < d; ++a) {
        size_t slot = 3 - d + a;
        n.in[slot] = x_shape[2 + a];
        n.k[slot] = k[a];
        n.stride[slot] = stride.empty() ? k[a] : stride[a];
        n.pad[slot] = pad.empty() ? 0 : pad[a];
        n.out[slot] = (n.in[slot] + 2 * n.pad[slot] - n.k[slot]) / n.stride[slot] + 1;
    }
    return n;
}

DTensor shadow_conv(const Node& node, const DTensor& x) {
    const Tensor& wt = node.weight("w");
    auto wd = wt.f32();
    const Tensor* bt = node.weight_if("b");
    size_t d = node.ints("kernel").size();
    Norm3 n = norm3(x.shape, node.ints("kernel"),
                    node.has_attr("stride") ? node.ints("stride") : std::vector<int64_t>(d, 1),
                    node.has_attr("pad") ? node.ints("pad") : std::vector<int64_t>(d, 0));
    int64_t batch = x.shape[0], cin = x.shape[1], cout = wt.shape()[0];
    DTensor out;
    out.shape = {batch, cout};
    for (size_t a = 0; a < d; ++a) out.shape.push_back(n.out[3 - d + a]);
    out.data.assign(static_cast<size_t>(out.numel()), 0.0);

    int64_t x_plane = n.in[1] * n.in[2], x_chan = n.in[0] * x_plane;
    int64_t w_plane = n.k[1] * n.k[2], w_chan = n.k[0] * w_plane;
    double* dst = out.data.data();
    for (int64_t nb = 0; nb < batch; ++nb)
        for (int64_t oc = 0; oc < cout; ++oc)
            for (int64_t oz = 0; oz < n.out[0]; ++oz)
                for (int64_t oy = 0; oy < n.out[1]; ++oy)
                    for (int64_t ox = 0; ox < n.out[2]; ++ox) {
                        double acc = bt ? static_cast<double>(bt->f32()[static_cast<size_t>(oc)])
                                        : 0.0;
                        for (int64_t ic = 0; ic < cin; ++ic)
                            for (int64_t kz = 0; kz < n.k[0]; ++kz) {
                                int64_t iz = oz * n.stride[0] - n.pad[0] + kz;
                                if (iz < 0 || iz >= n.in[0]) continue;
                                for (int64_t ky = 0; ky < n.k[1]; ++ky) {
                                    int64_t iy = oy * n.stride[1] - n.pad[1] + ky;
                                    if (iy < 0 || iy >= n.in[1]) continue;
                                    for (int64_t kx = 0; kx < n.k[2]; ++kx) {
                                        int64_t ix = ox * n.stride[2] - n.pad[2] + kx;
                                        if (ix < 0 || ix >= n.in[2]) continue;
                                        acc += x.data[static_cast<size_t>(
                                                   (nb * cin + ic) * x_chan + iz * x_plane +
                                                   iy * n.in[2] + ix)] *
                                               static_cast<double>(
                                                   wd[static_cast<size_t>((oc * cin + ic) * w_chan +
                                                                          kz * w_plane +
                                                                          ky * n.k[2] + kx)]);
                                    }
                                }
                            }
                        *dst++ = acc;
                    }
    return out;
}

DTensor shadow_simple(const Graph& g, const Node& node, const std::vector<const DTensor*>& in) {
    const DTensor& x = *in[0];
    DTensor out = x;
    switch (node.kind) {
        case OpKind::ReLU:
            for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
            return out;
        case OpKind::LeakyReLU: {
            double slope = node.has_attr("slope") ? node.scalar("slope") : 0.01;
            for (auto& v : out.data) v = v > 0.0 ? v : slope * v;
            return out;
        }
        case OpKind::Sigmoid:
            for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
            return out;
        case OpKind::BatchNorm: {
            double eps = node.scalar("epsilon");
            auto gamma = node.weight("gamma").f32();
            auto beta = node.weight("beta").f32();
            auto mean = node.weight("mean").f32();
            auto var = node.weight("var").f32();
            int64_t channels = x.shape[1];
            int64_t spatial = x.numel() / (x.shape[0] * channels);
            for (int64_t nb = 0; nb < x.shape[0]; ++nb)
                for (int64_t c = 0; c < channels; ++c) {
                    double scale = gamma[static_cast<size_t>(c)] /
                                   std::sqrt(static_cast<double>(var[static_cast<size_t>(c)]) + eps);
                    double shift = beta[static_cast<size_t>(c)] -
                                   mean[static_cast<size_t>(c)] * scale;
                    double* row = out.data.data() + (nb * channels + c) * spatial;
                    for (int64_t i = 0; i < spatial; ++i) row[i] = row[i] * scale + shift;
                }
            return out;
        }
        case OpKind::Add: {
            const DTensor& y = *in[1];
            for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += y.data[i];
            return out;
        }
        case OpKind::Concat: {
            int64_t batch = x.shape[0];
            int64_t channels = 0;
            for (const DTensor* t : in) channels += t->shape[1];
            out.shape = x.shape;
            out.shape[1] = channels;
            out.data.assign(static_cast<size_t>(out.numel()), 0.0);
            int64_t spatial = x.numel() / (batch * x.shape[1]);
            for (int64_t nb = 0; nb < batch; ++nb) {
                int64_t off = 0;
                for (const DTensor* t : in) {
                    int64_t c = t->shape[1];
                    std::copy_n(t->data.data() + nb * c * spatial, c * spatial,
                                out.data.data() + (nb * channels + off) * spatial);
                    off += c;
                }
            }
            return out;
        }
        case OpKind::MaxPool: {
            const auto& window = node.ints("window");
            size_t d = window.size();
            Norm3 n = norm3(x.shape, window,
                            node.has_attr("stride") ? node.ints("stride") : window,
                            node.has_attr("pad") ? node.ints("pad") : std::vector<int64_t>(d, 0));
            out.shape = {x.shape[0], x.shape[1]};
            for (size_t a = 0; a < d; ++a) out.shape.push_back(n.out[3 - d + a]);
            out.data.assign(static_cast<size_t>(out.numel()), 0.0);
            int64_t planes = x.shape[0] * x.shape[1];
            int64_t x_plane = n.in[1] * n.in[2];
            double* dst = out.data.data();
            for (int64_t pl = 0; pl < planes; ++pl) {
                const double* src = x.data.data() + pl * n.in[0] * x_plane;
                for (int64_t oz = 0; oz < n.out[0]; ++oz)
                    for (int64_t oy = 0; oy < n.out[1]; ++oy)
                        for (int64_t ox = 0; ox < n.out[2]; ++ox) {
                            double best = -std::numeric_limits<double>::infinity();
                            for (int64_t kz = 0; kz < n.k[0]; ++kz) {
                                int64_t iz = oz * n.stride[0] - n.pad[0] + kz;
                                if (iz < 0 || iz >= n.in[0]) continue;
                                for (int64_t ky = 0; ky < n.k[1]; ++ky) {
                                    int64_t iy = oy * n.stride[1] - n.pad[1] + ky;
                                    if (iy < 0 || iy >= n.in[1]) continue;
                                    for (int64_t kx = 0; kx < n.k[2]; ++kx) {
                                        int64_t ix = ox * n.stride[2] - n.pad[2] + kx;
                                        if (ix < 0 || ix >= n.in[2]) continue;
                                        best = std::max(best,
                                                        src[iz * x_plane + iy * n.in[2] + ix]);
                                    }
                                }
                            }
                            *dst++ = best;
                        }
            }
            return out;
        }
        case OpKind::UpsampleNearest: {
            int64_t factor = node.ints("factor")[0];
            size_t d = x.shape.size() - 2;
            int64_t in3[3] = {1, 1, 1};
            for (size_t a = 0; a < d; ++a) in3[3 - d + a] = x.shape[2 + a];
            int64_t fz = d == 3 ? factor : 1, fy = d >= 2 ? factor : 1, fx = factor;
            out.shape = x.shape;
            for (size_t a = 2; a < out.shape.size(); ++a) out.shape[a] *= factor;
            out.data.assign(static_cast<size_t>(out.numel()), 0.0);
            int64_t planes = x.shape[0] * x.shape[1];
            double* dst = out.data.data();
            for (int64_t pl = 0; pl < planes; ++pl) {
                const double* src = x.data.data() + pl * in3[0] * in3[1] * in3[2];
                for (int64_t oz = 0; oz < in3[0] * fz; ++oz)
                    for (int64_t oy = 0; oy < in3[1] * fy; ++oy) {
                        const double* row = src + ((oz / fz) * in3[1] + oy / fy) * in3[2];
                        for (int64_t ox = 0; ox < in3[2] * fx; ++ox) *dst++ = row[ox / fx];
                    }
            }
            return out;
        }
        case OpKind::Linear: {
            const Tensor& wt = node.weight("w");
            auto wd = wt.f32();
            const Tensor* bt = node.weight_if("b");
            int64_t in_f = wt.shape()[1], out_f = wt.shape()[0];
            int64_t rows = x.numel() / in_f;
            out.shape = x.shape;
            out.shape.back() = out_f;
            out.data.assign(static_cast<size_t>(out.numel()), 0.0);
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t o = 0; o < out_f; ++o) {
                    double acc = bt ? static_cast<double>(bt->f32()[static_cast<size_t>(o)]) : 0.0;
                    for (int64_t i = 0; i < in_f; ++i)
                        acc += x.data[static_cast<size_t>(r * in_f + i)] *
                               static_cast<double>(wd[static_cast<size_t>(o * in_f + i)]);
                    out.data[static_cast<size_t>(r * out_f + o)] = acc;
                }
            return out;
        }
        default:
            fail(Err::UnsupportedForTraining,
                 std::string(op_kind_name(node.kind)) + " has no shadow forward");
    }
    (void)g;
}

std::map<std::string, DTensor> shadow_run(const Graph& g, const Tensor& x) {
    std::map<std::string, DTensor> values;
    values[g.inputs[0].name] = to_shadow(x);
    for (const auto& id : topo_order(g)) {
        const Node& n = *g.find(id);
        std::vector<const DTensor*> in;
        for (const auto& name : n.inputs) in.push_back(&values.at(name));
        values[id] = n.kind == OpKind::Conv ? shadow_conv(n, *in[0]) : shadow_simple(g, n, in);
    }
    return values;
}

double shadow_loss(LossKind loss, const DTensor& y, const Tensor& target) {
    auto td = target.f32();
    double total = 0.0;
    double n = static_cast<double>(y.data.size());
    if (loss == LossKind::MSE) {
        for (size_t i = 0; i < y.data.size(); ++i) {
            double d = y.data[i] - td[i];
            total += d * d;
        }
        return total / n;
    }
    for (size_t i = 0; i < y.data.size(); ++i) {
        double p = std::clamp(y.data[i], kBceEps, 1.0 - kBceEps);
        total -= td[i] * std::log(p) + (1.0 - td[i]) * std::log(1.0 - p);
    }
    return total / n;
}

struct WeightRef {
    std::string node;
    std::string name;
    int64_t index;
};

// Activation pattern of one forward pass: sign bits at every ReLU-family
// input plus the argmax of every MaxPool window. A finite-difference pair
// whose patterns differ has crossed a kink.
struct KinkState {
    std::vector<uint8_t> relu_signs;
    std::vector<int64_t> pool_argmax;
    std::vector<double> relu_inputs;  // for the 1e-6 proximity rule
    std::vector<double> pool_gaps;
};

KinkState kink_state(const Graph& g, const std::map<std::string, DTensor>& values) {
    KinkState state;
    for (const auto& n : g.nodes) {
        if (n.kind == OpKind::ReLU || n.kind == OpKind::LeakyReLU) {
            const auto& xd = values.at(n.inputs[0]).data;
            for (double v : xd) {
                state.relu_signs.push_back(v > 0.0);
                state.relu_inputs.push_back(v);
            }
        } else if (n.kind == OpKind::MaxPool) {
            const DTensor& x = values.at(n.inputs[0]);
            const auto& window = n.ints("window");
            size_t d = window.size();
            std::vector<int64_t> stride = n.has_attr("stride") ? n.ints("stride") : window;
            std::vector<int64_t> pad(d, 0);
            if (n.has_attr("pad")) pad = n.ints("pad");
            int64_t in[3] = {1, 1, 1}, k[3] = {1, 1, 1}, st[3] = {1, 1, 1}, p[3] = {0, 0, 0},
                    out_sp[3] = {1, 1, 1};
            const auto& out_shape = values.at(n.id).shape;
            for (size_t a = 0; a < d; ++a) {
                size_t slot = 3 - d + a;
                in[slot] = x.shape[2 + a];
                k[slot] = window[a];
                st[slot] = stride[a];
                p[slot] = pad[a];
                out_sp[slot] = out_shape[2 + a];
            }
            int64_t planes = x.shape[0] * x.shape[1];
            int64_t x_plane = in[1] * in[2];
            for (int64_t pl = 0; pl < planes; ++pl) {
                const double* src = x.data.data() + pl * in[0] * x_plane;
                for (int64_t oz = 0; oz < out_sp[0]; ++oz)
                    for (int64_t oy = 0; oy < out_sp[1]; ++oy)
                        for (int64_t ox = 0; ox < out_sp[2]; ++ox) {
                            double best = -std::numeric_limits<double>::infinity();
                            double second = best;
                            int64_t best_at = -1;
                            for (int64_t kz = 0; kz < k[0]; ++kz) {
                                int64_t iz = oz * st[0] - p[0] + kz;
                                if (iz < 0 || iz >= in[0]) continue;
                                for (int64_t ky = 0; ky < k[1]; ++ky) {
                                    int64_t iy = oy * st[1] - p[1] + ky;
                                    if (iy < 0 || iy >= in[1]) continue;
                                    for (int64_t kx = 0; kx < k[2]; ++kx) {
                                        int64_t ix = ox * st[2] - p[2] + kx;
                                        if (ix < 0 || ix >= in[2]) continue;
                                        int64_t at = iz * x_plane + iy * in[2] + ix;
                                        double v = src[at];
                                        if (v > best) {
                                            second = best;
                                            best = v;
                                            best_at = at;
                                        } else if (v > second) {
                                            second = v;
                                        }
                                    }
                                }
                            }
                            state.pool_argmax.push_back(best_at);
                            state.pool_gaps.push_back(std::isfinite(second)
                                                          ? best - second
                                                          : std::numeric_limits<double>::infinity());
                        }
            }
        }
    }
    return state;
}

// A perturbation pair is excluded when it flipped an activation pattern or
// moved an activation that sits within 1e-6 of its kink.
bool crosses_kink(const KinkState& plus, const KinkState& minus) {
    if (plus.relu_signs != minus.relu_signs) return true;
    if (plus.pool_argmax != minus.pool_argmax) return true;
    for (size_t i = 0; i < plus.relu_inputs.size(); ++i) {
        if (plus.relu_inputs[i] == minus.relu_inputs[i]) continue;
        if (std::abs(plus.relu_inputs[i]) < kKinkEps ||
            std::abs(minus.relu_inputs[i]) < kKinkEps)
            return true;
    }
    for (size_t i = 0; i < plus.pool_gaps.size(); ++i) {
        // A static tie is harmless; only a moving near-tie can cross.
        if (plus.pool_gaps[i] == minus.pool_gaps[i]) continue;
        if (plus.pool_gaps[i] < kKinkEps || minus.pool_gaps[i] < kKinkEps) return true;
    }
    return false;
}

}  // namespace

double grad_check(const Graph& g, const Tensor& x, const Tensor& target, LossKind loss,
                  double eps, int64_t max_elems, uint64_t seed) {
    require(eps > 0, Err::Precondition, "eps must be positive");
    auto fb = forward_backward(g, x, target, loss);

    std::vector<WeightRef> refs;
    for (const auto& [node_id, by_name] : fb.grads)
        for (const auto& [name, grad] : by_name)
            for (int64_t i = 0; i < grad.numel(); ++i) refs.push_back({node_id, name, i});

    Rng rng(seed);
    rng.shuffle(refs);
    if (static_cast<int64_t>(refs.size()) > max_elems)
        refs.resize(static_cast<size_t>(max_elems));

    Graph work = g;
    auto eval = [&](KinkState& state) {
        auto values = shadow_run(work, x);
        state = kink_state(work, values);
        return shadow_loss(loss, values.at(work.outputs[0]), target);
    };

    double max_rel = 0.0;
    for (const auto& ref : refs) {
        auto wd = work.find(ref.node)->weights.at(ref.name).f32();
        float original = wd[static_cast<size_t>(ref.index)];

        KinkState plus, minus;
        float w_plus = static_cast<float>(original + eps);
        float w_minus = static_cast<float>(original - eps);
        wd[static_cast<size_t>(ref.index)] = w_plus;
        double loss_plus = eval(plus);
        wd[static_cast<size_t>(ref.index)] = w_minus;
        double loss_minus = eval(minus);
        wd[static_cast<size_t>(ref.index)] = original;

        if (crosses_kink(plus, minus)) continue;
        // Effective step: the floats actually applied, not the nominal eps.
        double numeric = (loss_plus - loss_minus) /
                         (static_cast<double>(w_plus) - static_cast<double>(w_minus));
        double analytic = fb.grads.at(ref.node).at(ref.name).f32()[static_cast<size_t>(ref.index)];
        double rel = std::abs(analytic - numeric) /
                     std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace ebc::train
