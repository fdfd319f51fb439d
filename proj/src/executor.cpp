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
#include "ebc/executor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "ebc/quantizer.hpp"

namespace ebc::exec {

namespace {

struct ConvDims {
    int64_t batch, cin, cout;
    int64_t in[3], kernel[3], stride[3], pad[3], out[3];  // normalized to 3 spatial axes
};

// Normalizes a d-dimensional conv (d in {1,2,3}) onto three spatial axes by
// prepending singleton axes, so one loop nest serves every rank.
ConvDims conv_dims(const Tensor& x, const Tensor& w, std::span<const int64_t> stride,
                   std::span<const int64_t> pad) {
    size_t d = static_cast<size_t>(w.rank() - 2);
    require(d >= 1 && d <= 3, Err::ShapeMismatch, "conv supports 1-3 spatial dims");
    require(x.rank() == w.rank(), Err::ShapeMismatch, "conv input rank must match weight rank");
    require(x.shape()[1] == w.shape()[1], Err::ShapeMismatch,
            "conv input channels do not match weight");
    require(stride.empty() || stride.size() == d, Err::ShapeMismatch, "bad stride rank");
    require(pad.empty() || pad.size() == d, Err::ShapeMismatch, "bad pad rank");

    ConvDims dims{};
    dims.batch = x.shape()[0];
    dims.cin = x.shape()[1];
    dims.cout = w.shape()[0];
    for (int a = 0; a < 3; ++a) {
        dims.in[a] = 1;
        dims.kernel[a] = 1;
        dims.stride[a] = 1;
        dims.pad[a] = 0;
        dims.out[a] = 1;
    }
    for (size_t a = 0; a < d; ++a) {
        size_t slot = 3 - d + a;
        dims.in[slot] = x.shape()[2 + a];
        dims.kernel[slot] = w.shape()[2 + a];
        dims.stride[slot] = stride.empty() ? 1 : stride[a];
        dims.pad[slot] = pad.empty() ? 0 : pad[a];
        int64_t num = dims.in[slot] + 2 * dims.pad[slot] - dims.kernel[slot];
        require(num >= 0 && dims.stride[slot] >= 1, Err::ShapeMismatch,
                "conv window larger than padded input");
        dims.out[slot] = num / dims.stride[slot] + 1;
    }
    return dims;
}

std::vector<int64_t> conv_out_shape(const Tensor& x, const ConvDims& dims) {
    std::vector<int64_t> shape = {dims.batch, dims.cout};
    size_t d = static_cast<size_t>(x.rank() - 2);
    for (size_t a = 0; a < d; ++a) shape.push_back(dims.out[3 - d + a]);
    return shape;
}

// Valid kernel range on one axis for a given output coordinate.
inline void kernel_range(int64_t base, int64_t k, int64_t extent, int64_t& lo, int64_t& hi) {
    lo = std::max<int64_t>(0, -base);
    hi = std::min(k, extent - base);
}

// Row-oriented direct convolution: for each (kz,ky,kx) tap the innermost
// loop is an axpy over the output row, which vectorizes.
template <typename XT, typename WT, typename AccT, typename BiasFn, typename StoreFn>
void conv_rows(const ConvDims& d, const XT* x, const WT* w, BiasFn bias_of, StoreFn store) {
    const int64_t row_elems = d.out[2];
    std::vector<AccT> row(static_cast<size_t>(row_elems));
    const int64_t x_plane = d.in[1] * d.in[2];
    const int64_t x_chan = d.in[0] * x_plane;
    const int64_t w_plane = d.kernel[1] * d.kernel[2];
    const int64_t w_chan = d.kernel[0] * w_plane;

    for (int64_t n = 0; n < d.batch; ++n) {
        const XT* xb = x + n * d.cin * x_chan;
        for (int64_t oc = 0; oc < d.cout; ++oc) {
            const WT* wb = w + oc * d.cin * w_chan;
            const AccT bias = bias_of(oc);
            for (int64_t oz = 0; oz < d.out[0]; ++oz) {
                const int64_t z0 = oz * d.stride[0] - d.pad[0];
                int64_t kz_lo, kz_hi;
                kernel_range(z0, d.kernel[0], d.in[0], kz_lo, kz_hi);
                for (int64_t oy = 0; oy < d.out[1]; ++oy) {
                    const int64_t y0 = oy * d.stride[1] - d.pad[1];
                    int64_t ky_lo, ky_hi;
                    kernel_range(y0, d.kernel[1], d.in[1], ky_lo, ky_hi);
                    std::fill(row.begin(), row.end(), bias);
                    for (int64_t ic = 0; ic < d.cin; ++ic) {
                        const XT* xc = xb + ic * x_chan;
                        const WT* wc = wb + ic * w_chan;
                        for (int64_t kz = kz_lo; kz < kz_hi; ++kz) {
                            for (int64_t ky = ky_lo; ky < ky_hi; ++ky) {
                                const XT* xrow = xc + (z0 + kz) * x_plane + (y0 + ky) * d.in[2];
                                const WT* wrow = wc + kz * w_plane + ky * d.kernel[2];
                                for (int64_t kx = 0; kx < d.kernel[2]; ++kx) {
                                    const AccT wv = static_cast<AccT>(wrow[kx]);
                                    const int64_t base = kx - d.pad[2];
                                    // ox range keeping ix = ox*stride + base inside [0, in).
                                    int64_t ox_lo = 0, ox_hi = row_elems;
                                    if (base < 0)
                                        ox_lo = (-base + d.stride[2] - 1) / d.stride[2];
                                    if (base + (row_elems - 1) * d.stride[2] >= d.in[2])
                                        ox_hi = (d.in[2] - base + d.stride[2] - 1) / d.stride[2];
                                    const XT* xk = xrow + base;
                                    if (d.stride[2] == 1) {
                                        for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                                            row[static_cast<size_t>(ox)] +=
                                                wv * static_cast<AccT>(xk[ox]);
                                    } else {
                                        for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                                            row[static_cast<size_t>(ox)] +=
                                                wv * static_cast<AccT>(xk[ox * d.stride[2]]);
                                    }
                                }
                            }
                        }
                    }
                    store(((n * d.cout + oc) * d.out[0] + oz) * d.out[1] + oy, row);
                }
            }
        }
    }
}

}  // namespace

Tensor conv_nd_f32(const Tensor& x, const Tensor& w, const Tensor* bias,
                   std::span<const int64_t> stride, std::span<const int64_t> pad) {
    require(x.dtype() == DType::F32 && w.dtype() == DType::F32, Err::ShapeMismatch,
            "conv_nd_f32 takes f32 tensors");
    ConvDims dims = conv_dims(x, w, stride, pad);
    if (bias)
        require(bias->dtype() == DType::F32 && bias->rank() == 1 &&
                    bias->shape()[0] == dims.cout,
                Err::ShapeMismatch, "bad conv bias");
    Tensor out = Tensor::zeros(conv_out_shape(x, dims), DType::F32);
    auto od = out.f32();
    const float* bd = bias ? bias->f32().data() : nullptr;
    const int64_t row_elems = dims.out[2];
    conv_rows<float, float, double>(
        dims, x.f32().data(), w.f32().data(),
        [&](int64_t oc) -> double { return bd ? static_cast<double>(bd[oc]) : 0.0; },
        [&](int64_t row_index, const std::vector<double>& row) {
            float* dst = od.data() + row_index * row_elems;
            for (int64_t i = 0; i < row_elems; ++i)
                dst[i] = static_cast<float>(row[static_cast<size_t>(i)]);
        });
    return out;
}

Tensor conv_nd_i8(const Tensor& xq, const Tensor& wq, const Tensor* bias_i32,
                  std::span<const int64_t> stride, std::span<const int64_t> pad, double sx,
                  double sw) {
    require(xq.dtype() == DType::I8 && wq.dtype() == DType::I8, Err::ShapeMismatch,
            "conv_nd_i8 takes i8 tensors");
    require(sx > 0 && sw > 0, Err::Precondition, "scales must be positive");
    ConvDims dims = conv_dims(xq, wq, stride, pad);
    if (bias_i32)
        require(bias_i32->dtype() == DType::I32 && bias_i32->rank() == 1 &&
                    bias_i32->shape()[0] == dims.cout,
                Err::ShapeMismatch, "bad conv bias");
    Tensor out = Tensor::zeros(conv_out_shape(xq, dims), DType::F32);
    auto od = out.f32();
    const int32_t* bd = bias_i32 ? bias_i32->i32().data() : nullptr;
    const double rescale = sx * sw;
    const int64_t row_elems = dims.out[2];
    conv_rows<int8_t, int8_t, int64_t>(
        dims, xq.i8().data(), wq.i8().data(),
        [&](int64_t oc) -> int64_t { return bd ? static_cast<int64_t>(bd[oc]) : 0; },
        [&](int64_t row_index, const std::vector<int64_t>& row) {
            float* dst = od.data() + row_index * row_elems;
            for (int64_t i = 0; i < row_elems; ++i) {
                int64_t acc = row[static_cast<size_t>(i)];
                require(acc >= std::numeric_limits<int32_t>::min() &&
                            acc <= std::numeric_limits<int32_t>::max(),
                        Err::AccumulatorOverflow,
                        "int32 accumulator overflow: " + std::to_string(acc));
                dst[i] = static_cast<float>(static_cast<double>(acc) * rescale);
            }
        });
    return out;
}

namespace {

// Flattens [..., in_features] into rows for the linear kernels.
int64_t linear_rows(const Tensor& x, const Tensor& w) {
    require(w.rank() == 2, Err::ShapeMismatch, "linear weight must be rank 2");
    require(x.shape().back() == w.shape()[1], Err::ShapeMismatch,
            "linear input features do not match weight");
    return x.numel() / x.shape().back();
}

std::vector<int64_t> linear_out_shape(const Tensor& x, const Tensor& w) {
    std::vector<int64_t> shape = x.shape();
    shape.back() = w.shape()[0];
    return shape;
}

}  // namespace

Tensor linear_f32(const Tensor& x, const Tensor& w, const Tensor* bias) {
    require(x.dtype() == DType::F32 && w.dtype() == DType::F32, Err::ShapeMismatch,
            "linear_f32 takes f32 tensors");
    int64_t rows = linear_rows(x, w);
    int64_t in_f = w.shape()[1], out_f = w.shape()[0];
    if (bias)
        require(bias->rank() == 1 && bias->shape()[0] == out_f, Err::ShapeMismatch,
                "bad linear bias");
    Tensor out = Tensor::zeros(linear_out_shape(x, w), DType::F32);
    auto od = out.f32();
    auto xd = x.f32();
    auto wd = w.f32();
    const float* bd = bias ? bias->f32().data() : nullptr;
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t o = 0; o < out_f; ++o) {
            double acc = bd ? static_cast<double>(bd[o]) : 0.0;
            const float* xr = xd.data() + r * in_f;
            const float* wr = wd.data() + o * in_f;
            for (int64_t i = 0; i < in_f; ++i) acc += static_cast<double>(xr[i]) * wr[i];
            od[static_cast<size_t>(r * out_f + o)] = static_cast<float>(acc);
        }
    }
    return out;
}

Tensor linear_i8(const Tensor& xq, const Tensor& wq, const Tensor* bias_i32, double sx,
                 double sw) {
    require(xq.dtype() == DType::I8 && wq.dtype() == DType::I8, Err::ShapeMismatch,
            "linear_i8 takes i8 tensors");
    int64_t rows = linear_rows(xq, wq);
    int64_t in_f = wq.shape()[1], out_f = wq.shape()[0];
    if (bias_i32)
        require(bias_i32->dtype() == DType::I32 && bias_i32->rank() == 1 &&
                    bias_i32->shape()[0] == out_f,
                Err::ShapeMismatch, "bad linear bias");
    Tensor out = Tensor::zeros(linear_out_shape(xq, wq), DType::F32);
    auto od = out.f32();
    auto xd = xq.i8();
    auto wd = wq.i8();
    const int32_t* bd = bias_i32 ? bias_i32->i32().data() : nullptr;
    const double rescale = sx * sw;
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t o = 0; o < out_f; ++o) {
            int64_t acc = bd ? static_cast<int64_t>(bd[o]) : 0;
            const int8_t* xr = xd.data() + r * in_f;
            const int8_t* wr = wd.data() + o * in_f;
            for (int64_t i = 0; i < in_f; ++i)
                acc += static_cast<int64_t>(xr[i]) * static_cast<int64_t>(wr[i]);
            require(acc >= std::numeric_limits<int32_t>::min() &&
                        acc <= std::numeric_limits<int32_t>::max(),
                    Err::AccumulatorOverflow, "int32 accumulator overflow");
            od[static_cast<size_t>(r * out_f + o)] =
                static_cast<float>(static_cast<double>(acc) * rescale);
        }
    }
    return out;
}

Tensor batchnorm_f32(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& mean,
                     const Tensor& var, double eps) {
    require(x.rank() >= 2, Err::ShapeMismatch, "batchnorm input needs a channel axis");
    int64_t channels = x.shape()[1];
    require(gamma.numel() == channels, Err::ShapeMismatch, "batchnorm channels mismatch");
    Tensor out = Tensor::zeros(x.shape(), DType::F32);
    auto od = out.f32();
    auto xd = x.f32();
    auto g = gamma.f32();
    auto b = beta.f32();
    auto m = mean.f32();
    auto v = var.f32();
    int64_t spatial = x.numel() / (x.shape()[0] * channels);
    for (int64_t n = 0; n < x.shape()[0]; ++n) {
        for (int64_t c = 0; c < channels; ++c) {
            double scale = g[static_cast<size_t>(c)] /
                           std::sqrt(static_cast<double>(v[static_cast<size_t>(c)]) + eps);
            double shift = b[static_cast<size_t>(c)] - m[static_cast<size_t>(c)] * scale;
            const float* src = xd.data() + (n * channels + c) * spatial;
            float* dst = od.data() + (n * channels + c) * spatial;
            for (int64_t i = 0; i < spatial; ++i)
                dst[i] = static_cast<float>(src[i] * scale + shift);
        }
    }
    return out;
}

namespace {

Tensor maxpool(const Tensor& x, const std::map<std::string, Attr>& attrs) {
    Node probe;  // attr accessors only
    probe.id = "maxpool";
    probe.attrs = attrs;
    const auto& window = probe.ints("window");
    size_t d = window.size();
    require(d >= 1 && d <= 3 && x.rank() == static_cast<int64_t>(d + 2), Err::ShapeMismatch,
            "maxpool rank mismatch");

    std::vector<int64_t> stride =
        probe.has_attr("stride") ? probe.ints("stride") : window;
    std::vector<int64_t> pad(d, 0);
    if (probe.has_attr("pad")) pad = probe.ints("pad");

    int64_t in[3] = {1, 1, 1}, k[3] = {1, 1, 1}, s[3] = {1, 1, 1}, p[3] = {0, 0, 0},
            out_sp[3] = {1, 1, 1};
    for (size_t a = 0; a < d; ++a) {
        size_t slot = 3 - d + a;
        in[slot] = x.shape()[2 + a];
        k[slot] = window[a];
        s[slot] = stride[a];
        p[slot] = pad[a];
        int64_t num = in[slot] + 2 * p[slot] - k[slot];
        require(num >= 0 && s[slot] >= 1, Err::ShapeMismatch, "pool window larger than input");
        out_sp[slot] = num / s[slot] + 1;
    }

    std::vector<int64_t> out_shape = {x.shape()[0], x.shape()[1]};
    for (size_t a = 0; a < d; ++a) out_shape.push_back(out_sp[3 - d + a]);
    Tensor out = Tensor::zeros(out_shape, DType::F32);
    auto od = out.f32();
    auto xd = x.f32();
    int64_t planes = x.shape()[0] * x.shape()[1];
    int64_t x_plane = in[1] * in[2];
    float* dst = od.data();
    for (int64_t pl = 0; pl < planes; ++pl) {
        const float* src = xd.data() + pl * in[0] * x_plane;
        for (int64_t oz = 0; oz < out_sp[0]; ++oz)
            for (int64_t oy = 0; oy < out_sp[1]; ++oy)
                for (int64_t ox = 0; ox < out_sp[2]; ++ox) {
                    // -inf padding: out-of-range positions never win.
                    float best = -std::numeric_limits<float>::infinity();
                    for (int64_t kz = 0; kz < k[0]; ++kz) {
                        int64_t iz = oz * s[0] - p[0] + kz;
                        if (iz < 0 || iz >= in[0]) continue;
                        for (int64_t ky = 0; ky < k[1]; ++ky) {
                            int64_t iy = oy * s[1] - p[1] + ky;
                            if (iy < 0 || iy >= in[1]) continue;
                            for (int64_t kx = 0; kx < k[2]; ++kx) {
                                int64_t ix = ox * s[2] - p[2] + kx;
                                if (ix < 0 || ix >= in[2]) continue;
                                best = std::max(best, src[iz * x_plane + iy * in[2] + ix]);
                            }
                        }
                    }
                    *dst++ = best;
                }
    }
    return out;
}

Tensor upsample_nearest(const Tensor& x, int64_t factor) {
    require(x.rank() >= 3, Err::ShapeMismatch, "upsample needs spatial axes");
    std::vector<int64_t> out_shape = x.shape();
    for (size_t a = 2; a < out_shape.size(); ++a) out_shape[a] *= factor;
    Tensor out = Tensor::zeros(out_shape, DType::F32);
    auto od = out.f32();
    auto xd = x.f32();

    // Normalize to three spatial axes (leading ones for lower ranks).
    int64_t in[3] = {1, 1, 1};
    size_t d = x.shape().size() - 2;
    for (size_t a = 0; a < d; ++a) in[3 - d + a] = x.shape()[2 + a];
    int64_t fz = d == 3 ? factor : 1, fy = d >= 2 ? factor : 1, fx = factor;
    int64_t planes = x.shape()[0] * x.shape()[1];

    float* dst = od.data();
    for (int64_t pl = 0; pl < planes; ++pl) {
        const float* src = xd.data() + pl * in[0] * in[1] * in[2];
        for (int64_t oz = 0; oz < in[0] * fz; ++oz)
            for (int64_t oy = 0; oy < in[1] * fy; ++oy) {
                const float* row = src + ((oz / fz) * in[1] + oy / fy) * in[2];
                for (int64_t ox = 0; ox < in[2] * fx; ++ox) *dst++ = row[ox / fx];
            }
    }
    return out;
}

Tensor concat_channels(const std::vector<const Tensor*>& inputs) {
    require(inputs.size() >= 2, Err::ShapeMismatch, "concat needs at least 2 inputs");
    const Tensor& first = *inputs[0];
    int64_t channels = 0;
    for (const Tensor* t : inputs) {
        require(t->rank() == first.rank() && t->rank() >= 2, Err::ShapeMismatch,
                "concat rank mismatch");
        for (int64_t a = 0; a < t->rank(); ++a)
            if (a != 1)
                require(t->shape()[a] == first.shape()[a], Err::ShapeMismatch,
                        "concat non-channel extents differ");
        channels += t->shape()[1];
    }
    std::vector<int64_t> out_shape = first.shape();
    out_shape[1] = channels;
    Tensor out = Tensor::zeros(out_shape, DType::F32);
    auto od = out.f32();
    int64_t batch = first.shape()[0];
    int64_t spatial = first.numel() / (batch * first.shape()[1]);
    for (int64_t n = 0; n < batch; ++n) {
        int64_t c_off = 0;
        for (const Tensor* t : inputs) {
            auto src = t->f32();
            int64_t c = t->shape()[1];
            std::memcpy(od.data() + (n * channels + c_off) * spatial,
                        src.data() + n * c * spatial,
                        static_cast<size_t>(c * spatial) * sizeof(float));
            c_off += c;
        }
    }
    return out;
}

}  // namespace

Tensor apply_simple(OpKind kind, const std::vector<const Tensor*>& inputs,
                    const std::map<std::string, Attr>& attrs) {
    require(!inputs.empty(), Err::MissingInput, "kernel needs inputs");
    const Tensor& x = *inputs[0];
    switch (kind) {
        case OpKind::ReLU: {
            Tensor out = Tensor::zeros(x.shape(), DType::F32);
            auto od = out.f32();
            auto xd = x.f32();
            for (size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
            return out;
        }
        case OpKind::LeakyReLU: {
            auto it = attrs.find("slope");
            double slope = it != attrs.end() ? std::get<double>(it->second) : 0.01;
            Tensor out = Tensor::zeros(x.shape(), DType::F32);
            auto od = out.f32();
            auto xd = x.f32();
            for (size_t i = 0; i < xd.size(); ++i)
                od[i] = xd[i] > 0.0f ? xd[i] : static_cast<float>(slope * xd[i]);
            return out;
        }
        case OpKind::Sigmoid: {
            Tensor out = Tensor::zeros(x.shape(), DType::F32);
            auto od = out.f32();
            auto xd = x.f32();
            for (size_t i = 0; i < xd.size(); ++i)
                od[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(xd[i]))));
            return out;
        }
        case OpKind::MaxPool: return maxpool(x, attrs);
        case OpKind::UpsampleNearest: {
            auto it = attrs.find("factor");
            require(it != attrs.end(), Err::MissingInput, "upsample needs factor");
            return upsample_nearest(x, std::get<std::vector<int64_t>>(it->second)[0]);
        }
        case OpKind::Concat: return concat_channels(inputs);
        case OpKind::Add: {
            require(inputs.size() == 2, Err::ShapeMismatch, "add takes 2 inputs");
            const Tensor& y = *inputs[1];
            require(x.same_shape(y), Err::ShapeMismatch, "add of unequal shapes");
            Tensor out = Tensor::zeros(x.shape(), DType::F32);
            auto od = out.f32();
            auto a = x.f32();
            auto b = y.f32();
            for (size_t i = 0; i < a.size(); ++i) od[i] = a[i] + b[i];
            return out;
        }
        case OpKind::Linear: {
            // inputs = [x, w] or [x, w, b]
            require(inputs.size() >= 2, Err::MissingInput, "linear needs weights");
            return linear_f32(x, *inputs[1], inputs.size() > 2 ? inputs[2] : nullptr);
        }
        default:
            fail(Err::ShapeMismatch,
                 std::string("apply_simple does not handle ") + op_kind_name(kind));
    }
}

namespace {

void check_run_inputs(const Graph& g, const std::map<std::string, Tensor>& inputs) {
    for (const auto& in : g.inputs) {
        auto it = inputs.find(in.name);
        require(it != inputs.end(), Err::MissingInput, "missing graph input " + in.name);
        const auto& got = it->second.shape();
        require(got.size() == in.shape.size(), Err::ShapeMismatch,
                in.name + ": input rank mismatch");
        for (size_t a = 0; a < got.size(); ++a) {
            if (in.shape[a] == kSymbolicBatch) continue;
            require(got[a] == in.shape[a], Err::ShapeMismatch,
                    in.name + ": input shape differs from declaration");
        }
    }
    for (const auto& [name, t] : inputs)
        require(g.is_graph_input(name), Err::MissingInput, "unknown input name " + name);
}

Tensor run_conv_node(const Node& n, const Tensor& x) {
    const Tensor& w = n.weight("w");
    std::span<const int64_t> stride =
        n.has_attr("stride") ? std::span<const int64_t>(n.ints("stride"))
                             : std::span<const int64_t>();
    std::span<const int64_t> pad = n.has_attr("pad") ? std::span<const int64_t>(n.ints("pad"))
                                                     : std::span<const int64_t>();
    if (w.dtype() == DType::I8) {
        require(n.has_attr("x_scale") && n.has_attr("w_scale"), Err::MissingParams,
                n.id + ": quantized conv is missing scales");
        require(x.dtype() == DType::I8, Err::ShapeMismatch,
                n.id + ": quantized conv requires i8 input");
        return conv_nd_i8(x, w, n.weight_if("b"), stride, pad, n.scalar("x_scale"),
                          n.scalar("w_scale"));
    }
    return conv_nd_f32(x, w, n.weight_if("b"), stride, pad);
}

Tensor run_linear_node(const Node& n, const Tensor& x) {
    const Tensor& w = n.weight("w");
    if (w.dtype() == DType::I8) {
        require(n.has_attr("x_scale") && n.has_attr("w_scale"), Err::MissingParams,
                n.id + ": quantized linear is missing scales");
        require(x.dtype() == DType::I8, Err::ShapeMismatch,
                n.id + ": quantized linear requires i8 input");
        return linear_i8(x, w, n.weight_if("b"), n.scalar("x_scale"), n.scalar("w_scale"));
    }
    return linear_f32(x, w, n.weight_if("b"));
}

}  // namespace

std::map<std::string, Tensor> run_all(const Graph& g, const std::map<std::string, Tensor>& inputs) {
    check_run_inputs(g, inputs);
    std::map<std::string, Tensor> values = inputs;
    for (const auto& id : topo_order(g)) {
        const Node& n = *g.find(id);
        std::vector<const Tensor*> in;
        for (const auto& name : n.inputs) {
            auto it = values.find(name);
            require(it != values.end(), Err::MissingInput, id + ": unresolved input " + name);
            in.push_back(&it->second);
        }
        Tensor out;
        switch (n.kind) {
            case OpKind::Conv: out = run_conv_node(n, *in[0]); break;
            case OpKind::Linear: out = run_linear_node(n, *in[0]); break;
            case OpKind::BatchNorm:
                out = batchnorm_f32(*in[0], n.weight("gamma"), n.weight("beta"),
                                    n.weight("mean"), n.weight("var"), n.scalar("epsilon"));
                break;
            case OpKind::Quantize: {
                quant::QuantParams p;
                p.scale = n.scalar("scale");
                out = quant::quantize_tensor(*in[0], p);
                break;
            }
            case OpKind::Dequantize: {
                quant::QuantParams p;
                p.scale = n.scalar("scale");
                out = quant::dequantize_tensor(*in[0], p);
                break;
            }
            default: out = apply_simple(n.kind, in, n.attrs); break;
        }
        values[id] = std::move(out);
    }
    return values;
}

std::map<std::string, Tensor> run(const Graph& g, const std::map<std::string, Tensor>& inputs) {
    auto values = run_all(g, inputs);
    std::map<std::string, Tensor> out;
    for (const auto& id : g.outputs) {
        auto it = values.find(id);
        require(it != values.end(), Err::MissingInput, "unknown output node " + id);
        out[id] = it->second;
    }
    return out;
}

TilePlan plan_tiles(std::span<const int64_t> image_spatial, std::span<const int64_t> window,
                    double overlap) {
    require(overlap >= 0.0 && overlap < 1.0, Err::BadOverlap,
            "overlap must be in [0, 1), got " + std::to_string(overlap));
    require(image_spatial.size() == window.size() && !window.empty(), Err::ShapeMismatch,
            "window rank must match image spatial rank");

    TilePlan plan;
    std::vector<std::vector<int64_t>> axis_starts(window.size());
    for (size_t a = 0; a < window.size(); ++a) {
        int64_t size = image_spatial[a];
        int64_t win = std::min(window[a], size);
        plan.window.push_back(win);
        int64_t stride = std::max<int64_t>(
            1, static_cast<int64_t>(std::floor(static_cast<double>(win) * (1.0 - overlap))));
        auto& starts = axis_starts[a];
        for (int64_t s = 0;; s += stride) {
            if (s + win >= size) {
                int64_t last = size - win;
                if (starts.empty() || starts.back() != last) starts.push_back(last);
                break;
            }
            starts.push_back(s);
        }
    }

    // Row-major cartesian product, deterministic tile order.
    std::vector<int64_t> cursor(window.size(), 0);
    while (true) {
        std::vector<int64_t> start(window.size());
        for (size_t a = 0; a < window.size(); ++a)
            start[a] = axis_starts[a][static_cast<size_t>(cursor[a])];
        plan.starts.push_back(std::move(start));
        size_t a = window.size();
        while (a-- > 0) {
            if (++cursor[a] < static_cast<int64_t>(axis_starts[a].size())) break;
            cursor[a] = 0;
            if (a == 0) return plan;
        }
        if (cursor == std::vector<int64_t>(window.size(), 0)) break;
    }
    return plan;
}

Tensor run_tiled(const Graph& g, const Tensor& image, std::span<const int64_t> window,
                 double overlap) {
    require(g.inputs.size() == 1 && g.outputs.size() == 1, Err::Precondition,
            "tiled inference needs a single-input single-output graph");
    require(image.rank() >= 3, Err::ShapeMismatch, "image needs [batch, channel, spatial...]");
    std::span<const int64_t> spatial(image.shape().data() + 2,
                                     static_cast<size_t>(image.rank() - 2));
    TilePlan plan = plan_tiles(spatial, window, overlap);

    // Spatial extents in the declaration are representative; supported
    // graphs are shape-polymorphic, so retarget the input to the tile.
    Graph tg = g;
    std::vector<int64_t> tile_shape = {image.shape()[0], image.shape()[1]};
    tile_shape.insert(tile_shape.end(), plan.window.begin(), plan.window.end());
    require(tg.inputs[0].shape.size() == tile_shape.size(), Err::ShapeMismatch,
            "image rank does not match the graph input");
    tg.inputs[0].shape = tile_shape;

    // The graph must map a tile to an output tile of the same spatial size.
    ShapeMap inferred = infer_shapes(tg, {{tg.inputs[0].name, tile_shape}});
    const auto& out_tile_shape = inferred.at(g.outputs[0]);
    require(out_tile_shape.size() == tile_shape.size(), Err::NonPreservingGraph,
            "tile output rank differs from input rank");
    for (size_t a = 2; a < tile_shape.size(); ++a)
        require(out_tile_shape[a] == tile_shape[a], Err::NonPreservingGraph,
                "tile output spatial extents differ from input");

    std::vector<int64_t> canvas_shape = {image.shape()[0], out_tile_shape[1]};
    canvas_shape.insert(canvas_shape.end(), spatial.begin(), spatial.end());
    Tensor canvas = Tensor::zeros(canvas_shape, DType::F32);
    Tensor counts = Tensor::zeros(canvas_shape, DType::F32);

    std::vector<int64_t> patch_start(image.shape().size(), 0);
    std::vector<int64_t> patch_size = tile_shape;
    std::vector<int64_t> out_start(canvas_shape.size(), 0);
    for (const auto& start : plan.starts) {
        for (size_t a = 0; a < start.size(); ++a) {
            patch_start[2 + a] = start[a];
            out_start[2 + a] = start[a];
        }
        Tensor tile = extract_patch(image, patch_start, patch_size);
        auto outputs = run(tg, {{tg.inputs[0].name, std::move(tile)}});
        accumulate_patch(canvas, counts, outputs.at(tg.outputs[0]), out_start);
    }

    auto cd = canvas.f32();
    auto nd = counts.f32();
    for (size_t i = 0; i < cd.size(); ++i) {
        require(nd[i] > 0.0f, Err::NonPreservingGraph, "tile plan left uncovered elements");
        cd[i] /= nd[i];
    }
    return canvas;
}

}  // namespace ebc::exec
