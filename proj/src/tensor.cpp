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
#include "ebc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace ebc {

const char* dtype_name(DType dt) {
    switch (dt) {
        case DType::F32: return "f32";
        case DType::I8: return "i8";
        case DType::I32: return "i32";
    }
    return "?";
}

namespace {

int64_t checked_numel(const std::vector<int64_t>& shape) {
    require(!shape.empty(), Err::ShapeMismatch, "tensor rank must be >= 1");
    int64_t n = 1;
    for (int64_t e : shape) {
        require(e >= 1, Err::ShapeMismatch, "tensor extents must be >= 1");
        n *= e;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> shape, DType dtype, std::vector<std::byte> data)
    : shape_(std::move(shape)), dtype_(dtype), data_(std::move(data)) {}

Tensor Tensor::zeros(std::vector<int64_t> shape, DType dtype) {
    int64_t n = checked_numel(shape);
    std::vector<std::byte> data(static_cast<size_t>(n) * dtype_size(dtype), std::byte{0});
    return Tensor(std::move(shape), dtype, std::move(data));
}

Tensor Tensor::from_bytes(std::vector<int64_t> shape, DType dtype, std::vector<std::byte> bytes) {
    int64_t n = checked_numel(shape);
    require(bytes.size() == static_cast<size_t>(n) * dtype_size(dtype), Err::LengthMismatch,
            "byte buffer does not match shape");
    return Tensor(std::move(shape), dtype, std::move(bytes));
}

namespace {

template <typename T>
Tensor make_from(std::vector<int64_t> shape, DType dtype, const std::vector<T>& data) {
    int64_t n = checked_numel(shape);
    require(static_cast<int64_t>(data.size()) == n, Err::LengthMismatch,
            "data length " + std::to_string(data.size()) + " != numel " + std::to_string(n));
    std::vector<std::byte> bytes(data.size() * sizeof(T));
    std::memcpy(bytes.data(), data.data(), bytes.size());
    return Tensor::from_bytes(std::move(shape), dtype, std::move(bytes));
}

}  // namespace

Tensor Tensor::from_f32(std::vector<int64_t> shape, std::vector<float> data) {
    return make_from(std::move(shape), DType::F32, data);
}

Tensor Tensor::from_i8(std::vector<int64_t> shape, std::vector<int8_t> data) {
    return make_from(std::move(shape), DType::I8, data);
}

Tensor Tensor::from_i32(std::vector<int64_t> shape, std::vector<int32_t> data) {
    return make_from(std::move(shape), DType::I32, data);
}

int64_t Tensor::numel() const {
    int64_t n = 1;
    for (int64_t e : shape_) n *= e;
    return shape_.empty() ? 0 : n;
}

void Tensor::check_dtype(DType want) const {
    require(dtype_ == want, Err::ShapeMismatch,
            std::string("expected dtype ") + dtype_name(want) + ", got " + dtype_name(dtype_));
}

std::span<float> Tensor::f32() {
    check_dtype(DType::F32);
    return {reinterpret_cast<float*>(data_.data()), static_cast<size_t>(numel())};
}

std::span<const float> Tensor::f32() const {
    check_dtype(DType::F32);
    return {reinterpret_cast<const float*>(data_.data()), static_cast<size_t>(numel())};
}

std::span<int8_t> Tensor::i8() {
    check_dtype(DType::I8);
    return {reinterpret_cast<int8_t*>(data_.data()), static_cast<size_t>(numel())};
}

std::span<const int8_t> Tensor::i8() const {
    check_dtype(DType::I8);
    return {reinterpret_cast<const int8_t*>(data_.data()), static_cast<size_t>(numel())};
}

std::span<int32_t> Tensor::i32() {
    check_dtype(DType::I32);
    return {reinterpret_cast<int32_t*>(data_.data()), static_cast<size_t>(numel())};
}

std::span<const int32_t> Tensor::i32() const {
    check_dtype(DType::I32);
    return {reinterpret_cast<const int32_t*>(data_.data()), static_cast<size_t>(numel())};
}

int64_t Tensor::offset_of(std::span<const int64_t> idx) const {
    require(static_cast<int64_t>(idx.size()) == rank(), Err::ShapeMismatch,
            "index rank does not match tensor rank");
    int64_t off = 0;
    for (size_t a = 0; a < idx.size(); ++a) {
        require(idx[a] >= 0 && idx[a] < shape_[a], Err::OutOfBounds,
                "index " + std::to_string(idx[a]) + " out of range on axis " + std::to_string(a));
        off = off * shape_[a] + idx[a];
    }
    return off;
}

Tensor Tensor::squeeze_to(int64_t target_rank) const {
    require(target_rank >= 1 && target_rank <= rank(), Err::ShapeMismatch, "bad squeeze rank");
    std::vector<int64_t> shape(shape_);
    while (static_cast<int64_t>(shape.size()) > target_rank && shape.front() == 1)
        shape.erase(shape.begin());
    require(static_cast<int64_t>(shape.size()) == target_rank, Err::ShapeMismatch,
            "leading axes are not singleton");
    return Tensor::from_bytes(std::move(shape), dtype_, data_);
}

double round_half_even(double x) {
    double f = std::floor(x);
    double diff = x - f;
    if (diff > 0.5) return f + 1.0;
    if (diff < 0.5) return f;
    return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

namespace {

double element_as_double(const Tensor& t, int64_t i) {
    switch (t.dtype()) {
        case DType::F32: return t.f32()[static_cast<size_t>(i)];
        case DType::I8: return t.i8()[static_cast<size_t>(i)];
        case DType::I32: return t.i32()[static_cast<size_t>(i)];
    }
    return 0.0;
}

}  // namespace

Tensor cast_saturating(const Tensor& t, DType to) {
    Tensor out = Tensor::zeros(t.shape(), to);
    int64_t n = t.numel();
    switch (to) {
        case DType::F32: {
            auto dst = out.f32();
            for (int64_t i = 0; i < n; ++i) dst[static_cast<size_t>(i)] = static_cast<float>(element_as_double(t, i));
            break;
        }
        case DType::I8: {
            auto dst = out.i8();
            for (int64_t i = 0; i < n; ++i) {
                double r = round_half_even(element_as_double(t, i));
                r = std::clamp(r, -127.0, 127.0);
                dst[static_cast<size_t>(i)] = static_cast<int8_t>(r);
            }
            break;
        }
        case DType::I32: {
            auto dst = out.i32();
            for (int64_t i = 0; i < n; ++i) {
                double r = round_half_even(element_as_double(t, i));
                r = std::clamp(r, -2147483648.0, 2147483647.0);
                dst[static_cast<size_t>(i)] = static_cast<int32_t>(r);
            }
            break;
        }
    }
    return out;
}

namespace {

void check_window(const Tensor& t, std::span<const int64_t> start, std::span<const int64_t> size) {
    require(static_cast<int64_t>(start.size()) == t.rank() &&
                static_cast<int64_t>(size.size()) == t.rank(),
            Err::ShapeMismatch, "window rank does not match tensor rank");
    for (size_t a = 0; a < start.size(); ++a) {
        require(size[a] >= 1, Err::ShapeMismatch, "window extents must be >= 1");
        require(start[a] >= 0 && start[a] + size[a] <= t.shape()[a], Err::OutOfBounds,
                "window exceeds bounds on axis " + std::to_string(a));
    }
}

// Walks the window as (outer multi-index) x (contiguous last-axis row).
template <typename Fn>
void for_each_row(std::span<const int64_t> start, std::span<const int64_t> size,
                  const std::vector<int64_t>& src_shape, Fn&& fn) {
    size_t rank = start.size();
    int64_t row_len = size[rank - 1];
    int64_t rows = 1;
    for (size_t a = 0; a + 1 < rank; ++a) rows *= size[a];

    std::vector<int64_t> idx(rank, 0);
    for (int64_t r = 0; r < rows; ++r) {
        int64_t src_off = 0;
        for (size_t a = 0; a < rank; ++a) src_off = src_off * src_shape[a] + start[a] + idx[a];
        fn(r * row_len, src_off, row_len);
        for (size_t a = rank - 1; a-- > 0;) {
            if (++idx[a] < size[a]) break;
            idx[a] = 0;
        }
    }
}

}  // namespace

Tensor extract_patch(const Tensor& t, std::span<const int64_t> start,
                     std::span<const int64_t> size) {
    check_window(t, start, size);
    Tensor out = Tensor::zeros(std::vector<int64_t>(size.begin(), size.end()), t.dtype());
    size_t esz = dtype_size(t.dtype());
    for_each_row(start, size, t.shape(), [&](int64_t dst_off, int64_t src_off, int64_t len) {
        std::memcpy(out.raw() + static_cast<size_t>(dst_off) * esz,
                    t.raw() + static_cast<size_t>(src_off) * esz,
                    static_cast<size_t>(len) * esz);
    });
    return out;
}

void accumulate_patch(Tensor& canvas, Tensor& counts, const Tensor& patch,
                      std::span<const int64_t> start) {
    require(counts.same_shape(canvas), Err::ShapeMismatch, "counts shape must match canvas");
    check_window(canvas, start, patch.shape());
    auto dst = canvas.f32();
    auto cnt = counts.f32();
    auto src = patch.f32();
    for_each_row(start, patch.shape(), canvas.shape(),
                 [&](int64_t patch_off, int64_t canvas_off, int64_t len) {
                     for (int64_t i = 0; i < len; ++i) {
                         dst[static_cast<size_t>(canvas_off + i)] += src[static_cast<size_t>(patch_off + i)];
                         cnt[static_cast<size_t>(canvas_off + i)] += 1.0f;
                     }
                 });
}

namespace {

constexpr char kTensorMagic[4] = {'E', 'B', 'T', '1'};

void write_u64_le(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), Err::Io, "cannot open " + path.string());
    os.write(kTensorMagic, 4);
    uint8_t code = static_cast<uint8_t>(t.dtype());
    uint8_t rank = static_cast<uint8_t>(t.rank());
    os.write(reinterpret_cast<const char*>(&code), 1);
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (int64_t e : t.shape()) write_u64_le(os, static_cast<uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.byte_size()));
    require(os.good(), Err::Io, "write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), Err::Io, "cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    require(is.good() && std::memcmp(magic, kTensorMagic, 4) == 0, Err::BadMagic,
            "not an .ebt file: " + path.string());
    uint8_t code = 0, rank = 0;
    is.read(reinterpret_cast<char*>(&code), 1);
    is.read(reinterpret_cast<char*>(&rank), 1);
    require(is.good() && code <= 2 && rank >= 1, Err::Io, "corrupt .ebt header");
    std::vector<int64_t> shape(rank);
    for (auto& e : shape) e = static_cast<int64_t>(read_u64_le(is));
    require(is.good(), Err::Io, "corrupt .ebt header");
    DType dt = static_cast<DType>(code);
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    std::vector<std::byte> bytes(static_cast<size_t>(n) * dtype_size(dt));
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(is.gcount() == static_cast<std::streamsize>(bytes.size()), Err::Io,
            "truncated .ebt payload: " + path.string());
    return Tensor::from_bytes(std::move(shape), dt, std::move(bytes));
}

const char* err_name(Err code) {
    switch (code) {
        case Err::LengthMismatch: return "LengthMismatch";
        case Err::OutOfBounds: return "OutOfBounds";
        case Err::ShapeMismatch: return "ShapeMismatch";
        case Err::CycleDetected: return "CycleDetected";
        case Err::ShapeConflict: return "ShapeConflict";
        case Err::Io: return "Io";
        case Err::BadMagic: return "BadMagic";
        case Err::ChecksumMismatch: return "ChecksumMismatch";
        case Err::UnknownOpKind: return "UnknownOpKind";
        case Err::AccumulatorOverflow: return "AccumulatorOverflow";
        case Err::MissingInput: return "MissingInput";
        case Err::BadOverlap: return "BadOverlap";
        case Err::NonPreservingGraph: return "NonPreservingGraph";
        case Err::EmptyTensor: return "EmptyTensor";
        case Err::DegenerateRange: return "DegenerateRange";
        case Err::MissingParams: return "MissingParams";
        case Err::PlanViolatesGroups: return "PlanViolatesGroups";
        case Err::WouldEmptyLayer: return "WouldEmptyLayer";
        case Err::UnsupportedForTraining: return "UnsupportedForTraining";
        case Err::PlacementFailure: return "PlacementFailure";
        case Err::CounterUnavailable: return "CounterUnavailable";
        case Err::DegenerateInput: return "DegenerateInput";
        case Err::ConfigError: return "ConfigError";
        case Err::Precondition: return "Precondition";
    }
    return "Error";
}

}  // namespace ebc
