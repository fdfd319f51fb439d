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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ebc/error.hpp"

namespace ebc {

enum class DType : uint8_t { F32 = 0, I8 = 1, I32 = 2 };

inline size_t dtype_size(DType dt) {
    switch (dt) {
        case DType::F32: return 4;
        case DType::I8: return 1;
        case DType::I32: return 4;
    }
    return 0;
}

const char* dtype_name(DType dt);

/// Dense n-dimensional array, row-major (last axis fastest), layout
/// [batch, channel, spatial...]. Rank >= 1, all extents >= 1.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape, DType dtype);
    static Tensor from_f32(std::vector<int64_t> shape, std::vector<float> data);
    static Tensor from_i8(std::vector<int64_t> shape, std::vector<int8_t> data);
    static Tensor from_i32(std::vector<int64_t> shape, std::vector<int32_t> data);
    /// Takes raw bytes; length must be numel * dtype_size.
    static Tensor from_bytes(std::vector<int64_t> shape, DType dtype, std::vector<std::byte> bytes);

    DType dtype() const { return dtype_; }
    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t numel() const;
    size_t byte_size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<float> f32();
    std::span<const float> f32() const;
    std::span<int8_t> i8();
    std::span<const int8_t> i8() const;
    std::span<int32_t> i32();
    std::span<const int32_t> i32() const;

    std::byte* raw() { return data_.data(); }
    const std::byte* raw() const { return data_.data(); }

    /// Row-major flat offset of a full multi-index.
    int64_t offset_of(std::span<const int64_t> idx) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// Drops all leading extent-1 axes down to the requested rank.
    Tensor squeeze_to(int64_t target_rank) const;

private:
    Tensor(std::vector<int64_t> shape, DType dtype, std::vector<std::byte> data);
    void check_dtype(DType want) const;

    std::vector<int64_t> shape_;
    DType dtype_ = DType::F32;
    std::vector<std::byte> data_;
};

/// Rounds half-to-even, independent of the floating-point environment.
double round_half_even(double x);

/// Elementwise conversion. Float->I8 rounds half-to-even then clamps to
/// [-127, 127]; -128 is never produced. Integer->F32 is exact.
Tensor cast_saturating(const Tensor& t, DType to);

/// Copies the hyper-rectangular window [start, start+size) on every axis.
Tensor extract_patch(const Tensor& t, std::span<const int64_t> start,
                     std::span<const int64_t> size);

/// canvas[start .. start+patch.shape) += patch; counts over the same
/// region += 1. All three tensors are F32; counts shares canvas's shape.
/// Requires exclusive access to canvas and counts.
void accumulate_patch(Tensor& canvas, Tensor& counts, const Tensor& patch,
                      std::span<const int64_t> start);

/// ".ebt" container: magic "EBT1", u8 dtype code, u8 rank, rank x u64
/// little-endian extents, raw little-endian payload.
void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace ebc
