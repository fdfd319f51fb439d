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
#include "ebc/datagen.hpp"

#include <algorithm>
#include <cmath>

#include "ebc/rng.hpp"
#include "json.hpp"

namespace ebc::datagen {

const char* task_name(Task t) {
    switch (t) {
        case Task::Denoise3d: return "denoise3d";
        case Task::Labelfree3d: return "labelfree3d";
        case Task::Semantic3d: return "semantic3d";
        case Task::Instance2d: return "instance2d";
    }
    return "?";
}

std::optional<Task> task_from(const std::string& name) {
    if (name == "denoise3d") return Task::Denoise3d;
    if (name == "labelfree3d") return Task::Labelfree3d;
    if (name == "semantic3d") return Task::Semantic3d;
    if (name == "instance2d") return Task::Instance2d;
    return std::nullopt;
}

PhantomSpec default_spec(Task t) {
    PhantomSpec spec;
    spec.task = t;
    spec.shape = t == Task::Instance2d ? std::vector<int64_t>{1, 1, 256, 256}
                                       : std::vector<int64_t>{1, 1, 32, 64, 64};
    return spec;
}

namespace {

struct SpatialDims {
    int64_t z, y, x;  // z = 1 for 2d
};

SpatialDims spatial_of(const PhantomSpec& spec, size_t want_rank) {
    require(spec.shape.size() == want_rank + 2 && spec.shape[0] == 1 && spec.shape[1] == 1,
            Err::Precondition, "phantom shape must be [1, 1, spatial...]");
    if (want_rank == 2) return {1, spec.shape[2], spec.shape[3]};
    return {spec.shape[2], spec.shape[3], spec.shape[4]};
}

// Sum of Gaussian blobs, evaluated inside +-3 sigma boxes.
void paint_blobs(std::span<float> img, const SpatialDims& d, Rng& rng, int64_t count,
                 double amplitude) {
    for (int64_t b = 0; b < count; ++b) {
        double cz = rng.uniform(0.0, static_cast<double>(d.z));
        double cy = rng.uniform(0.0, static_cast<double>(d.y));
        double cx = rng.uniform(0.0, static_cast<double>(d.x));
        double sz = d.z > 1 ? rng.uniform(2.5, static_cast<double>(d.z) / 3.0) : 1.0;
        double sy = rng.uniform(4.0, static_cast<double>(d.y) / 3.0);
        double sx = rng.uniform(4.0, static_cast<double>(d.x) / 3.0);
        double amp = amplitude * rng.uniform(0.9, 1.5);

        int64_t z0 = std::max<int64_t>(0, static_cast<int64_t>(cz - 3 * sz));
        int64_t z1 = std::min(d.z, static_cast<int64_t>(cz + 3 * sz) + 1);
        int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(cy - 3 * sy));
        int64_t y1 = std::min(d.y, static_cast<int64_t>(cy + 3 * sy) + 1);
        int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(cx - 3 * sx));
        int64_t x1 = std::min(d.x, static_cast<int64_t>(cx + 3 * sx) + 1);
        for (int64_t z = z0; z < z1; ++z)
            for (int64_t y = y0; y < y1; ++y)
                for (int64_t x = x0; x < x1; ++x) {
                    double dz = (static_cast<double>(z) - cz) / sz;
                    double dy = (static_cast<double>(y) - cy) / sy;
                    double dx = (static_cast<double>(x) - cx) / sx;
                    img[static_cast<size_t>((z * d.y + y) * d.x + x)] +=
                        static_cast<float>(amp * std::exp(-(dz * dz + dy * dy + dx * dx) / 2.0));
                }
    }
}

void add_noise(std::span<float> img, Rng& rng, double sigma) {
    if (sigma <= 0.0) return;
    for (auto& v : img) v += static_cast<float>(rng.normal(0.0, sigma));
}

// Separable box blur along the last axis trio, zero padding at the borders.
void box_blur(std::vector<float>& img, const SpatialDims& d, int64_t radius) {
    auto pass = [&](int64_t stride, int64_t extent, int64_t lines, int64_t line_stride) {
        std::vector<float> line(static_cast<size_t>(extent));
        for (int64_t l = 0; l < lines; ++l) {
            int64_t base = (l / stride) * stride * extent + (l % stride);
            (void)line_stride;
            for (int64_t i = 0; i < extent; ++i)
                line[static_cast<size_t>(i)] = img[static_cast<size_t>(base + i * stride)];
            for (int64_t i = 0; i < extent; ++i) {
                double acc = 0.0;
                int64_t lo = std::max<int64_t>(0, i - radius);
                int64_t hi = std::min(extent - 1, i + radius);
                for (int64_t j = lo; j <= hi; ++j) acc += line[static_cast<size_t>(j)];
                img[static_cast<size_t>(base + i * stride)] =
                    static_cast<float>(acc / static_cast<double>(2 * radius + 1));
            }
        }
    };
    // x axis
    pass(1, d.x, d.z * d.y, d.x);
    // y axis
    pass(d.x, d.y, d.z * d.x, 1);
    // z axis
    if (d.z > 1) pass(d.y * d.x, d.z, d.y * d.x, 1);
}

}  // namespace

std::pair<Tensor, Tensor> gen_denoise(const PhantomSpec& spec) {
    SpatialDims d = spatial_of(spec, 3);
    Rng rng(spec.seed);
    Tensor clean = Tensor::zeros(spec.shape, DType::F32);
    int64_t count = rng.uniform_int(spec.min_objects, spec.max_objects);
    paint_blobs(clean.f32(), d, rng, count, spec.amplitude);
    Tensor noisy = clean;
    add_noise(noisy.f32(), rng, spec.noise_sigma);
    return {std::move(noisy), std::move(clean)};
}

std::pair<Tensor, Tensor> gen_instances2d(const PhantomSpec& spec) {
    SpatialDims d = spatial_of(spec, 2);
    Rng rng(spec.seed);
    Tensor labels = Tensor::zeros({d.y, d.x}, DType::I32);
    auto ld = labels.i32();
    int64_t count = rng.uniform_int(spec.min_objects, spec.max_objects);

    std::vector<double> intensity(static_cast<size_t>(count) + 1, 0.0);
    for (int32_t id = 1; id <= count; ++id) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            double a = rng.uniform(4.0, static_cast<double>(std::min(d.y, d.x)) / 8.0);
            double b = rng.uniform(4.0, static_cast<double>(std::min(d.y, d.x)) / 8.0);
            double theta = rng.uniform(0.0, M_PI);
            double cy = rng.uniform(a + b, static_cast<double>(d.y) - (a + b));
            double cx = rng.uniform(a + b, static_cast<double>(d.x) - (a + b));
            double ct = std::cos(theta), st = std::sin(theta);

            // Collect candidate pixels; abort on any collision (1 px margin).
            std::vector<int64_t> pixels;
            bool collide = false;
            int64_t r = static_cast<int64_t>(std::ceil(std::max(a, b))) + 1;
            for (int64_t y = static_cast<int64_t>(cy) - r;
                 y <= static_cast<int64_t>(cy) + r && !collide; ++y)
                for (int64_t x = static_cast<int64_t>(cx) - r;
                     x <= static_cast<int64_t>(cx) + r && !collide; ++x) {
                    if (y < 0 || y >= d.y || x < 0 || x >= d.x) continue;
                    double ry = (static_cast<double>(y) - cy);
                    double rx = (static_cast<double>(x) - cx);
                    double u = (rx * ct + ry * st) / a;
                    double v = (-rx * st + ry * ct) / b;
                    double m = u * u + v * v;
                    if (m > 1.3) continue;  // outside the margin ring
                    if (ld[static_cast<size_t>(y * d.x + x)] != 0) {
                        collide = true;
                        break;
                    }
                    if (m <= 1.0) pixels.push_back(y * d.x + x);
                }
            if (collide || pixels.empty()) continue;
            for (int64_t p : pixels) ld[static_cast<size_t>(p)] = id;
            intensity[static_cast<size_t>(id)] = rng.uniform(0.6, 1.0) * spec.amplitude;
            placed = true;
        }
        require(placed, Err::PlacementFailure,
                "could not place instance " + std::to_string(id) + " in 1000 attempts");
    }

    Tensor image = Tensor::zeros(spec.shape, DType::F32);
    auto im = image.f32();
    for (int64_t i = 0; i < d.y * d.x; ++i)
        im[static_cast<size_t>(i)] =
            static_cast<float>(intensity[static_cast<size_t>(ld[static_cast<size_t>(i)])]);
    std::vector<float> buf(im.begin(), im.end());
    box_blur(buf, d, 1);
    std::copy(buf.begin(), buf.end(), im.begin());
    add_noise(im, rng, spec.noise_sigma * 0.1);
    return {std::move(image), std::move(labels)};
}

std::pair<Tensor, Tensor> gen_semantic3d(const PhantomSpec& spec) {
    SpatialDims d = spatial_of(spec, 3);
    Rng rng(spec.seed);
    Tensor field = Tensor::zeros(spec.shape, DType::F32);
    int64_t count = rng.uniform_int(spec.min_objects, spec.max_objects);
    paint_blobs(field.f32(), d, rng, count, spec.amplitude);

    Tensor mask = Tensor::zeros(spec.shape, DType::F32);
    auto md = mask.f32();
    auto fd = field.f32();
    float threshold = static_cast<float>(0.5 * spec.amplitude);
    for (size_t i = 0; i < fd.size(); ++i) md[i] = fd[i] > threshold ? 1.0f : 0.0f;

    Tensor image = field;
    add_noise(image.f32(), rng, spec.noise_sigma);
    return {std::move(image), std::move(mask)};
}

std::pair<Tensor, Tensor> gen_labelfree(const PhantomSpec& spec) {
    SpatialDims d = spatial_of(spec, 3);
    Rng rng(spec.seed);

    // Smooth random texture: blurred white noise.
    std::vector<float> tex(static_cast<size_t>(d.z * d.y * d.x));
    for (auto& v : tex) v = static_cast<float>(rng.normal(0.0, 1.0));
    box_blur(tex, d, 1);
    box_blur(tex, d, 1);

    Tensor input = Tensor::from_f32(spec.shape, tex);

    // Target: band-pass of the texture (small blur minus large blur), gained
    // and squashed.
    std::vector<float> lo = tex, hi = tex;
    box_blur(hi, d, 1);
    box_blur(lo, d, 1);
    box_blur(lo, d, 2);
    std::vector<float> target(tex.size());
    double gain = 4.0 * spec.amplitude;
    for (size_t i = 0; i < tex.size(); ++i)
        target[i] = static_cast<float>(std::tanh(gain * (hi[i] - lo[i])));
    Tensor target_t = Tensor::from_f32(spec.shape, target);
    add_noise(input.f32(), rng, spec.noise_sigma * 0.1);
    return {std::move(input), std::move(target_t)};
}

std::pair<Tensor, Tensor> generate(const PhantomSpec& spec) {
    switch (spec.task) {
        case Task::Denoise3d: return gen_denoise(spec);
        case Task::Labelfree3d: return gen_labelfree(spec);
        case Task::Semantic3d: return gen_semantic3d(spec);
        case Task::Instance2d: return gen_instances2d(spec);
    }
    fail(Err::Precondition, "unknown task");
}

std::string spec_json(const PhantomSpec& spec) {
    nlohmann::ordered_json j;
    j["task"] = task_name(spec.task);
    j["shape"] = spec.shape;
    j["objects"] = {spec.min_objects, spec.max_objects};
    j["noise_sigma"] = spec.noise_sigma;
    j["amplitude"] = spec.amplitude;
    j["seed"] = spec.seed;
    return j.dump(2);
}

}  // namespace ebc::datagen
