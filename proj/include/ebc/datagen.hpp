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

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ebc/tensor.hpp"

namespace ebc::datagen {

enum class Task { Denoise3d, Labelfree3d, Semantic3d, Instance2d };

const char* task_name(Task t);
std::optional<Task> task_from(const std::string& name);

/// Deterministic phantom recipe: identical specs generate bit-identical
/// tensors.
struct PhantomSpec {
    Task task = Task::Denoise3d;
    std::vector<int64_t> shape;  // [1, 1, spatial...]
    int64_t min_objects = 6;
    int64_t max_objects = 12;
    double noise_sigma = 0.3;
    double amplitude = 1.0;
    uint64_t seed = 0;
};

/// Desk-scale defaults: 3d tasks [1,1,32,64,64], 2d task [1,1,256,256].
PhantomSpec default_spec(Task t);

/// (noisy, clean): clean is a sum of random Gaussian blobs, noisy adds
/// N(0, noise_sigma).
std::pair<Tensor, Tensor> gen_denoise(const PhantomSpec& spec);

/// (image, label map): pairwise-disjoint random ellipses with distinct
/// positive ids; image is smoothed intensity plus noise. Throws
/// PlacementFailure when an ellipse cannot be placed in 1000 attempts.
std::pair<Tensor, Tensor> gen_instances2d(const PhantomSpec& spec);

/// (image, binary mask): blobs thresholded into a foreground mask.
std::pair<Tensor, Tensor> gen_semantic3d(const PhantomSpec& spec);

/// (input, target): target is a fixed band-pass filter + gain of the input
/// texture, learnable by a small network.
std::pair<Tensor, Tensor> gen_labelfree(const PhantomSpec& spec);

std::pair<Tensor, Tensor> generate(const PhantomSpec& spec);

/// JSON sidecar echoing the spec, written next to persisted phantom pairs.
std::string spec_json(const PhantomSpec& spec);

}  // namespace ebc::datagen
