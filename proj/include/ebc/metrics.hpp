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

#include "ebc/tensor.hpp"

namespace ebc::metrics {

/// Sample Pearson correlation over flattened elements. Throws
/// DegenerateInput when either side is constant or shorter than 2.
double pearson(const Tensor& a, const Tensor& b);

/// Binarizes pred at threshold, then 2|A&B| / (|A|+|B|). Both masks empty
/// scores 1.0.
double dice(const Tensor& pred, const Tensor& gt, double threshold);

/// Labels connected foreground regions of a rank-2 or rank-3 mask:
/// 4-connectivity in 2d, 6-connectivity in 3d, labels assigned in
/// first-encounter scan order starting at 1. Returns an I32 label map.
Tensor connected_components(const Tensor& mask);

/// Instance accuracy TP / (TP + FP + FN) with greedy descending-IoU
/// matching at IoU >= 0.5, each instance used at most once. Label maps are
/// I32 tensors, 0 = background. Both empty scores 1.0.
double ap50(const Tensor& pred, const Tensor& gt);

}  // namespace ebc::metrics
