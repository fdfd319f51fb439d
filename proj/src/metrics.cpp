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
#include "ebc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

namespace ebc::metrics {

double pearson(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), Err::ShapeMismatch, "pearson requires equal shapes");
    auto ad = a.f32();
    auto bd = b.f32();
    require(ad.size() >= 2, Err::DegenerateInput, "pearson needs at least 2 elements");

    double mean_a = 0.0, mean_b = 0.0;
    for (size_t i = 0; i < ad.size(); ++i) {
        mean_a += ad[i];
        mean_b += bd[i];
    }
    mean_a /= static_cast<double>(ad.size());
    mean_b /= static_cast<double>(bd.size());

    double cov = 0.0, var_a = 0.0, var_b = 0.0;
    for (size_t i = 0; i < ad.size(); ++i) {
        double da = ad[i] - mean_a;
        double db = bd[i] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    require(var_a > 0.0 && var_b > 0.0, Err::DegenerateInput, "pearson of a constant input");
    return cov / std::sqrt(var_a * var_b);
}

namespace {

inline bool foreground(float v, double threshold) { return static_cast<double>(v) > threshold; }

}  // namespace

double dice(const Tensor& pred, const Tensor& gt, double threshold) {
    require(pred.same_shape(gt), Err::ShapeMismatch, "dice requires equal shapes");
    auto pd = pred.f32();
    auto gd = gt.f32();
    int64_t inter = 0, a = 0, b = 0;
    for (size_t i = 0; i < pd.size(); ++i) {
        bool p = foreground(pd[i], threshold);
        bool g = foreground(gd[i], 0.5);
        a += p;
        b += g;
        inter += p && g;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

Tensor connected_components(const Tensor& mask) {
    require(mask.rank() == 2 || mask.rank() == 3, Err::ShapeMismatch,
            "connected_components expects spatial rank 2 or 3");
    const auto& shape = mask.shape();
    int64_t dz = mask.rank() == 3 ? shape[0] : 1;
    int64_t dy = shape[mask.rank() == 3 ? 1 : 0];
    int64_t dx = shape[mask.rank() == 3 ? 2 : 1];
    int64_t n = dz * dy * dx;

    std::vector<bool> fg(static_cast<size_t>(n));
    if (mask.dtype() == DType::F32) {
        auto md = mask.f32();
        for (int64_t i = 0; i < n; ++i) fg[static_cast<size_t>(i)] = md[static_cast<size_t>(i)] > 0.5f;
    } else if (mask.dtype() == DType::I32) {
        auto md = mask.i32();
        for (int64_t i = 0; i < n; ++i) fg[static_cast<size_t>(i)] = md[static_cast<size_t>(i)] != 0;
    } else {
        auto md = mask.i8();
        for (int64_t i = 0; i < n; ++i) fg[static_cast<size_t>(i)] = md[static_cast<size_t>(i)] != 0;
    }

    Tensor labels = Tensor::zeros(shape, DType::I32);
    auto ld = labels.i32();
    int32_t next = 1;
    std::vector<int64_t> stack;
    for (int64_t seed = 0; seed < n; ++seed) {
        if (!fg[static_cast<size_t>(seed)] || ld[static_cast<size_t>(seed)] != 0) continue;
        // Face-neighbour flood fill from the first unlabeled pixel.
        stack.push_back(seed);
        ld[static_cast<size_t>(seed)] = next;
        while (!stack.empty()) {
            int64_t at = stack.back();
            stack.pop_back();
            int64_t z = at / (dy * dx), rest = at % (dy * dx);
            int64_t y = rest / dx, x = rest % dx;
            const int64_t nbr[6][3] = {{z - 1, y, x}, {z + 1, y, x}, {z, y - 1, x},
                                       {z, y + 1, x}, {z, y, x - 1}, {z, y, x + 1}};
            for (const auto& c : nbr) {
                if (c[0] < 0 || c[0] >= dz || c[1] < 0 || c[1] >= dy || c[2] < 0 || c[2] >= dx)
                    continue;
                int64_t idx = (c[0] * dy + c[1]) * dx + c[2];
                if (fg[static_cast<size_t>(idx)] && ld[static_cast<size_t>(idx)] == 0) {
                    ld[static_cast<size_t>(idx)] = next;
                    stack.push_back(idx);
                }
            }
        }
        ++next;
    }
    return labels;
}

double ap50(const Tensor& pred, const Tensor& gt) {
    require(pred.same_shape(gt), Err::ShapeMismatch, "ap50 requires equal shapes");
    auto pd = pred.i32();
    auto gd = gt.i32();

    std::map<int32_t, int64_t> pred_area, gt_area;
    std::map<std::pair<int32_t, int32_t>, int64_t> overlap;
    for (size_t i = 0; i < pd.size(); ++i) {
        if (pd[i] > 0) ++pred_area[pd[i]];
        if (gd[i] > 0) ++gt_area[gd[i]];
        if (pd[i] > 0 && gd[i] > 0) ++overlap[{pd[i], gd[i]}];
    }
    if (pred_area.empty() && gt_area.empty()) return 1.0;

    struct Pair {
        double iou;
        int32_t p, g;
    };
    std::vector<Pair> pairs;
    for (const auto& [key, inter] : overlap) {
        double uni = static_cast<double>(pred_area[key.first] + gt_area[key.second] - inter);
        pairs.push_back({static_cast<double>(inter) / uni, key.first, key.second});
    }
    // Greedy: best IoU first; ties by ascending (pred, gt) id for determinism.
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.p != b.p) return a.p < b.p;
        return a.g < b.g;
    });

    std::map<int32_t, bool> pred_used, gt_used;
    int64_t tp = 0;
    for (const auto& pair : pairs) {
        if (pair.iou < 0.5) break;
        if (pred_used[pair.p] || gt_used[pair.g]) continue;
        pred_used[pair.p] = gt_used[pair.g] = true;
        ++tp;
    }
    int64_t fp = static_cast<int64_t>(pred_area.size()) - tp;
    int64_t fn = static_cast<int64_t>(gt_area.size()) - tp;
    return static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
}

}  // namespace ebc::metrics
