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

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ebc/graph.hpp"
#include "ebc/tensor.hpp"
#include "ebc/trainer.hpp"

namespace ebc::prune {

enum class Criterion { L1, L2, FPGM };

const char* criterion_name(Criterion c);
std::optional<Criterion> criterion_from(const std::string& name);

/// Kept output-filter indices per Conv node, strictly increasing, nonempty.
struct PrunePlan {
    std::map<std::string, std::vector<int64_t>> keep;
    double sparsity = 0.0;
};

/// Convs whose output channels must share one keep set, plus the nodes
/// that induce the constraint. Groups partition the graph's convs;
/// unprunable groups are kept in full.
struct DependencyGroup {
    std::vector<std::string> members;
    std::vector<std::string> couplers;
    bool prunable = true;
};

/// Per-output-filter importance; lower score means prune first.
/// L1: sum|w_f|, L2: sqrt(sum w_f^2), FPGM: summed Euclidean distance to
/// every other filter (flattened, unnormalized).
std::vector<double> importance(const Tensor& w, Criterion c);

/// Prunes the floor(sparsity*n) lowest-scoring filters, always keeping at
/// least one; ties prune the lower index first. Returns sorted kept indices.
std::vector<int64_t> select_filters(std::span<const double> scores, double sparsity);

/// Channel-dependency analysis: convs meeting at an Add share a group;
/// convs feeding a Concat stay independent (consumers remap by offset);
/// convs that produce graph outputs are unprunable.
std::vector<DependencyGroup> build_groups(const Graph& g);

/// A group-respecting plan from importance scores (summed across group
/// members) at the given sparsity.
PrunePlan make_plan(const Graph& g, const std::vector<DependencyGroup>& groups, Criterion c,
                    double sparsity);

/// Physically removes pruned filters and the matching consumer input
/// slices, including across Concat offsets. Output equals the zero-masked
/// original within 1e-5.
Graph apply_prune(const Graph& g, const PrunePlan& plan);

/// Total weight elements across all nodes.
int64_t count_params(const Graph& g);

/// Conv/Linear multiply-accumulates x2 at batch 1 over the declared input
/// shapes.
int64_t count_flops(const Graph& g);

using MetricFn = std::function<double(const Tensor& pred, const Tensor& target)>;

struct FinetuneCfg {
    train::LossKind loss = train::LossKind::MSE;
    train::SGDConfig sgd;
};

struct SweepRow {
    Criterion criterion;
    double ratio;
    double accuracy;
    int64_t params;
    int64_t flops;
};

/// One row per (criterion, ratio): prune, optionally fine-tune, evaluate
/// the task metric over the paired samples, count params and flops.
std::vector<SweepRow> sweep(const Graph& g,
                            const std::vector<std::pair<Tensor, Tensor>>& eval_data,
                            const MetricFn& metric, const std::vector<Criterion>& criteria,
                            const std::vector<double>& ratios,
                            const std::optional<FinetuneCfg>& finetune);

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace ebc::prune
