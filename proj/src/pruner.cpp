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
#include "ebc/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>
#include <sstream>

#include "ebc/executor.hpp"

namespace ebc::prune {

const char* criterion_name(Criterion c) {
    switch (c) {
        case Criterion::L1: return "L1";
        case Criterion::L2: return "L2";
        case Criterion::FPGM: return "FPGM";
    }
    return "?";
}

std::optional<Criterion> criterion_from(const std::string& name) {
    if (name == "L1" || name == "l1") return Criterion::L1;
    if (name == "L2" || name == "l2") return Criterion::L2;
    if (name == "FPGM" || name == "fpgm") return Criterion::FPGM;
    return std::nullopt;
}

std::vector<double> importance(const Tensor& w, Criterion c) {
    require(w.rank() >= 2, Err::ShapeMismatch, "importance expects a conv weight");
    int64_t filters = w.shape()[0];
    int64_t per = w.numel() / filters;
    auto wd = w.f32();

    std::vector<double> scores(static_cast<size_t>(filters), 0.0);
    switch (c) {
        case Criterion::L1:
            for (int64_t f = 0; f < filters; ++f) {
                double s = 0.0;
                for (int64_t i = 0; i < per; ++i)
                    s += std::abs(static_cast<double>(wd[static_cast<size_t>(f * per + i)]));
                scores[static_cast<size_t>(f)] = s;
            }
            break;
        case Criterion::L2:
            for (int64_t f = 0; f < filters; ++f) {
                double s = 0.0;
                for (int64_t i = 0; i < per; ++i) {
                    double v = wd[static_cast<size_t>(f * per + i)];
                    s += v * v;
                }
                scores[static_cast<size_t>(f)] = std::sqrt(s);
            }
            break;
        case Criterion::FPGM:
            for (int64_t f = 0; f < filters; ++f) {
                double total = 0.0;
                for (int64_t o = 0; o < filters; ++o) {
                    if (o == f) continue;
                    double d2 = 0.0;
                    for (int64_t i = 0; i < per; ++i) {
                        double diff = static_cast<double>(wd[static_cast<size_t>(f * per + i)]) -
                                      static_cast<double>(wd[static_cast<size_t>(o * per + i)]);
                        d2 += diff * diff;
                    }
                    total += std::sqrt(d2);
                }
                scores[static_cast<size_t>(f)] = total;
            }
            break;
    }
    return scores;
}

std::vector<int64_t> select_filters(std::span<const double> scores, double sparsity) {
    require(sparsity >= 0.0 && sparsity < 1.0, Err::Precondition, "sparsity must be in [0, 1)");
    int64_t n = static_cast<int64_t>(scores.size());
    int64_t prune_count =
        std::min<int64_t>(static_cast<int64_t>(std::floor(sparsity * static_cast<double>(n))),
                          n - 1);

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    // Lowest score pruned first; equal scores prune the lower index first.
    std::stable_sort(order.begin(), order.end(),
                     [&](int64_t a, int64_t b) { return scores[static_cast<size_t>(a)] <
                                                        scores[static_cast<size_t>(b)]; });
    std::vector<int64_t> kept(order.begin() + prune_count, order.end());
    std::sort(kept.begin(), kept.end());
    return kept;
}

namespace {

bool passes_channels(OpKind kind) {
    switch (kind) {
        case OpKind::ReLU:
        case OpKind::LeakyReLU:
        case OpKind::Sigmoid:
        case OpKind::BatchNorm:
        case OpKind::MaxPool:
        case OpKind::UpsampleNearest:
        case OpKind::Quantize:
        case OpKind::Dequantize: return true;
        default: return false;
    }
}

// Channel providers of a tensor: the convs whose output filters define its
// channel axis. clean=false when a graph input, Linear, or Concat takes
// part, which makes the channel space unavailable for coupled pruning.
struct Providers {
    std::set<std::string> convs;
    bool clean = true;
};

Providers providers_of(const Graph& g, const std::string& name,
                       std::map<std::string, Providers>& memo) {
    auto it = memo.find(name);
    if (it != memo.end()) return it->second;
    Providers p;
    const Node* n = g.find(name);
    if (!n) {
        p.clean = false;  // graph input
    } else if (n->kind == OpKind::Conv) {
        p.convs.insert(n->id);
    } else if (passes_channels(n->kind)) {
        p = providers_of(g, n->inputs[0], memo);
    } else if (n->kind == OpKind::Add) {
        Providers a = providers_of(g, n->inputs[0], memo);
        Providers b = providers_of(g, n->inputs[1], memo);
        p.convs = a.convs;
        p.convs.insert(b.convs.begin(), b.convs.end());
        p.clean = a.clean && b.clean;
    } else {
        p.clean = false;  // Linear, Concat
    }
    memo[name] = p;
    return p;
}

// Conv sources reachable from a graph output, walking through Add (both
// sides) and Concat (all parts): these fix the output channel count.
void output_sources(const Graph& g, const std::string& name, std::set<std::string>& out,
                    std::set<std::string>& seen) {
    if (!seen.insert(name).second) return;
    const Node* n = g.find(name);
    if (!n) return;
    if (n->kind == OpKind::Conv) {
        out.insert(n->id);
        return;
    }
    if (passes_channels(n->kind)) {
        output_sources(g, n->inputs[0], out, seen);
        return;
    }
    if (n->kind == OpKind::Add || n->kind == OpKind::Concat) {
        for (const auto& in : n->inputs) output_sources(g, in, out, seen);
    }
    // Linear output channels are its own; nothing upstream is constrained
    // through it here (the Linear-input constraint is handled separately).
}

struct UnionFind {
    std::map<std::string, std::string> parent;
    const std::string& find(const std::string& x) {
        auto it = parent.find(x);
        if (it == parent.end()) {
            parent[x] = x;
            return parent.find(x)->first;
        }
        if (it->second == x) return it->second;
        it->second = find(it->second);
        return it->second;
    }
    void unite(const std::string& a, const std::string& b) {
        std::string ra = find(a), rb = find(b);
        if (ra != rb) parent[rb] = ra;
    }
};

}  // namespace

std::vector<DependencyGroup> build_groups(const Graph& g) {
    UnionFind uf;
    std::set<std::string> poisoned;
    std::map<std::string, std::set<std::string>> couplers;  // conv -> coupler ids
    std::map<std::string, Providers> memo;

    std::vector<std::string> convs;
    for (const auto& n : g.nodes)
        if (n.kind == OpKind::Conv) {
            convs.push_back(n.id);
            uf.find(n.id);
        }

    for (const auto& n : g.nodes) {
        if (n.kind == OpKind::Add) {
            Providers a = providers_of(g, n.inputs[0], memo);
            Providers b = providers_of(g, n.inputs[1], memo);
            std::vector<std::string> all(a.convs.begin(), a.convs.end());
            all.insert(all.end(), b.convs.begin(), b.convs.end());
            for (size_t i = 1; i < all.size(); ++i) uf.unite(all[0], all[i]);
            for (const auto& c : all) couplers[c].insert(n.id);
            if (!(a.clean && b.clean))
                for (const auto& c : all) poisoned.insert(c);
        } else if (n.kind == OpKind::Linear) {
            // A Linear flattens channels into features; its upstream convs
            // cannot shrink.
            std::set<std::string> srcs, seen;
            output_sources(g, n.inputs[0], srcs, seen);
            for (const auto& c : srcs) {
                poisoned.insert(c);
                couplers[c].insert(n.id);
            }
        }
    }

    for (const auto& out : g.outputs) {
        std::set<std::string> srcs, seen;
        output_sources(g, out, srcs, seen);
        for (const auto& c : srcs) {
            poisoned.insert(c);
            couplers[c].insert("output:" + out);
        }
    }

    // Emit groups in declaration order of their first member.
    std::map<std::string, std::vector<std::string>> by_root;
    for (const auto& id : convs) by_root[uf.find(id)].push_back(id);

    std::vector<DependencyGroup> groups;
    std::set<std::string> emitted;
    for (const auto& id : convs) {
        const std::string& root = uf.find(id);
        if (!emitted.insert(root).second) continue;
        DependencyGroup group;
        group.members = by_root[root];  // already in declaration order
        std::set<std::string> cs;
        for (const auto& m : group.members) {
            if (poisoned.count(m)) group.prunable = false;
            cs.insert(couplers[m].begin(), couplers[m].end());
        }
        group.couplers.assign(cs.begin(), cs.end());
        groups.push_back(std::move(group));
    }
    return groups;
}

PrunePlan make_plan(const Graph& g, const std::vector<DependencyGroup>& groups, Criterion c,
                    double sparsity) {
    PrunePlan plan;
    plan.sparsity = sparsity;
    for (const auto& group : groups) {
        int64_t filters = g.find(group.members[0])->weight("w").shape()[0];
        std::vector<int64_t> keep;
        if (!group.prunable || sparsity == 0.0) {
            keep.resize(static_cast<size_t>(filters));
            std::iota(keep.begin(), keep.end(), 0);
        } else {
            std::vector<double> scores(static_cast<size_t>(filters), 0.0);
            for (const auto& member : group.members) {
                const Tensor& w = g.find(member)->weight("w");
                require(w.shape()[0] == filters, Err::ShapeConflict,
                        member + ": group members disagree on filter count");
                auto s = importance(w, c);
                for (size_t i = 0; i < scores.size(); ++i) scores[i] += s[i];
            }
            keep = select_filters(scores, sparsity);
        }
        for (const auto& member : group.members) plan.keep[member] = keep;
    }
    return plan;
}

namespace {

// Gather along one axis.
Tensor take(const Tensor& t, int64_t axis, const std::vector<int64_t>& indices) {
    std::vector<int64_t> out_shape = t.shape();
    out_shape[static_cast<size_t>(axis)] = static_cast<int64_t>(indices.size());
    Tensor out = Tensor::zeros(out_shape, t.dtype());

    int64_t outer = 1, inner = 1;
    for (int64_t a = 0; a < axis; ++a) outer *= t.shape()[static_cast<size_t>(a)];
    for (int64_t a = axis + 1; a < t.rank(); ++a) inner *= t.shape()[static_cast<size_t>(a)];
    size_t esz = dtype_size(t.dtype());
    size_t block = static_cast<size_t>(inner) * esz;
    int64_t src_axis = t.shape()[static_cast<size_t>(axis)];

    for (int64_t o = 0; o < outer; ++o) {
        for (size_t j = 0; j < indices.size(); ++j) {
            int64_t idx = indices[j];
            require(idx >= 0 && idx < src_axis, Err::OutOfBounds, "take index out of range");
            std::memcpy(out.raw() + (static_cast<size_t>(o) * indices.size() + j) * block,
                        t.raw() + static_cast<size_t>(o * src_axis + idx) * block, block);
        }
    }
    return out;
}

std::vector<int64_t> full_range(int64_t n) {
    std::vector<int64_t> r(static_cast<size_t>(n));
    std::iota(r.begin(), r.end(), 0);
    return r;
}

bool is_full(const std::vector<int64_t>& keep, int64_t n) {
    return static_cast<int64_t>(keep.size()) == n;
}

ShapeMap concrete_input_shapes(const Graph& g) {
    ShapeMap shapes;
    for (const auto& in : g.inputs) {
        auto shape = in.shape;
        if (!shape.empty() && shape[0] == kSymbolicBatch) shape[0] = 1;
        shapes[in.name] = shape;
    }
    return shapes;
}

}  // namespace

Graph apply_prune(const Graph& g, const PrunePlan& plan) {
    auto groups = build_groups(g);

    // Effective keep per conv; absent entries keep everything.
    std::map<std::string, std::vector<int64_t>> keep_of;
    for (const auto& n : g.nodes) {
        if (n.kind != OpKind::Conv) continue;
        int64_t filters = n.weight("w").shape()[0];
        auto it = plan.keep.find(n.id);
        if (it == plan.keep.end()) {
            keep_of[n.id] = full_range(filters);
            continue;
        }
        const auto& keep = it->second;
        require(!keep.empty(), Err::WouldEmptyLayer, n.id + ": plan keeps no filters");
        for (size_t i = 0; i < keep.size(); ++i) {
            require(keep[i] >= 0 && keep[i] < filters, Err::OutOfBounds,
                    n.id + ": keep index out of range");
            require(i == 0 || keep[i] > keep[i - 1], Err::Precondition,
                    n.id + ": keep indices must be strictly increasing");
        }
        keep_of[n.id] = keep;
    }
    for (const auto& [id, keep] : plan.keep) {
        const Node* n = g.find(id);
        require(n != nullptr && n->kind == OpKind::Conv, Err::Precondition,
                id + ": plan names a non-conv node");
        (void)keep;
    }
    for (const auto& group : groups) {
        const auto& first = keep_of.at(group.members[0]);
        for (const auto& member : group.members)
            require(keep_of.at(member) == first, Err::PlanViolatesGroups,
                    member + ": keep set differs within its dependency group");
        if (!group.prunable) {
            int64_t filters = g.find(group.members[0])->weight("w").shape()[0];
            require(is_full(first, filters), Err::PlanViolatesGroups,
                    group.members[0] + ": unprunable group must keep all filters");
        }
    }

    // Channel keep list per tensor, in original channel indices.
    ShapeMap shapes = infer_shapes(g, concrete_input_shapes(g));
    std::map<std::string, std::vector<int64_t>> chan_keep;
    for (const auto& in : g.inputs) chan_keep[in.name] = full_range(in.shape[1]);

    for (const auto& id : topo_order(g)) {
        const Node& n = *g.find(id);
        switch (n.kind) {
            case OpKind::Conv: chan_keep[id] = keep_of.at(id); break;
            case OpKind::Linear: chan_keep[id] = full_range(shapes.at(id)[1]); break;
            case OpKind::Add:
                require(chan_keep.at(n.inputs[0]) == chan_keep.at(n.inputs[1]),
                        Err::PlanViolatesGroups, id + ": add operands pruned differently");
                chan_keep[id] = chan_keep.at(n.inputs[0]);
                break;
            case OpKind::Concat: {
                std::vector<int64_t> keep;
                int64_t offset = 0;
                for (const auto& in : n.inputs) {
                    for (int64_t c : chan_keep.at(in)) keep.push_back(offset + c);
                    offset += shapes.at(in)[1];  // original channel count
                }
                chan_keep[id] = std::move(keep);
                break;
            }
            default: chan_keep[id] = chan_keep.at(n.inputs[0]); break;
        }
    }

    Graph out;
    out.inputs = g.inputs;
    out.outputs = g.outputs;
    for (const auto& n : g.nodes) {
        Node copy = n;
        switch (n.kind) {
            case OpKind::Conv: {
                const auto& keep_out = keep_of.at(n.id);
                const auto& keep_in = chan_keep.at(n.inputs[0]);
                const Tensor& w = n.weight("w");
                Tensor sliced = w;
                if (!is_full(keep_out, w.shape()[0])) sliced = take(sliced, 0, keep_out);
                if (!is_full(keep_in, w.shape()[1])) sliced = take(sliced, 1, keep_in);
                copy.weights["w"] = std::move(sliced);
                if (const Tensor* b = n.weight_if("b"))
                    if (!is_full(keep_out, b->shape()[0]))
                        copy.weights["b"] = take(*b, 0, keep_out);
                break;
            }
            case OpKind::BatchNorm: {
                const auto& keep_in = chan_keep.at(n.inputs[0]);
                if (!is_full(keep_in, n.weight("gamma").shape()[0]))
                    for (const char* name : {"gamma", "beta", "mean", "var"})
                        copy.weights[name] = take(n.weight(name), 0, keep_in);
                break;
            }
            case OpKind::Linear: {
                const auto& keep_in = chan_keep.at(n.inputs[0]);
                require(is_full(keep_in, shapes.at(n.inputs[0])[1]), Err::PlanViolatesGroups,
                        n.id + ": linear consumes a pruned channel space");
                break;
            }
            default: break;
        }
        out.nodes.push_back(std::move(copy));
    }
    return out;
}

int64_t count_params(const Graph& g) {
    int64_t total = 0;
    for (const auto& n : g.nodes)
        for (const auto& [name, t] : n.weights) total += t.numel();
    return total;
}

int64_t count_flops(const Graph& g) {
    ShapeMap shapes = infer_shapes(g, concrete_input_shapes(g));
    int64_t flops = 0;
    for (const auto& n : g.nodes) {
        if (n.kind == OpKind::Conv) {
            const auto& out = shapes.at(n.id);
            int64_t out_elems = 1;
            for (int64_t e : out) out_elems *= e;
            const Tensor& w = n.weight("w");
            int64_t reduction = w.numel() / w.shape()[0];
            flops += out_elems * reduction * 2;
        } else if (n.kind == OpKind::Linear) {
            const auto& out = shapes.at(n.id);
            int64_t rows = 1;
            for (size_t a = 0; a + 1 < out.size(); ++a) rows *= out[a];
            const Tensor& w = n.weight("w");
            flops += rows * w.numel() * 2;
        }
    }
    return flops;
}

std::vector<SweepRow> sweep(const Graph& g,
                            const std::vector<std::pair<Tensor, Tensor>>& eval_data,
                            const MetricFn& metric, const std::vector<Criterion>& criteria,
                            const std::vector<double>& ratios,
                            const std::optional<FinetuneCfg>& finetune) {
    require(!eval_data.empty(), Err::Precondition, "sweep needs evaluation data");
    auto groups = build_groups(g);

    auto evaluate = [&](const Graph& model) {
        double total = 0.0;
        for (const auto& [x, target] : eval_data) {
            auto out = exec::run(model, {{model.inputs[0].name, x}});
            total += metric(out.at(model.outputs[0]), target);
        }
        return total / static_cast<double>(eval_data.size());
    };

    std::vector<SweepRow> rows;
    for (Criterion c : criteria) {
        for (double ratio : ratios) {
            PrunePlan plan = make_plan(g, groups, c, ratio);
            Graph pruned = apply_prune(g, plan);
            // Ratio 0 is the baseline row; fine-tuning applies only after
            // actual pruning.
            if (finetune && ratio > 0.0)
                pruned = train::finetune(pruned, eval_data, finetune->loss, finetune->sgd).graph;
            rows.push_back({c, ratio, evaluate(pruned), count_params(pruned),
                            count_flops(pruned)});
        }
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "criterion,ratio,accuracy,params,flops\n";
    for (const auto& r : rows)
        os << criterion_name(r.criterion) << "," << r.ratio << "," << r.accuracy << ","
           << r.params << "," << r.flops << "\n";
    return os.str();
}

}  // namespace ebc::prune
