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
#include "ebc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace ebc {

const char* op_kind_name(OpKind kind) {
    switch (kind) {
        case OpKind::Conv: return "Conv";
        case OpKind::Linear: return "Linear";
        case OpKind::ReLU: return "ReLU";
        case OpKind::LeakyReLU: return "LeakyReLU";
        case OpKind::Sigmoid: return "Sigmoid";
        case OpKind::BatchNorm: return "BatchNorm";
        case OpKind::MaxPool: return "MaxPool";
        case OpKind::UpsampleNearest: return "UpsampleNearest";
        case OpKind::Concat: return "Concat";
        case OpKind::Add: return "Add";
        case OpKind::Quantize: return "Quantize";
        case OpKind::Dequantize: return "Dequantize";
    }
    return "?";
}

std::optional<OpKind> op_kind_from(const std::string& name) {
    static const std::map<std::string, OpKind> table = {
        {"Conv", OpKind::Conv},
        {"Linear", OpKind::Linear},
        {"ReLU", OpKind::ReLU},
        {"LeakyReLU", OpKind::LeakyReLU},
        {"Sigmoid", OpKind::Sigmoid},
        {"BatchNorm", OpKind::BatchNorm},
        {"MaxPool", OpKind::MaxPool},
        {"UpsampleNearest", OpKind::UpsampleNearest},
        {"Concat", OpKind::Concat},
        {"Add", OpKind::Add},
        {"Quantize", OpKind::Quantize},
        {"Dequantize", OpKind::Dequantize},
    };
    auto it = table.find(name);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

const std::vector<int64_t>& Node::ints(const std::string& name) const {
    auto it = attrs.find(name);
    require(it != attrs.end(), Err::MissingInput, id + ": missing attr " + name);
    auto* v = std::get_if<std::vector<int64_t>>(&it->second);
    require(v != nullptr, Err::ShapeMismatch, id + ": attr " + name + " is not an int list");
    return *v;
}

double Node::scalar(const std::string& name) const {
    auto it = attrs.find(name);
    require(it != attrs.end(), Err::MissingInput, id + ": missing attr " + name);
    auto* v = std::get_if<double>(&it->second);
    require(v != nullptr, Err::ShapeMismatch, id + ": attr " + name + " is not a scalar");
    return *v;
}

const Tensor& Node::weight(const std::string& name) const {
    auto it = weights.find(name);
    require(it != weights.end(), Err::MissingInput, id + ": missing weight " + name);
    return it->second;
}

const Tensor* Node::weight_if(const std::string& name) const {
    auto it = weights.find(name);
    return it == weights.end() ? nullptr : &it->second;
}

const Node* Graph::find(const std::string& id) const {
    for (const auto& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

Node* Graph::find(const std::string& id) {
    for (auto& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

bool Graph::is_graph_input(const std::string& name) const {
    for (const auto& in : inputs)
        if (in.name == name) return true;
    return false;
}

namespace {

int expected_input_count(OpKind kind) {
    switch (kind) {
        case OpKind::Add: return 2;
        case OpKind::Concat: return -2;  // 2 or more
        default: return 1;
    }
}

}  // namespace

std::vector<std::string> validate_static(const Graph& g) {
    std::vector<std::string> errors;
    std::set<std::string> ids;
    for (const auto& n : g.nodes) {
        if (!ids.insert(n.id).second) errors.push_back("duplicate node id " + n.id);
        if (g.is_graph_input(n.id)) errors.push_back("node id shadows graph input: " + n.id);
    }
    for (const auto& n : g.nodes) {
        for (const auto& in : n.inputs) {
            if (!ids.count(in) && !g.is_graph_input(in))
                errors.push_back(n.id + ": unknown input " + in);
        }
        int want = expected_input_count(n.kind);
        if (want >= 0 && static_cast<int>(n.inputs.size()) != want)
            errors.push_back(n.id + ": expects " + std::to_string(want) + " inputs, has " +
                             std::to_string(n.inputs.size()));
        if (want == -2 && n.inputs.size() < 2)
            errors.push_back(n.id + ": concat needs at least 2 inputs");

        switch (n.kind) {
            case OpKind::Conv: {
                const Tensor* w = n.weight_if("w");
                if (!w) {
                    errors.push_back(n.id + ": conv is missing weight w");
                    break;
                }
                if (!n.has_attr("kernel")) {
                    errors.push_back(n.id + ": conv is missing kernel attr");
                    break;
                }
                const auto& kernel = n.ints("kernel");
                size_t d = kernel.size();
                if (d < 1 || d > 3) errors.push_back(n.id + ": conv dims must be 1..3");
                if (w->rank() != static_cast<int64_t>(d + 2))
                    errors.push_back(n.id + ": weight rank mismatch (declared " +
                                     std::to_string(d) + "-d conv, weight rank " +
                                     std::to_string(w->rank()) + ")");
                else
                    for (size_t a = 0; a < d; ++a)
                        if (w->shape()[a + 2] != kernel[a])
                            errors.push_back(n.id + ": kernel attr does not match weight shape");
                if (n.has_attr("stride") && n.ints("stride").size() != d)
                    errors.push_back(n.id + ": stride length != conv dims");
                if (n.has_attr("pad") && n.ints("pad").size() != d)
                    errors.push_back(n.id + ": pad length != conv dims");
                if (const Tensor* b = n.weight_if("b"))
                    if (b->rank() != 1 || b->shape()[0] != w->shape()[0])
                        errors.push_back(n.id + ": bias shape must be [out_channels]");
                break;
            }
            case OpKind::Linear: {
                const Tensor* w = n.weight_if("w");
                if (!w) {
                    errors.push_back(n.id + ": linear is missing weight w");
                    break;
                }
                if (w->rank() != 2) errors.push_back(n.id + ": linear weight must be rank 2");
                if (const Tensor* b = n.weight_if("b"))
                    if (b->rank() != 1 || b->shape()[0] != w->shape()[0])
                        errors.push_back(n.id + ": bias shape must be [out_features]");
                break;
            }
            case OpKind::BatchNorm: {
                int64_t channels = -1;
                for (const char* name : {"gamma", "beta", "mean", "var"}) {
                    const Tensor* t = n.weight_if(name);
                    if (!t) {
                        errors.push_back(n.id + ": batchnorm is missing " + std::string(name));
                        continue;
                    }
                    if (t->rank() != 1)
                        errors.push_back(n.id + ": batchnorm param " + std::string(name) +
                                         " must be rank 1");
                    else if (channels < 0)
                        channels = t->shape()[0];
                    else if (t->shape()[0] != channels)
                        errors.push_back(n.id + ": batchnorm param shapes disagree");
                }
                if (!n.has_attr("epsilon") || n.scalar("epsilon") <= 0.0)
                    errors.push_back(n.id + ": batchnorm epsilon must be > 0");
                break;
            }
            case OpKind::Concat:
                if (!n.has_attr("axis") || n.ints("axis") != std::vector<int64_t>{1})
                    errors.push_back(n.id + ": concat axis must be 1");
                break;
            case OpKind::MaxPool:
                if (!n.has_attr("window")) errors.push_back(n.id + ": maxpool is missing window");
                break;
            case OpKind::UpsampleNearest:
                if (!n.has_attr("factor") || n.ints("factor").size() != 1 ||
                    n.ints("factor")[0] < 1)
                    errors.push_back(n.id + ": upsample factor must be a positive integer");
                break;
            default: break;
        }
    }

    // Cycle check only when the reference structure is sound.
    if (errors.empty()) {
        try {
            topo_order(g);
        } catch (const Error& e) {
            errors.push_back(e.what());
        }
    }
    for (const auto& out : g.outputs)
        if (!ids.count(out)) errors.push_back("unknown output node " + out);
    return errors;
}

std::vector<std::string> topo_order(const Graph& g) {
    std::map<std::string, size_t> index;
    for (size_t i = 0; i < g.nodes.size(); ++i) index[g.nodes[i].id] = i;

    std::vector<int> pending(g.nodes.size(), 0);
    std::vector<std::vector<size_t>> consumers(g.nodes.size());
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        for (const auto& in : g.nodes[i].inputs) {
            auto it = index.find(in);
            if (it == index.end()) {
                require(g.is_graph_input(in), Err::MissingInput,
                        g.nodes[i].id + ": unknown input " + in);
                continue;
            }
            ++pending[i];
            consumers[it->second].push_back(i);
        }
    }

    // Kahn's algorithm; the ready set is scanned in declaration order so
    // ties break deterministically.
    std::vector<bool> ready(g.nodes.size(), false);
    std::vector<bool> emitted(g.nodes.size(), false);
    for (size_t i = 0; i < g.nodes.size(); ++i) ready[i] = pending[i] == 0;

    std::vector<std::string> order;
    order.reserve(g.nodes.size());
    while (order.size() < g.nodes.size()) {
        size_t pick = g.nodes.size();
        for (size_t i = 0; i < g.nodes.size(); ++i) {
            if (ready[i] && !emitted[i]) {
                pick = i;
                break;
            }
        }
        require(pick != g.nodes.size(), Err::CycleDetected, "graph contains a cycle");
        emitted[pick] = true;
        order.push_back(g.nodes[pick].id);
        for (size_t c : consumers[pick])
            if (--pending[c] == 0) ready[c] = true;
    }
    return order;
}

namespace {

std::vector<int64_t> conv_like_spatial(const std::string& id, std::span<const int64_t> in,
                                       std::span<const int64_t> k, std::span<const int64_t> stride,
                                       std::span<const int64_t> pad) {
    std::vector<int64_t> out(in.size());
    for (size_t a = 0; a < in.size(); ++a) {
        int64_t s = stride.empty() ? 1 : stride[a];
        int64_t p = pad.empty() ? 0 : pad[a];
        int64_t num = in[a] + 2 * p - k[a];
        require(num >= 0 && s >= 1, Err::ShapeConflict,
                id + ": window larger than padded input on axis " + std::to_string(a));
        out[a] = num / s + 1;
    }
    return out;
}

}  // namespace

ShapeMap infer_shapes(const Graph& g, const ShapeMap& input_shapes) {
    ShapeMap shapes;
    for (const auto& in : g.inputs) {
        auto it = input_shapes.find(in.name);
        require(it != input_shapes.end(), Err::MissingInput, "no shape for input " + in.name);
        const auto& got = it->second;
        require(got.size() == in.shape.size(), Err::ShapeConflict,
                in.name + ": input rank mismatch");
        for (size_t a = 0; a < got.size(); ++a) {
            require(got[a] >= 1, Err::ShapeConflict, in.name + ": extents must be positive");
            if (in.shape[a] != kSymbolicBatch)
                require(got[a] == in.shape[a], Err::ShapeConflict,
                        in.name + ": shape differs from declaration on axis " + std::to_string(a));
        }
        shapes[in.name] = got;
    }

    for (const auto& id : topo_order(g)) {
        const Node& n = *g.find(id);
        std::vector<const std::vector<int64_t>*> in;
        for (const auto& name : n.inputs) {
            auto it = shapes.find(name);
            require(it != shapes.end(), Err::MissingInput, id + ": unresolved input " + name);
            in.push_back(&it->second);
        }
        std::vector<int64_t> out;
        switch (n.kind) {
            case OpKind::Conv: {
                const auto& x = *in[0];
                const Tensor& w = n.weight("w");
                const auto& kernel = n.ints("kernel");
                size_t d = kernel.size();
                require(x.size() == d + 2, Err::ShapeConflict, id + ": input rank != conv rank");
                require(x[1] == w.shape()[1], Err::ShapeConflict,
                        id + ": input channels " + std::to_string(x[1]) + " != weight in_channels " +
                            std::to_string(w.shape()[1]));
                auto spatial = conv_like_spatial(
                    id, std::span(x).subspan(2), kernel,
                    n.has_attr("stride") ? std::span<const int64_t>(n.ints("stride"))
                                         : std::span<const int64_t>(),
                    n.has_attr("pad") ? std::span<const int64_t>(n.ints("pad"))
                                      : std::span<const int64_t>());
                out = {x[0], w.shape()[0]};
                out.insert(out.end(), spatial.begin(), spatial.end());
                break;
            }
            case OpKind::Linear: {
                const auto& x = *in[0];
                const Tensor& w = n.weight("w");
                require(x.back() == w.shape()[1], Err::ShapeConflict,
                        id + ": input features != weight in_features");
                out = x;
                out.back() = w.shape()[0];
                break;
            }
            case OpKind::MaxPool: {
                const auto& x = *in[0];
                const auto& window = n.ints("window");
                size_t d = window.size();
                require(x.size() == d + 2, Err::ShapeConflict, id + ": input rank != pool rank");
                auto spatial = conv_like_spatial(
                    id, std::span(x).subspan(2), window,
                    n.has_attr("stride") ? std::span<const int64_t>(n.ints("stride"))
                                         : std::span<const int64_t>(window),
                    n.has_attr("pad") ? std::span<const int64_t>(n.ints("pad"))
                                      : std::span<const int64_t>());
                out = {x[0], x[1]};
                out.insert(out.end(), spatial.begin(), spatial.end());
                break;
            }
            case OpKind::UpsampleNearest: {
                out = *in[0];
                int64_t f = n.ints("factor")[0];
                for (size_t a = 2; a < out.size(); ++a) out[a] *= f;
                break;
            }
            case OpKind::Concat: {
                out = *in[0];
                require(out.size() >= 2, Err::ShapeConflict, id + ": concat needs channel axis");
                for (size_t i = 1; i < in.size(); ++i) {
                    const auto& x = *in[i];
                    require(x.size() == out.size(), Err::ShapeConflict, id + ": rank mismatch");
                    for (size_t a = 0; a < x.size(); ++a) {
                        if (a == 1) continue;
                        require(x[a] == out[a], Err::ShapeConflict,
                                id + ": non-channel extents differ");
                    }
                    out[1] += x[1];
                }
                break;
            }
            case OpKind::Add:
                require(*in[0] == *in[1], Err::ShapeConflict, id + ": add of unequal shapes");
                out = *in[0];
                break;
            case OpKind::BatchNorm: {
                out = *in[0];
                require(out.size() >= 2 && out[1] == n.weight("gamma").shape()[0],
                        Err::ShapeConflict, id + ": batchnorm channels mismatch");
                break;
            }
            default:
                out = *in[0];
                break;
        }
        shapes[id] = std::move(out);
    }
    return shapes;
}

FoldResult fold_batchnorm(const Graph& g) {
    // Count consumers to enforce that the conv feeds only the batchnorm.
    std::map<std::string, int> consumer_count;
    for (const auto& n : g.nodes)
        for (const auto& in : n.inputs) ++consumer_count[in];
    for (const auto& out : g.outputs) ++consumer_count[out];

    FoldResult result;
    result.graph.inputs = g.inputs;
    result.graph.outputs = g.outputs;

    std::map<std::string, std::string> rename;  // bn id -> conv id
    std::set<std::string> dropped;

    for (const auto& n : g.nodes) {
        if (n.kind != OpKind::BatchNorm) continue;
        const Node* prev = n.inputs.size() == 1 ? g.find(n.inputs[0]) : nullptr;
        if (!prev || prev->kind != OpKind::Conv || consumer_count[prev->id] != 1) {
            result.unfoldable.push_back(n.id);
            continue;
        }
        rename[n.id] = prev->id;
        dropped.insert(n.id);
    }

    for (const auto& n : g.nodes) {
        if (dropped.count(n.id)) continue;
        Node copy = n;
        for (auto& in : copy.inputs) {
            auto it = rename.find(in);
            if (it != rename.end()) in = it->second;
        }
        result.graph.nodes.push_back(std::move(copy));
    }
    for (auto& out : result.graph.outputs) {
        auto it = rename.find(out);
        if (it != rename.end()) out = it->second;
    }

    // Scale conv weights in place: per output channel o,
    // W'[o] = W[o]*gamma[o]/sqrt(var[o]+eps), b'[o] = (b[o]-mean[o])*scale + beta[o].
    for (const auto& [bn_id, conv_id] : rename) {
        const Node& bn = *g.find(bn_id);
        Node& conv = *result.graph.find(conv_id);
        double eps = bn.scalar("epsilon");
        auto gamma = bn.weight("gamma").f32();
        auto beta = bn.weight("beta").f32();
        auto mean = bn.weight("mean").f32();
        auto var = bn.weight("var").f32();

        Tensor& w = conv.weights.at("w");
        int64_t out_ch = w.shape()[0];
        int64_t per_filter = w.numel() / out_ch;
        auto wd = w.f32();

        Tensor bias = conv.weight_if("b") ? conv.weights.at("b")
                                          : Tensor::zeros({out_ch}, DType::F32);
        auto bd = bias.f32();

        for (int64_t o = 0; o < out_ch; ++o) {
            double scale = gamma[static_cast<size_t>(o)] /
                           std::sqrt(static_cast<double>(var[static_cast<size_t>(o)]) + eps);
            for (int64_t i = 0; i < per_filter; ++i) {
                size_t at = static_cast<size_t>(o * per_filter + i);
                wd[at] = static_cast<float>(wd[at] * scale);
            }
            bd[static_cast<size_t>(o)] = static_cast<float>(
                (static_cast<double>(bd[static_cast<size_t>(o)]) - mean[static_cast<size_t>(o)]) *
                    scale +
                beta[static_cast<size_t>(o)]);
        }
        conv.weights["b"] = std::move(bias);
    }
    return result;
}

}  // namespace ebc
