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

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ebc/tensor.hpp"

namespace ebc {

// Closed layer vocabulary. Unknown tags are rejected at load time.
enum class OpKind {
    Conv,
    Linear,
    ReLU,
    LeakyReLU,
    Sigmoid,
    BatchNorm,
    MaxPool,
    UpsampleNearest,
    Concat,
    Add,
    Quantize,
    Dequantize,
};

const char* op_kind_name(OpKind kind);
std::optional<OpKind> op_kind_from(const std::string& name);

// Attributes are integer lists or single floats; nothing else.
using Attr = std::variant<std::vector<int64_t>, double>;

struct Node {
    std::string id;
    OpKind kind = OpKind::ReLU;
    std::vector<std::string> inputs;  // node ids or graph-input names
    std::map<std::string, Attr> attrs;
    std::map<std::string, Tensor> weights;

    bool has_attr(const std::string& name) const { return attrs.count(name) != 0; }
    const std::vector<int64_t>& ints(const std::string& name) const;
    double scalar(const std::string& name) const;
    const Tensor& weight(const std::string& name) const;
    const Tensor* weight_if(const std::string& name) const;
};

/// Extent value standing for the symbolic batch "N" in declared input shapes.
inline constexpr int64_t kSymbolicBatch = -1;

struct GraphInput {
    std::string name;
    std::vector<int64_t> shape;  // kSymbolicBatch allowed in slot 0
};

/// Static DAG of supported layers; topology never depends on input data.
struct Graph {
    std::vector<GraphInput> inputs;
    std::vector<std::string> outputs;  // node ids
    std::vector<Node> nodes;

    const Node* find(const std::string& id) const;
    Node* find(const std::string& id);
    bool is_graph_input(const std::string& name) const;
};

using ShapeMap = std::map<std::string, std::vector<int64_t>>;

/// Structural validation: DAG property, known inputs, weight-shape
/// invariants, concat-axis restriction. Empty list means valid.
std::vector<std::string> validate_static(const Graph& g);

/// Per-node output shapes given concrete input shapes.
/// Conv/MaxPool spatial: floor((in + 2*pad - k)/stride) + 1.
ShapeMap infer_shapes(const Graph& g, const ShapeMap& input_shapes);

/// Deterministic topological order, stable by declaration order among
/// ready nodes. Throws CycleDetected.
std::vector<std::string> topo_order(const Graph& g);

struct FoldResult {
    Graph graph;
    std::vector<std::string> unfoldable;  // BatchNorm ids left in place
};

/// Folds each BatchNorm into the Conv immediately preceding it:
/// W' = W*gamma/sqrt(var+eps), b' = (b-mean)*gamma/sqrt(var+eps) + beta.
FoldResult fold_batchnorm(const Graph& g);

/// ".ebm" model container: magic "EBM1", u32 little-endian header length,
/// UTF-8 JSON header, concatenated little-endian weight blob, u32 CRC32 of
/// everything preceding. Byte-stable: save(load(save(g))) is identical.
void save_model(const Graph& g, const std::filesystem::path& path);
Graph load_model(const std::filesystem::path& path);

}  // namespace ebc
