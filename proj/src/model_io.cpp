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
#include <zlib.h>

#include <cstring>
#include <fstream>

#include "ebc/graph.hpp"
#include "json.hpp"

namespace ebc {

namespace {

constexpr char kModelMagic[4] = {'E', 'B', 'M', '1'};

using ojson = nlohmann::ordered_json;

uint32_t crc32_of(const std::string& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    size_t done = 0;
    while (done < bytes.size()) {
        uInt chunk = static_cast<uInt>(std::min<size_t>(bytes.size() - done, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + done), chunk);
        done += chunk;
    }
    return static_cast<uint32_t>(crc);
}

std::optional<DType> dtype_from(const std::string& name) {
    if (name == "f32") return DType::F32;
    if (name == "i8") return DType::I8;
    if (name == "i32") return DType::I32;
    return std::nullopt;
}

ojson shape_to_json(const std::vector<int64_t>& shape) {
    ojson arr = ojson::array();
    for (int64_t e : shape) {
        if (e == kSymbolicBatch)
            arr.push_back("N");
        else
            arr.push_back(e);
    }
    return arr;
}

std::vector<int64_t> shape_from_json(const nlohmann::json& arr) {
    std::vector<int64_t> shape;
    for (const auto& v : arr) {
        if (v.is_string()) {
            require(v.get<std::string>() == "N", Err::Io, "bad symbolic extent in shape");
            shape.push_back(kSymbolicBatch);
        } else {
            shape.push_back(v.get<int64_t>());
        }
    }
    return shape;
}

// The quant section mirrors the scales stored on converted nodes, one
// entry per tensor site.
ojson quant_section(const Graph& g) {
    std::map<std::string, double> sites;
    for (const auto& n : g.nodes) {
        if ((n.kind == OpKind::Conv || n.kind == OpKind::Linear) && n.has_attr("x_scale")) {
            sites[n.id + ".in"] = n.scalar("x_scale");
            sites[n.id + ".w"] = n.scalar("w_scale");
        }
    }
    ojson q = ojson::object();
    for (const auto& [site, scale] : sites) {
        ojson entry = ojson::object();
        entry["scale"] = scale;
        entry["zero_point"] = 0;
        entry["bits"] = 8;
        q[site] = entry;
    }
    return q;
}

}  // namespace

void save_model(const Graph& g, const std::filesystem::path& path) {
    std::string blob;
    ojson header = ojson::object();
    header["version"] = 1;

    ojson inputs = ojson::array();
    for (const auto& in : g.inputs) {
        ojson entry = ojson::object();
        entry["name"] = in.name;
        entry["shape"] = shape_to_json(in.shape);
        inputs.push_back(entry);
    }
    header["inputs"] = inputs;
    header["outputs"] = g.outputs;

    ojson nodes = ojson::array();
    for (const auto& n : g.nodes) {
        ojson jn = ojson::object();
        jn["id"] = n.id;
        jn["kind"] = op_kind_name(n.kind);
        jn["inputs"] = n.inputs;
        ojson attrs = ojson::object();
        for (const auto& [name, attr] : n.attrs) {
            if (const auto* ints = std::get_if<std::vector<int64_t>>(&attr))
                attrs[name] = *ints;
            else
                attrs[name] = std::get<double>(attr);
        }
        jn["attrs"] = attrs;
        ojson weights = ojson::array();
        for (const auto& [name, t] : n.weights) {
            ojson jw = ojson::object();
            jw["name"] = name;
            jw["dtype"] = dtype_name(t.dtype());
            jw["shape"] = shape_to_json(t.shape());
            jw["offset"] = blob.size();
            jw["length"] = t.byte_size();
            weights.push_back(jw);
            blob.append(reinterpret_cast<const char*>(t.raw()), t.byte_size());
        }
        jn["weights"] = weights;
        nodes.push_back(jn);
    }
    header["nodes"] = nodes;

    ojson quant = quant_section(g);
    if (!quant.empty()) header["quant"] = quant;

    std::string header_text = header.dump();
    std::string file;
    file.append(kModelMagic, 4);
    uint32_t hlen = static_cast<uint32_t>(header_text.size());
    char lenb[4];
    for (int i = 0; i < 4; ++i) lenb[i] = static_cast<char>((hlen >> (8 * i)) & 0xff);
    file.append(lenb, 4);
    file += header_text;
    file += blob;
    uint32_t crc = crc32_of(file);
    char crcb[4];
    for (int i = 0; i < 4; ++i) crcb[i] = static_cast<char>((crc >> (8 * i)) & 0xff);
    file.append(crcb, 4);

    std::ofstream os(path, std::ios::binary);
    require(os.good(), Err::Io, "cannot open " + path.string());
    os.write(file.data(), static_cast<std::streamsize>(file.size()));
    require(os.good(), Err::Io, "write failed: " + path.string());
}

Graph load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), Err::Io, "cannot open " + path.string());
    std::string file((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    require(file.size() >= 4 && std::memcmp(file.data(), kModelMagic, 4) == 0, Err::BadMagic,
            "not an .ebm file: " + path.string());
    require(file.size() >= 12, Err::ChecksumMismatch, "file too short: " + path.string());

    uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i)
        stored_crc |= static_cast<uint32_t>(static_cast<unsigned char>(file[file.size() - 4 + i]))
                      << (8 * i);
    std::string body = file.substr(0, file.size() - 4);
    require(crc32_of(body) == stored_crc, Err::ChecksumMismatch,
            "checksum mismatch: " + path.string());

    uint32_t hlen = 0;
    for (int i = 0; i < 4; ++i)
        hlen |= static_cast<uint32_t>(static_cast<unsigned char>(file[4 + i])) << (8 * i);
    require(8 + static_cast<size_t>(hlen) <= body.size(), Err::ChecksumMismatch,
            "header length exceeds file");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(body.substr(8, hlen));
    } catch (const nlohmann::json::exception& e) {
        fail(Err::Io, std::string("bad model header: ") + e.what());
    }
    const char* blob = body.data() + 8 + hlen;
    size_t blob_len = body.size() - 8 - hlen;

    Graph g;
    for (const auto& jin : header.at("inputs"))
        g.inputs.push_back({jin.at("name").get<std::string>(), shape_from_json(jin.at("shape"))});
    g.outputs = header.at("outputs").get<std::vector<std::string>>();

    for (const auto& jn : header.at("nodes")) {
        Node n;
        n.id = jn.at("id").get<std::string>();
        std::string kind = jn.at("kind").get<std::string>();
        auto k = op_kind_from(kind);
        require(k.has_value(), Err::UnknownOpKind, "unknown op kind \"" + kind + "\"");
        n.kind = *k;
        n.inputs = jn.at("inputs").get<std::vector<std::string>>();
        for (const auto& [name, value] : jn.at("attrs").items()) {
            if (value.is_array())
                n.attrs[name] = value.get<std::vector<int64_t>>();
            else
                n.attrs[name] = value.get<double>();
        }
        for (const auto& jw : jn.at("weights")) {
            std::string wname = jw.at("name").get<std::string>();
            auto dt = dtype_from(jw.at("dtype").get<std::string>());
            require(dt.has_value(), Err::Io, n.id + ": unknown weight dtype");
            auto shape = shape_from_json(jw.at("shape"));
            size_t offset = jw.at("offset").get<size_t>();
            size_t length = jw.at("length").get<size_t>();
            require(offset + length <= blob_len, Err::Io, n.id + ": weight exceeds blob");
            std::vector<std::byte> bytes(length);
            std::memcpy(bytes.data(), blob + offset, length);
            n.weights[wname] = Tensor::from_bytes(std::move(shape), *dt, std::move(bytes));
        }
        g.nodes.push_back(std::move(n));
    }
    return g;
}

}  // namespace ebc
