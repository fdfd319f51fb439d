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
#include <string>
#include <utility>
#include <vector>

#include "ebc/tensor.hpp"
#include "json.hpp"

namespace ebc::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Environment override for the energy counter directory.
inline constexpr const char* kCounterRootEnv = "EBC_COUNTER_ROOT";

/// Declarative pipeline configuration, parsed from JSON. Typed accessors
/// throw ConfigError with the offending field path.
class RunConfig {
public:
    static RunConfig load(const std::filesystem::path& path);
    static RunConfig from_json(nlohmann::json j, std::filesystem::path base_dir);

    bool has(const std::string& pointer) const;
    std::string str(const std::string& pointer) const;
    std::string str_or(const std::string& pointer, const std::string& fallback) const;
    double number(const std::string& pointer) const;
    double number_or(const std::string& pointer, double fallback) const;
    int64_t integer(const std::string& pointer) const;
    int64_t integer_or(const std::string& pointer, int64_t fallback) const;
    std::vector<int64_t> int_list(const std::string& pointer) const;
    std::vector<double> number_list(const std::string& pointer) const;
    std::vector<std::string> str_list(const std::string& pointer) const;
    /// Resolves relative to the config file's directory and requires the
    /// path to exist.
    std::filesystem::path path(const std::string& pointer) const;
    std::filesystem::path out_dir() const;  // "/output_dir", created on demand

    const nlohmann::json& raw() const { return json_; }
    const std::filesystem::path& base_dir() const { return base_dir_; }

private:
    nlohmann::json json_;
    std::filesystem::path base_dir_;
};

/// Paired samples "<stem>.x.ebt" / "<stem>.y.ebt", sorted by stem.
std::vector<std::pair<Tensor, Tensor>> load_pairs(const std::filesystem::path& dir);

/// Compression pipeline: load, validate, fold batchnorm, optional prune
/// (+fine-tune), optional int8 calibration/conversion, save model +
/// manifest. out_dir overrides the config's output_dir when non-empty.
void cmd_compress(const RunConfig& cfg, std::filesystem::path out_dir);

/// Tiled inference over the configured dataset: writes predictions and
/// metrics, appends a latency/energy report row.
void cmd_infer(const RunConfig& cfg);

/// Criterion x ratio pruning sweep; writes CSV/JSON and a summary naming
/// the best cell.
void cmd_sweep(const RunConfig& cfg, std::filesystem::path out_dir);

/// Benches each configured (model, mode) pair and emits the full report.
void cmd_bench(const RunConfig& cfg, std::filesystem::path out_dir);

/// Writes phantom datasets as .ebt pairs with JSON sidecars.
void cmd_datagen(const RunConfig& cfg, std::filesystem::path out_dir);

}  // namespace ebc::cli
