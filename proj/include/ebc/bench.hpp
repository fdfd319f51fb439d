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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace ebc::bench {

struct LatencyStats {
    int64_t runs = 0;
    int64_t warmup = 0;
    double mean_s = 0.0;
    double median_s = 0.0;
    double p90_s = 0.0;
    double min_s = 0.0;
};

/// Runs warmup executions unmeasured, then times each run on the monotonic
/// clock.
LatencyStats time_run(const std::function<void()>& workload, int64_t runs, int64_t warmup);

/// Wraparound-safe difference of cumulative microjoule counters.
uint64_t counter_delta(uint64_t prev, uint64_t curr, uint64_t max_range);

enum class EnergyBackend { CounterFile, TdpModel };

struct EnergyConfig {
    EnergyBackend backend = EnergyBackend::TdpModel;
    double tdp_watts = 45.0;
    std::filesystem::path counter_root = "/sys/class/powercap/intel-rapl";
    bool fallback_to_tdp = true;
    int64_t sample_period_ms = 100;
};

struct EnergyReading {
    EnergyBackend backend = EnergyBackend::TdpModel;
    double joules = 0.0;
    double kwh = 0.0;  // joules / 3.6e6
    int64_t samples = 0;
};

/// Accumulates deltas of cumulative energy counters. One subdirectory per
/// domain under root, each holding "energy_uj" and "max_energy_range_uj"
/// (decimal text). Throws CounterUnavailable when no domain is readable.
class CounterSampler {
public:
    explicit CounterSampler(const std::filesystem::path& root);

    /// Reads every domain once and adds the wraparound-safe deltas.
    void sample();

    uint64_t total_uj() const { return total_uj_; }
    int64_t samples() const { return samples_; }
    int64_t domains() const { return static_cast<int64_t>(domains_.size()); }

private:
    struct Domain {
        std::filesystem::path energy_file;
        uint64_t max_range;
        uint64_t last;
    };
    std::vector<Domain> domains_;
    uint64_t total_uj_ = 0;
    int64_t samples_ = 0;
};

/// CounterFile: samples the counter tree every sample_period_ms while the
/// workload runs and sums deltas. TdpModel: joules = tdp_watts * seconds.
/// A CounterFile failure falls back to TdpModel when enabled.
EnergyReading measure_energy(const std::function<void()>& workload, const EnergyConfig& cfg);

struct ReportRow {
    std::string task;
    std::string mode;  // fp32 | int8 | prune+int8 | prune
    LatencyStats latency;
    EnergyReading energy;
    double accuracy = 0.0;
    std::string accuracy_metric;
    std::vector<int64_t> image_shape;
    std::optional<double> energy_reduction_pct;  // vs the task's fp32 row
};

struct Report {
    std::vector<ReportRow> rows;
    std::string text() const;
    std::string csv() const;
    nlohmann::ordered_json json() const;
};

/// Computes per-task energy reductions against the fp32 row, as the usual
/// "(52.5% down)" annotations do.
Report make_report(std::vector<ReportRow> rows);

/// Inverse of Report::json() for one row; used when appending to an
/// existing report file.
ReportRow row_from_json(const nlohmann::json& j);

}  // namespace ebc::bench
