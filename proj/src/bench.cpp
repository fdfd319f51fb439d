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
#include "ebc/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <thread>

#include "ebc/error.hpp"

namespace ebc::bench {

LatencyStats time_run(const std::function<void()>& workload, int64_t runs, int64_t warmup) {
    require(runs >= 1 && warmup >= 0, Err::Precondition, "runs must be >= 1");
    for (int64_t i = 0; i < warmup; ++i) workload();

    std::vector<double> seconds(static_cast<size_t>(runs));
    for (int64_t i = 0; i < runs; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        workload();
        auto t1 = std::chrono::steady_clock::now();
        seconds[static_cast<size_t>(i)] = std::chrono::duration<double>(t1 - t0).count();
    }

    std::vector<double> sorted = seconds;
    std::sort(sorted.begin(), sorted.end());
    LatencyStats stats;
    stats.runs = runs;
    stats.warmup = warmup;
    stats.min_s = sorted.front();
    double sum = 0.0;
    for (double s : sorted) sum += s;
    stats.mean_s = sum / static_cast<double>(runs);
    stats.median_s = runs % 2 == 1 ? sorted[static_cast<size_t>(runs / 2)]
                                   : 0.5 * (sorted[static_cast<size_t>(runs / 2 - 1)] +
                                            sorted[static_cast<size_t>(runs / 2)]);
    // Nearest-rank 90th percentile.
    size_t rank = static_cast<size_t>(
        std::max<int64_t>(1, static_cast<int64_t>(std::ceil(0.9 * static_cast<double>(runs)))));
    stats.p90_s = sorted[rank - 1];
    return stats;
}

uint64_t counter_delta(uint64_t prev, uint64_t curr, uint64_t max_range) {
    if (curr >= prev) return curr - prev;
    return (max_range - prev) + curr;
}

namespace {

std::optional<uint64_t> read_counter(const std::filesystem::path& file) {
    std::ifstream is(file);
    if (!is.good()) return std::nullopt;
    uint64_t v = 0;
    is >> v;
    if (is.fail()) return std::nullopt;
    return v;
}

}  // namespace

CounterSampler::CounterSampler(const std::filesystem::path& root) {
    std::error_code ec;
    std::vector<std::filesystem::path> candidates;
    for (const auto& entry : std::filesystem::directory_iterator(root, ec)) {
        if (!entry.is_directory(ec)) continue;
        candidates.push_back(entry.path());
    }
    std::sort(candidates.begin(), candidates.end());
    for (const auto& dir : candidates) {
        auto energy = read_counter(dir / "energy_uj");
        if (!energy) continue;
        auto range = read_counter(dir / "max_energy_range_uj");
        domains_.push_back({dir / "energy_uj",
                            range.value_or(std::numeric_limits<uint64_t>::max()), *energy});
    }
    require(!domains_.empty(), Err::CounterUnavailable,
            "no readable energy counters under " + root.string());
}

void CounterSampler::sample() {
    for (auto& d : domains_) {
        auto v = read_counter(d.energy_file);
        if (!v) continue;
        total_uj_ += counter_delta(d.last, *v, d.max_range);
        d.last = *v;
    }
    ++samples_;
}

EnergyReading measure_energy(const std::function<void()>& workload, const EnergyConfig& cfg) {
    if (cfg.backend == EnergyBackend::CounterFile) {
        std::optional<CounterSampler> sampler;
        try {
            sampler.emplace(cfg.counter_root);
        } catch (const Error& e) {
            if (e.code() != Err::CounterUnavailable || !cfg.fallback_to_tdp) throw;
            std::cerr << "warning: " << e.what() << "; falling back to the TDP model\n";
        }
        if (sampler) {
            // The sampler's lifetime sits strictly inside the measurement
            // window: baseline read above, final read after the join.
            std::atomic<bool> done{false};
            std::thread ticker([&] {
                while (!done.load(std::memory_order_relaxed)) {
                    std::this_thread::sleep_for(
                        std::chrono::milliseconds(cfg.sample_period_ms));
                    sampler->sample();
                }
            });
            workload();
            done.store(true, std::memory_order_relaxed);
            ticker.join();
            sampler->sample();

            EnergyReading reading;
            reading.backend = EnergyBackend::CounterFile;
            reading.joules = static_cast<double>(sampler->total_uj()) * 1e-6;
            reading.kwh = reading.joules / 3.6e6;
            reading.samples = sampler->samples();
            return reading;
        }
    }

    require(cfg.tdp_watts > 0, Err::Precondition, "tdp_watts must be positive");
    auto t0 = std::chrono::steady_clock::now();
    workload();
    auto t1 = std::chrono::steady_clock::now();
    double seconds = std::chrono::duration<double>(t1 - t0).count();
    EnergyReading reading;
    reading.backend = EnergyBackend::TdpModel;
    reading.joules = cfg.tdp_watts * seconds;
    reading.kwh = reading.joules / 3.6e6;
    reading.samples = 1;
    return reading;
}

namespace {

std::string shape_text(const std::vector<int64_t>& shape) {
    std::string s;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s;
}

}  // namespace

Report make_report(std::vector<ReportRow> rows) {
    require(!rows.empty(), Err::Precondition, "report needs rows");
    for (auto& row : rows) {
        if (row.mode == "fp32") continue;
        for (const auto& base : rows) {
            if (base.task == row.task && base.mode == "fp32" && base.energy.kwh > 0) {
                row.energy_reduction_pct = (1.0 - row.energy.kwh / base.energy.kwh) * 100.0;
                break;
            }
        }
    }
    return Report{std::move(rows)};
}

std::string Report::text() const {
    std::ostringstream os;
    os << std::left << std::setw(14) << "task" << std::setw(12) << "mode" << std::right
       << std::setw(12) << "latency_s" << std::setw(16) << "energy_kwh" << std::setw(10)
       << "accuracy" << std::setw(8) << "metric" << std::setw(16) << "image_size" << "\n";
    for (const auto& r : rows) {
        std::ostringstream energy;
        energy << std::setprecision(4) << std::scientific << r.energy.kwh;
        if (r.energy_reduction_pct)
            energy << "(" << std::fixed << std::setprecision(1) << *r.energy_reduction_pct
                   << "% v)";
        os << std::left << std::setw(14) << r.task << std::setw(12) << r.mode << std::right
           << std::setw(12) << std::fixed << std::setprecision(4) << r.latency.mean_s
           << std::setw(16) << energy.str() << std::setw(10) << std::setprecision(4) << r.accuracy
           << std::setw(8) << r.accuracy_metric << std::setw(16) << shape_text(r.image_shape)
           << "\n";
    }
    return os.str();
}

std::string Report::csv() const {
    std::ostringstream os;
    os << "task,mode,latency_s,energy_kwh,accuracy,accuracy_metric,image_size,"
          "energy_reduction_pct\n";
    for (const auto& r : rows) {
        os << r.task << "," << r.mode << "," << r.latency.mean_s << "," << r.energy.kwh << ","
           << r.accuracy << "," << r.accuracy_metric << "," << shape_text(r.image_shape) << ",";
        if (r.energy_reduction_pct) os << *r.energy_reduction_pct;
        os << "\n";
    }
    return os.str();
}

nlohmann::ordered_json Report::json() const {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json j;
        j["task"] = r.task;
        j["mode"] = r.mode;
        j["latency"] = {{"runs", r.latency.runs},
                        {"warmup", r.latency.warmup},
                        {"mean_s", r.latency.mean_s},
                        {"median_s", r.latency.median_s},
                        {"p90_s", r.latency.p90_s},
                        {"min_s", r.latency.min_s}};
        j["energy"] = {{"backend",
                        r.energy.backend == EnergyBackend::CounterFile ? "counter" : "tdp"},
                       {"joules", r.energy.joules},
                       {"kwh", r.energy.kwh},
                       {"samples", r.energy.samples}};
        j["accuracy"] = r.accuracy;
        j["accuracy_metric"] = r.accuracy_metric;
        j["image_shape"] = r.image_shape;
        if (r.energy_reduction_pct)
            j["energy_reduction_pct"] = *r.energy_reduction_pct;
        else
            j["energy_reduction_pct"] = nullptr;
        arr.push_back(j);
    }
    return arr;
}

ReportRow row_from_json(const nlohmann::json& j) {
    ReportRow r;
    r.task = j.at("task").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    const auto& lat = j.at("latency");
    r.latency.runs = lat.at("runs").get<int64_t>();
    r.latency.warmup = lat.at("warmup").get<int64_t>();
    r.latency.mean_s = lat.at("mean_s").get<double>();
    r.latency.median_s = lat.at("median_s").get<double>();
    r.latency.p90_s = lat.at("p90_s").get<double>();
    r.latency.min_s = lat.at("min_s").get<double>();
    const auto& en = j.at("energy");
    r.energy.backend = en.at("backend").get<std::string>() == "counter"
                           ? EnergyBackend::CounterFile
                           : EnergyBackend::TdpModel;
    r.energy.joules = en.at("joules").get<double>();
    r.energy.kwh = en.at("kwh").get<double>();
    r.energy.samples = en.at("samples").get<int64_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.accuracy_metric = j.at("accuracy_metric").get<std::string>();
    r.image_shape = j.at("image_shape").get<std::vector<int64_t>>();
    return r;
}

}  // namespace ebc::bench
