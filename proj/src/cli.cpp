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
#include "ebc/cli.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "ebc/bench.hpp"
#include "ebc/datagen.hpp"
#include "ebc/executor.hpp"
#include "ebc/graph.hpp"
#include "ebc/metrics.hpp"
#include "ebc/pruner.hpp"
#include "ebc/quantizer.hpp"
#include "ebc/trainer.hpp"

namespace ebc::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream is(path);
    require(is.good(), Err::ConfigError, "cannot open config " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        fail(Err::ConfigError, path.string() + ": " + e.what());
    }
    return from_json(std::move(j), path.has_parent_path() ? path.parent_path() : ".");
}

RunConfig RunConfig::from_json(json j, fs::path base_dir) {
    RunConfig cfg;
    cfg.json_ = std::move(j);
    cfg.base_dir_ = std::move(base_dir);
    return cfg;
}

namespace {

const json* lookup(const json& root, const std::string& pointer) {
    try {
        const json& v = root.at(json::json_pointer(pointer));
        return &v;
    } catch (const json::exception&) {
        return nullptr;
    }
}

const json& demand(const json& root, const std::string& pointer) {
    const json* v = lookup(root, pointer);
    require(v != nullptr, Err::ConfigError, "missing config field " + pointer);
    return *v;
}

}  // namespace

bool RunConfig::has(const std::string& pointer) const { return lookup(json_, pointer) != nullptr; }

std::string RunConfig::str(const std::string& pointer) const {
    const json& v = demand(json_, pointer);
    require(v.is_string(), Err::ConfigError, pointer + " must be a string");
    return v.get<std::string>();
}

std::string RunConfig::str_or(const std::string& pointer, const std::string& fallback) const {
    return has(pointer) ? str(pointer) : fallback;
}

double RunConfig::number(const std::string& pointer) const {
    const json& v = demand(json_, pointer);
    require(v.is_number(), Err::ConfigError, pointer + " must be a number");
    return v.get<double>();
}

double RunConfig::number_or(const std::string& pointer, double fallback) const {
    return has(pointer) ? number(pointer) : fallback;
}

int64_t RunConfig::integer(const std::string& pointer) const {
    const json& v = demand(json_, pointer);
    require(v.is_number_integer(), Err::ConfigError, pointer + " must be an integer");
    return v.get<int64_t>();
}

int64_t RunConfig::integer_or(const std::string& pointer, int64_t fallback) const {
    return has(pointer) ? integer(pointer) : fallback;
}

std::vector<int64_t> RunConfig::int_list(const std::string& pointer) const {
    const json& v = demand(json_, pointer);
    require(v.is_array(), Err::ConfigError, pointer + " must be an array");
    return v.get<std::vector<int64_t>>();
}

std::vector<double> RunConfig::number_list(const std::string& pointer) const {
    const json& v = demand(json_, pointer);
    require(v.is_array(), Err::ConfigError, pointer + " must be an array");
    return v.get<std::vector<double>>();
}

std::vector<std::string> RunConfig::str_list(const std::string& pointer) const {
    const json& v = demand(json_, pointer);
    require(v.is_array(), Err::ConfigError, pointer + " must be an array");
    return v.get<std::vector<std::string>>();
}

fs::path RunConfig::path(const std::string& pointer) const {
    fs::path p = str(pointer);
    if (p.is_relative()) p = base_dir_ / p;
    require(fs::exists(p), Err::ConfigError, pointer + ": path does not exist: " + p.string());
    return p;
}

fs::path RunConfig::out_dir() const {
    fs::path p = str("/output_dir");
    if (p.is_relative()) p = base_dir_ / p;
    fs::create_directories(p);
    return p;
}

std::vector<std::pair<Tensor, Tensor>> load_pairs(const fs::path& dir) {
    std::vector<fs::path> xs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.size() > 6 && name.substr(name.size() - 6) == ".x.ebt")
            xs.push_back(entry.path());
    }
    std::sort(xs.begin(), xs.end());
    require(!xs.empty(), Err::ConfigError, "no *.x.ebt samples under " + dir.string());

    std::vector<std::pair<Tensor, Tensor>> pairs;
    for (const auto& x : xs) {
        std::string stem = x.string();
        stem.replace(stem.size() - 6, 6, ".y.ebt");
        require(fs::exists(stem), Err::ConfigError, "missing target " + stem);
        pairs.emplace_back(load_tensor(x), load_tensor(stem));
    }
    return pairs;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    require(os.good(), Err::Io, "cannot write " + path.string());
    os << text;
}

uint32_t file_crc32(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), Err::Io, "cannot open " + path.string());
    uLong crc = crc32(0L, Z_NULL, 0);
    char buf[1 << 16];
    while (is.read(buf, sizeof buf) || is.gcount() > 0)
        crc = crc32(crc, reinterpret_cast<const Bytef*>(buf), static_cast<uInt>(is.gcount()));
    return static_cast<uint32_t>(crc);
}

quant::ObserverKind observer_from(const RunConfig& cfg) {
    quant::ObserverKind kind;
    std::string name = cfg.str_or("/quant/observer", "ema_quantile");
    if (name == "minmax")
        kind.tag = quant::ObserverTag::MinMax;
    else if (name == "ema_minmax")
        kind.tag = quant::ObserverTag::EMAMinMax;
    else if (name == "quantile")
        kind.tag = quant::ObserverTag::Quantile;
    else if (name == "ema_quantile")
        kind.tag = quant::ObserverTag::EMAQuantile;
    else
        fail(Err::ConfigError, "/quant/observer: unknown observer " + name);
    kind.quantile = cfg.number_or("/quant/quantile", 0.9999);
    kind.ema_momentum = cfg.number_or("/quant/ema_momentum", 0.9);
    return kind;
}

train::LossKind loss_from(const std::string& name, const std::string& field) {
    if (name == "mse") return train::LossKind::MSE;
    if (name == "bce") return train::LossKind::BCE;
    fail(Err::ConfigError, field + ": unknown loss " + name);
}

train::SGDConfig sgd_from(const RunConfig& cfg, const std::string& prefix) {
    train::SGDConfig sgd;
    sgd.lr = cfg.number_or(prefix + "/lr", 1e-3);
    sgd.momentum = cfg.number_or(prefix + "/momentum", 0.9);
    sgd.epochs = cfg.integer_or(prefix + "/epochs", 1000);
    sgd.batch_size = cfg.integer_or(prefix + "/batch_size", 4);
    sgd.seed = static_cast<uint64_t>(cfg.integer_or(prefix + "/seed", cfg.integer_or("/seed", 0)));
    return sgd;
}

bench::EnergyConfig energy_from(const RunConfig& cfg) {
    bench::EnergyConfig energy;
    std::string backend = cfg.str_or("/energy/backend", "tdp");
    if (backend == "counter")
        energy.backend = bench::EnergyBackend::CounterFile;
    else if (backend == "tdp")
        energy.backend = bench::EnergyBackend::TdpModel;
    else
        fail(Err::ConfigError, "/energy/backend: unknown backend " + backend);
    energy.tdp_watts = cfg.number_or("/energy/tdp_watts", 45.0);
    if (cfg.has("/energy/counter_root")) energy.counter_root = cfg.str("/energy/counter_root");
    if (const char* env = std::getenv(kCounterRootEnv)) energy.counter_root = env;
    energy.fallback_to_tdp = cfg.integer_or("/energy/fallback_to_tdp", 1) != 0;
    return energy;
}

// Task metric over (prediction, target) pairs.
prune::MetricFn metric_from(const RunConfig& cfg) {
    std::string kind = cfg.str_or("/metric/kind", "pearson");
    double threshold = cfg.number_or("/metric/threshold", 0.5);
    if (kind == "pearson")
        return [](const Tensor& pred, const Tensor& target) {
            // A constant prediction carries no signal; score it 0 instead of
            // aborting a whole sweep or report.
            try {
                return metrics::pearson(pred, target);
            } catch (const Error& e) {
                if (e.code() == Err::DegenerateInput) return 0.0;
                throw;
            }
        };
    if (kind == "dice")
        return [threshold](const Tensor& pred, const Tensor& target) {
            return metrics::dice(pred, target, threshold);
        };
    if (kind == "ap50")
        return [threshold](const Tensor& pred, const Tensor& target) {
            // target is a label map; prediction is thresholded foreground.
            int64_t spatial_rank = target.rank();
            Tensor mask = pred.squeeze_to(spatial_rank);
            Tensor labels = metrics::connected_components([&] {
                Tensor fg = Tensor::zeros(mask.shape(), DType::F32);
                auto md = mask.f32();
                auto fd = fg.f32();
                for (size_t i = 0; i < md.size(); ++i)
                    fd[i] = md[i] > static_cast<float>(threshold) ? 1.0f : 0.0f;
                return fg;
            }());
            return metrics::ap50(labels, target);
        };
    fail(Err::ConfigError, "/metric/kind: unknown metric " + kind);
}

std::string mode_of(const RunConfig& cfg) {
    std::string mode = cfg.str("/mode");
    require(mode == "fp32" || mode == "int8" || mode == "prune" || mode == "prune+int8",
            Err::ConfigError, "/mode: unknown mode " + mode);
    return mode;
}

void write_report_files(const fs::path& dir, const bench::Report& report) {
    write_text(dir / "report.txt", report.text());
    write_text(dir / "report.csv", report.csv());
    write_text(dir / "report.json", report.json().dump(2) + "\n");
}

}  // namespace

void cmd_compress(const RunConfig& cfg, fs::path out_dir) {
    if (out_dir.empty()) out_dir = cfg.out_dir();
    fs::create_directories(out_dir);

    std::string mode = mode_of(cfg);
    fs::path model_path = cfg.path("/model");
    Graph g = load_model(model_path);
    auto errors = validate_static(g);
    if (!errors.empty()) fail(Err::Precondition, "invalid model: " + errors.front());

    ordered_json manifest;
    manifest["tool_version"] = kVersion;
    manifest["input_model"] = model_path.string();
    manifest["input_crc32"] = file_crc32(model_path);
    manifest["mode"] = mode;
    manifest["seed"] = cfg.integer_or("/seed", 0);
    manifest["params_before"] = prune::count_params(g);
    manifest["flops_before"] = prune::count_flops(g);

    auto folded = fold_batchnorm(g);
    if (!folded.unfoldable.empty())
        std::cerr << "warning: " << folded.unfoldable.size() << " batchnorm node(s) left in place\n";
    g = std::move(folded.graph);
    manifest["batchnorm_unfoldable"] = folded.unfoldable;

    if (mode == "prune" || mode == "prune+int8") {
        auto criterion = prune::criterion_from(cfg.str_or("/prune/criterion", "L1"));
        require(criterion.has_value(), Err::ConfigError, "/prune/criterion: unknown criterion");
        double sparsity = cfg.number_or("/prune/sparsity", 0.5);
        auto groups = prune::build_groups(g);
        auto plan = prune::make_plan(g, groups, *criterion, sparsity);
        g = prune::apply_prune(g, plan);
        manifest["prune"] = {{"criterion", prune::criterion_name(*criterion)},
                             {"sparsity", sparsity},
                             {"params_after_prune", prune::count_params(g)}};

        if (cfg.has("/prune/finetune") &&
            !cfg.raw().at(json::json_pointer("/prune/finetune")).is_string()) {
            auto data = load_pairs(cfg.path("/prune/data"));
            auto sgd = sgd_from(cfg, "/prune/finetune");
            auto loss = loss_from(cfg.str_or("/prune/finetune/loss", "mse"), "/prune/finetune/loss");
            auto result = train::finetune(g, data, loss, sgd);
            g = std::move(result.graph);
            std::ostringstream curve;
            curve << "epoch,loss\n";
            for (size_t e = 0; e < result.epoch_loss.size(); ++e)
                curve << e << "," << result.epoch_loss[e] << "\n";
            write_text(out_dir / "train_curve.csv", curve.str());
            manifest["prune"]["finetune_epochs"] = sgd.epochs;
            manifest["prune"]["finetune_final_loss"] = result.epoch_loss.back();
        }
    }

    if (mode == "int8" || mode == "prune+int8") {
        auto calib_dir = cfg.path("/quant/calib_data");
        auto pairs = load_pairs(calib_dir);
        int64_t want = cfg.integer_or("/quant/calib_samples", 5);
        std::vector<Tensor> samples;
        for (const auto& [x, y] : pairs) {
            if (static_cast<int64_t>(samples.size()) >= want) break;
            samples.push_back(x);
        }
        auto kind = observer_from(cfg);
        auto params = quant::calibrate(g, samples, kind);
        g = quant::convert_int8(g, params);
        int degenerate = 0;
        for (const auto& [site, p] : params) degenerate += p.degenerate ? 1 : 0;
        manifest["quant"] = {{"observer", cfg.str_or("/quant/observer", "ema_quantile")},
                             {"quantile", kind.quantile},
                             {"ema_momentum", kind.ema_momentum},
                             {"calib_samples", static_cast<int64_t>(samples.size())},
                             {"sites", static_cast<int64_t>(params.size())},
                             {"degenerate_sites", degenerate}};
    }

    fs::path out_model = out_dir / "model.ebm";
    save_model(g, out_model);
    manifest["params_after"] = prune::count_params(g);
    manifest["flops_after"] = prune::count_flops(g);
    manifest["output_model"] = out_model.string();
    manifest["output_crc32"] = file_crc32(out_model);
    manifest["model_bytes"] = static_cast<int64_t>(fs::file_size(out_model));
    write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

void cmd_infer(const RunConfig& cfg) {
    fs::path out_dir = cfg.out_dir();
    fs::path pred_dir = out_dir / "predictions";
    fs::create_directories(pred_dir);

    Graph g = load_model(cfg.path("/model"));
    auto pairs = load_pairs(cfg.path("/infer/data"));
    auto window = cfg.int_list("/infer/window");
    double overlap = cfg.number_or("/infer/overlap", 0.1);
    auto metric = metric_from(cfg);

    std::vector<Tensor> predictions;
    auto workload = [&] {
        predictions.clear();
        for (const auto& [x, y] : pairs)
            predictions.push_back(exec::run_tiled(g, x, window, overlap));
    };

    int64_t runs = cfg.integer_or("/bench/runs", 1);
    int64_t warmup = cfg.integer_or("/bench/warmup", 0);
    bench::LatencyStats latency = bench::time_run(workload, runs, warmup);
    bench::EnergyReading energy = bench::measure_energy(workload, energy_from(cfg));

    double total = 0.0;
    for (size_t i = 0; i < pairs.size(); ++i) {
        total += metric(predictions[i], pairs[i].second);
        std::ostringstream name;
        name << "pred_" << std::setw(3) << std::setfill('0') << i << ".ebt";
        save_tensor(predictions[i], pred_dir / name.str());
    }
    double accuracy = total / static_cast<double>(pairs.size());

    bench::ReportRow row;
    row.task = cfg.str_or("/task", "task");
    row.mode = mode_of(cfg);
    row.latency = latency;
    row.energy = energy;
    row.accuracy = accuracy;
    row.accuracy_metric = cfg.str_or("/metric/kind", "pearson");
    row.image_shape = pairs[0].first.shape();

    // Append to any existing report so fp32 and compressed runs share a file.
    std::vector<bench::ReportRow> rows;
    fs::path report_json = out_dir / "report.json";
    if (fs::exists(report_json)) {
        std::ifstream is(report_json);
        json existing = json::parse(is);
        for (const auto& j : existing) rows.push_back(bench::row_from_json(j));
    }
    rows.push_back(row);
    write_report_files(out_dir, bench::make_report(std::move(rows)));

    ordered_json manifest;
    manifest["tool_version"] = kVersion;
    manifest["model"] = cfg.path("/model").string();
    manifest["window"] = window;
    manifest["overlap"] = overlap;
    manifest["data"] = cfg.path("/infer/data").string();
    manifest["metric"] = cfg.str_or("/metric/kind", "pearson");
    manifest["samples"] = static_cast<int64_t>(pairs.size());
    manifest["accuracy"] = accuracy;
    write_text(out_dir / ("manifest_infer_" + row.mode + ".json"), manifest.dump(2) + "\n");
}

void cmd_sweep(const RunConfig& cfg, fs::path out_dir) {
    if (out_dir.empty()) out_dir = cfg.out_dir();
    fs::create_directories(out_dir);

    Graph g = load_model(cfg.path("/model"));
    auto folded = fold_batchnorm(g);
    g = std::move(folded.graph);
    auto pairs = load_pairs(cfg.path("/infer/data"));
    auto metric = metric_from(cfg);

    std::vector<prune::Criterion> criteria;
    for (const auto& name : cfg.str_list("/sweep/criteria")) {
        auto c = prune::criterion_from(name);
        require(c.has_value(), Err::ConfigError, "/sweep/criteria: unknown criterion " + name);
        criteria.push_back(*c);
    }
    auto ratios = cfg.number_list("/sweep/ratios");

    std::optional<prune::FinetuneCfg> finetune;
    if (cfg.has("/sweep/finetune")) {
        prune::FinetuneCfg ft;
        ft.loss = loss_from(cfg.str_or("/sweep/finetune/loss", "mse"), "/sweep/finetune/loss");
        ft.sgd = sgd_from(cfg, "/sweep/finetune");
        finetune = ft;
    }

    auto rows = prune::sweep(g, pairs, metric, criteria, ratios, finetune);
    write_text(out_dir / "sweep.csv", prune::sweep_csv(rows));

    ordered_json jrows = ordered_json::array();
    for (const auto& r : rows)
        jrows.push_back({{"criterion", prune::criterion_name(r.criterion)},
                         {"ratio", r.ratio},
                         {"accuracy", r.accuracy},
                         {"params", r.params},
                         {"flops", r.flops}});
    write_text(out_dir / "sweep.json", jrows.dump(2) + "\n");

    // Best cell: highest accuracy among rows clearing the params floor.
    double floor = cfg.number_or("/sweep/min_params_reduction", 0.3);
    int64_t baseline_params = prune::count_params(g);
    const prune::SweepRow* best = nullptr;
    for (const auto& r : rows) {
        if (r.ratio <= 0.0) continue;
        double reduction = 1.0 - static_cast<double>(r.params) /
                                     static_cast<double>(baseline_params);
        if (reduction + 1e-12 < floor) continue;
        if (!best || r.accuracy > best->accuracy ||
            (r.accuracy == best->accuracy && r.ratio < best->ratio))
            best = &r;
    }
    std::ostringstream summary;
    summary << "sweep over " << criteria.size() << " criteria x " << ratios.size()
            << " ratios (" << rows.size() << " cells)\n";
    if (best) {
        summary << "best: criterion=" << prune::criterion_name(best->criterion)
                << " ratio=" << best->ratio << " accuracy=" << best->accuracy
                << " params=" << best->params << " (baseline " << baseline_params << ")\n";
    } else {
        summary << "best: none (no cell met the params-reduction floor of " << floor << ")\n";
    }
    write_text(out_dir / "summary.txt", summary.str());
}

void cmd_bench(const RunConfig& cfg, fs::path out_dir) {
    if (out_dir.empty()) out_dir = cfg.out_dir();
    fs::create_directories(out_dir);

    const json& entries = cfg.raw().at("bench").at("entries");
    require(entries.is_array() && !entries.empty(), Err::ConfigError,
            "/bench/entries must be a nonempty array");
    int64_t runs = cfg.integer_or("/bench/runs", 3);
    int64_t warmup = cfg.integer_or("/bench/warmup", 1);
    auto metric = metric_from(cfg);
    auto energy_cfg = energy_from(cfg);

    std::vector<bench::ReportRow> rows;
    for (size_t e = 0; e < entries.size(); ++e) {
        std::string prefix = "/bench/entries/" + std::to_string(e);
        fs::path model_path = cfg.path(prefix + "/model");
        Graph g = load_model(model_path);
        auto pairs = load_pairs(cfg.path(prefix + "/data"));

        std::vector<int64_t> window;
        if (cfg.has(prefix + "/window"))
            window = cfg.int_list(prefix + "/window");
        else if (cfg.has("/infer/window"))
            window = cfg.int_list("/infer/window");
        double overlap = cfg.number_or(prefix + "/overlap", cfg.number_or("/infer/overlap", 0.1));

        std::vector<Tensor> predictions;
        auto workload = [&] {
            predictions.clear();
            for (const auto& [x, y] : pairs) {
                if (window.empty())
                    predictions.push_back(
                        exec::run(g, {{g.inputs[0].name, x}}).at(g.outputs[0]));
                else
                    predictions.push_back(exec::run_tiled(g, x, window, overlap));
            }
        };

        bench::ReportRow row;
        row.latency = bench::time_run(workload, runs, warmup);
        row.energy = bench::measure_energy(workload, energy_cfg);
        double total = 0.0;
        for (size_t i = 0; i < pairs.size(); ++i) total += metric(predictions[i], pairs[i].second);
        row.accuracy = total / static_cast<double>(pairs.size());
        row.task = cfg.str_or(prefix + "/task", cfg.str_or("/task", "task"));
        row.mode = cfg.str(prefix + "/mode");
        row.accuracy_metric = cfg.str_or("/metric/kind", "pearson");
        row.image_shape = pairs[0].first.shape();
        rows.push_back(std::move(row));
    }
    write_report_files(out_dir, bench::make_report(std::move(rows)));
}

void cmd_datagen(const RunConfig& cfg, fs::path out_dir) {
    if (out_dir.empty()) out_dir = cfg.out_dir();
    fs::create_directories(out_dir);

    auto task = datagen::task_from(cfg.str("/datagen/task"));
    require(task.has_value(), Err::ConfigError, "/datagen/task: unknown task");
    datagen::PhantomSpec spec = datagen::default_spec(*task);
    if (cfg.has("/datagen/shape")) spec.shape = cfg.int_list("/datagen/shape");
    if (cfg.has("/datagen/objects")) {
        auto range = cfg.int_list("/datagen/objects");
        require(range.size() == 2, Err::ConfigError, "/datagen/objects must be [min, max]");
        spec.min_objects = range[0];
        spec.max_objects = range[1];
    }
    spec.noise_sigma = cfg.number_or("/datagen/noise_sigma", spec.noise_sigma);
    spec.amplitude = cfg.number_or("/datagen/amplitude", spec.amplitude);
    uint64_t base_seed = static_cast<uint64_t>(cfg.integer_or("/seed", 0));
    int64_t count = cfg.integer_or("/datagen/count", 8);
    std::string prefix = cfg.str_or("/datagen/prefix", "phantom");

    for (int64_t i = 0; i < count; ++i) {
        spec.seed = base_seed + static_cast<uint64_t>(i);
        auto [x, y] = datagen::generate(spec);
        std::ostringstream stem;
        stem << prefix << "_" << std::setw(3) << std::setfill('0') << i;
        save_tensor(x, out_dir / (stem.str() + ".x.ebt"));
        save_tensor(y, out_dir / (stem.str() + ".y.ebt"));
        write_text(out_dir / (stem.str() + ".json"), datagen::spec_json(spec) + "\n");
    }
}

}  // namespace ebc::cli
