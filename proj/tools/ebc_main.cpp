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
#include <iostream>

#include "CLI11.hpp"
#include "ebc/cli.hpp"

namespace {

// Exit codes: 0 success, 1 config error, 2 pipeline error.
int guarded(const std::function<void()>& fn) {
    try {
        fn();
        return 0;
    } catch (const ebc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == ebc::Err::ConfigError ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ebc - model compression toolkit and micro inference runtime"};
    app.set_version_flag("--version", ebc::cli::kVersion);
    app.require_subcommand(1);

    std::string config_path, out_path;

    auto* compress = app.add_subcommand("compress", "prune and/or quantize a model");
    compress->add_option("--config", config_path, "pipeline config (JSON)")->required();
    compress->add_option("--out", out_path, "output directory");

    auto* infer = app.add_subcommand("infer", "tiled inference + metrics + report row");
    infer->add_option("--config", config_path, "pipeline config (JSON)")->required();

    auto* sweep = app.add_subcommand("sweep", "criterion x sparsity pruning sweep");
    sweep->add_option("--config", config_path, "pipeline config (JSON)")->required();
    sweep->add_option("--out", out_path, "output directory");

    auto* bench = app.add_subcommand("bench", "latency/energy/accuracy report");
    bench->add_option("--config", config_path, "pipeline config (JSON)")->required();
    bench->add_option("--out", out_path, "output directory");

    auto* datagen = app.add_subcommand("datagen", "generate phantom datasets");
    datagen->add_option("--config", config_path, "pipeline config (JSON)")->required();
    datagen->add_option("--out", out_path, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    return guarded([&] {
        auto cfg = ebc::cli::RunConfig::load(config_path);
        if (compress->parsed()) ebc::cli::cmd_compress(cfg, out_path);
        if (infer->parsed()) ebc::cli::cmd_infer(cfg);
        if (sweep->parsed()) ebc::cli::cmd_sweep(cfg, out_path);
        if (bench->parsed()) ebc::cli::cmd_bench(cfg, out_path);
        if (datagen->parsed()) ebc::cli::cmd_datagen(cfg, out_path);
    });
}
