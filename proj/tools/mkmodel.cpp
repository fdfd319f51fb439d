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

// Builds (and optionally trains) a small demo U-Net on generated phantoms,
// so the compress/infer/bench pipeline has a model to start from.

#include <iostream>

#include "CLI11.hpp"
#include "ebc/datagen.hpp"
#include "ebc/graph.hpp"
#include "ebc/models.hpp"
#include "ebc/trainer.hpp"

using namespace ebc;

int main(int argc, char** argv) {
    CLI::App app{"ebc-mkmodel - build a demo model for the compression pipeline"};
    std::string task_name = "denoise3d";
    std::string out_path = "model.ebm";
    int64_t channels = 4;
    int64_t epochs = 60;
    int64_t samples = 8;
    uint64_t seed = 7;
    bool train_model = true;
    std::vector<int64_t> spatial;

    app.add_option("--task", task_name, "denoise3d|labelfree3d|semantic3d|instance2d");
    app.add_option("--out", out_path, "output .ebm path");
    app.add_option("--channels", channels, "U-Net base channels");
    app.add_option("--epochs", epochs, "training epochs");
    app.add_option("--samples", samples, "training phantoms");
    app.add_option("--seed", seed, "rng seed");
    app.add_option("--spatial", spatial, "training phantom spatial extents");
    app.add_flag("!--no-train", train_model, "skip training");
    CLI11_PARSE(app, argc, argv);

    try {
        auto task = datagen::task_from(task_name);
        if (!task) {
            std::cerr << "unknown task " << task_name << "\n";
            return 1;
        }
        bool is2d = *task == datagen::Task::Instance2d;
        bool segmentation =
            *task == datagen::Task::Semantic3d || *task == datagen::Task::Instance2d;

        datagen::PhantomSpec spec = datagen::default_spec(*task);
        if (!spatial.empty()) {
            spec.shape = {1, 1};
            spec.shape.insert(spec.shape.end(), spatial.begin(), spatial.end());
        }

        models::UnetConfig cfg;
        cfg.dims = is2d ? 2 : 3;
        cfg.base_channels = channels;
        cfg.spatial.assign(spec.shape.begin() + 2, spec.shape.end());
        cfg.final_sigmoid = segmentation;
        cfg.seed = seed;
        Graph g = models::make_unet2(cfg);

        if (train_model) {
            std::vector<std::pair<Tensor, Tensor>> data;
            for (int64_t i = 0; i < samples; ++i) {
                spec.seed = seed + static_cast<uint64_t>(i);
                auto [x, y] = datagen::generate(spec);
                if (*task == datagen::Task::Instance2d) {
                    // Train against the foreground mask of the label map.
                    Tensor mask = Tensor::zeros(x.shape(), DType::F32);
                    auto md = mask.f32();
                    auto ld = y.i32();
                    for (size_t p = 0; p < md.size(); ++p) md[p] = ld[p] > 0 ? 1.0f : 0.0f;
                    y = std::move(mask);
                }
                data.emplace_back(std::move(x), std::move(y));
            }
            train::SGDConfig sgd;
            sgd.lr = segmentation ? 5e-2 : 1e-2;
            sgd.momentum = 0.9;
            sgd.epochs = epochs;
            sgd.batch_size = 2;
            sgd.seed = seed;
            auto loss = segmentation ? train::LossKind::BCE : train::LossKind::MSE;
            auto result = train::finetune(g, data, loss, sgd);
            g = std::move(result.graph);
            std::cout << "trained " << epochs << " epochs, loss " << result.epoch_loss.front()
                      << " -> " << result.epoch_loss.back() << "\n";
        }

        save_model(g, out_path);
        std::cout << "wrote " << out_path << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
