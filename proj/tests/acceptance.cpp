// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one pass/fail line per criterion. Exit code is the number of
// failed criteria.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <thread>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <vector>

#include "ebc/bench.hpp"
#include "ebc/cli.hpp"
#include "ebc/datagen.hpp"
#include "ebc/executor.hpp"
#include "ebc/graph.hpp"
#include "ebc/metrics.hpp"
#include "ebc/models.hpp"
#include "ebc/pruner.hpp"
#include "ebc/quantizer.hpp"
#include "ebc/rng.hpp"
#include "ebc/tensor.hpp"
#include "ebc/trainer.hpp"
#include "test_util.hpp"

using namespace ebc;
namespace fs = std::filesystem;

namespace {

struct Check {
    std::vector<std::string> failures;

    void expect(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
    template <typename T>
    void expect_le(T value, T bound, const std::string& what) {
        if (!(value <= bound)) {
            std::ostringstream os;
            os << what << " (" << value << " > " << bound << ")";
            failures.push_back(os.str());
        }
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- shared trained fixture (criteria 4 and 7) ----

struct DenoiseFixture {
    Graph model;
    std::vector<std::pair<Tensor, Tensor>> train_data;
    std::vector<std::pair<Tensor, Tensor>> held;
    double baseline = 0.0;  // mean pearson of the trained model on held
};

double eval_pearson(const Graph& g, const std::vector<std::pair<Tensor, Tensor>>& data) {
    double total = 0.0;
    for (const auto& [x, y] : data) {
        auto out = exec::run(g, {{g.inputs[0].name, x}});
        try {
            total += metrics::pearson(out.at(g.outputs[0]), y);
        } catch (const Error&) {
            // constant prediction carries no signal
        }
    }
    return total / static_cast<double>(data.size());
}

const DenoiseFixture& denoise_fixture() {
    static DenoiseFixture fx = [] {
        DenoiseFixture f;
        datagen::PhantomSpec spec = datagen::default_spec(datagen::Task::Denoise3d);
        spec.shape = {1, 1, 16, 32, 32};
        for (uint64_t s = 0; s < 8; ++s) {
            spec.seed = s;
            f.train_data.push_back(datagen::gen_denoise(spec));
        }
        for (uint64_t s = 50; s < 60; ++s) {
            spec.seed = s;
            f.held.push_back(datagen::gen_denoise(spec));
        }
        models::UnetConfig cfg;
        cfg.dims = 3;
        cfg.base_channels = 6;
        cfg.spatial = {16, 32, 32};
        cfg.seed = 7;
        Graph g = models::make_unet2(cfg);
        train::SGDConfig sgd;
        sgd.lr = 3e-3;
        sgd.momentum = 0.9;
        sgd.epochs = 120;
        sgd.batch_size = 2;
        sgd.seed = 3;
        f.model = train::finetune(g, f.train_data, train::LossKind::MSE, sgd).graph;
        f.baseline = eval_pearson(f.model, f.held);
        return f;
    }();
    return fx;
}

// ---- criteria ----

void criterion_quant_round_trip(Check& check) {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    int64_t total = 0;
    while (total < 1000000) {
        double scale = rng.uniform(1e-3, 0.1);
        quant::QuantParams p;
        p.scale = scale;
        int64_t n = 10000;
        std::vector<float> vals(static_cast<size_t>(n));
        for (auto& v : vals) v = static_cast<float>(rng.uniform(-127.0 * scale, 127.0 * scale));
        Tensor t = Tensor::from_f32({n}, vals);
        Tensor back = quant::dequantize_tensor(quant::quantize_tensor(t, p), p);
        auto bd = back.f32();
        for (int64_t i = 0; i < n; ++i) {
            double err = std::abs(static_cast<double>(vals[static_cast<size_t>(i)]) -
                                  bd[static_cast<size_t>(i)]);
            // scale/2 plus one f32 ulp of the reconstructed value, which is
            // the representation the op returns.
            double bound = scale / 2 +
                           std::abs(static_cast<double>(bd[static_cast<size_t>(i)])) * 1.2e-7 +
                           1e-12;
            if (err > bound) {
                check.expect(false, "round trip error exceeded scale/2");
                return;
            }
        }
        total += n;
    }
    check.expect_le(seconds_since(t0), 5.0, "runtime budget 5 s");
}

void criterion_int8_kernel_oracle(Check& check) {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(202);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        int64_t d = rng.uniform_int(1, 3);
        int64_t cin = rng.uniform_int(1, 16), cout = rng.uniform_int(1, 16);
        std::vector<int64_t> xshape = {1, cin}, wshape = {cout, cin}, stride, pad;
        for (int64_t a = 0; a < d; ++a) {
            int64_t k = rng.uniform_int(1, 3);
            xshape.push_back(rng.uniform_int(k, 9));
            wshape.push_back(k);
            stride.push_back(rng.uniform_int(1, 2));
            pad.push_back(rng.uniform_int(0, 1));
        }
        Tensor xq = testutil::random_i8(xshape, rng);
        Tensor wq = testutil::random_i8(wshape, rng);
        double sx = rng.uniform(2e-4, 2e-3), sw = rng.uniform(2e-4, 2e-3);
        std::vector<int32_t> bias_raw(static_cast<size_t>(cout));
        for (auto& v : bias_raw) v = static_cast<int32_t>(rng.uniform_int(-1000, 1000));
        Tensor bias = Tensor::from_i32({cout}, bias_raw);

        Tensor got = exec::conv_nd_i8(xq, wq, &bias, stride, pad, sx, sw);

        quant::QuantParams px, pw;
        px.scale = sx;
        pw.scale = sw;
        Tensor xf = quant::dequantize_tensor(xq, px);
        Tensor wf = quant::dequantize_tensor(wq, pw);
        std::vector<float> bias_f(static_cast<size_t>(cout));
        for (size_t i = 0; i < bias_f.size(); ++i)
            bias_f[i] = static_cast<float>(bias_raw[i] * sx * sw);
        Tensor bf = Tensor::from_f32({cout}, bias_f);
        Tensor want = exec::conv_nd_f32(xf, wf, &bf, stride, pad);
        worst = std::max(worst, testutil::max_abs_diff(got, want));
    }
    check.expect_le(worst, 1e-5, "int8 kernel vs dequantize-then-fp32 oracle");
    check.expect_le(seconds_since(t0), 30.0, "runtime budget 30 s");
}

int64_t weight_blob_bytes(const Graph& g) {
    int64_t bytes = 0;
    for (const auto& n : g.nodes)
        for (const auto& [name, t] : n.weights) bytes += static_cast<int64_t>(t.byte_size());
    return bytes;
}

void criterion_model_size(Check& check) {
    models::UnetConfig cfg;
    cfg.dims = 3;
    cfg.base_channels = 8;
    cfg.spatial = {8, 16, 16};
    cfg.seed = 17;
    cfg.zero_head = false;
    Graph g = models::make_unet2(cfg);

    Rng rng(303);
    std::vector<Tensor> samples;
    for (int i = 0; i < 3; ++i) samples.push_back(testutil::random_f32({1, 1, 8, 16, 16}, rng));
    auto params = quant::calibrate(g, samples, quant::ObserverKind{});
    Graph q = quant::convert_int8(g, params);

    double ratio = static_cast<double>(weight_blob_bytes(q)) /
                   static_cast<double>(weight_blob_bytes(g));
    check.expect_le(ratio, 0.30, "int8 weight blob vs fp32 bytes");
}

void criterion_int8_fidelity(Check& check) {
    auto t0 = std::chrono::steady_clock::now();
    const DenoiseFixture& fx = denoise_fixture();

    std::vector<Tensor> calib;
    for (int i = 0; i < 5; ++i) calib.push_back(fx.train_data[static_cast<size_t>(i)].first);
    // Exact minmax calibration: the fidelity check measures the integer
    // path, so no activation clipping is wanted here.
    quant::ObserverKind minmax;
    minmax.tag = quant::ObserverTag::MinMax;
    auto params = quant::calibrate(fx.model, calib, minmax);
    Graph q = quant::convert_int8(fx.model, params);

    double worst = 1.0;
    for (const auto& [x, y] : fx.held) {
        Tensor a = exec::run(fx.model, {{"x", x}}).at(fx.model.outputs[0]);
        Tensor b = exec::run(q, {{"x", x}}).at(q.outputs[0]);
        worst = std::min(worst, metrics::pearson(a, b));
    }
    check.expect(worst >= 0.99, "fp32-vs-int8 pearson >= 0.99 on 10 held-out phantoms (got " +
                                    std::to_string(worst) + ")");
    check.expect_le(seconds_since(t0), 120.0, "runtime budget 2 min");
}

// Independent params prediction from the plan, per generated pattern.
int64_t predict_params_chain(int64_t kept1, int64_t kept2, int64_t in_ch, int64_t k,
                             int64_t head_out) {
    return kept1 * in_ch * k + kept1 + kept2 * kept1 * k + kept2 + head_out * kept2;
}

void criterion_prune_equivalence(Check& check) {
    Rng rng(404);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        int64_t pattern = rng.uniform_int(0, 2);
        Graph g;
        std::vector<int64_t> in_shape;
        if (pattern == 0) {
            int64_t c1 = rng.uniform_int(2, 6), c2 = rng.uniform_int(2, 6);
            g = testutil::make_graph(
                {1, 1, 12},
                {testutil::conv_node("c1", "x", testutil::random_f32({c1, 1, 3}, rng),
                                     testutil::random_f32({c1}, rng)),
                 testutil::unary_node(OpKind::ReLU, "r1", "c1"),
                 testutil::conv_node("c2", "r1", testutil::random_f32({c2, c1, 3}, rng),
                                     testutil::random_f32({c2}, rng)),
                 testutil::unary_node(OpKind::LeakyReLU, "r2", "c2"),
                 testutil::conv_node("head", "r2", testutil::random_f32({2, c2, 1}, rng))},
                "head");
            in_shape = {1, 1, 12};
        } else if (pattern == 1) {
            int64_t c = rng.uniform_int(2, 6);
            g = testutil::make_graph(
                {1, 2, 10},
                {testutil::conv_node("a", "x", testutil::random_f32({c, 2, 3}, rng),
                                     testutil::random_f32({c}, rng)),
                 testutil::conv_node("b", "x", testutil::random_f32({c, 2, 3}, rng)),
                 testutil::add_node("sum", "a", "b"),
                 testutil::unary_node(OpKind::ReLU, "r", "sum"),
                 testutil::conv_node("head", "r", testutil::random_f32({2, c, 1}, rng))},
                "head");
            in_shape = {1, 2, 10};
        } else {
            models::UnetConfig cfg;
            cfg.dims = 2;
            cfg.spatial = {8, 8};
            cfg.base_channels = rng.uniform_int(2, 5);
            cfg.seed = rng.next_u64();
            cfg.zero_head = false;
            g = models::make_unet2(cfg);
            in_shape = {1, 1, 8, 8};
        }

        auto groups = prune::build_groups(g);
        auto crit = static_cast<prune::Criterion>(rng.uniform_int(0, 2));
        double sparsity = rng.uniform(0.0, 0.6);
        prune::PrunePlan plan = prune::make_plan(g, groups, crit, sparsity);
        Graph pruned = prune::apply_prune(g, plan);

        // zero-mask oracle
        Graph masked = g;
        for (const auto& [id, keep] : plan.keep) {
            Node* n = masked.find(id);
            std::set<int64_t> kept(keep.begin(), keep.end());
            Tensor& w = n->weights.at("w");
            auto wd = w.f32();
            int64_t filters = w.shape()[0];
            int64_t per = w.numel() / filters;
            for (int64_t f = 0; f < filters; ++f) {
                if (kept.count(f)) continue;
                for (int64_t i = 0; i < per; ++i) wd[static_cast<size_t>(f * per + i)] = 0.0f;
                if (n->weights.count("b")) n->weights.at("b").f32()[static_cast<size_t>(f)] = 0.0f;
            }
        }

        Tensor x = testutil::random_f32(in_shape, rng);
        auto a = exec::run(pruned, {{"x", x}});
        auto b = exec::run(masked, {{"x", x}});
        worst = std::max(worst,
                         testutil::max_abs_diff(a.at(pruned.outputs[0]), b.at(masked.outputs[0])));

        // Analytic parameter prediction from the plan alone.
        int64_t predicted = -1;
        if (pattern == 0) {
            predicted = predict_params_chain(
                static_cast<int64_t>(plan.keep.at("c1").size()),
                static_cast<int64_t>(plan.keep.at("c2").size()), 1, 3, 2);
        } else if (pattern == 1) {
            int64_t k = static_cast<int64_t>(plan.keep.at("a").size());
            predicted = k * 2 * 3 + k /*a*/ + k * 2 * 3 /*b*/ + 2 * k /*head*/;
        } else {
            int64_t e = static_cast<int64_t>(plan.keep.at("enc1").size());
            int64_t m = static_cast<int64_t>(plan.keep.at("mid1").size());
            int64_t d = static_cast<int64_t>(plan.keep.at("dec1").size());
            predicted = e * 1 * 9 + e + m * e * 9 + m + d * (e + m) * 9 + d + 1 * d * 1 + 1;
        }
        if (prune::count_params(pruned) != predicted) {
            check.expect(false, "analytic parameter prediction mismatch (pattern " +
                                    std::to_string(pattern) + ")");
            return;
        }
    }
    check.expect_le(worst, 1e-5, "apply_prune vs zero-masked original");
}

void criterion_selection_oracles(Check& check) {
    Rng rng(505);
    for (int trial = 0; trial < 500; ++trial) {
        int64_t n = rng.uniform_int(1, 8);
        int64_t per = rng.uniform_int(1, 5);
        Tensor w = testutil::random_f32({n, 1, per}, rng);

        // FPGM brute force
        auto fpgm = prune::importance(w, prune::Criterion::FPGM);
        auto wd = w.f32();
        for (int64_t f = 0; f < n; ++f) {
            double want = 0.0;
            for (int64_t o = 0; o < n; ++o) {
                if (o == f) continue;
                double d2 = 0.0;
                for (int64_t i = 0; i < per; ++i) {
                    double diff = static_cast<double>(wd[static_cast<size_t>(f * per + i)]) -
                                  wd[static_cast<size_t>(o * per + i)];
                    d2 += diff * diff;
                }
                want += std::sqrt(d2);
            }
            if (std::abs(fpgm[static_cast<size_t>(f)] - want) > 1e-9) {
                check.expect(false, "fpgm brute-force mismatch");
                return;
            }
        }

        // Selection equals exhaustive enumeration for each criterion.
        for (auto crit : {prune::Criterion::L1, prune::Criterion::L2, prune::Criterion::FPGM}) {
            auto scores = prune::importance(w, crit);
            double sparsity = rng.uniform(0.0, 0.99);
            auto kept = prune::select_filters(scores, sparsity);
            int64_t m = std::min<int64_t>(static_cast<int64_t>(std::floor(sparsity *
                                                                          static_cast<double>(n))),
                                          n - 1);
            std::vector<int64_t> best_prune;
            double best_total = std::numeric_limits<double>::infinity();
            for (uint32_t bits = 0; bits < (1u << n); ++bits) {
                if (std::popcount(bits) != m) continue;
                double total = 0.0;
                std::vector<int64_t> pr;
                for (int64_t i = 0; i < n; ++i)
                    if (bits & (1u << i)) {
                        total += scores[static_cast<size_t>(i)];
                        pr.push_back(i);
                    }
                if (total < best_total - 1e-12 ||
                    (std::abs(total - best_total) <= 1e-12 && pr < best_prune)) {
                    best_total = total;
                    best_prune = pr;
                }
            }
            std::vector<int64_t> want;
            std::set<int64_t> pruned(best_prune.begin(), best_prune.end());
            for (int64_t i = 0; i < n; ++i)
                if (!pruned.count(i)) want.push_back(i);
            if (kept != want) {
                check.expect(false, "selection differs from exhaustive enumeration");
                return;
            }
        }
    }
}

void criterion_sweep_analogue(Check& check) {
    auto t0 = std::chrono::steady_clock::now();
    const DenoiseFixture& fx = denoise_fixture();

    auto metric = [](const Tensor& pred, const Tensor& target) {
        try {
            return metrics::pearson(pred, target);
        } catch (const Error&) {
            return 0.0;
        }
    };
    std::vector<prune::Criterion> criteria = {prune::Criterion::L1, prune::Criterion::L2,
                                              prune::Criterion::FPGM};
    std::vector<double> ratios = {0.0, 0.25, 0.5, 0.75};
    auto rows = prune::sweep(fx.model, fx.held, metric, criteria, ratios, std::nullopt);

    // (a) per criterion, accuracy is non-increasing in sparsity within 0.02.
    for (size_t c = 0; c < criteria.size(); ++c) {
        for (size_t r = 1; r < ratios.size(); ++r) {
            double prev = rows[c * ratios.size() + r - 1].accuracy;
            double curr = rows[c * ratios.size() + r].accuracy;
            check.expect(curr <= prev + 0.02,
                         std::string("non-increasing accuracy for ") +
                             prune::criterion_name(criteria[c]) + " at ratio " +
                             std::to_string(ratios[r]) + " (" + std::to_string(prev) + " -> " +
                             std::to_string(curr) + ")");
        }
    }

    // (b) fine-tuned L1 at 0.5 retains >= 95% of the baseline.
    auto groups = prune::build_groups(fx.model);
    auto plan = prune::make_plan(fx.model, groups, prune::Criterion::L1, 0.5);
    Graph pruned = prune::apply_prune(fx.model, plan);
    train::SGDConfig sgd;
    sgd.lr = 1e-3;
    sgd.momentum = 0.9;
    sgd.epochs = 300;
    sgd.batch_size = 2;
    sgd.seed = 3;
    Graph tuned = train::finetune(pruned, fx.train_data, train::LossKind::MSE, sgd).graph;
    double tuned_acc = eval_pearson(tuned, fx.held);
    check.expect(tuned_acc >= 0.95 * fx.baseline,
                 "fine-tuned L1@0.5 retains 95% of baseline (got " + std::to_string(tuned_acc) +
                     " vs baseline " + std::to_string(fx.baseline) + ")");
    check.expect_le(seconds_since(t0), 900.0, "runtime budget 15 min");
}

void criterion_gradient_checks(Check& check) {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(606);
    double worst = 0.0;

    for (int trial = 0; trial < 6; ++trial) {
        Graph g;
        Tensor x, t;
        if (trial % 3 == 0) {
            int64_t c = rng.uniform_int(2, 5);
            g = testutil::make_graph(
                {1, 1, 10},
                {testutil::conv_node("c1", "x", testutil::random_f32({c, 1, 3}, rng),
                                     testutil::random_f32({c}, rng), {1}, {1}),
                 testutil::unary_node(OpKind::ReLU, "r", "c1"),
                 testutil::conv_node("c2", "r", testutil::random_f32({2, c, 3}, rng),
                                     testutil::random_f32({2}, rng), {1}, {1})},
                "c2");
            x = testutil::random_f32({1, 1, 10}, rng);
            t = testutil::random_f32({1, 2, 10}, rng);
        } else if (trial % 3 == 1) {
            int64_t c = rng.uniform_int(2, 4);
            g = testutil::make_graph(
                {1, 2, 10},
                {testutil::conv_node("a", "x", testutil::random_f32({c, 2, 3}, rng),
                                     testutil::random_f32({c}, rng), {1}, {1}),
                 testutil::conv_node("b", "x", testutil::random_f32({c, 2, 3}, rng),
                                     std::nullopt, {1}, {1}),
                 testutil::add_node("sum", "a", "b"),
                 testutil::unary_node(OpKind::LeakyReLU, "r", "sum"),
                 testutil::conv_node("head", "r", testutil::random_f32({1, c, 1}, rng))},
                "head");
            x = testutil::random_f32({1, 2, 10}, rng);
            t = testutil::random_f32({1, 1, 10}, rng);
        } else {
            // Concat-skip U-Net
            models::UnetConfig cfg;
            cfg.dims = 2;
            cfg.spatial = {8, 8};
            cfg.base_channels = rng.uniform_int(2, 4);
            cfg.seed = rng.next_u64();
            cfg.zero_head = false;
            g = models::make_unet2(cfg);
            x = testutil::random_f32({1, 1, 8, 8}, rng);
            t = testutil::random_f32({1, 1, 8, 8}, rng);
        }
        worst = std::max(worst, train::grad_check(g, x, t, train::LossKind::MSE, 1e-3, 200,
                                                  rng.next_u64()));
    }
    check.expect_le(worst, 1e-3, "analytic vs central finite differences");
    check.expect_le(seconds_since(t0), 60.0, "runtime budget 1 min");
}

void criterion_energy_accounting(Check& check) {
    // TdpModel: joules equals watts x wall seconds within 1%.
    double inner_seconds = 0.0;
    bench::EnergyConfig cfg;
    cfg.backend = bench::EnergyBackend::TdpModel;
    cfg.tdp_watts = 37.5;
    auto reading = bench::measure_energy(
        [&] {
            auto t0 = std::chrono::steady_clock::now();
            std::this_thread::sleep_for(std::chrono::milliseconds(120));
            inner_seconds = seconds_since(t0);
        },
        cfg);
    double expected = cfg.tdp_watts * inner_seconds;
    check.expect(std::abs(reading.joules - expected) / expected <= 0.01,
                 "tdp energy within 1% of watts x seconds");

    // Counter fixtures including one wraparound, against the hand sum.
    fs::path root = fs::temp_directory_path() / "ebc_acceptance_counters";
    fs::remove_all(root);
    fs::create_directories(root / "pkg0");
    fs::create_directories(root / "pkg1");
    auto write = [&](const char* domain, const char* file, uint64_t v) {
        std::ofstream(root / domain / file) << v << "\n";
    };
    write("pkg0", "energy_uj", 100);
    write("pkg0", "max_energy_range_uj", 1000000000);
    write("pkg1", "energy_uj", 262000);
    write("pkg1", "max_energy_range_uj", 262143);

    bench::CounterSampler sampler(root);
    write("pkg0", "energy_uj", 50000);
    write("pkg1", "energy_uj", 57);  // wraps: (262143-262000) + 57 = 200
    sampler.sample();
    write("pkg0", "energy_uj", 120000);
    write("pkg1", "energy_uj", 4257);  // + 4200
    sampler.sample();
    // pkg0: 49900 + 70000 = 119900; pkg1: 200 + 4200 = 4400; total 124300 uJ
    check.expect(sampler.total_uj() == 124300, "wraparound fixture hand sum (got " +
                                                   std::to_string(sampler.total_uj()) + ")");
    fs::remove_all(root);

    // Published reductions recompute within 0.1 percentage points.
    struct Row {
        double fp32, compressed, printed;
    };
    const Row rows[] = {{0.814, 0.387, 52.5},   {0.814, 0.384, 52.8},  {0.280, 0.091, 67.4},
                        {0.280, 0.085, 69.6},   {18.044, 9.256, 48.7}, {18.044, 6.840, 62.1},
                        {5.677, 4.057, 28.5},   {5.677, 3.650, 35.7},  {1.922, 1.316, 31.5},
                        {1.922, 1.307, 32.0},   {0.526, 0.115, 78.1},  {0.526, 0.102, 80.6},
                        {97.272, 85.087, 12.5}, {97.272, 81.744, 16.0}};
    for (const auto& r : rows) {
        double got = (1.0 - r.compressed / r.fp32) * 100.0;
        check.expect(std::abs(got - r.printed) <= 0.1 + 1e-6,
                     "published reduction " + std::to_string(r.printed) + " recomputes");
    }
}

void criterion_tiling(Check& check) {
    Rng rng(707);
    Graph g = testutil::make_graph(
        {1, 1, 12, 12},
        {testutil::conv_node("c", "x", testutil::random_f32({2, 1, 3, 3}, rng),
                             testutil::random_f32({2}, rng), {1, 1}, {1, 1}),
         testutil::unary_node(OpKind::Sigmoid, "s", "c"),
         testutil::conv_node("h", "s", testutil::random_f32({1, 2, 1, 1}, rng))},
        "h");
    Tensor image = testutil::random_f32({1, 1, 12, 12}, rng);

    // Window >= image is bit-identical to run.
    std::vector<int64_t> full = {12, 12};
    Tensor tiled = exec::run_tiled(g, image, full, 0.0);
    Tensor direct = exec::run(g, {{"x", image}}).at("h");
    check.expect(testutil::bit_identical(tiled, direct), "window >= image matches run bit-exactly");

    // Documented plan enumerations.
    {
        std::vector<int64_t> size = {4}, window = {4};
        auto plan = exec::plan_tiles(size, window, 0.0);
        check.expect(plan.starts == std::vector<std::vector<int64_t>>{{0}}, "plan [4]/[4]");
    }
    {
        std::vector<int64_t> size = {8}, window = {4};
        auto plan = exec::plan_tiles(size, window, 0.5);
        check.expect(plan.starts == std::vector<std::vector<int64_t>>{{0}, {2}, {4}},
                     "plan [8]/[4] overlap 0.5");
    }
    {
        std::vector<int64_t> size = {7}, window = {4};
        auto plan = exec::plan_tiles(size, window, 0.0);
        check.expect(plan.starts == std::vector<std::vector<int64_t>>{{0}, {3}},
                     "plan [7]/[4] flush final start");
    }

    // Every plan covers the image: counts >= 1 everywhere.
    for (int trial = 0; trial < 60; ++trial) {
        int64_t rank = rng.uniform_int(1, 3);
        std::vector<int64_t> size, window;
        for (int64_t a = 0; a < rank; ++a) {
            size.push_back(rng.uniform_int(3, 20));
            window.push_back(rng.uniform_int(1, 22));
        }
        double overlap = rng.uniform(0.0, 0.9);
        auto plan = exec::plan_tiles(size, window, overlap);
        Tensor counts = Tensor::zeros(size, DType::F32);
        Tensor canvas = Tensor::zeros(size, DType::F32);
        for (const auto& start : plan.starts) {
            Tensor patch = Tensor::zeros(plan.window, DType::F32);
            accumulate_patch(canvas, counts, patch, start);
        }
        bool covered = true;
        for (float v : counts.f32()) covered &= v >= 1.0f;
        check.expect(covered, "tile plan covers the image");
        if (!covered) return;
    }
}

void criterion_end_to_end(Check& check) {
    auto t0 = std::chrono::steady_clock::now();
    fs::path dir = fs::temp_directory_path() / "ebc_acceptance_e2e";
    fs::remove_all(dir);
    fs::create_directories(dir);

    // Default-size phantoms for training and evaluation.
    nlohmann::json dg;
    dg["seed"] = 11;
    dg["datagen"] = {{"task", "denoise3d"}, {"count", 8}, {"prefix", "train"}};
    {
        std::ofstream os(dir / "dg_train.json");
        os << dg.dump();
    }
    dg["seed"] = 900;
    dg["datagen"] = {{"task", "denoise3d"}, {"count", 4}, {"prefix", "eval"}};
    {
        std::ofstream os(dir / "dg_eval.json");
        os << dg.dump();
    }
    cli::cmd_datagen(cli::RunConfig::load(dir / "dg_train.json"), dir / "train");
    cli::cmd_datagen(cli::RunConfig::load(dir / "dg_eval.json"), dir / "eval");

    // Train a compact denoiser on the default-size phantoms.
    auto train_pairs = cli::load_pairs(dir / "train");
    models::UnetConfig mcfg;
    mcfg.dims = 3;
    mcfg.base_channels = 4;
    mcfg.spatial = {32, 64, 64};
    mcfg.seed = 21;
    Graph model = models::make_unet2(mcfg);
    train::SGDConfig sgd;
    sgd.lr = 3e-3;
    sgd.momentum = 0.9;
    sgd.epochs = 50;
    sgd.batch_size = 2;
    sgd.seed = 5;
    model = train::finetune(model, train_pairs, train::LossKind::MSE, sgd).graph;
    save_model(model, dir / "model.ebm");

    // compress (prune+int8 with a short fine-tune)
    nlohmann::json cfg;
    cfg["task"] = "denoise3d";
    cfg["seed"] = 11;
    cfg["model"] = (dir / "model.ebm").string();
    cfg["mode"] = "prune+int8";
    cfg["output_dir"] = (dir / "compressed").string();
    cfg["prune"] = {{"criterion", "L1"},
                    {"sparsity", 0.5},
                    {"data", (dir / "train").string()},
                    {"finetune", {{"lr", 1e-3}, {"momentum", 0.9}, {"epochs", 40},
                                  {"batch_size", 2}, {"seed", 5}, {"loss", "mse"}}}};
    cfg["quant"] = {{"observer", "ema_quantile"}, {"quantile", 0.9999}, {"ema_momentum", 0.9},
                    {"calib_samples", 5}, {"calib_data", (dir / "train").string()}};
    cfg["infer"] = {{"window", {16, 32, 32}}, {"overlap", 0.1}, {"data", (dir / "eval").string()}};
    cfg["metric"] = {{"kind", "pearson"}};
    cfg["energy"] = {{"backend", "tdp"}, {"tdp_watts", 45.0}};
    cfg["bench"] = {{"runs", 1}, {"warmup", 0}};
    {
        std::ofstream os(dir / "compress.json");
        os << cfg.dump();
    }
    cli::cmd_compress(cli::RunConfig::load(dir / "compress.json"), "");
    check.expect(fs::exists(dir / "compressed" / "model.ebm"), "compressed model exists");

    // infer with the fp32 model, then the compressed one, same report dir.
    nlohmann::json icfg = cfg;
    icfg["mode"] = "fp32";
    icfg["output_dir"] = (dir / "results").string();
    {
        std::ofstream os(dir / "infer_fp32.json");
        os << icfg.dump();
    }
    cli::cmd_infer(cli::RunConfig::load(dir / "infer_fp32.json"));
    icfg["mode"] = "prune+int8";
    icfg["model"] = (dir / "compressed" / "model.ebm").string();
    {
        std::ofstream os(dir / "infer_c.json");
        os << icfg.dump();
    }
    cli::cmd_infer(cli::RunConfig::load(dir / "infer_c.json"));

    // bench both models into one report.
    nlohmann::json bcfg = cfg;
    bcfg["output_dir"] = (dir / "bench").string();
    bcfg["bench"] = {{"runs", 2},
                     {"warmup", 1},
                     {"entries",
                      {{{"task", "denoise3d"}, {"mode", "fp32"},
                        {"model", (dir / "model.ebm").string()},
                        {"data", (dir / "eval").string()}},
                       {{"task", "denoise3d"}, {"mode", "prune+int8"},
                        {"model", (dir / "compressed" / "model.ebm").string()},
                        {"data", (dir / "eval").string()}}}}};
    {
        std::ofstream os(dir / "bench.json");
        os << bcfg.dump();
    }
    cli::cmd_bench(cli::RunConfig::load(dir / "bench.json"), "");

    // Assertions on the emitted report and artifacts.
    std::ifstream is(dir / "bench" / "report.json");
    nlohmann::json report = nlohmann::json::parse(is);
    const nlohmann::json* fp32_row = nullptr;
    const nlohmann::json* compressed_row = nullptr;
    for (const auto& row : report) {
        if (row.at("mode") == "fp32") fp32_row = &row;
        if (row.at("mode") == "prune+int8") compressed_row = &row;
    }
    check.expect(fp32_row != nullptr, "report has an fp32 row");
    check.expect(compressed_row != nullptr, "report has a prune+int8 row");
    if (fp32_row && compressed_row) {
        check.expect(fs::file_size(dir / "compressed" / "model.ebm") <
                         fs::file_size(dir / "model.ebm"),
                     "compressed model file is strictly smaller");
        check.expect(compressed_row->at("latency").at("mean_s").get<double>() >= 0.0,
                     "non-negative measured latency");
        double fp32_acc = fp32_row->at("accuracy").get<double>();
        double compressed_acc = compressed_row->at("accuracy").get<double>();
        check.expect(std::abs(fp32_acc - compressed_acc) <= 0.05,
                     "accuracy within 0.05 of the fp32 row (" + std::to_string(fp32_acc) +
                         " vs " + std::to_string(compressed_acc) + ")");
    }
    check.expect_le(seconds_since(t0), 600.0, "runtime budget 10 min");
    fs::remove_all(dir);
}

struct Criterion {
    int id;
    const char* title;
    std::function<void(Check&)> body;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "quantization round trip within scale/2 over 1e6 values", criterion_quant_round_trip},
        {2, "int8 conv kernel matches the dequantize-then-fp32 oracle", criterion_int8_kernel_oracle},
        {3, "int8 conversion shrinks the weight blob to <= 0.30x", criterion_model_size},
        {4, "fp32-vs-int8 output pearson >= 0.99 on a trained toy U-Net", criterion_int8_fidelity},
        {5, "structural prune equals zero-masked original; exact param counts",
         criterion_prune_equivalence},
        {6, "L1/L2/FPGM selections equal brute-force enumeration", criterion_selection_oracles},
        {7, "sparsity sweep analogue: monotone drop and 95% fine-tuned retention",
         criterion_sweep_analogue},
        {8, "analytic gradients within 1e-3 of central finite differences",
         criterion_gradient_checks},
        {9, "energy accounting: tdp model, wraparound fixtures, published reductions",
         criterion_energy_accounting},
        {10, "tiling: single-tile identity, documented plans, full coverage", criterion_tiling},
        {11, "end-to-end compress/infer/bench pipeline on default phantoms", criterion_end_to_end},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        Check check;
        auto t0 = std::chrono::steady_clock::now();
        try {
            c.body(check);
        } catch (const std::exception& e) {
            check.failures.push_back(std::string("exception: ") + e.what());
        }
        double secs = seconds_since(t0);
        if (check.failures.empty()) {
            std::printf("criterion %2d: PASS  (%6.1fs)  %s\n", c.id, secs, c.title);
        } else {
            ++failed;
            std::printf("criterion %2d: FAIL  (%6.1fs)  %s\n", c.id, secs, c.title);
            for (const auto& f : check.failures) std::printf("              - %s\n", f.c_str());
        }
        std::fflush(stdout);
    }
    return failed;
}
