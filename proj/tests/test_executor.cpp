#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ebc/executor.hpp"
#include "ebc/quantizer.hpp"
#include "ebc/rng.hpp"
#include "test_util.hpp"

using namespace ebc;
using namespace ebc::exec;
using testutil::conv_node;
using testutil::make_graph;
using testutil::unary_node;

TEST_CASE("conv_nd_f32 basics") {
    SUBCASE("3x3 ones against 3x3 ones") {
        Tensor x = Tensor::from_f32({1, 1, 3, 3}, std::vector<float>(9, 1.0f));
        Tensor w = Tensor::from_f32({1, 1, 3, 3}, std::vector<float>(9, 1.0f));
        Tensor y = conv_nd_f32(x, w, nullptr, {}, {});
        CHECK(y.shape() == std::vector<int64_t>{1, 1, 1, 1});
        CHECK(y.f32()[0] == 9.0f);
    }
    SUBCASE("identity 1x1 kernel") {
        Rng rng(2);
        Tensor x = testutil::random_f32({2, 1, 4, 4}, rng);
        Tensor w = Tensor::from_f32({1, 1, 1, 1}, {1.0f});
        Tensor y = conv_nd_f32(x, w, nullptr, {}, {});
        CHECK(testutil::bit_identical(x, y));
    }
    SUBCASE("1-d correlation") {
        Tensor x = Tensor::from_f32({1, 1, 3}, {1, 2, 3});
        Tensor w = Tensor::from_f32({1, 1, 3}, {1, 0, -1});
        Tensor y = conv_nd_f32(x, w, nullptr, {}, {});
        CHECK(y.f32()[0] == -2.0f);
    }
    SUBCASE("3-d with padding and stride") {
        Rng rng(3);
        Tensor x = testutil::random_f32({1, 2, 5, 6, 7}, rng);
        Tensor w = testutil::random_f32({3, 2, 3, 3, 3}, rng);
        std::vector<int64_t> stride = {2, 1, 2}, pad = {1, 1, 0};
        Tensor y = conv_nd_f32(x, w, nullptr, stride, pad);
        CHECK(y.shape() == std::vector<int64_t>{1, 3, 3, 6, 3});
    }
}

TEST_CASE("conv_nd_i8 integer accumulation") {
    SUBCASE("documented 1-d case") {
        Tensor xq = Tensor::from_i8({1, 1, 2}, {3, 4});
        Tensor wq = Tensor::from_i8({1, 1, 2}, {1, 2});
        Tensor y = conv_nd_i8(xq, wq, nullptr, {}, {}, 0.5, 0.1);
        CHECK(y.f32()[0] == doctest::Approx(0.55).epsilon(1e-6));
    }
    SUBCASE("zero weights give zero output") {
        Rng rng(4);
        Tensor xq = testutil::random_i8({1, 3, 5, 5}, rng);
        Tensor wq = Tensor::from_i8({2, 3, 3, 3}, std::vector<int8_t>(54, 0));
        Tensor y = conv_nd_i8(xq, wq, nullptr, {}, {}, 0.02, 0.01);
        for (float v : y.f32()) CHECK(v == 0.0f);
    }
    SUBCASE("overflow is detected, not wrapped") {
        // 127*127*140000 > 2^31-1
        int64_t n = 140000;
        Tensor xq = Tensor::from_i8({1, 1, n}, std::vector<int8_t>(static_cast<size_t>(n), 127));
        Tensor wq = Tensor::from_i8({1, 1, n}, std::vector<int8_t>(static_cast<size_t>(n), 127));
        CHECK_THROWS_WITH_AS(conv_nd_i8(xq, wq, nullptr, {}, {}, 1.0, 1.0),
                             doctest::Contains("AccumulatorOverflow"), Error);
    }
    SUBCASE("bias joins the accumulator before scaling") {
        Tensor xq = Tensor::from_i8({1, 1, 1}, {10});
        Tensor wq = Tensor::from_i8({1, 1, 1}, {5});
        Tensor b = Tensor::from_i32({1}, {50});
        Tensor y = conv_nd_i8(xq, wq, &b, {}, {}, 0.1, 0.1);
        CHECK(y.f32()[0] == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("int8 kernel matches the dequantize-then-fp32 oracle") {
    Rng rng(71);
    for (int trial = 0; trial < 25; ++trial) {
        int64_t cin = rng.uniform_int(1, 4), cout = rng.uniform_int(1, 4);
        int64_t d = rng.uniform_int(1, 3);
        std::vector<int64_t> xshape = {1, cin}, wshape = {cout, cin}, stride, pad;
        for (int64_t a = 0; a < d; ++a) {
            int64_t k = rng.uniform_int(1, 3);
            xshape.push_back(rng.uniform_int(k, 7));
            wshape.push_back(k);
            stride.push_back(rng.uniform_int(1, 2));
            pad.push_back(rng.uniform_int(0, 1));
        }
        Tensor xq = testutil::random_i8(xshape, rng);
        Tensor wq = testutil::random_i8(wshape, rng);
        double sx = rng.uniform(0.001, 0.01), sw = rng.uniform(0.001, 0.01);

        std::vector<int32_t> bias_raw(static_cast<size_t>(cout));
        for (auto& v : bias_raw) v = static_cast<int32_t>(rng.uniform_int(-1000, 1000));
        Tensor bias = Tensor::from_i32({cout}, bias_raw);

        Tensor got = conv_nd_i8(xq, wq, &bias, stride, pad, sx, sw);

        quant::QuantParams px, pw, pb;
        px.scale = sx;
        pw.scale = sw;
        pb.scale = sx * sw;
        Tensor xf = quant::dequantize_tensor(xq, px);
        Tensor wf = quant::dequantize_tensor(wq, pw);
        std::vector<float> bias_f(static_cast<size_t>(cout));
        for (size_t i = 0; i < bias_f.size(); ++i)
            bias_f[i] = static_cast<float>(bias_raw[i] * pb.scale);
        Tensor bf = Tensor::from_f32({cout}, bias_f);
        Tensor want = conv_nd_f32(xf, wf, &bf, stride, pad);

        CHECK(testutil::max_abs_diff(got, want) <= 1e-5);
    }
}

TEST_CASE("apply_simple kernels") {
    SUBCASE("relu") {
        Tensor x = Tensor::from_f32({1, 1, 2}, {-1, 2});
        Tensor y = apply_simple(OpKind::ReLU, {&x}, {});
        CHECK(y.f32()[0] == 0.0f);
        CHECK(y.f32()[1] == 2.0f);
    }
    SUBCASE("leaky relu slope") {
        Tensor x = Tensor::from_f32({1, 1, 2}, {-2, 2});
        std::map<std::string, Attr> attrs{{"slope", 0.1}};
        Tensor y = apply_simple(OpKind::LeakyReLU, {&x}, attrs);
        CHECK(y.f32()[0] == doctest::Approx(-0.2f));
        CHECK(y.f32()[1] == 2.0f);
    }
    SUBCASE("sigmoid at zero") {
        Tensor x = Tensor::from_f32({1, 1, 1}, {0});
        CHECK(apply_simple(OpKind::Sigmoid, {&x}, {}).f32()[0] == doctest::Approx(0.5f));
    }
    SUBCASE("maxpool window 2 stride 2") {
        Tensor x = Tensor::from_f32({1, 1, 4}, {1, 3, 2, 4});
        std::map<std::string, Attr> attrs{{"window", std::vector<int64_t>{2}},
                                          {"stride", std::vector<int64_t>{2}}};
        Tensor y = apply_simple(OpKind::MaxPool, {&x}, attrs);
        CHECK(y.shape() == std::vector<int64_t>{1, 1, 2});
        CHECK(y.f32()[0] == 3.0f);
        CHECK(y.f32()[1] == 4.0f);
    }
    SUBCASE("upsample nearest factor 2") {
        Tensor x = Tensor::from_f32({1, 1, 2}, {1, 2});
        std::map<std::string, Attr> attrs{{"factor", std::vector<int64_t>{2}}};
        Tensor y = apply_simple(OpKind::UpsampleNearest, {&x}, attrs);
        CHECK(y.shape() == std::vector<int64_t>{1, 1, 4});
        CHECK(y.f32()[0] == 1.0f);
        CHECK(y.f32()[1] == 1.0f);
        CHECK(y.f32()[2] == 2.0f);
        CHECK(y.f32()[3] == 2.0f);
    }
    SUBCASE("concat stacks channels") {
        Tensor a = Tensor::from_f32({1, 1, 2}, {1, 2});
        Tensor b = Tensor::from_f32({1, 2, 2}, {3, 4, 5, 6});
        std::map<std::string, Attr> attrs{{"axis", std::vector<int64_t>{1}}};
        Tensor y = apply_simple(OpKind::Concat, {&a, &b}, attrs);
        CHECK(y.shape() == std::vector<int64_t>{1, 3, 2});
        CHECK(y.f32()[0] == 1.0f);
        CHECK(y.f32()[2] == 3.0f);
        CHECK(y.f32()[5] == 6.0f);
    }
    SUBCASE("linear") {
        Tensor x = Tensor::from_f32({2, 3}, {1, 2, 3, 4, 5, 6});
        Tensor w = Tensor::from_f32({2, 3}, {1, 0, 0, 0, 1, 1});
        Tensor b = Tensor::from_f32({2}, {10, 0});
        Tensor y = apply_simple(OpKind::Linear, {&x, &w, &b}, {});
        CHECK(y.shape() == std::vector<int64_t>{2, 2});
        CHECK(y.f32()[0] == 11.0f);
        CHECK(y.f32()[1] == 5.0f);
        CHECK(y.f32()[2] == 14.0f);
        CHECK(y.f32()[3] == 11.0f);
    }
}

TEST_CASE("run executes graphs") {
    SUBCASE("single relu") {
        Graph g = make_graph({1, 1, 2}, {unary_node(OpKind::ReLU, "r", "x")}, "r");
        auto out = exec::run(g, {{"x", Tensor::from_f32({1, 1, 2}, {-1, 1})}});
        CHECK(out.at("r").f32()[0] == 0.0f);
        CHECK(out.at("r").f32()[1] == 1.0f);
    }
    SUBCASE("identity conv + skip add doubles the input") {
        Graph g = make_graph({1, 1, 3},
                             {conv_node("c", "x", Tensor::from_f32({1, 1, 1}, {1.0f})),
                              testutil::add_node("sum", "c", "x")},
                             "sum");
        Tensor x = Tensor::from_f32({1, 1, 3}, {1, -2, 3});
        auto out = exec::run(g, {{"x", x}});
        CHECK(out.at("sum").f32()[0] == 2.0f);
        CHECK(out.at("sum").f32()[1] == -4.0f);
        CHECK(out.at("sum").f32()[2] == 6.0f);
    }
    SUBCASE("missing input is reported") {
        Graph g = make_graph({1, 1, 2}, {unary_node(OpKind::ReLU, "r", "x")}, "r");
        CHECK_THROWS_WITH_AS(exec::run(g, {}), doctest::Contains("MissingInput"), Error);
    }
    SUBCASE("repeated runs are bit-identical") {
        Rng rng(12);
        Graph g = make_graph({1, 2, 6, 6},
                             {conv_node("c", "x", testutil::random_f32({3, 2, 3, 3}, rng),
                                        testutil::random_f32({3}, rng), {1, 1}, {1, 1}),
                              unary_node(OpKind::Sigmoid, "s", "c")},
                             "s");
        Tensor x = testutil::random_f32({1, 2, 6, 6}, rng);
        auto a = exec::run(g, {{"x", x}});
        auto b = exec::run(g, {{"x", x}});
        CHECK(testutil::bit_identical(a.at("s"), b.at("s")));
    }
}

TEST_CASE("batch of stacked samples equals stacked batch-1 runs") {
    Rng rng(13);
    Graph g = make_graph({kSymbolicBatch, 1, 6, 6},
                         {conv_node("c", "x", testutil::random_f32({2, 1, 3, 3}, rng),
                                    testutil::random_f32({2}, rng), {1, 1}, {1, 1}),
                          unary_node(OpKind::ReLU, "r", "c")},
                         "r");
    Tensor one = testutil::random_f32({1, 1, 6, 6}, rng);
    auto single = exec::run(g, {{"x", one}}).at("r");

    std::vector<float> stacked;
    for (int i = 0; i < 3; ++i)
        stacked.insert(stacked.end(), one.f32().begin(), one.f32().end());
    Tensor batch = Tensor::from_f32({3, 1, 6, 6}, stacked);
    auto batched = exec::run(g, {{"x", batch}}).at("r");

    int64_t per = single.numel();
    for (int64_t i = 0; i < 3 * per; ++i)
        CHECK(batched.f32()[static_cast<size_t>(i)] ==
              single.f32()[static_cast<size_t>(i % per)]);
}

TEST_CASE("plan_tiles enumerations") {
    SUBCASE("window covers image") {
        std::vector<int64_t> size = {4}, window = {4};
        auto plan = plan_tiles(size, window, 0.0);
        REQUIRE(plan.starts.size() == 1);
        CHECK(plan.starts[0] == std::vector<int64_t>{0});
    }
    SUBCASE("half overlap") {
        std::vector<int64_t> size = {8}, window = {4};
        auto plan = plan_tiles(size, window, 0.5);
        REQUIRE(plan.starts.size() == 3);
        CHECK(plan.starts[0] == std::vector<int64_t>{0});
        CHECK(plan.starts[1] == std::vector<int64_t>{2});
        CHECK(plan.starts[2] == std::vector<int64_t>{4});
    }
    SUBCASE("final start flush with the boundary") {
        std::vector<int64_t> size = {7}, window = {4};
        auto plan = plan_tiles(size, window, 0.0);
        REQUIRE(plan.starts.size() == 2);
        CHECK(plan.starts[0] == std::vector<int64_t>{0});
        CHECK(plan.starts[1] == std::vector<int64_t>{3});
    }
    SUBCASE("oversized window is clamped") {
        std::vector<int64_t> size = {5}, window = {9};
        auto plan = plan_tiles(size, window, 0.0);
        CHECK(plan.window == std::vector<int64_t>{5});
        CHECK(plan.starts.size() == 1);
    }
    SUBCASE("bad overlap") {
        std::vector<int64_t> size = {8}, window = {4};
        CHECK_THROWS_WITH_AS(plan_tiles(size, window, 1.0), doctest::Contains("BadOverlap"),
                             Error);
        CHECK_THROWS_WITH_AS(plan_tiles(size, window, -0.1), doctest::Contains("BadOverlap"),
                             Error);
    }
    SUBCASE("multi-axis product covers the image") {
        std::vector<int64_t> size = {7, 8}, window = {4, 4};
        auto plan = plan_tiles(size, window, 0.5);
        // axis starts: {0,2,3} x {0,2,4}
        CHECK(plan.starts.size() == 9);
        CHECK(plan.starts.front() == std::vector<int64_t>{0, 0});
        CHECK(plan.starts.back() == std::vector<int64_t>{3, 4});
    }
}

TEST_CASE("run_tiled") {
    Rng rng(31);
    Graph identity = make_graph({1, 1, 6, 6},
                                {conv_node("c", "x", Tensor::from_f32({1, 1, 1, 1}, {1.0f}))},
                                "c");
    Tensor image = testutil::random_f32({1, 1, 6, 6}, rng);

    SUBCASE("window >= image is bit-identical to run") {
        std::vector<int64_t> window = {6, 6};
        Tensor tiled = run_tiled(identity, image, window, 0.0);
        Tensor direct = exec::run(identity, {{"x", image}}).at("c");
        CHECK(testutil::bit_identical(tiled, direct));
    }
    SUBCASE("identity graph reproduces the image under any tiling") {
        std::vector<int64_t> window = {4, 3};
        Tensor tiled = run_tiled(identity, image, window, 0.3);
        CHECK(testutil::max_abs_diff(tiled, image) == 0.0);
    }
    SUBCASE("constant graph stays constant") {
        Graph constant = make_graph(
            {1, 1, 6, 6},
            {conv_node("c", "x", Tensor::from_f32({1, 1, 1, 1}, {0.0f}),
                       Tensor::from_f32({1}, {2.5f}))},
            "c");
        std::vector<int64_t> window = {4, 4};
        Tensor tiled = run_tiled(constant, image, window, 0.25);
        for (float v : tiled.f32()) CHECK(v == 2.5f);
    }
    SUBCASE("non-preserving graph is rejected") {
        Graph shrink = make_graph({1, 1, 6, 6},
                                  {conv_node("c", "x", testutil::random_f32({1, 1, 3, 3}, rng))},
                                  "c");
        std::vector<int64_t> window = {4, 4};
        CHECK_THROWS_WITH_AS(run_tiled(shrink, image, window, 0.0),
                             doctest::Contains("NonPreservingGraph"), Error);
    }
}
