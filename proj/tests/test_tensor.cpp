#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "ebc/rng.hpp"
#include "ebc/tensor.hpp"
#include "test_util.hpp"

using namespace ebc;

TEST_CASE("create is row-major") {
    Tensor t = Tensor::from_f32({2, 2}, {1, 2, 3, 4});
    std::vector<int64_t> idx = {1, 0};
    CHECK(t.f32()[static_cast<size_t>(t.offset_of(idx))] == 3.0f);

    Tensor s = Tensor::from_i8({1}, {5});
    CHECK(s.i8()[0] == 5);

    CHECK_THROWS_WITH_AS(Tensor::from_f32({2}, {1, 2, 3}), doctest::Contains("LengthMismatch"),
                         Error);
}

TEST_CASE("create rejects bad shapes") {
    CHECK_THROWS_AS(Tensor::from_f32({}, {}), Error);
    CHECK_THROWS_AS(Tensor::from_f32({0}, {}), Error);
    CHECK_THROWS_AS(Tensor::from_f32({2, -1}, {1, 2}), Error);
}

TEST_CASE("cast_saturating rounds half to even and clamps") {
    Tensor t = Tensor::from_f32({2}, {1.4f, -1.6f});
    Tensor q = cast_saturating(t, DType::I8);
    CHECK(q.i8()[0] == 1);
    CHECK(q.i8()[1] == -2);

    CHECK(cast_saturating(Tensor::from_f32({1}, {300.0f}), DType::I8).i8()[0] == 127);
    CHECK(cast_saturating(Tensor::from_f32({1}, {-300.0f}), DType::I8).i8()[0] == -127);
    CHECK(cast_saturating(Tensor::from_f32({1}, {2.5f}), DType::I8).i8()[0] == 2);
    CHECK(cast_saturating(Tensor::from_f32({1}, {3.5f}), DType::I8).i8()[0] == 4);
    CHECK(cast_saturating(Tensor::from_f32({1}, {-2.5f}), DType::I8).i8()[0] == -2);
}

TEST_CASE("i8 -> f32 -> i8 round trip is exact") {
    std::vector<int8_t> vals;
    for (int v = -127; v <= 127; ++v) vals.push_back(static_cast<int8_t>(v));
    Tensor q = Tensor::from_i8({static_cast<int64_t>(vals.size())}, vals);
    Tensor back = cast_saturating(cast_saturating(q, DType::F32), DType::I8);
    CHECK(testutil::bit_identical(q, back));
}

TEST_CASE("extract_patch windows") {
    std::vector<float> data = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    Tensor t = Tensor::from_f32({3, 3}, data);

    std::vector<int64_t> start = {0, 0}, size = {2, 2};
    Tensor p = extract_patch(t, start, size);
    CHECK(p.f32()[0] == 1.0f);
    CHECK(p.f32()[1] == 2.0f);
    CHECK(p.f32()[2] == 4.0f);
    CHECK(p.f32()[3] == 5.0f);

    start = {1, 1};
    p = extract_patch(t, start, size);
    CHECK(p.f32()[0] == 5.0f);
    CHECK(p.f32()[3] == 9.0f);

    start = {2, 2};
    CHECK_THROWS_WITH_AS(extract_patch(t, start, size), doctest::Contains("OutOfBounds"), Error);
}

TEST_CASE("accumulate_patch adds and counts") {
    Tensor canvas = Tensor::zeros({4}, DType::F32);
    Tensor counts = Tensor::zeros({4}, DType::F32);
    Tensor patch = Tensor::from_f32({2}, {1, 1});

    std::vector<int64_t> at0 = {0}, at1 = {1};
    accumulate_patch(canvas, counts, patch, at0);
    accumulate_patch(canvas, counts, patch, at1);
    CHECK(canvas.f32()[0] == 1.0f);
    CHECK(canvas.f32()[1] == 2.0f);
    CHECK(canvas.f32()[2] == 1.0f);
    CHECK(canvas.f32()[3] == 0.0f);
    CHECK(counts.f32()[1] == 2.0f);
    CHECK(counts.f32()[3] == 0.0f);

    Tensor full = Tensor::from_f32({4}, {9, 9, 9, 9});
    Tensor canvas2 = Tensor::zeros({4}, DType::F32);
    Tensor counts2 = Tensor::zeros({4}, DType::F32);
    std::vector<int64_t> at = {0};
    accumulate_patch(canvas2, counts2, full, at);
    CHECK(testutil::bit_identical(canvas2, full));
    for (float c : counts2.f32()) CHECK(c == 1.0f);

    std::vector<int64_t> at3 = {3};
    CHECK_THROWS_WITH_AS(accumulate_patch(canvas, counts, patch, at3),
                         doctest::Contains("OutOfBounds"), Error);
    Tensor small_counts = Tensor::zeros({3}, DType::F32);
    CHECK_THROWS_WITH_AS(accumulate_patch(canvas, small_counts, patch, at0),
                         doctest::Contains("ShapeMismatch"), Error);
}

TEST_CASE("extract then accumulate reproduces the region") {
    Rng rng(11);
    Tensor t = testutil::random_f32({3, 5, 4}, rng);
    std::vector<int64_t> start = {1, 2, 1}, size = {2, 3, 2};
    Tensor patch = extract_patch(t, start, size);
    Tensor canvas = Tensor::zeros(t.shape(), DType::F32);
    Tensor counts = Tensor::zeros(t.shape(), DType::F32);
    accumulate_patch(canvas, counts, patch, start);
    Tensor round = extract_patch(canvas, start, size);
    CHECK(testutil::bit_identical(patch, round));
}

TEST_CASE("row-major offsets over random shapes") {
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        int64_t rank = rng.uniform_int(1, 5);
        std::vector<int64_t> shape;
        int64_t n = 1;
        for (int64_t a = 0; a < rank; ++a) {
            shape.push_back(rng.uniform_int(1, 4));
            n *= shape.back();
        }
        std::vector<float> data(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) data[static_cast<size_t>(i)] = static_cast<float>(i);
        Tensor t = Tensor::from_f32(shape, data);

        // Walk every multi-index in row-major order; flat offset must count up.
        std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
        for (int64_t flat = 0; flat < n; ++flat) {
            CHECK(t.offset_of(idx) == flat);
            for (size_t a = static_cast<size_t>(rank); a-- > 0;) {
                if (++idx[a] < shape[a]) break;
                idx[a] = 0;
            }
        }
    }
}

TEST_CASE("ebt file round trip") {
    auto dir = std::filesystem::temp_directory_path() / "ebc_tensor_test";
    std::filesystem::create_directories(dir);
    Rng rng(5);

    Tensor t = testutil::random_f32({2, 3, 4}, rng);
    save_tensor(t, dir / "a.ebt");
    Tensor back = load_tensor(dir / "a.ebt");
    CHECK(testutil::bit_identical(t, back));

    Tensor q = testutil::random_i8({7}, rng);
    save_tensor(q, dir / "b.ebt");
    CHECK(testutil::bit_identical(q, load_tensor(dir / "b.ebt")));

    {
        std::ofstream bad(dir / "bad.ebt", std::ios::binary);
        bad << "NOPE";
    }
    CHECK_THROWS_WITH_AS(load_tensor(dir / "bad.ebt"), doctest::Contains("BadMagic"), Error);
    std::filesystem::remove_all(dir);
}
