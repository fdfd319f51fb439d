#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "ebc/metrics.hpp"
#include "ebc/rng.hpp"
#include "test_util.hpp"

using namespace ebc;
using namespace ebc::metrics;

TEST_CASE("pearson") {
    SUBCASE("perfect linear relations") {
        CHECK(pearson(Tensor::from_f32({3}, {1, 2, 3}), Tensor::from_f32({3}, {2, 4, 6})) ==
              doctest::Approx(1.0));
        CHECK(pearson(Tensor::from_f32({3}, {1, 2, 3}), Tensor::from_f32({3}, {3, 2, 1})) ==
              doctest::Approx(-1.0));
    }
    SUBCASE("direct formula evaluation") {
        double r = pearson(Tensor::from_f32({4}, {1, 2, 3, 4}), Tensor::from_f32({4}, {1, 2, 3, 5}));
        CHECK(r == doctest::Approx(6.5 / std::sqrt(43.75)).epsilon(1e-9));
    }
    SUBCASE("degenerate inputs") {
        CHECK_THROWS_WITH_AS(pearson(Tensor::from_f32({3}, {1, 1, 1}),
                                     Tensor::from_f32({3}, {1, 2, 3})),
                             doctest::Contains("DegenerateInput"), Error);
        CHECK_THROWS_AS(pearson(Tensor::from_f32({1}, {1}), Tensor::from_f32({1}, {2})), Error);
    }
    SUBCASE("affine invariance up to sign") {
        Rng rng(3);
        Tensor a = testutil::random_f32({40}, rng);
        std::vector<float> pos(40), neg(40);
        for (int i = 0; i < 40; ++i) {
            pos[static_cast<size_t>(i)] = 2.5f * a.f32()[static_cast<size_t>(i)] + 1.0f;
            neg[static_cast<size_t>(i)] = -0.5f * a.f32()[static_cast<size_t>(i)] + 3.0f;
        }
        CHECK(pearson(a, Tensor::from_f32({40}, pos)) == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(pearson(a, Tensor::from_f32({40}, neg)) == doctest::Approx(-1.0).epsilon(1e-6));
    }
}

TEST_CASE("dice") {
    Tensor a = Tensor::from_f32({2, 4}, {1, 1, 0, 0, 1, 1, 0, 0});
    SUBCASE("identical masks") { CHECK(dice(a, a, 0.5) == 1.0); }
    SUBCASE("disjoint masks") {
        Tensor b = Tensor::from_f32({2, 4}, {0, 0, 1, 1, 0, 0, 1, 1});
        CHECK(dice(a, b, 0.5) == 0.0);
    }
    SUBCASE("half overlap") {
        // |A|=4, |B|=4, |A&B|=2
        Tensor b = Tensor::from_f32({2, 4}, {0, 1, 1, 0, 0, 1, 1, 0});
        CHECK(dice(a, b, 0.5) == doctest::Approx(0.5));
    }
    SUBCASE("both empty scores 1") {
        Tensor z = Tensor::zeros({2, 4}, DType::F32);
        CHECK(dice(z, z, 0.5) == 1.0);
    }
    SUBCASE("symmetry") {
        Rng rng(9);
        Tensor x = testutil::random_f32({6, 6}, rng, 0.0, 1.0);
        Tensor y = testutil::random_f32({6, 6}, rng, 0.0, 1.0);
        CHECK(dice(x, y, 0.5) == doctest::Approx(dice(y, x, 0.5)));
    }
}

namespace {

// Brute-force flood fill oracle, offsets recomputed per query.
int count_components(const Tensor& mask) {
    auto labels = connected_components(mask);
    std::set<int32_t> ids;
    for (int32_t v : labels.i32())
        if (v > 0) ids.insert(v);
    return static_cast<int>(ids.size());
}

}  // namespace

TEST_CASE("connected_components") {
    SUBCASE("diagonal pixels are separate under 4-connectivity") {
        Tensor mask = Tensor::from_f32({2, 2}, {1, 0, 0, 1});
        CHECK(count_components(mask) == 2);
    }
    SUBCASE("all background yields zero labels") {
        Tensor mask = Tensor::zeros({3, 3}, DType::F32);
        Tensor labels = connected_components(mask);
        for (int32_t v : labels.i32()) CHECK(v == 0);
    }
    SUBCASE("a ring is one component") {
        Tensor mask = Tensor::from_f32({3, 3}, {1, 1, 1, 1, 0, 1, 1, 1, 1});
        CHECK(count_components(mask) == 1);
    }
    SUBCASE("labels appear in scan order") {
        Tensor mask = Tensor::from_f32({2, 4}, {1, 0, 1, 0, 1, 0, 1, 0});
        Tensor labels = connected_components(mask);
        CHECK(labels.i32()[0] == 1);
        CHECK(labels.i32()[2] == 2);
    }
    SUBCASE("3d uses 6-connectivity") {
        // Two voxels sharing only an edge are separate components.
        Tensor mask = Tensor::zeros({2, 2, 2}, DType::F32);
        mask.f32()[0] = 1.0f;                  // (0,0,0)
        mask.f32()[1 * 4 + 1 * 2 + 1] = 1.0f;  // (1,1,1)
        CHECK(count_components(mask) == 2);
        // Face-adjacent voxels join.
        Tensor mask2 = Tensor::zeros({2, 2, 2}, DType::F32);
        mask2.f32()[0] = 1.0f;
        mask2.f32()[4] = 1.0f;  // (1,0,0)
        CHECK(count_components(mask2) == 1);
    }
    SUBCASE("matches brute-force label partition on random masks") {
        Rng rng(17);
        for (int trial = 0; trial < 30; ++trial) {
            int64_t h = rng.uniform_int(2, 8), w = rng.uniform_int(2, 8);
            Tensor mask = Tensor::zeros({h, w}, DType::F32);
            auto md = mask.f32();
            for (auto& v : md) v = rng.uniform() < 0.4 ? 1.0f : 0.0f;
            Tensor labels = connected_components(mask);
            auto ld = labels.i32();
            // Oracle: repeated neighbor propagation until fixpoint gives the
            // same partition (checked via pairwise same-component relation).
            std::vector<int64_t> rep(static_cast<size_t>(h * w));
            for (int64_t i = 0; i < h * w; ++i)
                rep[static_cast<size_t>(i)] = md[static_cast<size_t>(i)] > 0.5f ? i : -1;
            bool changed = true;
            while (changed) {
                changed = false;
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x) {
                        int64_t i = y * w + x;
                        if (rep[static_cast<size_t>(i)] < 0) continue;
                        const int64_t nbr[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
                        for (const auto& nb : nbr) {
                            if (nb[0] < 0 || nb[0] >= h || nb[1] < 0 || nb[1] >= w) continue;
                            int64_t j = nb[0] * w + nb[1];
                            if (rep[static_cast<size_t>(j)] < 0) continue;
                            int64_t m = std::min(rep[static_cast<size_t>(i)],
                                                 rep[static_cast<size_t>(j)]);
                            if (rep[static_cast<size_t>(i)] != m || rep[static_cast<size_t>(j)] != m) {
                                rep[static_cast<size_t>(i)] = rep[static_cast<size_t>(j)] = m;
                                changed = true;
                            }
                        }
                    }
            }
            for (int64_t i = 0; i < h * w; ++i)
                for (int64_t j = 0; j < h * w; ++j) {
                    if (rep[static_cast<size_t>(i)] < 0 || rep[static_cast<size_t>(j)] < 0) {
                        CHECK((ld[static_cast<size_t>(i)] == 0) == (rep[static_cast<size_t>(i)] < 0));
                        continue;
                    }
                    bool same_oracle = rep[static_cast<size_t>(i)] == rep[static_cast<size_t>(j)];
                    bool same_impl = ld[static_cast<size_t>(i)] == ld[static_cast<size_t>(j)];
                    CHECK(same_oracle == same_impl);
                }
        }
    }
}

TEST_CASE("ap50") {
    SUBCASE("identical maps with 3 instances") {
        Tensor gt = Tensor::from_i32({2, 6}, {1, 1, 0, 2, 2, 0, 0, 0, 3, 3, 0, 0});
        CHECK(ap50(gt, gt) == 1.0);
    }
    SUBCASE("empty prediction") {
        Tensor gt = Tensor::from_i32({1, 4}, {1, 0, 2, 0});
        Tensor pred = Tensor::zeros({1, 4}, DType::I32);
        CHECK(ap50(pred, gt) == 0.0);
    }
    SUBCASE("one of two matched") {
        Tensor gt = Tensor::from_i32({1, 6}, {1, 1, 0, 2, 2, 0});
        Tensor pred = Tensor::from_i32({1, 6}, {5, 5, 0, 0, 0, 0});
        CHECK(ap50(pred, gt) == doctest::Approx(0.5));
    }
    SUBCASE("both empty scores 1") {
        Tensor z = Tensor::zeros({2, 2}, DType::I32);
        CHECK(ap50(z, z) == 1.0);
    }
    SUBCASE("iou below half does not match") {
        // Overlap 1 of union 3 -> IoU 1/3 < 0.5: FP + FN.
        Tensor gt = Tensor::from_i32({1, 4}, {1, 1, 0, 0});
        Tensor pred = Tensor::from_i32({1, 4}, {0, 7, 7, 0});
        CHECK(ap50(pred, gt) == 0.0);
    }
    SUBCASE("invariant to relabeling") {
        Rng rng(23);
        Tensor gt = Tensor::from_i32({2, 6}, {1, 1, 0, 2, 2, 0, 0, 0, 3, 3, 0, 0});
        Tensor relab = Tensor::from_i32({2, 6}, {9, 9, 0, 4, 4, 0, 0, 0, 1, 1, 0, 0});
        Tensor pred = Tensor::from_i32({2, 6}, {2, 2, 0, 0, 5, 5, 0, 0, 8, 8, 0, 0});
        CHECK(ap50(pred, gt) == doctest::Approx(ap50(pred, relab)));
    }
}
