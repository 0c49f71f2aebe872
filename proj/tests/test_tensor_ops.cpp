#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <acar/ops.hpp>

#include "oracles.hpp"

using namespace acar;

namespace {

template <typename T>
TensorPtrT<T> random_tensor(const Shape& shape, std::mt19937_64& rng, T lo = T(-1), T hi = T(1)) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng));
    return make_tensor<T>(shape, std::move(data));
}

template <typename T>
bool all_finite(const TensorPtrT<T>& t) {
    for (T v : t->data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::vector<double> to_double(const std::vector<double>& v) { return v; }

}  // namespace

TEST_CASE("conv2d identity 1x1 reproduces input exactly") {
    std::mt19937_64 rng(7);
    auto x = random_tensor<float>({3, 5, 4}, rng);
    auto w = zeros<float>({3, 3, 1, 1});
    for (std::size_t c = 0; c < 3; ++c) w->data[c * 3 + c] = 1.0f;
    auto b = zeros<float>({3});
    auto y = conv2d(x, w, b, 1, 0);
    REQUIRE(y->shape == x->shape);
    for (std::size_t i = 0; i < x->numel(); ++i) CHECK(y->data[i] == x->data[i]);
}

TEST_CASE("conv2d constant input, all-ones 3x3 kernel") {
    const float c = 0.37f;
    auto x = full<float>({2, 6, 6}, c);
    auto w = full<float>({4, 2, 3, 3}, 1.0f);
    auto b = full<float>({4}, 0.25f);
    auto y = conv2d(x, w, b, 1, 0);
    REQUIRE(y->shape == Shape{4, 4, 4});
    for (float v : y->data) CHECK(v == doctest::Approx(9.0f * c * 2 + 0.25f).epsilon(1e-6));
}

TEST_CASE("conv2d shape errors name the offending axes") {
    auto x = zeros<float>({3, 4, 4});
    auto w = zeros<float>({2, 5, 3, 3});
    auto b = zeros<float>({2});
    CHECK_THROWS_WITH_AS(conv2d(x, w, b, 1, 1), doctest::Contains("channel"), std::invalid_argument);
    auto weven = zeros<float>({2, 3, 2, 2});
    CHECK_THROWS_AS(conv2d(x, weven, b, 1, 0), std::invalid_argument);
    auto wbig = zeros<float>({2, 3, 7, 7});
    CHECK_THROWS_AS(conv2d(x, wbig, b, 1, 0), std::invalid_argument);
}

TEST_CASE("conv2d matches the loop-nest oracle on random shapes") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 30; ++rep) {
        std::uniform_int_distribution<std::size_t> dim(3, 7), chan(1, 4), kd(0, 1), st(1, 2), pd(0, 1);
        const std::size_t batch = chan(rng), cin = chan(rng), cout = chan(rng);
        const std::size_t h = dim(rng), w = dim(rng);
        const std::size_t k = kd(rng) ? 3 : 1;
        const std::size_t stride = st(rng), pad = k == 3 ? pd(rng) : 0;
        auto x = random_tensor<double>({batch, cin, h, w}, rng);
        auto wt = random_tensor<double>({cout, cin, k, k}, rng);
        auto b = random_tensor<double>({cout}, rng);
        auto y = conv2d(x, wt, b, stride, pad);
        std::size_t oh, ow;
        auto ref = oracle::conv2d_ref(x->data, batch, cin, h, w, wt->data, cout, k, k, b->data, stride, pad, oh, ow);
        REQUIRE(y->shape == Shape{batch, cout, oh, ow});
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y->data[i] == doctest::Approx(ref[i]).epsilon(1e-9));
    }
    // 3-D (unbatched) form, fixed example shape from the contract
    auto x = random_tensor<double>({3, 4, 4}, rng);
    auto wt = random_tensor<double>({2, 3, 3, 3}, rng);
    auto b = random_tensor<double>({2}, rng);
    auto y = conv2d(x, wt, b, 1, 0);
    std::size_t oh, ow;
    auto ref = oracle::conv2d_ref(x->data, 1, 3, 4, 4, wt->data, 2, 3, 3, b->data, 1, 0, oh, ow);
    REQUIRE(y->shape == Shape{2, oh, ow});
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y->data[i] == doctest::Approx(ref[i]).epsilon(1e-9));
}

TEST_CASE("affine_map identity and zero-input cases") {
    std::mt19937_64 rng(3);
    auto x = random_tensor<float>({4, 5}, rng);
    auto w = zeros<float>({5, 5});
    for (std::size_t i = 0; i < 5; ++i) w->data[i * 5 + i] = 1.0f;
    auto b = zeros<float>({5});
    auto y = affine_map(x, w, b);
    for (std::size_t i = 0; i < x->numel(); ++i) CHECK(y->data[i] == x->data[i]);

    auto x0 = zeros<float>({3, 5});
    auto b2 = random_tensor<float>({7}, rng);
    auto w2 = random_tensor<float>({7, 5}, rng);
    auto y2 = affine_map(x0, w2, b2);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t o = 0; o < 7; ++o) CHECK(y2->data[r * 7 + o] == b2->data[o]);
}

TEST_CASE("affine_map matches the loop oracle") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 30; ++rep) {
        std::uniform_int_distribution<std::size_t> dim(1, 9);
        const std::size_t rows = dim(rng), din = dim(rng), dout = dim(rng);
        auto x = random_tensor<double>({rows, din}, rng);
        auto w = random_tensor<double>({dout, din}, rng);
        auto b = random_tensor<double>({dout}, rng);
        auto y = affine_map(x, w, b);
        auto ref = oracle::affine_ref(x->data, rows, din, w->data, dout, b->data);
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y->data[i] == doctest::Approx(ref[i]).epsilon(1e-9));
    }
}

TEST_CASE("softmax_axis basics and stability") {
    auto one = make_tensor<float>({1}, {42.0f});
    CHECK(softmax_axis(one, 0)->data[0] == doctest::Approx(1.0f));

    auto eq = full<float>({4}, 3.0f);
    for (float v : softmax_axis(eq, 0)->data) CHECK(v == doctest::Approx(0.25f));

    auto big = make_tensor<double>({2}, {1000.0, 1000.5});
    auto y = softmax_axis(big, 0);
    CHECK(all_finite(y));
    auto ref = oracle::softmax_ref(big->data, 1, 2, 1);
    for (std::size_t i = 0; i < 2; ++i) CHECK(y->data[i] == doctest::Approx(ref[i]).epsilon(1e-9));

    // outputs strictly in (0,1] at moderate magnitudes
    std::mt19937_64 rng(71);
    std::uniform_real_distribution<float> dist(-20.0f, 20.0f);
    std::vector<float> vals(12);
    for (auto& v : vals) v = dist(rng);
    auto mod = make_tensor<float>({12}, std::move(vals));
    for (float v : softmax_axis(mod, 0)->data) {
        CHECK(v > 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("softmax rows sum to 1 for magnitudes up to 1e4") {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 50; ++rep) {
        auto x = random_tensor<float>({3, 5, 2}, rng, -1e4f, 1e4f);
        std::uniform_int_distribution<std::size_t> ax(0, 2);
        const std::size_t axis = ax(rng);
        auto y = softmax_axis(x, axis);
        CHECK(all_finite(y));
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= x->shape[i];
        for (std::size_t i = axis + 1; i < 3; ++i) inner *= x->shape[i];
        const std::size_t n = x->shape[axis];
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in_ = 0; in_ < inner; ++in_) {
                double s = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    const float v = y->data[(o * n + i) * inner + in_];
                    CHECK(v >= 0.0f);  // underflows to 0 at these magnitudes
                    CHECK(v <= 1.0f);
                    s += v;
                }
                CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
            }
    }
}

TEST_CASE("layer_norm constant input and shift-only configurations") {
    auto x = full<float>({2, 6, 3}, 5.0f);
    auto gain = full<float>({6}, 1.0f);
    auto shift = zeros<float>({6});
    auto y = layer_norm(x, 1, gain, shift, 1e-5f);
    for (float v : y->data) CHECK(v == doctest::Approx(0.0f).epsilon(1e-6));

    auto g0 = zeros<float>({6});
    auto s = full<float>({6}, 2.5f);
    std::mt19937_64 rng(23);
    auto xr = random_tensor<float>({2, 6, 3}, rng);
    auto y2 = layer_norm(xr, 1, g0, s, 1e-5f);
    for (float v : y2->data) CHECK(v == doctest::Approx(2.5f));
}

TEST_CASE("layer_norm normalizes each location and matches the oracle") {
    std::mt19937_64 rng(29);
    auto x = random_tensor<double>({3, 8, 5}, rng, -2.0, 2.0);
    auto gain = full<double>({8}, 1.0);
    auto shift = zeros<double>({8});
    auto y = layer_norm(x, 1, gain, shift, 1e-5);
    for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t in_ = 0; in_ < 5; ++in_) {
            double mean = 0, var = 0;
            for (std::size_t i = 0; i < 8; ++i) mean += y->data[(o * 8 + i) * 5 + in_];
            mean /= 8;
            for (std::size_t i = 0; i < 8; ++i) {
                const double d = y->data[(o * 8 + i) * 5 + in_] - mean;
                var += d * d;
            }
            var /= 8;
            CHECK(std::abs(mean) < 1e-5);
            CHECK(std::abs(var - 1.0) < 1e-3);
        }
    auto ref = oracle::layer_norm_ref(x->data, 3, 8, 5, gain->data, shift->data, 1e-5);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y->data[i] == doctest::Approx(ref[i]).epsilon(1e-9));
}

TEST_CASE("relu and dropout") {
    auto x = make_tensor<float>({3}, {-1.0f, 0.0f, 2.0f});
    auto y = relu(x);
    CHECK(y->data == std::vector<float>{0.0f, 0.0f, 2.0f});

    auto same = dropout(x, 0.0, true, 1);
    CHECK(same->data == x->data);
    auto eval_mode = dropout(x, 0.5, false, 1);
    CHECK(eval_mode->data == x->data);

    CHECK_THROWS_AS(dropout(x, 1.0, true, 1), std::invalid_argument);
    CHECK_THROWS_AS(dropout(x, -0.1, true, 1), std::invalid_argument);

    // p=0.5 on 1e5 elements of value 2: survivors are 4, mean 2, per-element
    // variance 4 -> 3 sigma of the sample mean is 3*2/sqrt(1e5).
    auto big = full<float>({100000}, 2.0f);
    auto d = dropout(big, 0.5, true, 99);
    double mean = 0;
    for (float v : d->data) mean += v;
    mean /= d->numel();
    CHECK(std::abs(mean - 2.0) < 3.0 * 2.0 / std::sqrt(1e5));

    // same seed replays the same mask
    auto d2 = dropout(big, 0.5, true, 99);
    CHECK(d->data == d2->data);
}

TEST_CASE("pooling contracts") {
    auto x = make_tensor<float>({1, 2, 2}, {1, 2, 3, 4});
    auto y = max_pool2d(x, 2, 2);
    REQUIRE(y->shape == Shape{1, 1, 1});
    CHECK(y->data[0] == 4.0f);

    auto c = full<float>({3, 4, 4}, 0.7f);
    auto g = global_avg_spatial(c);
    REQUIRE(g->shape == Shape{3});
    for (float v : g->data) CHECK(v == doctest::Approx(0.7f));

    // floor truncation drops trailing rows/cols
    auto odd = make_tensor<float>({1, 5, 5}, std::vector<float>(25, 1.0f));
    CHECK(max_pool2d(odd, 2, 2)->shape == Shape{1, 2, 2});

    auto tiny = zeros<float>({1, 1, 1});
    CHECK_THROWS_AS(max_pool2d(tiny, 2, 2), std::invalid_argument);
}

TEST_CASE("max_pool2d and temporal_avg match loop oracles") {
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 20; ++rep) {
        std::uniform_int_distribution<std::size_t> dim(2, 9), lead(1, 4);
        const std::size_t l = lead(rng), h = dim(rng), w = dim(rng);
        const std::size_t k = 2, stride = 2;
        if (h < k || w < k) continue;
        auto x = random_tensor<double>({l, h, w}, rng);
        auto y = max_pool2d(x, k, stride);
        std::size_t oh, ow;
        auto ref = oracle::maxpool_ref(x->data, l, h, w, k, stride, oh, ow);
        REQUIRE(y->shape == Shape{l, oh, ow});
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y->data[i] == doctest::Approx(ref[i]));
    }
    for (int rep = 0; rep < 20; ++rep) {
        std::uniform_int_distribution<std::size_t> dim(1, 6);
        const std::size_t c = dim(rng), t = dim(rng), h = dim(rng), w = dim(rng);
        auto x = random_tensor<double>({c, t, h, w}, rng);
        auto y = temporal_avg(x);
        auto ref = oracle::temporal_avg_ref(x->data, c, t, h * w);
        REQUIRE(y->shape == Shape{c, h, w});
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y->data[i] == doctest::Approx(ref[i]).epsilon(1e-9));
    }
}

TEST_CASE("concat_channels places values exactly") {
    std::mt19937_64 rng(37);
    auto a = random_tensor<float>({2, 3, 3}, rng);
    auto b = random_tensor<float>({5, 3, 3}, rng);
    auto y = concat_channels(a, b);
    REQUIRE(y->shape == Shape{7, 3, 3});
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 9; ++i) CHECK(y->data[c * 9 + i] == a->data[c * 9 + i]);
    for (std::size_t c = 0; c < 5; ++c)
        for (std::size_t i = 0; i < 9; ++i) CHECK(y->data[(2 + c) * 9 + i] == b->data[c * 9 + i]);

    // empty operand: identity
    auto same = concat_axis0<float>({a, nullptr});
    CHECK(same->data == a->data);

    auto bad = random_tensor<float>({5, 2, 3}, rng);
    CHECK_THROWS_AS(concat_channels(a, bad), std::invalid_argument);
}

TEST_CASE("stack0, concat_cols, tile_spatial, transpose01 index mapping") {
    std::mt19937_64 rng(41);
    auto a = random_tensor<float>({4}, rng);
    auto b = random_tensor<float>({4}, rng);
    auto s = stack0<float>({a, b});
    REQUIRE(s->shape == Shape{2, 4});
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(s->data[i] == a->data[i]);
        CHECK(s->data[4 + i] == b->data[i]);
    }

    auto m1 = random_tensor<float>({3, 2}, rng);
    auto m2 = random_tensor<float>({3, 5}, rng);
    auto cc = concat_cols(m1, m2);
    REQUIRE(cc->shape == Shape{3, 7});
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t i = 0; i < 2; ++i) CHECK(cc->data[r * 7 + i] == m1->data[r * 2 + i]);
        for (std::size_t i = 0; i < 5; ++i) CHECK(cc->data[r * 7 + 2 + i] == m2->data[r * 5 + i]);
    }

    auto v = random_tensor<float>({3}, rng);
    auto t = tile_spatial(v, 2, 4);
    REQUIRE(t->shape == Shape{3, 2, 4});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 8; ++i) CHECK(t->data[c * 8 + i] == v->data[c]);

    auto x = random_tensor<float>({2, 3, 4}, rng);
    auto xt = transpose01(x);
    REQUIRE(xt->shape == Shape{3, 2, 4});
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t r = 0; r < 4; ++r) CHECK(xt->data[(j * 2 + i) * 4 + r] == x->data[(i * 3 + j) * 4 + r]);
}

TEST_CASE("forward outputs stay finite on finite inputs") {
    std::mt19937_64 rng(43);
    auto x = random_tensor<float>({4, 6, 6}, rng, -100.0f, 100.0f);
    auto w = random_tensor<float>({4, 4, 3, 3}, rng);
    auto b = random_tensor<float>({4}, rng);
    CHECK(all_finite(conv2d(x, w, b, 1, 1)));
    CHECK(all_finite(softmax_axis(x, 0)));
    auto gain = full<float>({6}, 1.0f);
    auto shift = zeros<float>({6});
    CHECK(all_finite(layer_norm(x, 1, gain, shift, 1e-5f)));
    CHECK(all_finite(sigmoid(random_tensor<float>({100}, rng, -80.0f, 80.0f))));
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(make_tensor<float>({2, 3}, std::vector<float>(5, 0.0f)), std::invalid_argument);
    CHECK_THROWS_AS(make_tensor<float>({0, 3}, {}), std::invalid_argument);
    auto t = zeros<float>({2, 2});
    CHECK(t->numel() == 4);
    CHECK_THROWS_AS(t->item(), std::invalid_argument);
}
