#include "psfv/psf.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

using namespace psfv;

namespace {

SegmentFeature feature(std::initializer_list<double> v)
{
    SegmentFeature f;
    int i = 0;
    for (double x : v) f[i++] = x;
    return f;
}

NormalizedSignature one_stroke(std::vector<std::array<double, 3>> xyt)
{
    NormalizedSignature sig;
    NormalizedStroke s;
    for (auto [x, y, t] : xyt) s.points.push_back({x, y, t, PenState::down});
    s.points.back().pen = PenState::up;
    sig.strokes.push_back(s);
    return sig;
}

} // namespace

TEST_CASE("segment_psf: worked values")
{
    CHECK(segment_psf({2, 3}, {2, 3}) == feature({1, 0, 0, 0, 0, 0, 0}));
    CHECK(segment_psf({0, 0}, {3, 4}) == feature({1, 3, 4, 9, 12, 12, 16}));
    CHECK(segment_psf({1, 1}, {0, 1}) == feature({1, -1, 0, 1, 0, 0, 0}));
}

TEST_CASE("segment_psf_temporal: worked values")
{
    CHECK(segment_psf_temporal({0, 0}, 0.0, {5, -2}) == SegmentFeature::Zero());
    CHECK(segment_psf_temporal({0, 0}, std::numbers::e - 1.0, {3, 4}).isApprox(feature({1, 3, 4, 9, 12, 12, 16}), 1e-15));
    const double t_tau2 = std::exp(2.0) - 1.0;
    CHECK(segment_psf_temporal({0, 0}, t_tau2, {1, 0}).isApprox(feature({2, 2, 0, 4, 0, 0, 0}), 1e-14));
    CHECK_THROWS_AS(segment_psf_temporal({0, 0}, -1.0, {1, 0}), FeatureError);
}

TEST_CASE("temporal coefficient is zero only at t = 0")
{
    CHECK(temporal_coefficient(0.0) == 0.0);
    for (double t : {1e-9, 1.0, 20.0, 1e6}) CHECK(temporal_coefficient(t) > 0.0);
}

TEST_CASE("rasterize: single point is blank")
{
    auto t = rasterize(one_stroke({{3, 3, 0}}), FeatureVariant::original);
    CHECK(t.channels == 7);
    CHECK(t.height == 128);
    CHECK(t.width == 16);
    CHECK(t.data.abs().maxCoeff() == 0.0f);
    CHECK_THROWS_AS(rasterize(NormalizedSignature{}, FeatureVariant::original), FeatureError);
}

TEST_CASE("rasterize: horizontal segment covers 11 pixels")
{
    auto t = rasterize(one_stroke({{0, 64, 0}, {10, 64, 10}}), FeatureVariant::original);
    int count = 0;
    for (int r = 0; r < t.height; ++r) {
        for (int c = 0; c < t.width; ++c) {
            if (t(0, r, c) != 0.0f) {
                CHECK(r == 64);
                CHECK(t(0, r, c) == 1.0f);
                ++count;
            }
        }
    }
    CHECK(count == 11);
    CHECK(t(1, 64, 5) == 10.0f);
    CHECK(t(3, 64, 5) == 100.0f);
}

TEST_CASE("rasterize: stacked channels 0-6 equal the original variant")
{
    std::mt19937_64 rng(4);
    for (int i = 0; i < 10; ++i) {
        auto sig = normalize(make_instance(testing::synth_points(rng), 1, 1));
        auto orig = rasterize(sig, FeatureVariant::original);
        auto temp = rasterize(sig, FeatureVariant::temporal);
        auto stacked = rasterize(sig, FeatureVariant::stacked);
        REQUIRE(stacked.channels == 14);
        const auto plane = Eigen::Index(128) * orig.width;
        CHECK((stacked.data.head(7 * plane) == orig.data).all());
        CHECK((stacked.data.tail(7 * plane) == temp.data).all());
    }
}

TEST_CASE("rasterize: Kronecker identities hold pixelwise, width multiple of 16")
{
    std::mt19937_64 rng(17);
    for (int i = 0; i < 20; ++i) {
        auto sig = testing::random_normalized(rng, 6, 30, 40.0 + 20 * i);
        auto t = rasterize(sig, FeatureVariant::original);
        CHECK(t.width % 16 == 0);
        CHECK(t.width >= 16);
        for (int r = 0; r < t.height; ++r) {
            for (int c = 0; c < t.width; ++c) {
                if (t(0, r, c) == 0.0f) {
                    for (int ch = 1; ch < 7; ++ch) CHECK(t(ch, r, c) == 0.0f);
                    continue;
                }
                const double dx = t(1, r, c), dy = t(2, r, c);
                CHECK(t(3, r, c) == doctest::Approx(dx * dx));
                CHECK(t(4, r, c) == t(5, r, c));
                CHECK(t(4, r, c) == doctest::Approx(dx * dy));
                CHECK(t(6, r, c) == doctest::Approx(dy * dy));
            }
        }
    }
}

TEST_CASE("rasterize: temporal with tau = 1 everywhere equals original")
{
    std::mt19937_64 rng(23);
    for (int i = 0; i < 10; ++i) {
        auto sig = testing::random_normalized(rng, 5, 20, 100.0);
        for (auto& s : sig.strokes) {
            for (auto& p : s.points) p.t = std::numbers::e - 1.0;
        }
        auto a = rasterize(sig, FeatureVariant::original);
        auto b = rasterize(sig, FeatureVariant::temporal);
        CHECK(a.data.isApprox(b.data, 1e-6f));
    }
}

TEST_CASE("walk_line matches the closed-form membership test")
{
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> coord(0, 40);
    for (int trial = 0; trial < 500; ++trial) {
        PixelCoord a{coord(rng), coord(rng)}, b{coord(rng), coord(rng)};
        std::set<std::pair<int, int>> walked;
        walk_line(a, b, [&](PixelCoord p) { walked.insert({p.col, p.row}); });
        std::set<std::pair<int, int>> expected;
        for (int r = -1; r <= 41; ++r) {
            for (int c = -1; c <= 41; ++c) {
                if (testing::on_line(a.col, a.row, b.col, b.row, c, r)) expected.insert({c, r});
            }
        }
        CHECK(walked == expected);
        CHECK(walked.size() == static_cast<std::size_t>(std::max(std::abs(b.col - a.col), std::abs(b.row - a.row)) + 1));
    }
}

TEST_CASE("rasterize matches the brute-force rasterizer")
{
    std::mt19937_64 rng(31);
    for (int i = 0; i < 10; ++i) {
        auto sig = testing::random_normalized(rng, 10, 50, 150.0);
        for (auto v : {FeatureVariant::original, FeatureVariant::temporal, FeatureVariant::stacked}) {
            auto fast = rasterize(sig, v);
            auto slow = testing::brute_force_rasterize(sig, v);
            REQUIRE(fast.width == slow.width);
            CHECK((fast.data == slow.data).all());
        }
    }
}

TEST_CASE("scale_to_square")
{
    FeatureTensor t(7, 128, 128, FeatureVariant::original);
    t.data.setRandom();
    auto same = scale_to_square(t);
    CHECK((same.data == t.data).all());

    for (int w : {16, 48, 128, 320}) {
        FeatureTensor c(7, 128, w, FeatureVariant::original);
        c.data.setConstant(0.37f);
        auto s = scale_to_square(c);
        CHECK(s.width == 128);
        CHECK((s.data == 0.37f).all());
    }

    // A single nonzero column at width 256 lands on the nearest output
    // column(s) with its mass (sum * 256/128) preserved.
    for (int col : {0, 17, 100, 255}) {
        FeatureTensor one(7, 128, 256, FeatureVariant::original);
        for (int r = 0; r < 128; ++r) one(2, r, col) = 1.0f + r;
        auto s = scale_to_square(one);
        const double in_mass = one.channel(2).sum();
        const double out_mass = s.channel(2).sum() * 2.0;
        CHECK(out_mass == doctest::Approx(in_mass).epsilon(1e-6));
        for (int j = 0; j < 128; ++j) {
            if (s.channel(2).col(j).abs().sum() > 0) CHECK(std::abs(j - col / 2) <= 1);
        }
    }
}
