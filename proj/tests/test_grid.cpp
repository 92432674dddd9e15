#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "mea/grid.hpp"
#include "mea/rng.hpp"

using namespace mea;

namespace {

Field random_field(int n, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Field f(n);
    for (std::size_t i = 0; i < f.size(); ++i) f.data()[i] = rng.uniform(lo, hi);
    return f;
}

}  // namespace

TEST_CASE("condense_max of a constant field stays constant") {
    const Field f(101, 0.7);
    const Field c = condense_max(f, 2);
    CHECK(c.n() == 51);
    CHECK(c.values().minCoeff() == 0.7);
    CHECK(c.values().maxCoeff() == 0.7);
}

TEST_CASE("condense_max output sides follow ceiling division") {
    Rng rng(7);
    const Field f = random_field(101, rng);
    const int windows[4] = {2, 4, 8, 10};
    for (int w : windows) {
        const int expected = (101 + w - 1) / w;  // independent size oracle
        CHECK(condense_max(f, w).n() == expected);
    }
    CHECK(condense_max(f, 2).n() == 51);
    CHECK(condense_max(f, 4).n() == 26);
    CHECK(condense_max(f, 8).n() == 13);
    CHECK(condense_max(f, 10).n() == 11);
}

TEST_CASE("condense_max 4x4 block maxima") {
    Field f(4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) f(i, j) = i * 4 + j + 1;
    const Field c = condense_max(f, 2);
    CHECK(c.n() == 2);
    CHECK(c(0, 0) == 6.0);
    CHECK(c(0, 1) == 8.0);
    CHECK(c(1, 0) == 14.0);
    CHECK(c(1, 1) == 16.0);
}

TEST_CASE("condense_max window 1 is the identity") {
    Rng rng(3);
    const Field f = random_field(9, rng);
    CHECK(condense_max(f, 1) == f);
}

TEST_CASE("condense_max rejects out-of-range windows") {
    const Field f(8, 1.0);
    CHECK_THROWS_AS(condense_max(f, 0), std::invalid_argument);
    CHECK_THROWS_AS(condense_max(f, 9), std::invalid_argument);
}

TEST_CASE("condense_max values are a subset of the input; max preserved") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 5 + rng.uniform_int(0, 60);
        const int w = 1 + rng.uniform_int(0, n / 2);
        const Field f = random_field(n, rng);
        const Field c = condense_max(f, w);
        std::set<double> input_values(f.data(), f.data() + f.size());
        for (std::size_t i = 0; i < c.size(); ++i) CHECK(input_values.count(c.data()[i]) == 1);
        CHECK(c.values().maxCoeff() == f.values().maxCoeff());
    }
}

TEST_CASE("condense_max commutes with strictly increasing relabeling") {
    Rng rng(13);
    const Field f = random_field(23, rng, 0.1, 2.0);
    auto relabel = [](double v) { return std::exp(v) + 3.0 * v; };
    Field rf = f;
    for (std::size_t i = 0; i < rf.size(); ++i) rf.data()[i] = relabel(rf.data()[i]);
    const Field lhs = condense_max(rf, 4);
    Field rhs = condense_max(f, 4);
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs.data()[i] = relabel(rhs.data()[i]);
    CHECK(lhs == rhs);
}

TEST_CASE("build_stack levels and value-subset invariant") {
    Rng rng(17);
    Field f(101);
    for (std::size_t i = 0; i < f.size(); ++i)
        f.data()[i] = rng.uniform() < 0.5 ? 0.1 : 1.0;
    const MultiResStack stack = build_stack(f, "s");
    CHECK(stack.levels.size() == 5);
    for (int side : {101, 51, 26, 13, 11}) CHECK(stack.at(side).n() == side);
    for (int side : {51, 26, 13, 11}) {
        const Field& level = stack.at(side);
        for (std::size_t i = 0; i < level.size(); ++i) {
            const double v = level.data()[i];
            CHECK((v == 0.1 || v == 1.0));
        }
    }
    CHECK_THROWS_AS(build_stack(Field(51, 1.0)), std::invalid_argument);
}

TEST_CASE("build_stack constant field stays constant at all levels") {
    const MultiResStack stack = build_stack(Field(101, 0.42));
    for (const auto& [side, level] : stack.levels) {
        CHECK(level.values().minCoeff() == 0.42);
        CHECK(level.values().maxCoeff() == 0.42);
    }
}

TEST_CASE("build_stack single hot node survives into every level") {
    Field f(101, 0.1);
    f(50, 50) = 1.0;
    const MultiResStack stack = build_stack(f);
    const int windows[4] = {2, 4, 8, 10};
    const int sides[4] = {51, 26, 13, 11};
    for (int l = 0; l < 4; ++l) {
        const Field& level = stack.at(sides[l]);
        int hot = 0;
        int hot_i = -1, hot_j = -1;
        for (int i = 0; i < level.n(); ++i)
            for (int j = 0; j < level.n(); ++j)
                if (level(i, j) == 1.0) {
                    ++hot;
                    hot_i = i;
                    hot_j = j;
                }
        CHECK(hot == 1);
        // brute-force block membership: node (50,50) lands in block 50/window
        CHECK(hot_i == 50 / windows[l]);
        CHECK(hot_j == 50 / windows[l]);
    }
}

TEST_CASE("resample reproduces a linear ramp exactly with order 1") {
    Field coarse(11);
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) coarse(i, j) = j / 10.0;
    const Field fine = resample(coarse, 101, 1);
    double max_err = 0.0;
    for (int i = 0; i < 101; ++i)
        for (int j = 0; j < 101; ++j)
            max_err = std::max(max_err, std::abs(fine(i, j) - j / 100.0));
    CHECK(max_err <= 1e-12);
}

TEST_CASE("resample keeps constants for every order") {
    const Field f(13, 3.25);
    for (int order : {0, 1, 3}) {
        const Field r = resample(f, 47, order);
        CHECK(r.values().minCoeff() == doctest::Approx(3.25).epsilon(1e-15));
        CHECK(r.values().maxCoeff() == doctest::Approx(3.25).epsilon(1e-15));
    }
}

TEST_CASE("resample 3x3 center bump to 5x5 matches the hand bilinear oracle") {
    Field f(3, 0.0);
    f(1, 1) = 1.0;
    const Field r = resample(f, 5, 1);
    CHECK(r(2, 2) == doctest::Approx(1.0));
    CHECK(r(1, 2) == doctest::Approx(0.5));
    CHECK(r(3, 2) == doctest::Approx(0.5));
    CHECK(r(2, 1) == doctest::Approx(0.5));
    CHECK(r(2, 3) == doctest::Approx(0.5));
    CHECK(r(1, 1) == doctest::Approx(0.25));
    CHECK(r(1, 3) == doctest::Approx(0.25));
    CHECK(r(3, 1) == doctest::Approx(0.25));
    CHECK(r(3, 3) == doctest::Approx(0.25));
    CHECK(r(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("resample to the same size is the identity for all orders") {
    Rng rng(23);
    const Field f = random_field(17, rng);
    for (int order : {0, 1, 3}) CHECK(resample(f, 17, order) == f);
}

TEST_CASE("resample rejects unsupported orders") {
    const Field f(5, 1.0);
    CHECK_THROWS_AS(resample(f, 9, 2), std::invalid_argument);
    CHECK_THROWS_AS(resample(f, 9, -1), std::invalid_argument);
}

TEST_CASE("order-3 resampling reproduces linear ramps away from the border") {
    Field coarse(11);
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) coarse(i, j) = 0.3 + 0.5 * (j / 10.0);
    const Field fine = resample(coarse, 101, 3);
    // Keys cubic reproduces linears where the 4-tap window is unclamped.
    for (int j = 10; j <= 90; ++j)
        CHECK(fine(50, j) == doctest::Approx(0.3 + 0.5 * (j / 100.0)).epsilon(1e-12));
}
