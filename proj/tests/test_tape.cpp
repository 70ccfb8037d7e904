#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "elastireg/amortizer.hpp"
#include "elastireg/tape.hpp"

#include "test_support.hpp"

using namespace elastireg;
using namespace elastireg::testing;

TEST_CASE("d/dw w^2 at w=3 is 6") {
    Tape t;
    const Tape::Id w = t.var(3.0);
    const Tape::Id y = t.mul(w, w);
    const std::vector<double> g = backprop(t, y);
    CHECK(t.value(y) == 9.0);
    CHECK(g.size() == 1);
    CHECK(g[0] == 6.0);
}

TEST_CASE("d/dw tanh(2w) at w=0 is 2") {
    Tape t;
    const Tape::Id w = t.var(0.0);
    const Tape::Id y = t.tanh(t.mul(t.constant(2.0), w));
    const std::vector<double> g = backprop(t, y);
    CHECK(t.value(y) == 0.0);
    CHECK(g[0] == 2.0);
}

namespace {

// Central-difference derivative of a scalar function recorded on a fresh tape.
template <class Fn>
double fd(Fn&& record, double x, double h = 1e-6) {
    Tape tp, tm;
    const double plus = tp.value(record(tp, x + h));
    const double minus = tm.value(record(tm, x - h));
    return (plus - minus) / (2.0 * h);
}

template <class Fn>
double analytic(Fn&& record, double x) {
    Tape t;
    const Tape::Id y = record(t, x);
    return backprop(t, y)[0];
}

}  // namespace

TEST_CASE("every primitive matches finite differences") {
    auto check = [&](auto record, double x) {
        const double a = analytic(record, x);
        const double f = fd(record, x);
        CHECK(rel_diff(a, f) < 1e-6);
    };
    check([](Tape& t, double x) { return t.add(t.var(x), t.constant(1.7)); }, 0.3);
    check([](Tape& t, double x) { return t.sub(t.constant(2.5), t.var(x)); }, 0.3);
    check([](Tape& t, double x) { Tape::Id v = t.var(x); return t.mul(v, v); }, 0.8);
    check([](Tape& t, double x) { return t.div(t.constant(1.0), t.var(x)); }, 1.3);
    check([](Tape& t, double x) { return t.neg(t.var(x)); }, -0.4);
    check([](Tape& t, double x) { return t.tanh(t.var(x)); }, 0.6);
    check([](Tape& t, double x) {
        Tape::Id v = t.var(x);
        return t.fma(v, t.constant(0.7), t.mul(v, v));
    }, 0.9);
}

TEST_CASE("interpolation weights are differentiable (taped bilinear sample)") {
    const GridDomain d = GridDomain::make2d(5, 4);
    ScalarGrid img = make_grid(d, [](int x, int y, int) { return 0.3 * x * x + 0.5 * y + 0.1; });

    auto record = [&](Tape& t, double cx) {
        std::vector<TV> coord = {TV(t, t.var(cx)), TV(t, t.constant(1.4))};
        return tape_sample_image(t, img, coord).id;
    };
    CHECK(rel_diff(analytic(record, 2.3), fd(record, 2.3)) < 1e-6);

    // Clamped coordinates carry no gradient.
    CHECK(analytic(record, 6.5) == 0.0);
    CHECK(analytic(record, -1.2) == 0.0);
}

TEST_CASE("fma equals mul plus add in value and gradient") {
    Tape t;
    const Tape::Id a = t.var(1.3), b = t.var(-0.4), c = t.var(2.2);
    const Tape::Id fused = t.fma(a, b, c);
    const Tape::Id split = t.add(t.mul(a, b), c);
    CHECK(t.value(fused) == t.value(split));
    t.backward(fused);
    const double ga = t.adjoint(a), gb = t.adjoint(b), gc = t.adjoint(c);
    t.backward(split);
    CHECK(ga == t.adjoint(a));
    CHECK(gb == t.adjoint(b));
    CHECK(gc == t.adjoint(c));
}

TEST_CASE("replay reproduces the forward value bit-exactly") {
    Tape t;
    Tape::Id x = t.var(0.37);
    Tape::Id y = t.var(-1.21);
    Tape::Id e = t.tanh(t.fma(x, y, t.div(t.constant(1.0), t.add(t.mul(x, x), t.constant(0.5)))));
    for (int i = 0; i < 40; ++i) e = t.tanh(t.fma(e, x, y));
    const double forward = t.value(e);
    t.backward(e);  // backward must not disturb values
    CHECK(t.replay(e) == forward);
    CHECK(t.value(e) == forward);
}

TEST_CASE("the adjoint seed of the output is 1") {
    Tape t;
    const Tape::Id x = t.var(2.0);
    const Tape::Id y = t.mul(x, t.constant(3.0));
    t.backward(y);
    CHECK(t.adjoint(y) == 1.0);
}

TEST_CASE("gradient queries before backward and bad ids are errors") {
    Tape t;
    const Tape::Id x = t.var(1.0);
    CHECK_THROWS_AS(t.input_gradient(), std::runtime_error);
    CHECK_THROWS_AS(t.adjoint(x), std::runtime_error);
    CHECK_THROWS_AS(t.backward(42), std::invalid_argument);
    CHECK_THROWS_AS(backprop(t, -1), std::invalid_argument);
}

TEST_CASE("clear keeps the tape reusable") {
    Tape t;
    t.var(1.0);
    t.clear();
    CHECK(t.size() == 0);
    CHECK(t.var_count() == 0);
    const Tape::Id x = t.var(2.0);
    const Tape::Id y = t.mul(x, x);
    CHECK(backprop(t, y)[0] == 4.0);
}
