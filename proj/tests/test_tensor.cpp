#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "shefu/adam.hpp"
#include "shefu/gradcheck.hpp"
#include "shefu/tensor.hpp"

using namespace shefu;

namespace {

using DTensor = TensorT<double>;
using DTape = TapeT<double>;
using DVar = VarT<double>;
using DParam = ParamT<double>;

// Full-coordinate finite-difference check of a tape-built scalar function of
// one tensor argument. Returns max relative error per the grad_check contract.
template <typename BuildFn>
double op_grad_error(const DTensor& point, BuildFn build, double h = 1e-5) {
    auto value = [&](const DTensor& p) {
        DParam px("x", p);
        DTape tape;
        DVar loss = build(tape, tape.param(px));
        return static_cast<double>(loss.value().data[0]);
    };
    auto analytic = [&](const DTensor& p) {
        DParam px("x", p);
        DTape tape;
        DVar loss = build(tape, tape.param(px));
        tape.backward(loss);
        return px.grad;
    };
    return grad_check<double>(value, analytic, point, h);
}

DTensor random_tensor(Shape sh, Rng& rng, double scale = 1.0) {
    DTensor t(std::move(sh));
    for (auto& v : t.data) v = rng.normal() * scale;
    return t;
}

}  // namespace

TEST_CASE("softmax basic values") {
    auto r = softmax(DTensor::from({0.0, 0.0}));
    CHECK(r.data[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.data[1] == doctest::Approx(0.5).epsilon(1e-12));

    // [ln 1, ln 3] -> [0.25, 0.75]
    auto r2 = softmax(DTensor::from({std::log(1.0), std::log(3.0)}));
    CHECK(r2.data[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(r2.data[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and normalization") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        size_t n = 1 + rng.uniform_int(8);
        DTensor x(Shape{n});
        for (auto& v : x.data) v = rng.uniform(-50.0, 50.0);
        auto y = softmax(x);
        double sum = 0;
        for (double v : y.data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0 + 1e-9);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

        double c = rng.uniform(-10.0, 10.0);
        DTensor xs = x;
        for (auto& v : xs.data) v += c;
        auto ys = softmax(xs);
        for (size_t i = 0; i < n; ++i) CHECK(ys.data[i] == doctest::Approx(y.data[i]).epsilon(1e-9));
    }
}

TEST_CASE("softmax rejects NaN input") {
    DTensor x = DTensor::from({1.0, std::nan("")});
    CHECK_THROWS_AS(softmax(x), NumericError);
}

TEST_CASE("layer_norm basic values") {
    DTensor ones = DTensor::from({1.0, 1.0, 1.0});
    DTensor g = DTensor::full({3}, 1.0), b = DTensor::zeros({3});
    auto r = layer_norm(ones, g, b, 1e-5);
    for (double v : r.data) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

    DTensor x = DTensor::from({1.0, 3.0});
    DTensor g2 = DTensor::full({2}, 1.0), b2 = DTensor::zeros({2});
    auto r2 = layer_norm(x, g2, b2, 1e-12);
    CHECK(r2.data[0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(r2.data[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("layer_norm shift invariance and moments") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        size_t n = 2 + rng.uniform_int(16);
        DTensor x = random_tensor({n}, rng, 3.0);
        DTensor g = DTensor::full({n}, 1.0), b = DTensor::zeros({n});
        auto y = layer_norm(x, g, b, 1e-10);
        double mean = 0, var = 0;
        for (double v : y.data) mean += v;
        mean /= static_cast<double>(n);
        for (double v : y.data) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        CHECK(std::abs(mean) < 1e-5);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-5));

        double c = rng.uniform(-5.0, 5.0);
        DTensor xs = x;
        for (auto& v : xs.data) v += c;
        auto ys = layer_norm(xs, g, b, 1e-10);
        for (size_t i = 0; i < n; ++i) CHECK(ys.data[i] == doctest::Approx(y.data[i]).epsilon(1e-6));
    }
    CHECK_THROWS_AS(layer_norm(DTensor::from({1.0}), DTensor::from({1.0}), DTensor::from({0.0}), 0.0),
                    ContractError);
}

TEST_CASE("seq_max_pool examples") {
    DTensor x({2, 2}, {1, 4, 3, 2});
    auto y = seq_max_pool(x);
    CHECK(y.shape == Shape{1, 2});
    CHECK(y.data[0] == 3.0);
    CHECK(y.data[1] == 4.0);

    DTensor x5({5, 1}, {1, 2, 3, 4, 9});
    auto y5 = seq_max_pool(x5);
    CHECK(y5.shape == Shape{2, 1});  // trailing element dropped
    CHECK(y5.data[0] == 2.0);
    CHECK(y5.data[1] == 4.0);

    DTensor x4({4, 2}, {-1, -1, -2, -2, 0, 0, 5, 5});
    auto y4 = seq_max_pool(x4);
    CHECK(y4.shape == Shape{2, 2});
    CHECK(y4.data[0] == -1.0);
    CHECK(y4.data[1] == -1.0);
    CHECK(y4.data[2] == 5.0);
    CHECK(y4.data[3] == 5.0);
}

TEST_CASE("seq_max_pool length law and underflow") {
    Rng rng(3);
    for (size_t len = 2; len <= 64; ++len) {
        DTensor x = random_tensor({len, 3}, rng);
        CHECK(seq_max_pool(x).shape[0] == len / 2);
    }
    DTensor one({1, 3}, {1, 2, 3});
    CHECK_THROWS_AS(seq_max_pool(one), PoolingUnderflowError);
}

TEST_CASE("backward: x*x at 3 gives 6") {
    DParam x("x", DTensor::from({3.0}));
    DTape tape;
    DVar vx = tape.param(x);
    DVar loss = tape.mul(vx, vx);
    tape.backward(tape.sum(loss));
    CHECK(x.grad.data[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward: sum(W v) gradient is v broadcast over rows") {
    Rng rng(42);
    DTensor w0 = random_tensor({3, 4}, rng);
    DTensor v0 = random_tensor({4, 1}, rng);
    DParam w("w", w0);
    DTape tape;
    DVar loss = tape.sum(tape.matmul(tape.param(w), tape.leaf(v0)));
    tape.backward(loss);
    for (size_t i = 0; i < 3; ++i)
        for (size_t j = 0; j < 4; ++j)
            CHECK(w.grad.at(i, j) == doctest::Approx(v0.data[j]).epsilon(1e-12));

    // same function against finite differences
    double err = op_grad_error(w0, [&](DTape& t, DVar x) { return t.sum(t.matmul(x, t.leaf(v0))); });
    CHECK(err < 1e-6);
}

TEST_CASE("backward: unused parameter gets zero gradient") {
    DParam used("used", DTensor::from({2.0}));
    DParam unused("unused", DTensor::from({5.0}));
    DTape tape;
    DVar a = tape.param(used);
    tape.param(unused);  // on the tape, but not in the loss
    tape.backward(tape.sum(tape.mul(a, a)));
    CHECK(unused.grad.data[0] == 0.0);
    CHECK(used.grad.data[0] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects non-scalar loss") {
    DParam x("x", DTensor::from({1.0, 2.0}));
    DTape tape;
    DVar vx = tape.param(x);
    CHECK_THROWS_AS(tape.backward(vx), ContractError);
}

TEST_CASE("forward ops are deterministic") {
    Rng rng(9);
    DTensor a = random_tensor({4, 5}, rng);
    DTensor b = random_tensor({5, 3}, rng);
    DTape t1, t2;
    auto r1 = t1.matmul(t1.leaf(a), t1.leaf(b));
    auto r2 = t2.matmul(t2.leaf(a), t2.leaf(b));
    CHECK(r1.value().data == r2.value().data);
    auto s1 = softmax(a), s2 = softmax(a);
    CHECK(s1.data == s2.data);
}

TEST_CASE("adam: zero gradients are the identity for any step count") {
    Rng rng(5);
    DParam p("p", random_tensor({3, 3}, rng));
    DTensor before = p.value;
    std::vector<DParam*> params{&p};
    AdamStateT<double> st;
    st.lr = 1e-3;
    st.init(params);
    for (int i = 0; i < 17; ++i) {
        p.zero_grad();
        adam_step(params, st);
    }
    CHECK(p.value.data == before.data);
    CHECK(st.step == 17);
}

TEST_CASE("adam: first step moves by about lr against the gradient sign") {
    DParam p("p", DTensor::from({1.0}));
    std::vector<DParam*> params{&p};
    AdamStateT<double> st;
    st.lr = 8e-5;
    st.init(params);
    p.grad.data[0] = 0.5;
    adam_step(params, st);
    double delta = 1.0 - p.value.data[0];
    CHECK(delta > 0.0);  // moved against positive gradient
    CHECK(std::abs(delta) >= st.lr * (1.0 - 1e-3));
    CHECK(std::abs(delta) <= st.lr);
}

TEST_CASE("adam: two identical steps match the hand recursion") {
    const double g = 0.3, lr = 1e-2, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    DParam p("p", DTensor::from({2.0}));
    std::vector<DParam*> params{&p};
    AdamStateT<double> st;
    st.lr = lr;
    st.beta1 = b1;
    st.beta2 = b2;
    st.eps = eps;
    st.init(params);

    // hand recursion
    double theta = 2.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mhat = m / (1 - std::pow(b1, t));
        double vhat = v / (1 - std::pow(b2, t));
        theta -= lr * mhat / (std::sqrt(vhat) + eps);
    }

    for (int t = 0; t < 2; ++t) {
        p.zero_grad();
        p.grad.data[0] = g;
        adam_step(params, st);
    }
    CHECK(st.step == 2);
    CHECK(p.value.data[0] == doctest::Approx(theta).epsilon(1e-12));
    CHECK(st.m[0].data[0] == doctest::Approx(m).epsilon(1e-12));
    CHECK(st.v[0].data[0] == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("adam: shape mismatch is a contract error") {
    DParam p("p", DTensor::from({1.0, 2.0}));
    std::vector<DParam*> params{&p};
    AdamStateT<double> st;
    st.init(params);
    p.grad = DTensor::zeros({3});
    CHECK_THROWS_AS(adam_step(params, st), ContractError);
}

TEST_CASE("grad_check: quadratic is near-exact, zero function is zero") {
    auto f = [](const DTensor& x) {
        double s = 0;
        for (double v : x.data) s += v * v;
        return s;
    };
    auto an = [](const DTensor& x) {
        DTensor g(x.shape);
        for (size_t i = 0; i < x.numel(); ++i) g.data[i] = 2.0 * x.data[i];
        return g;
    };
    Rng rng(21);
    DTensor pt = random_tensor({6}, rng);
    CHECK(grad_check<double>(f, an, pt, 1e-4) < 1e-10);

    auto fz = [](const DTensor&) { return 0.0; };
    auto anz = [](const DTensor& x) { return DTensor::zeros(x.shape); };
    CHECK(grad_check<double>(fz, anz, pt, 1e-4) == 0.0);

    CHECK_THROWS_AS(grad_check<double>(fz, anz, pt, 1e-1), ContractError);
}

TEST_CASE("every primitive matches finite differences over 100+ seeds") {
    int near_tie_skips = 0;
    for (uint64_t seed = 0; seed < 110; ++seed) {
        Rng rng(1000 + seed);
        DTensor a = random_tensor({3, 4}, rng);
        DTensor m2 = random_tensor({4, 3}, rng);
        DTensor rowv = random_tensor({1, 4}, rng);
        DTensor same = random_tensor({3, 4}, rng);

        auto check = [&](double err) { CHECK(err < 1e-4); };

        check(op_grad_error(a, [&](DTape& t, DVar x) { return t.sum(t.matmul(x, t.leaf(m2))); }));
        check(op_grad_error(m2, [&](DTape& t, DVar x) { return t.sum(t.matmul(t.leaf(a), x)); }));
        check(op_grad_error(a, [&](DTape& t, DVar x) { return t.sum(t.add(x, t.leaf(same))); }));
        check(op_grad_error(a, [&](DTape& t, DVar x) { return t.sum(t.mul(x, t.leaf(same))); }));
        check(op_grad_error(a, [&](DTape& t, DVar x) {
            return t.sum(t.add_rowvec(x, t.leaf(DTensor({4}, rowv.data))));
        }));
        check(op_grad_error(a, [&](DTape& t, DVar x) { return t.sum(t.scale(x, 2.5)); }));
        check(op_grad_error(a, [&](DTape& t, DVar x) { return t.sum(t.gelu(x)); }));
        check(op_grad_error(a, [&](DTape& t, DVar x) {
            // weighted sum so the softmax jacobian is nontrivial
            return t.sum(t.mul(t.softmax_rows(x), t.leaf(same)));
        }));
        check(op_grad_error(a, [&](DTape& t, DVar x) {
            DVar g = t.leaf(DTensor::full({4}, 1.3));
            DVar b = t.leaf(DTensor::full({4}, 0.2));
            return t.sum(t.mul(t.layer_norm_rows(x, g, b, 1e-5), t.leaf(same)));
        }));
        check(op_grad_error(a, [&](DTape& t, DVar x) { return t.sum(t.transpose(x)); }));
        check(op_grad_error(a, [&](DTape& t, DVar x) { return t.sum(t.slice_cols(x, 1, 3)); }));
        check(op_grad_error(a, [&](DTape& t, DVar x) {
            return t.sum(t.concat_cols({x, t.leaf(same)}));
        }));
        check(op_grad_error(a, [&](DTape& t, DVar x) {
            return t.sum(t.mul(t.concat_rows({x, t.leaf(same)}), t.leaf([&] {
                DTensor w({6, 4});
                Rng r2(seed * 7 + 1);
                for (auto& v : w.data) v = r2.normal();
                return w;
            }())));
        }));
        check(op_grad_error(a, [&](DTape& t, DVar x) {
            return t.sum(t.embedding_rows(x, {2, 0, 2}));
        }));
        check(op_grad_error(a, [&](DTape& t, DVar x) {
            return t.sum(t.mask_rows(x, {1, 0, 1}));
        }));
        check(op_grad_error(a, [&](DTape& t, DVar x) { return t.select(t.reshape(x, {12}), 5); }));

        // pooling: regenerate if any pair gap is too small for finite differences
        DTensor pool = random_tensor({4, 3}, rng);
        bool near_tie = false;
        for (size_t r = 0; r < 2 && !near_tie; ++r)
            for (size_t c = 0; c < 3; ++c)
                if (std::abs(pool.at(2 * r, c) - pool.at(2 * r + 1, c)) < 1e-3) near_tie = true;
        if (near_tie) {
            ++near_tie_skips;
            continue;
        }
        DTensor pool_w = random_tensor({2, 3}, rng);
        check(op_grad_error(pool, [&](DTape& t, DVar x) {
            return t.sum(t.mul(t.seq_max_pool_op(x), t.leaf(pool_w)));
        }));

        // clamped log (the cross-entropy path)
        DTensor probs({2}, {0.3, 0.7});
        check(op_grad_error(probs, [&](DTape& t, DVar x) {
            return t.scale(t.log(t.select(t.clamp(x, 1e-7, 1.0 - 1e-7), 1)), -1.0);
        }));
    }
    CHECK(near_tie_skips < 20);
}
