#include <doctest.h>

#include "oracles.hpp"
#include "psycode/nn.hpp"

using namespace psycode;
using namespace psycode::nn;

namespace {

std::vector<double> randn(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

// Weighted sum of outputs, so the gradient seed is non-uniform.
double weighted(std::span<const double> out, std::span<const double> w) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * w[i];
    return s;
}

}  // namespace

TEST_CASE("conv1d max pool trivial cases") {
    std::vector<double> zeros(5 * 3, 0.0);
    std::vector<double> f(2 * 3 * 4, 0.7);
    std::vector<double> b(4, 0.0);
    std::vector<double> out(4, -1.0);
    ConvPoolCache cache;
    conv1d_maxpool_forward<double>(zeros, 5, 3, f, b, 2, 4, 4, out, cache);
    for (double v : out) CHECK(v == 0.0);

    std::vector<double> seq{-1.0, 3.0, 2.0, -5.0};
    std::vector<double> one{1.0};
    std::vector<double> zb{0.0};
    std::vector<double> o1(1);
    conv1d_maxpool_forward<double>(seq, 4, 1, one, zb, 1, 1, 4, o1, cache);
    CHECK(o1[0] == 3.0);
    std::vector<double> neg{-1.0, -3.0};
    conv1d_maxpool_forward<double>(neg, 2, 1, one, zb, 1, 1, 2, o1, cache);
    CHECK(o1[0] == 0.0);

    CHECK_THROWS(conv1d_maxpool_forward<double>(neg, 2, 1, std::vector<double>(3, 1.0), zb, 3, 1, 1, o1, cache));
}

TEST_CASE("conv1d max pool gradients match finite differences") {
    Rng rng(1);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t seq = 3 + rng.below(6);
        const std::size_t emb = 1 + rng.below(4);
        const std::size_t width = 1 + rng.below(std::min<std::size_t>(seq, 3));
        const std::size_t maps = 1 + rng.below(3);
        auto x = randn(rng, seq * emb);
        auto f = randn(rng, width * emb * maps);
        auto b = randn(rng, maps, 0.1);
        auto w = randn(rng, maps);
        const std::size_t valid = seq - width + 1;
        auto loss = [&] {
            std::vector<double> out(maps);
            ConvPoolCache c;
            conv1d_maxpool_forward<double>(x, seq, emb, f, b, width, maps, valid, out, c);
            return weighted(out, w);
        };
        std::vector<double> out(maps);
        ConvPoolCache c;
        conv1d_maxpool_forward<double>(x, seq, emb, f, b, width, maps, valid, out, c);
        std::vector<double> gx(x.size()), gf(f.size()), gb(b.size());
        conv1d_maxpool_backward<double>(x, emb, f, width, maps, c, w, gx, gf, gb);
        CHECK(check_gradient(loss, x, gx).max_relative_error < 1e-4);
        CHECK(check_gradient(loss, f, gf).max_relative_error < 1e-4);
        CHECK(check_gradient(loss, b, gb).max_relative_error < 1e-4);
    }
}

TEST_CASE("dense identity and gradient check") {
    std::vector<double> x{1.0, -2.0, 3.0};
    std::vector<double> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::vector<double> zb(3, 0.0);
    std::vector<double> y(3);
    dense_forward<double>(x, eye, zb, y);
    CHECK(y == x);
    std::vector<double> bad(4);
    CHECK_THROWS(dense_forward<double>(x, bad, zb, y));

    Rng rng(2);
    auto xin = randn(rng, 10);
    auto W = randn(rng, 4 * 10);
    auto b = randn(rng, 4);
    auto loss = [&] {
        std::vector<double> out(4);
        dense_forward<double>(xin, W, b, out);
        std::vector<double> g(4);
        return softmax_xent<double>(out, 2, g);
    };
    std::vector<double> out(4);
    dense_forward<double>(xin, W, b, out);
    std::vector<double> gl(4);
    softmax_xent<double>(out, 2, gl);
    std::vector<double> gx(10), gW(W.size()), gb(4);
    dense_backward<double>(xin, W, gl, gx, gW, gb);
    CHECK(check_gradient(loss, xin, gx).max_relative_error < 1e-4);
    CHECK(check_gradient(loss, W, gW).max_relative_error < 1e-4);
    CHECK(check_gradient(loss, b, gb).max_relative_error < 1e-4);
}

TEST_CASE("relu gradient") {
    Rng rng(4);
    auto x = randn(rng, 12);
    auto w = randn(rng, 12);
    auto loss = [&] {
        auto a = x;
        relu_forward<double>(a);
        return weighted(a, w);
    };
    auto a = x;
    relu_forward<double>(a);
    auto g = w;
    relu_backward<double>(a, g);
    CHECK(check_gradient(loss, x, g).max_relative_error < 1e-4);
}

TEST_CASE("softmax cross-entropy") {
    std::vector<double> z{0.0, 0.0};
    std::vector<double> g(2);
    CHECK(softmax_xent<double>(z, 0, g) == doctest::Approx(std::log(2.0)));
    CHECK(softmax_xent<double>(z, 1, g) == doctest::Approx(std::log(2.0)));
    std::vector<double> big{1000.0, -1000.0, 3.0};
    auto p = softmax<double>(big);
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dropout") {
    Rng rng(5);
    std::vector<double> v(5, 2.0);
    CHECK(dropout<double>(v, 0.0, Mode::train, rng).empty());
    CHECK(dropout<double>(v, 0.7, Mode::eval, rng).empty());
    CHECK(v == std::vector<double>(5, 2.0));
    CHECK_THROWS(dropout<double>(v, 1.0, Mode::train, rng));

    std::vector<double> ones(100000, 1.0);
    auto mask = dropout<double>(ones, 0.5, Mode::train, rng);
    double s = 0.0;
    for (double x : ones) s += x;
    const double m = s / 1e5;
    CHECK(m >= 0.99);
    CHECK(m <= 1.01);
    std::vector<double> g(ones.size(), 1.0);
    dropout_backward<double>(mask, g);
    CHECK(g == ones);
}

TEST_CASE("nadam") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        Tensor p({3}, 0.5);
        p.enable_grad();
        std::vector<NamedParam<double>> ps{{"p", &p}};
        NadamState<double> st;
        nadam_step<double>(ps, st);
        CHECK(p.values == std::vector<double>(3, 0.5));
        CHECK(st.t == 1);
    }
    SUBCASE("minimizes x^2") {
        Tensor x({1}, 1.0);
        x.enable_grad();
        std::vector<NamedParam<double>> ps{{"x", &x}};
        NadamState<double> st;
        st.learning_rate = 0.002;
        for (int i = 0; i < 5000; ++i) {
            x.grad[0] = 2.0 * x.values[0];
            nadam_step<double>(ps, st);
        }
        CHECK(std::abs(x.values[0]) < 1e-2);
    }
    SUBCASE("non-finite gradient names the parameter") {
        Tensor w({2}, 0.0);
        w.enable_grad();
        w.grad[1] = std::numeric_limits<double>::quiet_NaN();
        std::vector<NamedParam<double>> ps{{"hidden_w", &w}};
        NadamState<double> st;
        try {
            nadam_step<double>(ps, st);
            FAIL("expected an error");
        } catch (const TrainingError& e) {
            CHECK(std::string(e.what()).find("hidden_w") != std::string::npos);
        }
    }
    SUBCASE("first step matches a hand computation") {
        Tensor x({1}, 1.0);
        x.enable_grad();
        x.grad[0] = 0.5;
        std::vector<NamedParam<double>> ps{{"x", &x}};
        NadamState<double> st;
        nadam_step<double>(ps, st);
        const double m = 0.1 * 0.5;
        const double v = 0.001 * 0.25;
        const double m_hat = 0.9 * m / (1 - 0.81) + 0.1 * 0.5 / 0.1;
        const double v_hat = v / 0.001;
        CHECK(x.values[0] == doctest::Approx(1.0 - 0.002 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-14));
    }
}

TEST_CASE("nadam loss is non-increasing on a convex dense+softmax model") {
    Rng rng(7);
    const std::size_t n = 16;
    const std::size_t d = 5;
    std::vector<std::vector<double>> X;
    std::vector<std::size_t> y;
    for (std::size_t i = 0; i < n; ++i) {
        X.push_back(randn(rng, d));
        y.push_back(X.back()[0] > 0 ? 1 : 0);
    }
    Tensor W({2, d}, 0.0);
    Tensor b({2}, 0.0);
    W.enable_grad();
    b.enable_grad();
    std::vector<NamedParam<double>> ps{{"W", &W}, {"b", &b}};
    NadamState<double> st;
    st.learning_rate = 1e-3;
    auto batch = [&](bool grad) {
        double loss = 0.0;
        if (grad) {
            W.zero_grad();
            b.zero_grad();
        }
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> z(2), gz(2), gx;
            dense_forward<double>(X[i], W.values, b.values, z);
            loss += softmax_xent<double>(z, y[i], gz) / n;
            for (auto& g : gz) g /= n;
            if (grad) dense_backward<double>(X[i], W.values, gz, gx, W.grad, b.grad);
        }
        return loss;
    };
    double prev = batch(true);
    for (int step = 0; step < 10; ++step) {
        nadam_step<double>(ps, st);
        const double now = batch(true);
        CHECK(now <= prev + 1e-15);
        prev = now;
    }
}

TEST_CASE("checkpoint round trip") {
    Checkpoint c;
    c.meta = {{"level", "word"}};
    Tensor t({2, 3});
    for (std::size_t i = 0; i < 6; ++i) t.values[i] = 0.1 * static_cast<double>(i) - 0.2;
    c.tensors.emplace_back("w", t);
    auto bytes = encode_checkpoint(c);
    auto back = decode_checkpoint(bytes);
    CHECK(back.meta["level"] == "word");
    CHECK(back.get("w").shape == t.shape);
    CHECK(back.get("w").values == t.values);
    CHECK(encode_checkpoint(back) == bytes);
    CHECK_THROWS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)));
}

TEST_CASE("float tensors work through the same ops") {
    std::vector<float> x{1.0f, 2.0f};
    std::vector<float> W{1.0f, 1.0f};
    std::vector<float> b{0.5f};
    std::vector<float> y(1);
    dense_forward<float>(x, W, b, y);
    CHECK(y[0] == 3.5f);
}
