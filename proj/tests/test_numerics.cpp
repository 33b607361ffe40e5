#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flowtune/grad_check.hpp"
#include "flowtune/rng.hpp"
#include "flowtune/tape.hpp"
#include "support/random_graphs.hpp"

using namespace flowtune;

TEST_CASE("sum of squares: value and gradient") {
    TapeFn f = [](Tape& t, std::span<const Var> p) { return t.sum(t.mul(p[0], p[0])); };
    auto [val, grads] = evaluate_with_gradients(f, {Tensor({2}, {1, 2})});
    CHECK(val == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(grads[0].data[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(grads[0].data[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("sum gradient is all ones for any shape") {
    TapeFn f = [](Tape& t, std::span<const Var> p) { return t.sum(p[0]); };
    for (auto shape : {std::vector<int>{3}, {2, 5}, {1, 1}}) {
        Rng rng(7);
        auto [val, grads] = evaluate_with_gradients(f, {rng.normal_tensor(shape)});
        (void)val;
        for (real g : grads[0].data) CHECK(g == 1.0);
    }
}

TEST_CASE("random 3-layer MLP matches finite differences") {
    Rng rng(11);
    std::vector<Tensor> params = {
        rng.normal_tensor({1, 4}, 0.8),  // input treated as a parameter
        rng.normal_tensor({8, 4}, 0.5),  rng.normal_tensor({8}, 0.1),
        rng.normal_tensor({8, 8}, 0.4),  rng.normal_tensor({8}, 0.1),
        rng.normal_tensor({2, 8}, 0.5),  rng.normal_tensor({2}, 0.1),
    };
    TapeFn f = [](Tape& t, std::span<const Var> p) {
        Var h = t.relu(t.add(t.matmul_nt(p[0], p[1]), p[2]));
        h = t.relu(t.add(t.matmul_nt(h, p[3]), p[4]));
        h = t.add(t.matmul_nt(h, p[5]), p[6]);
        return t.mean(h);
    };
    auto [val, ad] = evaluate_with_gradients(f, params);
    (void)val;
    auto fd = finite_difference_gradients(f, params, 1e-6);
    for (size_t i = 0; i < params.size(); ++i) {
        CHECK(testsupport::grad_rel_err(ad[i], fd[i]) <= 1e-5);
    }
}

TEST_CASE("finite differences: x^2 at 3 gives 6") {
    TapeFn f = [](Tape& t, std::span<const Var> p) { return t.sum(t.mul(p[0], p[0])); };
    auto fd = finite_difference_gradients(f, {Tensor::scalar(3.0)}, 1e-6);
    CHECK(std::abs(static_cast<double>(fd[0].data[0]) - 6.0) <= 1e-6);
}

TEST_CASE("finite differences: constant function gives zeros") {
    TapeFn f = [](Tape& t, std::span<const Var> p) {
        (void)p;
        return t.constant(Tensor::scalar(4.25));
    };
    auto fd = finite_difference_gradients(f, {Tensor({3}, {1, 2, 3})}, 1e-6);
    for (real g : fd[0].data) CHECK(g == 0.0);
}

TEST_CASE("finite differences rejects non-positive step") {
    TapeFn f = [](Tape& t, std::span<const Var> p) { return t.sum(p[0]); };
    CHECK_THROWS_AS(finite_difference_gradients(f, {Tensor::scalar(1)}, 0.0), std::invalid_argument);
}

TEST_CASE("gradient accumulation: two uses equal the sum of single uses") {
    Tensor x({2, 2}, {1, -2, 3, 0.5});
    Tensor w({2, 2}, {0.3, 0.1, -0.4, 0.8});
    TapeFn both = [](Tape& t, std::span<const Var> p) {
        // p[0] used twice: once on each side of a matmul
        return t.sum(t.add(t.matmul(p[0], p[1]), t.matmul(p[1], p[0])));
    };
    TapeFn left = [](Tape& t, std::span<const Var> p) { return t.sum(t.matmul(p[0], p[1])); };
    TapeFn right = [](Tape& t, std::span<const Var> p) { return t.sum(t.matmul(p[1], p[0])); };
    auto gb = evaluate_with_gradients(both, {x, w}).second;
    auto gl = evaluate_with_gradients(left, {x, w}).second;
    auto gr = evaluate_with_gradients(right, {x, w}).second;
    for (size_t i = 0; i < gb[0].data.size(); ++i) {
        CHECK(gb[0].data[i] == gl[0].data[i] + gr[0].data[i]);  // exact, same op order
    }
}

TEST_CASE("parameters disconnected from the loss get exact zero gradients") {
    TapeFn f = [](Tape& t, std::span<const Var> p) { return t.sum(p[0]); };
    auto [val, grads] = evaluate_with_gradients(f, {Tensor::scalar(2), Tensor({2, 3}, {1, 2, 3, 4, 5, 6})});
    (void)val;
    for (real g : grads[1].data) CHECK(g == 0.0);
}

TEST_CASE("shape mismatch is rejected with the op identified") {
    Tape t;
    Var a = t.leaf(Tensor::zeros({2, 3}), true);
    Var b = t.leaf(Tensor::zeros({4}), true);
    CHECK_THROWS_WITH_AS(t.add(a, b), doctest::Contains("add"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(t.matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
    Var c = t.leaf(Tensor::zeros({3, 3}), true);
    CHECK_THROWS_WITH_AS(t.mul(a, c), doctest::Contains("mul"), std::invalid_argument);
}

TEST_CASE("randomized primitive compositions match finite differences") {
    for (int i = 0; i < 12; ++i) {
        Rng rng(derive_seed(123, static_cast<uint64_t>(i)));
        auto params = testsupport::random_graph_params(rng);
        TapeFn f = testsupport::make_random_graph(i);
        auto ad = evaluate_with_gradients(f, params).second;
        auto fd = finite_difference_gradients(f, params, 1e-6);
        for (size_t j = 0; j < params.size(); ++j) {
            INFO("composition ", i, " param ", j);
            CHECK(testsupport::grad_rel_err(ad[j], fd[j]) <= 1e-5);
        }
    }
}

TEST_CASE("rng: identical seeds give identical sequences") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    Rng c(42), d(42);
    for (int i = 0; i < 100; ++i) CHECK(c.normal() == d.normal());
}

TEST_CASE("rng: distinct seeds differ within the first draws") {
    Rng a(1), b(2);
    bool any_diff = false;
    for (int i = 0; i < 10; ++i) {
        if (a.next_u64() != b.next_u64()) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("rng: 1e5 standard normal draws have the right moments") {
    Rng rng(2024);
    const int n = 100000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    CHECK(std::abs(mean) <= 0.02);
    CHECK(std::abs(var - 1.0) <= 0.03);
}

TEST_CASE("tape rejects vars from another tape") {
    Tape t1, t2;
    Var a = t1.leaf(Tensor::scalar(1), false);
    Var b = t2.leaf(Tensor::scalar(2), false);
    CHECK_THROWS_AS(t1.add(a, b), std::invalid_argument);
}
