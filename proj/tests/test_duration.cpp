#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flowtune/adapters.hpp"
#include "flowtune/train.hpp"

using namespace flowtune;

namespace {

std::unique_ptr<DurationModel> small_duration(uint64_t seed) {
    DurationConfig cfg;
    cfg.vocab_size = 9;
    return std::make_unique<DurationModel>(cfg, seed);
}

}  // namespace

TEST_CASE("prediction length equals symbol count across random cases") {
    auto m = small_duration(4);
    Rng rng(9);
    for (int i = 0; i < 20; ++i) {
        int n = rng.uniform_int(1, 12);
        std::vector<int> symbols;
        for (int j = 0; j < n; ++j) symbols.push_back(rng.uniform_int(0, 8));
        auto out = predict_durations(*m, symbols);
        CHECK(static_cast<int>(out.size()) == n);
        for (int d : out) CHECK(d >= 1);
    }
}

TEST_CASE("raw predictions are clamped to >= 1 and rounded ties-to-even") {
    auto m = small_duration(4);
    for (auto& v : m->head.weight->value.data) v = 0;
    auto with_bias = [&](double b) {
        m->head.bias->value.data[0] = static_cast<real>(b);
        return predict_durations(*m, {0, 3})[0];
    };
    CHECK(with_bias(-3.0) == 1);
    CHECK(with_bias(0.2) == 1);
    CHECK(with_bias(1.5) == 2);
    CHECK(with_bias(2.5) == 2);  // ties-to-even
    CHECK(with_bias(3.5) == 4);
    CHECK(with_bias(4.2) == 4);
}

TEST_CASE("empty symbol sequence is rejected") {
    auto m = small_duration(4);
    CHECK_THROWS_AS(predict_durations(*m, {}), std::invalid_argument);
}

TEST_CASE("duration loss basics") {
    Tape t;
    Var pred = t.constant(Tensor({2, 1}, {3, 5}));
    CHECK(t.val(duration_loss(t, pred, {3, 5})).data[0] == 0.0);
    Tape t2;
    Var p2 = t2.constant(Tensor({1, 1}, {2.0}));
    CHECK(t2.val(duration_loss(t2, p2, {5})).data[0] == 3.0);
    Tape t3;
    Var p3 = t3.constant(Tensor({2, 1}, {1, 2}));
    CHECK_THROWS_AS(duration_loss(t3, p3, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("duration loss matches a plain-loop oracle") {
    Rng rng(3);
    Tensor raw = rng.normal_tensor({6, 1}, 3.0);
    std::vector<int> gold = {2, 6, 3, 4, 5, 2};
    Tape t;
    double got = t.val(duration_loss(t, t.constant(raw), gold)).data[0];
    double want = 0;
    for (int i = 0; i < 6; ++i) want += std::abs(static_cast<double>(raw.at(i, 0)) - gold[static_cast<size_t>(i)]);
    want /= 6;
    CHECK(std::abs(got - want) <= 1e-12);
}

TEST_CASE("L1 loss is invariant under jointly permuting pairs") {
    Tensor raw({4, 1}, {1.2, 5.5, 2.0, 3.3});
    std::vector<int> gold = {1, 6, 2, 3};
    Tensor perm({4, 1}, {3.3, 1.2, 2.0, 5.5});
    std::vector<int> gold_perm = {3, 1, 2, 6};
    Tape t1, t2;
    double a = t1.val(duration_loss(t1, t1.constant(raw), gold)).data[0];
    double b = t2.val(duration_loss(t2, t2.constant(perm), gold_perm)).data[0];
    CHECK(a == doctest::Approx(b).epsilon(1e-15));
}

TEST_CASE("expand_to_alignment repeats embeddings in order") {
    ParameterStore store(2);
    Parameter& emb = store.create("emb", {3, 4}, ParameterStore::Init::normal_002);
    Tape t;
    Var out = expand_to_alignment(t, emb, {0, 2}, {2, 3});
    const Tensor& v = t.val(out);
    REQUIRE(v.rows() == 5);
    for (int r = 0; r < 5; ++r) {
        int sym = r < 2 ? 0 : 2;
        for (int c = 0; c < 4; ++c) CHECK(v.at(r, c) == emb.value.at(sym, c));
    }

    Tape t2;
    CHECK(t2.val(expand_to_alignment(t2, emb, {1}, {1})).rows() == 1);
    Tape t3;
    CHECK_THROWS_AS(expand_to_alignment(t3, emb, {1}, {0}), std::invalid_argument);

    Rng rng(8);
    for (int i = 0; i < 10; ++i) {
        int n = rng.uniform_int(1, 6);
        std::vector<int> symbols, durations;
        int total = 0;
        for (int j = 0; j < n; ++j) {
            symbols.push_back(rng.uniform_int(0, 2));
            durations.push_back(rng.uniform_int(1, 5));
            total += durations.back();
        }
        Tape tp;
        CHECK(tp.val(expand_to_alignment(tp, emb, symbols, durations)).rows() == total);
    }
}

TEST_CASE("duration training reduces L1 on a learnable mapping") {
    auto m = small_duration(6);
    Adam opt(AdamConfig{1e-3, 0.9, 0.98, 1e-8, 30});
    Rng rng(5);
    // symbol s always lasts 2 + (s % 5) frames: learnable lookup
    std::vector<DurationExample> pool;
    for (int s0 = 0; s0 < 8; ++s0) {
        for (int s1 = 0; s1 < 8; ++s1) {
            if (s0 == s1) continue;
            DurationExample ex;
            ex.symbols = {s0, s1};
            ex.gold = {2 + (s0 % 5), 2 + (s1 % 5)};
            pool.push_back(std::move(ex));
        }
    }
    double first = 0, last = 0;
    for (int step = 0; step < 400; ++step) {
        std::vector<DurationExample> batch;
        for (int i = 0; i < 8; ++i) {
            batch.push_back(pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))]);
        }
        double loss = duration_train_step(*m, batch, opt, rng);
        if (step == 0) first = loss;
        if (step == 399) last = loss;
    }
    CHECK(last < 0.35 * first);
}

TEST_CASE("duration model rejects condition tokens without adapters") {
    auto m = small_duration(4);
    std::vector<int> tokens = {0};
    CHECK_THROWS_AS(predict_durations(*m, {1, 2}, &tokens), std::invalid_argument);
}
