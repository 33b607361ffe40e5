#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "flowtune/synthetic.hpp"

using namespace flowtune;
namespace fs = std::filesystem;

namespace {

TaskSpec spec_for(TaskKind task) {
    TaskSpec s;
    s.task = task;
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("corpus generation is a pure function of (spec, n, seed)") {
    TaskSpec spec = spec_for(TaskKind::emphasis);
    Dataset a = generate_corpus(spec, 20, 42);
    Dataset b = generate_corpus(spec, 20, 42);
    REQUIRE(a.utterances.size() == b.utterances.size());
    for (size_t i = 0; i < a.utterances.size(); ++i) {
        CHECK(a.utterances[i].symbols == b.utterances[i].symbols);
        CHECK(a.utterances[i].z_f == b.utterances[i].z_f);
        CHECK(a.utterances[i].features.data == b.utterances[i].features.data);
    }
    CHECK(a.train_ids == b.train_ids);
    CHECK(a.heldout_ids == b.heldout_ids);
    Dataset c = generate_corpus(spec, 20, 43);
    bool differs = false;
    for (size_t i = 0; i < a.utterances.size(); ++i) {
        if (a.utterances[i].features.data != c.utterances[i].features.data) differs = true;
    }
    CHECK(differs);
}

TEST_CASE("annotation rate 0 yields no annotations") {
    TaskSpec spec = spec_for(TaskKind::pause);
    spec.annotation_rate = 0;
    Dataset ds = generate_corpus(spec, 30, 7);
    for (const auto& u : ds.utterances) CHECK(u.annotations.empty());
}

TEST_CASE("annotated-utterance fraction matches the enumeration expectation") {
    TaskSpec spec = spec_for(TaskKind::emphasis);
    spec.annotation_rate = 0.5;
    Dataset ds = generate_corpus(spec, 1000, 11);
    int with = 0;
    for (const auto& u : ds.utterances) with += u.annotations.empty() ? 0 : 1;
    double frac = static_cast<double>(with) / 1000.0;
    // exact expectation: lengths uniform on {3..6}, symbols annotated independently
    double expected = 0;
    for (int len = spec.min_symbols; len <= spec.max_symbols; ++len) {
        expected += 1.0 - std::pow(1.0 - spec.annotation_rate, len);
    }
    expected /= (spec.max_symbols - spec.min_symbols + 1);
    CHECK(frac == doctest::Approx(expected).epsilon(0.05));
    CHECK(frac >= 0.4);
    CHECK(frac <= 0.95);
}

TEST_CASE("zero-noise unannotated render is the exact concatenation of base patterns") {
    TaskSpec spec = spec_for(TaskKind::emphasis);
    Tensor patterns = base_patterns(spec);
    Utterance u;
    u.symbols = {4, 1, 9};
    for (int s : u.symbols) u.durations.push_back(symbol_duration(s));
    Rng rng(1);
    Tensor f = render_features(u, spec, rng, 0.0);
    int r = 0;
    for (size_t i = 0; i < u.symbols.size(); ++i) {
        for (int d = 0; d < u.durations[i]; ++d, ++r) {
            for (int c = 0; c < spec.feature_dim; ++c) CHECK(f.at(r, c) == patterns.at(u.symbols[i], c));
        }
    }
    CHECK(r == f.rows());
}

TEST_CASE("emphasis scales frame energy by exactly k at zero noise") {
    TaskSpec spec = spec_for(TaskKind::emphasis);
    Utterance plain, emph;
    plain.symbols = emph.symbols = {2, 5};
    plain.durations = emph.durations = {symbol_duration(2), symbol_duration(5)};
    emph.annotations = {{1, TaskKind::emphasis, 0}};
    Rng r1(1), r2(1);
    Tensor fp = render_features(plain, spec, r1, 0.0);
    Tensor fe = render_features(emph, spec, r2, 0.0);
    int start = plain.durations[0];
    for (int r = start; r < fp.rows(); ++r) {
        double ep = 0, ee = 0;
        for (int c = 0; c < spec.feature_dim; ++c) {
            ep += fp.at(r, c) * fp.at(r, c);
            ee += fe.at(r, c) * fe.at(r, c);
        }
        CHECK(ee == doctest::Approx(spec.energy_scale * ep).epsilon(1e-12));
    }
}

TEST_CASE("pause insertions fall in the declared range and below the silence threshold") {
    TaskSpec spec = spec_for(TaskKind::pause);
    spec.annotation_rate = 1.0;
    for (int seed = 0; seed < 100; ++seed) {
        Dataset ds = generate_corpus(spec, 1, static_cast<uint64_t>(seed));
        const Utterance& u = ds.utterances[0];
        REQUIRE(!u.annotations.empty());
        int base = 0;
        for (int d : u.durations) base += d;
        int inserted = u.features.rows() - base;
        int expected = 0;
        for (const auto& a : u.annotations) {
            CHECK(a.inserted_len >= spec.pause_len_min);
            CHECK(a.inserted_len <= spec.pause_len_max);
            expected += a.inserted_len;
        }
        CHECK(inserted == expected);
        // inserted rows are near-silent
        auto align = attributed_durations(u);
        int r0 = 0;
        for (size_t i = 0; i < u.symbols.size(); ++i) {
            int span = align[i];
            int silent_from = r0 + u.durations[i];
            for (int r = silent_from; r < r0 + span; ++r) {
                double e = 0;
                for (int c = 0; c < spec.feature_dim; ++c) e += u.features.at(r, c) * u.features.at(r, c);
                CHECK(e / spec.feature_dim < 0.1);
            }
            r0 += span;
        }
    }
}

TEST_CASE("detector reproduces gold annotations exactly on clean renders, all tasks") {
    for (TaskKind task : {TaskKind::emphasis, TaskKind::pause, TaskKind::burst}) {
        TaskSpec spec = spec_for(task);
        spec.noise_sigma = 0.0;
        Dataset ds = generate_corpus(spec, 40, 5);
        for (const auto& u : ds.utterances) {
            auto detected = detect_annotations(u.features, u.symbols, attributed_durations(u), spec);
            REQUIRE(detected.size() == u.annotations.size());
            for (size_t i = 0; i < detected.size(); ++i) {
                CHECK(detected[i].position == u.annotations[i].position);
                CHECK(detected[i].type == u.annotations[i].type);
            }
        }
    }
}

TEST_CASE("all-silent features trigger no emphasis or burst detections") {
    for (TaskKind task : {TaskKind::emphasis, TaskKind::burst}) {
        TaskSpec spec = spec_for(task);
        Tensor silent = Tensor::zeros({10, spec.feature_dim});
        auto out = detect_annotations(silent, {0, 1}, {5, 5}, spec);
        CHECK(out.empty());
    }
}

TEST_CASE("detector F1 on noisy renders is at least 0.95 per task") {
    for (TaskKind task : {TaskKind::emphasis, TaskKind::pause, TaskKind::burst}) {
        TaskSpec spec = spec_for(task);  // sigma = 0.05
        Dataset ds = generate_corpus(spec, 500, 21);
        std::vector<std::vector<Annotation>> pred, gold;
        for (const auto& u : ds.utterances) {
            pred.push_back(detect_annotations(u.features, u.symbols, attributed_durations(u), spec));
            gold.push_back(u.annotations);
        }
        F1Report rep = f1_micro(pred, gold, {task});
        INFO("task ", task_kind_name(task));
        CHECK(rep.micro_f1 >= 0.95);
    }
}

TEST_CASE("f1 formula cases") {
    std::vector<std::vector<Annotation>> gold = {{{0, TaskKind::emphasis, 0}, {2, TaskKind::emphasis, 0}}};
    F1Report same = f1_micro(gold, gold, {TaskKind::emphasis});
    CHECK(same.micro_f1 == 1.0);

    std::vector<std::vector<Annotation>> disjoint = {{{1, TaskKind::emphasis, 0}, {3, TaskKind::emphasis, 0}}};
    CHECK(f1_micro(disjoint, gold, {TaskKind::emphasis}).micro_f1 == 0.0);

    // TP=1 (pos 0), FP=1 (pos 3), FN=1 (pos 2)
    std::vector<std::vector<Annotation>> mixed = {{{0, TaskKind::emphasis, 0}, {3, TaskKind::emphasis, 0}}};
    F1Report rep = f1_micro(mixed, gold, {TaskKind::emphasis});
    CHECK(rep.micro_precision == 0.5);
    CHECK(rep.micro_recall == 0.5);
    CHECK(rep.micro_f1 == 0.5);

    std::vector<std::vector<Annotation>> empty = {{}};
    CHECK(f1_micro(empty, empty, {TaskKind::emphasis}).micro_f1 == 1.0);
}

TEST_CASE("z_f serialization round-trips positions and types") {
    for (TaskKind task : {TaskKind::emphasis, TaskKind::pause, TaskKind::burst}) {
        TaskSpec spec = spec_for(task);
        Dataset ds = generate_corpus(spec, 50, 33);
        for (const auto& u : ds.utterances) {
            std::vector<int> symbols;
            std::vector<Annotation> anns;
            parse_z_f(u.z_f, &symbols, &anns);
            CHECK(symbols == u.symbols);
            REQUIRE(anns.size() == u.annotations.size());
            for (size_t i = 0; i < anns.size(); ++i) {
                CHECK(anns[i].position == u.annotations[i].position);
                CHECK(anns[i].type == u.annotations[i].type);
            }
        }
    }
}

TEST_CASE("feature files round-trip bit-exactly") {
    fs::path dir = fs::temp_directory_path() / "flowtune_feat_test";
    fs::create_directories(dir);
    Rng rng(9);
    Tensor f = rng.normal_tensor({7, 5});
    std::string p1 = (dir / "a.bin").string();
    std::string p2 = (dir / "b.bin").string();
    write_feature_file(p1, f);
    Tensor loaded = read_feature_file(p1);
    write_feature_file(p2, loaded);
    CHECK(slurp(p1) == slurp(p2));
    CHECK(loaded.shape == f.shape);
    // f64 -> f32 -> f64 -> f32 is stable after the first write
    Tensor again = read_feature_file(p2);
    CHECK(again.data == loaded.data);
}

TEST_CASE("dataset save/load round-trips and re-save is byte-identical") {
    TaskSpec spec = spec_for(TaskKind::pause);
    Dataset ds = generate_corpus(spec, 12, 3);
    fs::path d1 = fs::temp_directory_path() / "flowtune_ds1";
    fs::path d2 = fs::temp_directory_path() / "flowtune_ds2";
    fs::remove_all(d1);
    fs::remove_all(d2);
    save_dataset(d1.string(), ds);
    Dataset loaded = load_dataset(d1.string());
    CHECK(loaded.utterances.size() == ds.utterances.size());
    CHECK(loaded.train_ids == ds.train_ids);
    CHECK(loaded.heldout_ids == ds.heldout_ids);
    CHECK(loaded.spec.task == ds.spec.task);
    for (size_t i = 0; i < ds.utterances.size(); ++i) {
        CHECK(loaded.utterances[i].symbols == ds.utterances[i].symbols);
        CHECK(loaded.utterances[i].durations == ds.utterances[i].durations);
        CHECK(loaded.utterances[i].z_f == ds.utterances[i].z_f);
        CHECK(loaded.utterances[i].annotations == ds.utterances[i].annotations);
    }
    save_dataset(d2.string(), loaded);
    CHECK(slurp(d1 / "manifest.jsonl") == slurp(d2 / "manifest.jsonl"));
    CHECK(slurp(d1 / "spec.json") == slurp(d2 / "spec.json"));
    for (const auto& u : ds.utterances) {
        char name[32];
        std::snprintf(name, sizeof(name), "features/utt_%06d.bin", u.id);
        CHECK(slurp(d1 / name) == slurp(d2 / name));
    }
}

TEST_CASE("toy corpus is balanced and deterministic") {
    Dataset a = toy2_corpus(40, 9);
    Dataset b = toy2_corpus(40, 9);
    int plus = 0;
    for (size_t i = 0; i < a.utterances.size(); ++i) {
        CHECK(a.utterances[i].features.data == b.utterances[i].features.data);
        double mean = 0;
        for (real v : a.utterances[i].features.data) mean += v;
        plus += mean > 0 ? 1 : 0;
    }
    CHECK(plus == 20);
}

TEST_CASE("detector validates the alignment against the feature length") {
    TaskSpec spec = spec_for(TaskKind::emphasis);
    Tensor f = Tensor::zeros({5, spec.feature_dim});
    CHECK_THROWS_AS(detect_annotations(f, {0, 1}, {2, 2}, spec), std::invalid_argument);
}
