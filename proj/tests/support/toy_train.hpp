#pragma once

// Small shared fixture: desk backbone pretrained briefly on the two-mode toy
// corpus. Enough training to make solver/consistency tests meaningful.

#include <memory>

#include "flowtune/flow.hpp"
#include "flowtune/model.hpp"
#include "flowtune/synthetic.hpp"
#include "flowtune/train.hpp"

namespace flowtune::testsupport {

inline TrainingExample example_from(const Utterance& utt) {
    TrainingExample ex;
    ex.x1 = utt.features;
    ex.frame_symbols = expand_symbol_ids(utt.symbols, attributed_durations(utt));
    ex.mask = MaskSpec{MaskMode::span, -1, -1};
    return ex;
}

struct ToyFixture {
    Dataset corpus;
    std::unique_ptr<VectorFieldModel> model;
};

inline ToyFixture train_toy_model(int steps, uint64_t seed = 11, int n_utts = 64, int batch = 8) {
    ToyFixture fx;
    fx.corpus = toy2_corpus(n_utts, seed);
    BackboneConfig cfg;
    cfg.vocab_size = fx.corpus.spec.model_vocab();
    fx.model = std::make_unique<VectorFieldModel>(cfg, derive_seed(seed, 1));

    std::vector<TrainingExample> examples;
    for (int id : fx.corpus.train_ids) examples.push_back(example_from(fx.corpus.utterances[static_cast<size_t>(id)]));

    AdamConfig ac;
    ac.warmup_steps = 100;
    Adam opt(ac);
    Rng rng(derive_seed(seed, 2));
    TrainOptions options;
    for (int s = 0; s < steps; ++s) {
        std::vector<TrainingExample> b;
        for (int i = 0; i < batch; ++i) {
            b.push_back(examples[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(examples.size()) - 1))]);
        }
        pretrain_step(*fx.model, b, opt, rng, options);
    }
    return fx;
}

}  // namespace flowtune::testsupport
