#include "flowtune/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "flowtune/train.hpp"
#include "json_util.hpp"

namespace fs = std::filesystem;

namespace flowtune {

namespace {

using Clock = std::chrono::steady_clock;

std::string hex64(uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string sanitize_id(const std::string& id) {
    std::string out;
    for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) != 0) ? c : '_';
    return out.empty() ? "request" : out;
}

class Telemetry {
public:
    explicit Telemetry(const std::string& path) : os_(path, std::ios::app), start_(Clock::now()) {
        if (!os_) throw std::runtime_error("telemetry: cannot open " + path);
    }
    void step(int64_t step, double loss, int64_t trainable) {
        json j{{"step", step},
               {"loss", loss},
               {"wall_ms", wall_ms()},
               {"trainable_params", trainable}};
        os_ << j.dump() << "\n";
        os_.flush();
    }
    void note(const json& j) {
        os_ << j.dump() << "\n";
        os_.flush();
    }

private:
    double wall_ms() { return std::chrono::duration<double, std::milli>(Clock::now() - start_).count(); }
    std::ofstream os_;
    Clock::time_point start_;
};

void ensure_run_dir(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(fs::path(out_dir) / "checkpoints");
    save_config((fs::path(out_dir) / "config.json").string(), cfg);
    std::ofstream fp(fs::path(out_dir) / "fingerprint.txt");
    fp << hex64(cfg.fingerprint()) << "\n";
}

std::vector<const Utterance*> train_subset(const Dataset& ds, double fraction, Telemetry* tel) {
    size_t total = ds.train_ids.size();
    size_t used = static_cast<size_t>(std::ceil(fraction * static_cast<double>(total)));
    if (used < 1) used = 1;
    if (used > total) used = total;
    if (tel != nullptr) {
        tel->note(json{{"type", "data_fraction"},
                       {"fraction", fraction},
                       {"used", used},
                       {"total", total}});
    }
    std::vector<const Utterance*> out;
    for (size_t i = 0; i < used; ++i) {
        out.push_back(&ds.utterances[static_cast<size_t>(ds.train_ids[i])]);
    }
    return out;
}

json request_to_json(const Request& r) {
    json j{{"id", r.id},       {"symbols", r.symbols}, {"durations", r.durations},
           {"annotations", json::array()}, {"use_z_f", r.use_z_f}, {"seed", r.seed}};
    for (const Annotation& a : r.annotations) {
        j["annotations"].push_back(json{{"position", a.position},
                                        {"type", task_kind_name(a.type)},
                                        {"inserted_len", a.inserted_len}});
    }
    if (!r.pair_id.empty()) j["pair_id"] = r.pair_id;
    if (!r.prompt_file.empty()) {
        j["prompt_file"] = r.prompt_file;
        j["prompt_frames"] = r.prompt_frames;
    }
    return j;
}

Request request_from_json(const json& j) {
    check_keys(j, "request",
               {"id", "symbols", "durations", "annotations", "use_z_f", "seed", "pair_id",
                "prompt_file", "prompt_frames"});
    Request r;
    r.id = j.at("id").get<std::string>();
    r.symbols = j.at("symbols").get<std::vector<int>>();
    if (j.contains("durations")) r.durations = j.at("durations").get<std::vector<int>>();
    if (j.contains("annotations")) {
        for (const json& a : j.at("annotations")) {
            r.annotations.push_back(Annotation{a.at("position").get<int>(),
                                               task_kind_from(a.at("type").get<std::string>()),
                                               a.value("inserted_len", 0)});
        }
    }
    maybe_get(j, "use_z_f", r.use_z_f);
    maybe_get(j, "seed", r.seed);
    if (j.contains("pair_id")) r.pair_id = j.at("pair_id").get<std::string>();
    if (j.contains("prompt_file")) r.prompt_file = j.at("prompt_file").get<std::string>();
    maybe_get(j, "prompt_frames", r.prompt_frames);
    return r;
}

double span_mean_energy(const Tensor& features, const std::vector<int>& alignment, int position) {
    int r0 = 0;
    for (int i = 0; i < position; ++i) r0 += alignment[static_cast<size_t>(i)];
    int span = alignment[static_cast<size_t>(position)];
    double acc = 0;
    for (int r = r0; r < r0 + span; ++r) {
        double e = 0;
        for (int c = 0; c < features.cols(); ++c) {
            e += static_cast<double>(features.at(r, c)) * features.at(r, c);
        }
        acc += e / features.cols();
    }
    return acc / span;
}

}  // namespace

// ---------------------------------------------------------------------------
// data plumbing

Dataset corpus_for(const RunConfig& cfg) {
    if (cfg.corpus.kind == CorpusKind::toy2) {
        return toy2_corpus(cfg.corpus.n_utterances, cfg.seeds.corpus, cfg.corpus.toy_feature_dim,
                           cfg.corpus.toy_frames, cfg.corpus.toy_mode_center,
                           cfg.corpus.toy_noise_sigma);
    }
    return generate_corpus(cfg.corpus.task, cfg.corpus.n_utterances, cfg.seeds.corpus);
}

TrainingExample acoustic_example(const Utterance& utt, const CondVocab* vocab) {
    TrainingExample ex;
    ex.x1 = utt.features;
    ex.frame_symbols = expand_symbol_ids(utt.symbols, attributed_durations(utt));
    if (vocab != nullptr) ex.cond_tokens = vocab->encode(utt.z_f);
    ex.mask = MaskSpec{MaskMode::span, -1, -1};
    return ex;
}

DurationExample duration_example(const Utterance& utt, const CondVocab* vocab) {
    DurationExample ex;
    ex.symbols = utt.symbols;
    ex.gold = attributed_durations(utt);
    if (vocab != nullptr) ex.cond_tokens = vocab->encode(utt.z_f);
    return ex;
}

std::unique_ptr<VectorFieldModel> build_acoustic(const RunConfig& cfg) {
    auto model = std::make_unique<VectorFieldModel>(cfg.backbone, cfg.seeds.model);
    if (cfg.adapter.has_value()) inject_adapters(*model, *cfg.adapter);
    return model;
}

std::unique_ptr<DurationModel> build_duration(const RunConfig& cfg) {
    auto model = std::make_unique<DurationModel>(cfg.duration, derive_seed(cfg.seeds.model, 2));
    if (cfg.adapter.has_value()) inject_adapters(*model, *cfg.adapter);
    return model;
}

// ---------------------------------------------------------------------------
// requests

void write_request_file(const std::string& path, const std::vector<Request>& requests) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_request_file: cannot open " + path);
    for (const Request& r : requests) os << request_to_json(r).dump() << "\n";
}

std::vector<Request> read_request_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_request_file: cannot open " + path);
    std::vector<Request> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(request_from_json(json::parse(line)));
    }
    return out;
}

std::vector<Request> requests_from_heldout(const Dataset& ds, int max_requests, bool use_z_f,
                                           bool paired, uint64_t seed_base) {
    std::vector<const Utterance*> pool;
    for (int id : ds.heldout_ids) {
        const Utterance& u = ds.utterances[static_cast<size_t>(id)];
        if (paired && u.annotations.empty()) continue;
        pool.push_back(&u);
    }
    if (pool.empty()) throw std::runtime_error("requests_from_heldout: no usable held-out utterances");
    std::vector<Request> out;
    for (int i = 0; i < max_requests; ++i) {
        const Utterance& u = *pool[static_cast<size_t>(i) % pool.size()];
        uint64_t seed = derive_seed(seed_base, static_cast<uint64_t>(i));
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "r%04d", i);
        if (!paired) {
            Request r;
            r.id = idbuf;
            r.symbols = u.symbols;
            r.durations = attributed_durations(u);
            r.annotations = u.annotations;
            r.use_z_f = use_z_f;
            r.seed = seed;
            out.push_back(std::move(r));
        } else {
            // single-annotation contrast pair sharing the seed
            Utterance annotated = u;
            annotated.annotations = {u.annotations.front()};
            Request a;
            a.id = std::string(idbuf) + "_a";
            a.symbols = annotated.symbols;
            a.durations = attributed_durations(annotated);
            a.annotations = annotated.annotations;
            a.use_z_f = use_z_f;
            a.seed = seed;
            a.pair_id = idbuf;
            Request b = a;
            b.id = std::string(idbuf) + "_b";
            b.annotations.clear();
            Utterance plain = u;
            plain.annotations.clear();
            b.durations = attributed_durations(plain);
            out.push_back(std::move(a));
            out.push_back(std::move(b));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// runs

void run_corpus(const RunConfig& cfg, const std::string& out_dir) {
    Dataset ds = corpus_for(cfg);
    fs::create_directories(out_dir);
    save_config((fs::path(out_dir) / "config.json").string(), cfg);
    save_dataset(out_dir, ds);
}

void run_pretrain(const RunConfig& cfg, const std::string& out_dir) {
    if (cfg.adapter.has_value()) {
        throw std::invalid_argument("run_pretrain: config must not carry an adapter spec");
    }
    ensure_run_dir(cfg, out_dir);
    Dataset ds = corpus_for(cfg);
    uint64_t fp = cfg.fingerprint();

    VectorFieldModel model(cfg.backbone, cfg.seeds.model);
    std::vector<TrainingExample> examples;
    for (int id : ds.train_ids) {
        examples.push_back(acoustic_example(ds.utterances[static_cast<size_t>(id)], nullptr));
    }

    Telemetry tel((fs::path(out_dir) / "telemetry.jsonl").string());
    Adam opt(cfg.optimizer);
    Rng rng(cfg.seeds.train);
    TrainOptions options = cfg.train_options();
    int64_t trainable = model.store.trainable_count();
    fs::path ckdir = fs::path(out_dir) / "checkpoints";

    for (int s = 0; s < cfg.training.steps; ++s) {
        std::vector<TrainingExample> batch;
        for (int b = 0; b < cfg.training.batch_size; ++b) {
            batch.push_back(examples[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(examples.size()) - 1))]);
        }
        double loss = pretrain_step(model, batch, opt, rng, options);
        tel.step(s, loss, trainable);
        if (cfg.training.checkpoint_every > 0 && (s + 1) % cfg.training.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "step_%06d.ckpt", s + 1);
            save_checkpoint((ckdir / name).string(), model.store, fp, static_cast<uint64_t>(s + 1));
        }
    }
    save_checkpoint((ckdir / "final.ckpt").string(), model.store, fp,
                    static_cast<uint64_t>(cfg.training.steps));

    // duration model, gold durations, no z_f
    int dsteps = cfg.training.steps * cfg.training.duration_pretrain_factor_pct / 100;
    DurationModel dur(cfg.duration, derive_seed(cfg.seeds.model, 2));
    std::vector<DurationExample> dexamples;
    for (int id : ds.train_ids) {
        dexamples.push_back(duration_example(ds.utterances[static_cast<size_t>(id)], nullptr));
    }
    Telemetry dtel((fs::path(out_dir) / "duration_telemetry.jsonl").string());
    Adam dopt(cfg.optimizer);
    Rng drng(derive_seed(cfg.seeds.train, 0xD));
    int64_t dtrainable = dur.store.trainable_count();
    for (int s = 0; s < dsteps; ++s) {
        std::vector<DurationExample> batch;
        for (int b = 0; b < cfg.training.batch_size; ++b) {
            batch.push_back(dexamples[static_cast<size_t>(drng.uniform_int(0, static_cast<int>(dexamples.size()) - 1))]);
        }
        double loss = duration_train_step(dur, batch, dopt, drng);
        dtel.step(s, loss, dtrainable);
    }
    save_checkpoint((ckdir / "duration_final.ckpt").string(), dur.store, fp,
                    static_cast<uint64_t>(dsteps));
}

namespace {

void write_partition_report(const std::string& out_dir, const ParameterPartition& part,
                            const AdaptiveCounts& counts) {
    json j{{"trainable_params", part.trainable_count},
           {"frozen_params", part.frozen_count},
           {"adaptive_params", part.adaptive_count},
           {"conditioning_params", part.conditioning_count},
           {"adaptive_enumerated", counts.adaptive_new},
           {"ln_reclassified", counts.ln_reclassified}};
    std::ofstream os(fs::path(out_dir) / "partition.json");
    os << j.dump(2) << "\n";
}

}  // namespace

void run_finetune(const RunConfig& cfg, const std::string& base_ckpt,
                  const std::string& base_duration_ckpt, const std::string& out_dir,
                  bool override_fingerprint) {
    if (!cfg.adapter.has_value()) {
        throw std::invalid_argument("run_finetune: config carries no adapter spec");
    }
    ensure_run_dir(cfg, out_dir);
    Dataset ds = corpus_for(cfg);
    uint64_t fp = cfg.fingerprint();
    Telemetry tel((fs::path(out_dir) / "telemetry.jsonl").string());

    VectorFieldModel model(cfg.backbone, cfg.seeds.model);
    load_checkpoint(base_ckpt, model.store, fp, override_fingerprint);
    const ParameterPartition& part = inject_adapters(model, *cfg.adapter);

    auto used = train_subset(ds, cfg.training.data_fraction, &tel);
    std::vector<std::string> cond_strings;
    for (const Utterance* u : used) cond_strings.push_back(u->z_f);
    fit_condition_encoder(*model.adapters, model.store, cond_strings, cfg.training.cond_fit_steps,
                          cfg.training.cond_fit_lr, derive_seed(cfg.seeds.train, 101));

    write_partition_report(out_dir, part, count_adaptive_enumerated(model.store));

    const CondVocab& vocab = model.adapters->cond.vocab;
    std::vector<TrainingExample> examples;
    for (const Utterance* u : used) examples.push_back(acoustic_example(*u, &vocab));

    Adam opt(cfg.optimizer);
    Rng rng(cfg.seeds.train);
    TrainOptions options = cfg.train_options();
    int64_t trainable = model.store.trainable_count();
    fs::path ckdir = fs::path(out_dir) / "checkpoints";

    for (int s = 0; s < cfg.training.steps; ++s) {
        std::vector<TrainingExample> batch;
        for (int b = 0; b < cfg.training.batch_size; ++b) {
            batch.push_back(examples[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(examples.size()) - 1))]);
        }
        double loss = finetune_step(model, batch, opt, rng, options);
        tel.step(s, loss, trainable);
        if (cfg.training.checkpoint_every > 0 && (s + 1) % cfg.training.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "step_%06d.ckpt", s + 1);
            save_checkpoint((ckdir / name).string(), model.store, fp, static_cast<uint64_t>(s + 1));
        }
    }
    save_checkpoint((ckdir / "final.ckpt").string(), model.store, fp,
                    static_cast<uint64_t>(cfg.training.steps));

    if (!base_duration_ckpt.empty()) {
        DurationModel dur(cfg.duration, derive_seed(cfg.seeds.model, 2));
        load_checkpoint(base_duration_ckpt, dur.store, fp, override_fingerprint);
        inject_adapters(dur, *cfg.adapter);
        fit_condition_encoder(*dur.adapters, dur.store, cond_strings, cfg.training.cond_fit_steps,
                              cfg.training.cond_fit_lr, derive_seed(cfg.seeds.train, 102));
        std::vector<DurationExample> dexamples;
        for (const Utterance* u : used) dexamples.push_back(duration_example(*u, &dur.adapters->cond.vocab));
        int dsteps = cfg.training.steps * cfg.training.duration_finetune_factor_pct / 100;
        Telemetry dtel((fs::path(out_dir) / "duration_telemetry.jsonl").string());
        Adam dopt(cfg.optimizer);
        Rng drng(derive_seed(cfg.seeds.train, 0xD));
        int64_t dtrainable = dur.store.trainable_count();
        for (int s = 0; s < dsteps; ++s) {
            std::vector<DurationExample> batch;
            for (int b = 0; b < cfg.training.batch_size; ++b) {
                batch.push_back(dexamples[static_cast<size_t>(drng.uniform_int(0, static_cast<int>(dexamples.size()) - 1))]);
            }
            double loss = duration_train_step(dur, batch, dopt, drng);
            dtel.step(s, loss, dtrainable);
        }
        save_checkpoint((ckdir / "duration_final.ckpt").string(), dur.store, fp,
                        static_cast<uint64_t>(dsteps));
    }
}

GenerateResult run_generate(const RunConfig& cfg, const std::string& ckpt,
                            const std::string& request_file, const std::string& out_dir,
                            const std::string& duration_ckpt, bool override_fingerprint) {
    fs::create_directories(fs::path(out_dir) / "gen");
    save_config((fs::path(out_dir) / "config.json").string(), cfg);
    uint64_t fp = cfg.fingerprint();

    auto model = build_acoustic(cfg);
    load_checkpoint(ckpt, model->store, fp, override_fingerprint);
    if (model->has_adapters()) model->adapters->cond.fitted = true;

    std::unique_ptr<DurationModel> dur;
    if (!duration_ckpt.empty()) {
        dur = build_duration(cfg);
        load_checkpoint(duration_ckpt, dur->store, fp, override_fingerprint);
    }

    std::vector<Request> requests = read_request_file(request_file);
    GenerateResult result;
    result.manifest_path = (fs::path(out_dir) / "generated.jsonl").string();
    std::ofstream mf(result.manifest_path);
    if (!mf) throw std::runtime_error("run_generate: cannot write manifest");

    for (const Request& req : requests) {
        json row = request_to_json(req);
        try {
            std::vector<int> durations = req.durations;
            if (durations.empty()) {
                if (dur == nullptr) {
                    throw std::invalid_argument("request has no durations and no duration model given");
                }
                std::vector<int> tokens;
                if (req.use_z_f && dur->has_adapters()) {
                    tokens = dur->adapters->cond.vocab.encode(serialize_z_f(req.symbols, req.annotations));
                }
                durations = predict_durations(*dur, req.symbols, tokens.empty() ? nullptr : &tokens);
                row["durations"] = durations;
            }
            GenerationRequest g;
            g.symbols = req.symbols;
            g.durations = durations;
            g.solver = cfg.solver;
            if (req.use_z_f) {
                if (!model->has_adapters()) {
                    throw std::invalid_argument("request carries z_f but checkpoint has no adapters");
                }
                g.cond_tokens =
                    model->adapters->cond.vocab.encode(serialize_z_f(req.symbols, req.annotations));
            }
            if (!req.prompt_file.empty()) {
                Tensor prompt = read_feature_file(req.prompt_file);
                if (req.prompt_frames < 1 || req.prompt_frames > prompt.rows()) {
                    throw std::invalid_argument("prompt_frames out of range for " + req.prompt_file);
                }
                Tensor prefix = Tensor::zeros({req.prompt_frames, prompt.cols()});
                for (int r = 0; r < req.prompt_frames; ++r) {
                    for (int c = 0; c < prompt.cols(); ++c) prefix.at(r, c) = prompt.at(r, c);
                }
                g.prompt = std::move(prefix);
            }
            Rng rng(req.seed);
            Tensor features = generate(*model, g, rng);
            std::string rel = "gen/" + sanitize_id(req.id) + ".bin";
            write_feature_file((fs::path(out_dir) / rel).string(), features);
            row["status"] = "ok";
            row["features"] = rel;
            ++result.ok;
        } catch (const std::exception& e) {
            row["status"] = "error";
            row["reason"] = e.what();
            ++result.failed;
        }
        mf << row.dump() << "\n";
    }
    return result;
}

EvalSummary run_evaluate(const std::string& generated_manifest, const std::string& request_file,
                         const TaskSpec& spec, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::vector<Request> requests = read_request_file(request_file);
    std::map<std::string, json> rows;
    {
        std::ifstream is(generated_manifest);
        if (!is) throw std::runtime_error("run_evaluate: cannot open " + generated_manifest);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            std::string id = j.at("id").get<std::string>();  // json::operator= is by-value; key first
            rows[id] = std::move(j);
        }
    }
    fs::path base = fs::path(generated_manifest).parent_path();

    std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl");
    EvalSummary summary;

    std::vector<std::vector<Annotation>> pred, gold;
    struct PairSide {
        bool have = false;
        double energy = 0;
    };
    std::map<std::string, std::pair<PairSide, PairSide>> pairs;  // annotated, plain

    for (const Request& req : requests) {
        auto it = rows.find(req.id);
        if (it == rows.end() || it->second.value("status", "") != std::string("ok")) {
            ++summary.missing;
            metrics << json{{"type", "missing"},
                            {"id", req.id},
                            {"reason", it == rows.end() ? "no output" : it->second.value("reason", "error")}}
                           .dump()
                    << "\n";
            continue;
        }
        Tensor features = read_feature_file((base / it->second.at("features").get<std::string>()).string());
        std::vector<int> durations = it->second.at("durations").get<std::vector<int>>();
        pred.push_back(detect_annotations(features, req.symbols, durations, spec));
        gold.push_back(req.annotations);
        ++summary.evaluated;

        if (!req.pair_id.empty() && !req.annotations.empty()) {
            pairs[req.pair_id].first = {true,
                                        span_mean_energy(features, durations, req.annotations[0].position)};
        } else if (!req.pair_id.empty()) {
            // position taken from the annotated twin once both sides are seen;
            // store per-position energies lazily via the request list second pass
            pairs[req.pair_id].second = {true, 0};
        }
    }

    // second pass for plain twins: energy at the annotated twin's position
    for (const Request& req : requests) {
        if (req.pair_id.empty() || !req.annotations.empty()) continue;
        auto it = rows.find(req.id);
        if (it == rows.end() || it->second.value("status", "") != std::string("ok")) continue;
        const Request* twin = nullptr;
        for (const Request& other : requests) {
            if (other.pair_id == req.pair_id && !other.annotations.empty()) twin = &other;
        }
        if (twin == nullptr) continue;
        Tensor features = read_feature_file((base / it->second.at("features").get<std::string>()).string());
        std::vector<int> durations = it->second.at("durations").get<std::vector<int>>();
        pairs[req.pair_id].second = {true,
                                     span_mean_energy(features, durations, twin->annotations[0].position)};
    }

    summary.f1 = f1_micro(pred, gold, {spec.task});
    for (const F1Row& row : summary.f1.per_category) {
        metrics << json{{"type", "f1"},       {"category", row.category}, {"tp", row.tp},
                        {"fp", row.fp},       {"fn", row.fn},             {"precision", row.precision},
                        {"recall", row.recall}, {"f1", row.f1}}
                       .dump()
                << "\n";
    }
    metrics << json{{"type", "micro"},
                    {"precision", summary.f1.micro_precision},
                    {"recall", summary.f1.micro_recall},
                    {"f1", summary.f1.micro_f1},
                    {"evaluated", summary.evaluated},
                    {"missing", summary.missing}}
                   .dump()
            << "\n";

    for (const auto& [pid, sides] : pairs) {
        if (!sides.first.have || !sides.second.have) continue;
        ++summary.paired_total;
        if (sides.first.energy > sides.second.energy) ++summary.paired_wins;
    }
    if (summary.paired_total > 0) {
        metrics << json{{"type", "paired_energy"},
                        {"wins", summary.paired_wins},
                        {"total", summary.paired_total}}
                       .dump()
                << "\n";
    }

    std::ofstream csv(fs::path(out_dir) / "metrics.csv");
    csv << "category,tp,fp,fn,precision,recall,f1\n";
    for (const F1Row& row : summary.f1.per_category) {
        csv << row.category << "," << row.tp << "," << row.fp << "," << row.fn << ","
            << row.precision << "," << row.recall << "," << row.f1 << "\n";
    }
    csv << "micro," << summary.f1.tp << "," << summary.f1.fp << "," << summary.f1.fn << ","
        << summary.f1.micro_precision << "," << summary.f1.micro_recall << ","
        << summary.f1.micro_f1 << "\n";
    return summary;
}

// ---------------------------------------------------------------------------
// sweep

SweepAxis sweep_axis_from(const std::string& name) {
    if (name == "lora_rank") return SweepAxis::lora_rank;
    if (name == "cross_attn_dim") return SweepAxis::cross_attn_dim;
    if (name == "data_fraction") return SweepAxis::data_fraction;
    throw std::invalid_argument("unknown sweep axis: " + name);
}

std::string sweep_axis_name(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::lora_rank: return "lora_rank";
        case SweepAxis::cross_attn_dim: return "cross_attn_dim";
        case SweepAxis::data_fraction: return "data_fraction";
    }
    return "?";
}

std::vector<SweepRow> run_sweep(const RunConfig& cfg, const std::string& base_ckpt, SweepAxis axis,
                                const std::vector<double>& values, const std::string& out_dir,
                                int eval_requests) {
    if (values.empty()) throw std::invalid_argument("run_sweep: values must be nonempty");
    if (!cfg.adapter.has_value()) throw std::invalid_argument("run_sweep: config carries no adapter spec");
    fs::create_directories(out_dir);
    std::vector<SweepRow> rows;
    std::ofstream jsonl(fs::path(out_dir) / "sweep.jsonl");

    for (size_t vi = 0; vi < values.size(); ++vi) {
        double value = values[vi];
        SweepRow row;
        row.value = value;
        std::string sub = (fs::path(out_dir) / ("val_" + std::to_string(vi))).string();
        try {
            RunConfig c = cfg;
            switch (axis) {
                case SweepAxis::lora_rank:
                    c.adapter->lora_rank = static_cast<int>(value);
                    c.adapter->lora_alpha = value;  // alpha = r convention
                    break;
                case SweepAxis::cross_attn_dim:
                    c.adapter->cross_attn_head_dim = static_cast<int>(value);
                    break;
                case SweepAxis::data_fraction:
                    c.training.data_fraction = value;
                    break;
            }
            run_finetune(c, base_ckpt, "", sub);

            Dataset ds = corpus_for(c);
            std::vector<Request> reqs = requests_from_heldout(
                ds, eval_requests, true, false, derive_seed(c.seeds.corpus, 0xE7A1));
            std::string reqfile = (fs::path(sub) / "requests.jsonl").string();
            write_request_file(reqfile, reqs);
            run_generate(c, (fs::path(sub) / "checkpoints" / "final.ckpt").string(), reqfile,
                         (fs::path(sub) / "generation").string());
            EvalSummary ev = run_evaluate((fs::path(sub) / "generation" / "generated.jsonl").string(),
                                          reqfile, ds.spec, (fs::path(sub) / "evaluation").string());

            std::ifstream pj(fs::path(sub) / "partition.json");
            json part = json::parse(pj);
            row.ok = true;
            row.micro_f1 = ev.f1.micro_f1;
            row.trainable_params = part.at("trainable_params").get<int64_t>();
            row.adaptive_params = part.at("adaptive_params").get<int64_t>();
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        jsonl << json{{"axis", sweep_axis_name(axis)},
                      {"value", row.value},
                      {"status", row.ok ? "ok" : "error"},
                      {"error", row.error},
                      {"micro_f1", row.micro_f1},
                      {"trainable_params", row.trainable_params},
                      {"adaptive_params", row.adaptive_params}}
                     .dump()
              << "\n";
        jsonl.flush();
        rows.push_back(std::move(row));
    }

    std::ofstream csv(fs::path(out_dir) / "sweep.csv");
    csv << "axis,value,status,micro_f1,trainable_params,adaptive_params,error\n";
    for (const SweepRow& row : rows) {
        csv << sweep_axis_name(axis) << "," << row.value << "," << (row.ok ? "ok" : "error") << ","
            << row.micro_f1 << "," << row.trainable_params << "," << row.adaptive_params << ",\""
            << row.error << "\"\n";
    }
    return rows;
}

// ---------------------------------------------------------------------------
// duration evaluation

DurationEval evaluate_duration(const DurationModel& model, const Dataset& ds, int max_pairs) {
    DurationEval ev;
    double abs_sum = 0;
    int64_t count = 0;
    for (int id : ds.heldout_ids) {
        const Utterance& u = ds.utterances[static_cast<size_t>(id)];
        std::vector<int> tokens;
        const std::vector<int>* tptr = nullptr;
        if (model.has_adapters()) {
            tokens = model.adapters->cond.vocab.encode(u.z_f);
            if (!tokens.empty()) tptr = &tokens;
        }
        std::vector<int> pred = predict_durations(model, u.symbols, tptr);
        std::vector<int> gold = attributed_durations(u);
        for (size_t i = 0; i < gold.size(); ++i) {
            abs_sum += std::abs(pred[i] - gold[i]);
            ++count;
        }
        ++ev.evaluated;
    }
    ev.mae = count > 0 ? abs_sum / static_cast<double>(count) : 0.0;

    if (model.has_adapters() && max_pairs > 0) {
        std::vector<const Utterance*> annotated;
        for (int id : ds.heldout_ids) {
            const Utterance& u = ds.utterances[static_cast<size_t>(id)];
            if (!u.annotations.empty()) annotated.push_back(&u);
        }
        const CondVocab& vocab = model.adapters->cond.vocab;
        for (int i = 0; i < max_pairs && !annotated.empty(); ++i) {
            const Utterance& u = *annotated[static_cast<size_t>(i) % annotated.size()];
            Annotation a = u.annotations.front();
            std::vector<Annotation> one = {a};
            std::vector<int> with_tokens = vocab.encode(serialize_z_f(u.symbols, one));
            std::vector<int> plain_tokens = vocab.encode(serialize_z_f(u.symbols, {}));
            std::vector<int> with = predict_durations(model, u.symbols, &with_tokens);
            std::vector<int> plain = predict_durations(model, u.symbols, &plain_tokens);
            ++ev.paired_total;
            if (with[static_cast<size_t>(a.position)] > plain[static_cast<size_t>(a.position)]) {
                ++ev.paired_wins;
            }
        }
    }
    return ev;
}

}  // namespace flowtune
