#pragma once

#include <memory>
#include <string>
#include <vector>

#include "flowtune/checkpoint.hpp"
#include "flowtune/config.hpp"
#include "flowtune/sampler.hpp"

namespace flowtune {

// Deterministic corpus for a config (task or toy2 kind).
Dataset corpus_for(const RunConfig& cfg);

// vocab == nullptr strips the z_f pathway entirely (pre-training data).
TrainingExample acoustic_example(const Utterance& utt, const CondVocab* vocab);
DurationExample duration_example(const Utterance& utt, const CondVocab* vocab);

// Model construction per config; injects adapters when the config carries a
// spec. Loading a checkpoint afterwards requires the same structure.
std::unique_ptr<VectorFieldModel> build_acoustic(const RunConfig& cfg);
std::unique_ptr<DurationModel> build_duration(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// generation requests

struct Request {
    std::string id;
    std::vector<int> symbols;
    std::vector<int> durations;           // frames per symbol; empty = use the duration model
    std::vector<Annotation> annotations;  // requested conditions, also the evaluation targets
    bool use_z_f = true;
    uint64_t seed = 0;
    std::string pair_id;     // links annotated/plain twins
    std::string prompt_file; // optional prefix features
    int prompt_frames = 0;
};

void write_request_file(const std::string& path, const std::vector<Request>& requests);
std::vector<Request> read_request_file(const std::string& path);

// Requests over the held-out split, cycling with fresh seeds when max_requests
// exceeds the split. paired=true emits one single-annotation request plus an
// unannotated twin per seed, sharing a pair id.
std::vector<Request> requests_from_heldout(const Dataset& ds, int max_requests, bool use_z_f,
                                           bool paired, uint64_t seed_base);

// ---------------------------------------------------------------------------
// runs

void run_corpus(const RunConfig& cfg, const std::string& out_dir);

// Pre-trains the acoustic model on the annotation-stripped corpus and the
// duration model on gold durations. Writes config copy, telemetry, periodic
// checkpoints and tagged finals. A non-finite loss halts the run with the
// last good checkpoint retained.
void run_pretrain(const RunConfig& cfg, const std::string& out_dir);

// Injects the config's adapter spec into the base checkpoint, fits the
// condition encoder, fine-tunes the trainable partition on the annotated
// corpus. base_duration_ckpt may be empty to skip the duration model.
void run_finetune(const RunConfig& cfg, const std::string& base_ckpt,
                  const std::string& base_duration_ckpt, const std::string& out_dir,
                  bool override_fingerprint = false);

struct GenerateResult {
    int ok = 0;
    int failed = 0;
    std::string manifest_path;
};

GenerateResult run_generate(const RunConfig& cfg, const std::string& ckpt,
                            const std::string& request_file, const std::string& out_dir,
                            const std::string& duration_ckpt = "",
                            bool override_fingerprint = false);

struct EvalSummary {
    F1Report f1;
    int evaluated = 0;
    int missing = 0;
    int paired_total = 0;
    int paired_wins = 0;  // strictly-greater energy at the annotated symbol
};

// Detects annotations on the generated features and scores them against the
// requested conditions. Writes metrics.jsonl and metrics.csv under out_dir.
EvalSummary run_evaluate(const std::string& generated_manifest, const std::string& request_file,
                         const TaskSpec& spec, const std::string& out_dir);

// ---------------------------------------------------------------------------
// sweep

enum class SweepAxis { lora_rank, cross_attn_dim, data_fraction };

SweepAxis sweep_axis_from(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);

struct SweepRow {
    double value = 0;
    bool ok = false;
    std::string error;
    double micro_f1 = 0;
    int64_t trainable_params = 0;
    int64_t adaptive_params = 0;
};

// run_finetune + run_generate + run_evaluate per value; individual failures
// are recorded and the sweep continues. Emits sweep.csv and sweep.jsonl.
std::vector<SweepRow> run_sweep(const RunConfig& cfg, const std::string& base_ckpt,
                                SweepAxis axis, const std::vector<double>& values,
                                const std::string& out_dir, int eval_requests = 40);

// ---------------------------------------------------------------------------
// duration evaluation

struct DurationEval {
    double mae = 0;            // on held-out gold (attributed durations)
    int evaluated = 0;
    int paired_total = 0;
    int paired_wins = 0;       // annotated position predicted strictly longer
};

DurationEval evaluate_duration(const DurationModel& model, const Dataset& ds, int max_pairs);

}  // namespace flowtune
