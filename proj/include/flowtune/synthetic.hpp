#pragma once

#include <string>
#include <vector>

#include "flowtune/rng.hpp"
#include "flowtune/tensor.hpp"

namespace flowtune {

enum class TaskKind { pause, emphasis, burst };

std::string task_kind_name(TaskKind k);
TaskKind task_kind_from(const std::string& name);

// Desk-scale analog of the fine-grained conditioning tasks. Base patterns are
// fixed by pattern_seed; every symbol has a characteristic duration.
struct TaskSpec {
    TaskKind task = TaskKind::emphasis;
    int vocab_size = 12;   // real symbols; the gap symbol is vocab_size
    int feature_dim = 8;
    uint64_t pattern_seed = 7;
    double annotation_rate = 0.25;  // per symbol position; chance-level F1 tracks this rate
    double energy_scale = 4.0;      // emphasis energy multiplier k
    int pause_len_min = 3;
    int pause_len_max = 6;
    double burst_freq = 0.25;       // cycles per frame; burst windows use one period
    double burst_amp = 1.2;
    int burst_len_min = 4;
    int burst_len_max = 8;
    double noise_sigma = 0.05;
    int min_symbols = 3;
    int max_symbols = 6;
    double min_pattern_margin = 0.5;  // min pairwise L2 between base patterns

    void validate() const;
    int gap_symbol() const { return vocab_size; }
    int model_vocab() const { return vocab_size + 1; }
};

// Characteristic duration of a symbol, 2..6 frames.
int symbol_duration(int symbol);

// Unit-frame-energy base patterns, (vocab_size, feature_dim); deterministic in
// pattern_seed and pairwise separated by at least min_pattern_margin.
Tensor base_patterns(const TaskSpec& spec);

struct Annotation {
    int position = 0;
    TaskKind type = TaskKind::emphasis;
    int inserted_len = 0;  // frames inserted after the symbol; 0 for emphasis

    bool operator==(const Annotation& o) const {
        return position == o.position && type == o.type && inserted_len == o.inserted_len;
    }
};

struct Utterance {
    int id = 0;
    std::vector<int> symbols;
    std::vector<int> durations;  // base durations, one per symbol
    std::vector<Annotation> annotations;
    Tensor features;  // rendered (frames, feature_dim)
    std::string z_f;  // serialized transcript with inline annotation tokens
};

// Base durations plus inserted frames attributed to the symbol they follow;
// aligns every rendered frame to a symbol position.
std::vector<int> attributed_durations(const Utterance& utt);

std::string serialize_z_f(const std::vector<int>& symbols, const std::vector<Annotation>& annotations);

// Inverse of serialize_z_f over (symbols, positions, types); inserted lengths
// are rendering detail and not part of the condition text.
void parse_z_f(const std::string& text, std::vector<int>* symbols,
               std::vector<Annotation>* annotations);

// Rendering. noise_sigma < 0 uses the spec's value; pass 0 for clean renders.
Tensor render_features(const Utterance& utt, const TaskSpec& spec, Rng& noise_rng,
                       double noise_sigma = -1.0);

struct Dataset {
    TaskSpec spec;
    std::vector<Utterance> utterances;
    std::vector<int> train_ids;
    std::vector<int> heldout_ids;
};

// Pure function of (spec, n, seed); ~10% of utterances go to the held-out
// split via a seed-derived partition.
Dataset generate_corpus(const TaskSpec& spec, int n_utterances, uint64_t seed);

// Two-mode toy corpus: single symbol, features clustered at +/-mode_center.
Dataset toy2_corpus(int n_utterances, uint64_t seed, int feature_dim = 8, int frames = 8,
                    double mode_center = 1.5, double noise_sigma = 0.05);

// Rule-based oracle detector. alignment = attributed durations; must cover
// the feature rows exactly.
std::vector<Annotation> detect_annotations(const Tensor& features, const std::vector<int>& symbols,
                                           const std::vector<int>& alignment, const TaskSpec& spec);

// ---------------------------------------------------------------------------
// F1

struct F1Row {
    std::string category;
    int64_t tp = 0, fp = 0, fn = 0;
    double precision = 0, recall = 0, f1 = 0;
};

struct F1Report {
    std::vector<F1Row> per_category;
    int64_t tp = 0, fp = 0, fn = 0;
    double micro_precision = 0, micro_recall = 0, micro_f1 = 0;
};

// Exact (utterance, position, category) matching; micro average pools
// TP/FP/FN across categories. Empty gold and empty predictions define F1 = 1.
F1Report f1_micro(const std::vector<std::vector<Annotation>>& predicted,
                  const std::vector<std::vector<Annotation>>& gold,
                  const std::vector<TaskKind>& categories);

// ---------------------------------------------------------------------------
// dataset files: manifest (JSON lines) + flat binary feature files with a
// 16-byte header (magic, version, frames, feature_dim) and row-major f32 rows.

void write_feature_file(const std::string& path, const Tensor& features);
Tensor read_feature_file(const std::string& path);

void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

}  // namespace flowtune
