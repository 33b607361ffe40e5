#include "flowtune/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json_util.hpp"

namespace fs = std::filesystem;

namespace flowtune {

std::string task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::pause: return "pause";
        case TaskKind::emphasis: return "emphasis";
        case TaskKind::burst: return "burst";
    }
    return "?";
}

TaskKind task_kind_from(const std::string& name) {
    if (name == "pause") return TaskKind::pause;
    if (name == "emphasis") return TaskKind::emphasis;
    if (name == "burst") return TaskKind::burst;
    throw std::invalid_argument("unknown task kind: " + name);
}

void TaskSpec::validate() const {
    if (vocab_size < 1 || feature_dim < 1) throw std::invalid_argument("task: bad dimensions");
    if (annotation_rate < 0 || annotation_rate > 1) {
        throw std::invalid_argument("task: annotation_rate must lie in [0, 1]");
    }
    if (energy_scale <= 1.0) throw std::invalid_argument("task: energy_scale must exceed 1");
    if (pause_len_min < 2 || pause_len_max < pause_len_min) {
        throw std::invalid_argument("task: bad pause length range");
    }
    if (burst_len_min < 2 || burst_len_max < burst_len_min) {
        throw std::invalid_argument("task: bad burst length range");
    }
    if (burst_freq <= 0 || burst_freq > 0.5) {
        throw std::invalid_argument("task: burst_freq must lie in (0, 0.5]");
    }
    if (min_symbols < 1 || max_symbols < min_symbols || max_symbols > vocab_size) {
        throw std::invalid_argument("task: bad symbols-per-utterance range");
    }
    if (noise_sigma < 0) throw std::invalid_argument("task: noise_sigma must be >= 0");
}

int symbol_duration(int symbol) { return 2 + (symbol % 5); }

Tensor base_patterns(const TaskSpec& spec) {
    Rng rng(spec.pattern_seed);
    Tensor pat = Tensor::zeros({spec.vocab_size, spec.feature_dim});
    int fd = spec.feature_dim;
    for (int s = 0; s < spec.vocab_size; ++s) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 1000) throw std::runtime_error("base_patterns: margin unreachable");
            std::vector<real> row(static_cast<size_t>(fd));
            double norm2 = 0;
            for (auto& v : row) {
                v = static_cast<real>(rng.normal());
                norm2 += static_cast<double>(v) * v;
            }
            if (norm2 < 1e-9) continue;
            // unit frame energy: mean square over channels == 1
            double scale = std::sqrt(static_cast<double>(fd) / norm2);
            for (auto& v : row) v = static_cast<real>(v * scale);
            bool ok = true;
            for (int p = 0; p < s && ok; ++p) {
                double d2 = 0;
                for (int c = 0; c < fd; ++c) {
                    double d = static_cast<double>(row[static_cast<size_t>(c)]) - pat.at(p, c);
                    d2 += d * d;
                }
                if (std::sqrt(d2) < spec.min_pattern_margin) ok = false;
            }
            if (ok) {
                for (int c = 0; c < fd; ++c) pat.at(s, c) = row[static_cast<size_t>(c)];
                break;
            }
        }
    }
    return pat;
}

std::vector<int> attributed_durations(const Utterance& utt) {
    std::vector<int> out = utt.durations;
    for (const Annotation& a : utt.annotations) {
        if (a.inserted_len > 0) out[static_cast<size_t>(a.position)] += a.inserted_len;
    }
    return out;
}

std::string serialize_z_f(const std::vector<int>& symbols,
                          const std::vector<Annotation>& annotations) {
    std::map<int, const Annotation*> by_pos;
    for (const Annotation& a : annotations) by_pos[a.position] = &a;
    std::string out;
    for (size_t i = 0; i < symbols.size(); ++i) {
        if (!out.empty()) out += " ";
        const Annotation* a = nullptr;
        auto it = by_pos.find(static_cast<int>(i));
        if (it != by_pos.end()) a = it->second;
        std::string sym = "s" + std::to_string(symbols[i]);
        if (a != nullptr && a->type == TaskKind::emphasis) {
            out += "*" + sym + "*";
        } else {
            out += sym;
        }
        if (a != nullptr && a->type == TaskKind::pause) out += " <pause>";
        if (a != nullptr && a->type == TaskKind::burst) out += " <burst>";
    }
    return out;
}

void parse_z_f(const std::string& text, std::vector<int>* symbols,
               std::vector<Annotation>* annotations) {
    symbols->clear();
    annotations->clear();
    std::istringstream ss(text);
    std::string tok;
    while (ss >> tok) {
        if (tok == "<pause>" || tok == "<burst>") {
            if (symbols->empty()) throw std::invalid_argument("parse_z_f: marker before any symbol");
            annotations->push_back({static_cast<int>(symbols->size()) - 1,
                                    tok == "<pause>" ? TaskKind::pause : TaskKind::burst, 0});
            continue;
        }
        bool emphasized = tok.size() > 2 && tok.front() == '*' && tok.back() == '*';
        std::string sym = emphasized ? tok.substr(1, tok.size() - 2) : tok;
        if (sym.size() < 2 || sym[0] != 's') throw std::invalid_argument("parse_z_f: bad token " + tok);
        int id = std::stoi(sym.substr(1));
        symbols->push_back(id);
        if (emphasized) {
            annotations->push_back({static_cast<int>(symbols->size()) - 1, TaskKind::emphasis, 0});
        }
    }
}

Tensor render_features(const Utterance& utt, const TaskSpec& spec, Rng& noise_rng,
                       double noise_sigma) {
    double sigma = noise_sigma < 0 ? spec.noise_sigma : noise_sigma;
    Tensor patterns = base_patterns(spec);
    int fd = spec.feature_dim;
    std::map<int, const Annotation*> by_pos;
    for (const Annotation& a : utt.annotations) by_pos[a.position] = &a;

    int total = 0;
    for (size_t i = 0; i < utt.symbols.size(); ++i) total += utt.durations[i];
    for (const Annotation& a : utt.annotations) total += a.inserted_len;

    Tensor out = Tensor::zeros({total, fd});
    int r = 0;
    double emph = std::sqrt(spec.energy_scale);
    for (size_t i = 0; i < utt.symbols.size(); ++i) {
        const Annotation* a = nullptr;
        auto it = by_pos.find(static_cast<int>(i));
        if (it != by_pos.end()) a = it->second;
        double scale = (a != nullptr && a->type == TaskKind::emphasis) ? emph : 1.0;
        for (int d = 0; d < utt.durations[i]; ++d, ++r) {
            for (int c = 0; c < fd; ++c) {
                out.at(r, c) = static_cast<real>(scale * patterns.at(utt.symbols[i], c));
            }
        }
        if (a != nullptr && a->inserted_len > 0) {
            for (int j = 0; j < a->inserted_len; ++j, ++r) {
                if (a->type == TaskKind::burst) {
                    real v = static_cast<real>(
                        spec.burst_amp * std::sin(2.0 * 3.14159265358979323846 * spec.burst_freq * j));
                    for (int c = 0; c < fd; ++c) out.at(r, c) = v;
                }
                // pause rows stay at the zero fill
            }
        }
    }
    if (sigma > 0) {
        for (auto& v : out.data) v += static_cast<real>(noise_rng.normal() * sigma);
    }
    return out;
}

Dataset generate_corpus(const TaskSpec& spec, int n_utterances, uint64_t seed) {
    spec.validate();
    if (n_utterances < 1) throw std::invalid_argument("generate_corpus: n must be >= 1");
    Dataset ds;
    ds.spec = spec;
    for (int u = 0; u < n_utterances; ++u) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(u)));
        Utterance utt;
        utt.id = u;
        int len = rng.uniform_int(spec.min_symbols, spec.max_symbols);
        // distinct symbols so content-based condition lookup is unambiguous
        std::vector<int> pool(static_cast<size_t>(spec.vocab_size));
        for (int i = 0; i < spec.vocab_size; ++i) pool[static_cast<size_t>(i)] = i;
        for (int i = 0; i < len; ++i) {
            int pick = rng.uniform_int(i, spec.vocab_size - 1);
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(pick)]);
            utt.symbols.push_back(pool[static_cast<size_t>(i)]);
        }
        for (int s : utt.symbols) utt.durations.push_back(symbol_duration(s));
        for (int i = 0; i < len; ++i) {
            if (rng.uniform() < spec.annotation_rate) {
                Annotation a;
                a.position = i;
                a.type = spec.task;
                if (spec.task == TaskKind::pause) {
                    a.inserted_len = rng.uniform_int(spec.pause_len_min, spec.pause_len_max);
                } else if (spec.task == TaskKind::burst) {
                    a.inserted_len = rng.uniform_int(spec.burst_len_min, spec.burst_len_max);
                }
                utt.annotations.push_back(a);
            }
        }
        utt.z_f = serialize_z_f(utt.symbols, utt.annotations);
        utt.features = render_features(utt, spec, rng);
        ds.utterances.push_back(std::move(utt));
    }
    for (int u = 0; u < n_utterances; ++u) {
        if (derive_seed(seed ^ 0x5eedULL, static_cast<uint64_t>(u)) % 10 == 0) {
            ds.heldout_ids.push_back(u);
        } else {
            ds.train_ids.push_back(u);
        }
    }
    return ds;
}

Dataset toy2_corpus(int n_utterances, uint64_t seed, int feature_dim, int frames,
                    double mode_center, double noise_sigma) {
    if (n_utterances < 1) throw std::invalid_argument("toy2_corpus: n must be >= 1");
    Dataset ds;
    ds.spec = TaskSpec{};
    ds.spec.vocab_size = 1;
    ds.spec.feature_dim = feature_dim;
    ds.spec.annotation_rate = 0;
    ds.spec.min_symbols = 1;
    ds.spec.max_symbols = 1;
    ds.spec.noise_sigma = noise_sigma;
    for (int u = 0; u < n_utterances; ++u) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(u)));
        Utterance utt;
        utt.id = u;
        utt.symbols = {0};
        utt.durations = {frames};
        // alternate modes for exact balance; the draw order stays seed-stable
        double center = (u % 2 == 0) ? mode_center : -mode_center;
        utt.features = Tensor::zeros({frames, feature_dim});
        for (auto& v : utt.features.data) {
            v = static_cast<real>(center + rng.normal() * noise_sigma);
        }
        utt.z_f = "s0";
        ds.utterances.push_back(std::move(utt));
    }
    for (int u = 0; u < n_utterances; ++u) {
        if (derive_seed(seed ^ 0x5eedULL, static_cast<uint64_t>(u)) % 10 == 0) {
            ds.heldout_ids.push_back(u);
        } else {
            ds.train_ids.push_back(u);
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// detector

namespace {

double frame_energy(const Tensor& f, int r) {
    double e = 0;
    for (int c = 0; c < f.cols(); ++c) e += static_cast<double>(f.at(r, c)) * f.at(r, c);
    return e / f.cols();
}

double median_pattern_energy(const TaskSpec& spec) {
    Tensor pat = base_patterns(spec);
    std::vector<double> e;
    for (int s = 0; s < spec.vocab_size; ++s) {
        double v = 0;
        for (int c = 0; c < spec.feature_dim; ++c) v += static_cast<double>(pat.at(s, c)) * pat.at(s, c);
        e.push_back(v / spec.feature_dim);
    }
    std::sort(e.begin(), e.end());
    size_t n = e.size();
    return n % 2 == 1 ? e[n / 2] : 0.5 * (e[n / 2 - 1] + e[n / 2]);
}

}  // namespace

std::vector<Annotation> detect_annotations(const Tensor& features, const std::vector<int>& symbols,
                                           const std::vector<int>& alignment, const TaskSpec& spec) {
    if (symbols.size() != alignment.size()) {
        throw std::invalid_argument("detect_annotations: symbols/alignment length mismatch");
    }
    int total = 0;
    for (int d : alignment) total += d;
    if (total != features.rows()) {
        throw std::invalid_argument("detect_annotations: alignment covers " + std::to_string(total) +
                                    " frames but features have " + std::to_string(features.rows()));
    }
    double median = median_pattern_energy(spec);
    double silence_thresh = 0.1 * median;
    double emph_thresh = median * spec.energy_scale * 0.7;
    double burst_thresh = spec.burst_amp * spec.burst_amp / 16.0;
    int w = std::max(2, static_cast<int>(std::lround(1.0 / spec.burst_freq)));

    std::vector<Annotation> out;
    int r0 = 0;
    for (size_t i = 0; i < symbols.size(); ++i) {
        int span = alignment[i];
        int r1 = r0 + span;
        switch (spec.task) {
            case TaskKind::emphasis: {
                double mean_e = 0;
                for (int r = r0; r < r1; ++r) mean_e += frame_energy(features, r);
                mean_e /= span;
                if (mean_e >= emph_thresh) out.push_back({static_cast<int>(i), TaskKind::emphasis, 0});
                break;
            }
            case TaskKind::pause: {
                int run = 0;
                for (int r = r1 - 1; r >= r0; --r) {
                    if (frame_energy(features, r) < silence_thresh) {
                        ++run;
                    } else {
                        break;
                    }
                }
                if (run >= 2) out.push_back({static_cast<int>(i), TaskKind::pause, run});
                break;
            }
            case TaskKind::burst: {
                double best = 0;
                for (int start = r0; start + w <= r1; ++start) {
                    double re = 0, im = 0;
                    for (int j = 0; j < w; ++j) {
                        double m = 0;
                        for (int c = 0; c < features.cols(); ++c) m += features.at(start + j, c);
                        m /= features.cols();
                        double ang = 2.0 * 3.14159265358979323846 * spec.burst_freq * j;
                        re += m * std::cos(ang);
                        im -= m * std::sin(ang);
                    }
                    best = std::max(best, (re * re + im * im) / (static_cast<double>(w) * w));
                }
                if (best >= burst_thresh) out.push_back({static_cast<int>(i), TaskKind::burst, 0});
                break;
            }
        }
        r0 = r1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// F1

F1Report f1_micro(const std::vector<std::vector<Annotation>>& predicted,
                  const std::vector<std::vector<Annotation>>& gold,
                  const std::vector<TaskKind>& categories) {
    if (predicted.size() != gold.size()) {
        throw std::invalid_argument("f1_micro: predicted/gold utterance counts differ");
    }
    auto rates = [](int64_t tp, int64_t fp, int64_t fn) {
        double p = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp);
        double r = (tp + fn) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fn);
        double f1 = (p + r) == 0 ? 0.0 : 2.0 * p * r / (p + r);
        return std::tuple<double, double, double>{p, r, f1};
    };
    F1Report rep;
    for (TaskKind cat : categories) {
        std::set<std::pair<int, int>> pred_keys, gold_keys;
        for (size_t u = 0; u < predicted.size(); ++u) {
            for (const Annotation& a : predicted[u]) {
                if (a.type == cat) pred_keys.insert({static_cast<int>(u), a.position});
            }
            for (const Annotation& a : gold[u]) {
                if (a.type == cat) gold_keys.insert({static_cast<int>(u), a.position});
            }
        }
        F1Row row;
        row.category = task_kind_name(cat);
        for (const auto& k : pred_keys) {
            if (gold_keys.count(k)) {
                ++row.tp;
            } else {
                ++row.fp;
            }
        }
        for (const auto& k : gold_keys) {
            if (!pred_keys.count(k)) ++row.fn;
        }
        std::tie(row.precision, row.recall, row.f1) = rates(row.tp, row.fp, row.fn);
        rep.tp += row.tp;
        rep.fp += row.fp;
        rep.fn += row.fn;
        rep.per_category.push_back(std::move(row));
    }
    std::tie(rep.micro_precision, rep.micro_recall, rep.micro_f1) = rates(rep.tp, rep.fp, rep.fn);
    return rep;
}

// ---------------------------------------------------------------------------
// dataset files

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

constexpr char kFeatureMagic[4] = {'F', 'T', 'F', 'E'};
constexpr uint32_t kFeatureVersion = 1;

json annotation_to_json(const Annotation& a) {
    return json{{"position", a.position},
                {"type", task_kind_name(a.type)},
                {"inserted_len", a.inserted_len}};
}

Annotation annotation_from_json(const json& j) {
    check_keys(j, "annotation", {"position", "type", "inserted_len"});
    Annotation a;
    a.position = j.at("position").get<int>();
    a.type = task_kind_from(j.at("type").get<std::string>());
    a.inserted_len = j.value("inserted_len", 0);
    return a;
}

}  // namespace

void write_feature_file(const std::string& path, const Tensor& features) {
    if (features.ndim() != 2) throw std::invalid_argument("write_feature_file: rank-2 tensor required");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_feature_file: cannot open " + path);
    os.write(kFeatureMagic, 4);
    put_u32(os, kFeatureVersion);
    put_u32(os, static_cast<uint32_t>(features.rows()));
    put_u32(os, static_cast<uint32_t>(features.cols()));
    for (real v : features.data) {
        float f = static_cast<float>(v);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(os, bits);
    }
    if (!os) throw std::runtime_error("write_feature_file: write failed for " + path);
}

Tensor read_feature_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_feature_file: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kFeatureMagic, 4) != 0) {
        throw std::runtime_error("read_feature_file: bad magic in " + path);
    }
    uint32_t version = get_u32(is);
    if (version != kFeatureVersion) {
        throw std::runtime_error("read_feature_file: unsupported version " + std::to_string(version));
    }
    uint32_t frames = get_u32(is);
    uint32_t fd = get_u32(is);
    Tensor out = Tensor::zeros({static_cast<int>(frames), static_cast<int>(fd)});
    for (auto& v : out.data) {
        uint32_t bits = get_u32(is);
        float f;
        std::memcpy(&f, &bits, 4);
        v = static_cast<real>(f);
    }
    if (!is) throw std::runtime_error("read_feature_file: truncated file " + path);
    return out;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
    fs::create_directories(fs::path(dir) / "features");
    std::ofstream spec_os(fs::path(dir) / "spec.json");
    spec_os << task_spec_to_json(ds.spec).dump(2) << "\n";
    std::ofstream mf(fs::path(dir) / "manifest.jsonl");
    if (!mf) throw std::runtime_error("save_dataset: cannot write manifest in " + dir);
    std::set<int> heldout(ds.heldout_ids.begin(), ds.heldout_ids.end());
    for (const Utterance& u : ds.utterances) {
        char name[32];
        std::snprintf(name, sizeof(name), "features/utt_%06d.bin", u.id);
        write_feature_file((fs::path(dir) / name).string(), u.features);
        json rec{{"id", u.id},
                 {"symbols", u.symbols},
                 {"durations", u.durations},
                 {"annotations", json::array()},
                 {"features", name},
                 {"z_f", u.z_f},
                 {"split", heldout.count(u.id) ? "heldout" : "train"}};
        for (const Annotation& a : u.annotations) rec["annotations"].push_back(annotation_to_json(a));
        mf << rec.dump() << "\n";
    }
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream spec_is(fs::path(dir) / "spec.json");
    if (!spec_is) throw std::runtime_error("load_dataset: missing spec.json in " + dir);
    json spec_j = json::parse(spec_is);
    Dataset ds;
    ds.spec = task_spec_from_json(spec_j);
    std::ifstream mf(fs::path(dir) / "manifest.jsonl");
    if (!mf) throw std::runtime_error("load_dataset: missing manifest.jsonl in " + dir);
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line);
        check_keys(rec, "manifest record",
                   {"id", "symbols", "durations", "annotations", "features", "z_f", "split"});
        Utterance u;
        u.id = rec.at("id").get<int>();
        u.symbols = rec.at("symbols").get<std::vector<int>>();
        u.durations = rec.at("durations").get<std::vector<int>>();
        for (const json& a : rec.at("annotations")) u.annotations.push_back(annotation_from_json(a));
        u.z_f = rec.at("z_f").get<std::string>();
        u.features = read_feature_file((fs::path(dir) / rec.at("features").get<std::string>()).string());
        if (rec.at("split").get<std::string>() == "heldout") {
            ds.heldout_ids.push_back(u.id);
        } else {
            ds.train_ids.push_back(u.id);
        }
        ds.utterances.push_back(std::move(u));
    }
    return ds;
}

}  // namespace flowtune
