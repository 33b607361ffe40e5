#include <CLI11.hpp>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "flowtune/pipeline.hpp"

using namespace flowtune;

namespace {

struct CommonArgs {
    std::string config;
    std::string out;
    int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "run configuration (json)")->required();
    cmd->add_option("--out", args.out, "output directory")->required();
    cmd->add_option("--seed", args.seed, "training seed override (model seed derives from it)");
}

RunConfig load_with_seed(const CommonArgs& args) {
    RunConfig cfg = load_config(args.config);
    if (args.seed >= 0) {
        cfg.seeds.train = static_cast<uint64_t>(args.seed);
        cfg.seeds.model = derive_seed(static_cast<uint64_t>(args.seed), 1);
    }
    return cfg;
}

std::vector<double> parse_values(const std::string& csv) {
    std::vector<double> out;
    size_t pos = 0;
    while (pos < csv.size()) {
        size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        out.push_back(std::stod(csv.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditional flow-matching speech-analog generation with efficient fine-tuning"};
    app.require_subcommand(1);

    CommonArgs corpus_args;
    CLI::App* corpus_cmd = app.add_subcommand("corpus", "generate a synthetic dataset");
    add_common(corpus_cmd, corpus_args);

    CommonArgs pretrain_args;
    CLI::App* pretrain_cmd = app.add_subcommand("pretrain", "pre-train on the annotation-stripped corpus");
    add_common(pretrain_cmd, pretrain_args);

    CommonArgs finetune_args;
    std::string base_ckpt, base_duration_ckpt;
    bool override_fp = false;
    CLI::App* finetune_cmd = app.add_subcommand("finetune", "inject adapters and fine-tune");
    add_common(finetune_cmd, finetune_args);
    finetune_cmd->add_option("--base", base_ckpt, "base acoustic checkpoint")->required();
    finetune_cmd->add_option("--duration-base", base_duration_ckpt,
                             "base duration checkpoint (omit to skip the duration model)");
    finetune_cmd->add_flag("--override-fingerprint", override_fp,
                           "load despite a config fingerprint mismatch");

    CommonArgs generate_args;
    std::string gen_ckpt, request_file, duration_ckpt;
    bool gen_override_fp = false;
    CLI::App* generate_cmd = app.add_subcommand("generate", "generate features for a request file");
    add_common(generate_cmd, generate_args);
    generate_cmd->add_option("--checkpoint", gen_ckpt, "model checkpoint")->required();
    generate_cmd->add_option("--requests", request_file, "request file (json lines)")->required();
    generate_cmd->add_option("--duration-checkpoint", duration_ckpt,
                             "duration checkpoint for requests without explicit durations");
    generate_cmd->add_flag("--override-fingerprint", gen_override_fp,
                           "load despite a config fingerprint mismatch");

    CommonArgs evaluate_args;
    std::string gen_manifest, eval_requests;
    CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "score generations against requested conditions");
    add_common(evaluate_cmd, evaluate_args);
    evaluate_cmd->add_option("--generated", gen_manifest, "generated manifest (json lines)")->required();
    evaluate_cmd->add_option("--requests", eval_requests, "request file with gold conditions")->required();

    CommonArgs sweep_args;
    std::string sweep_base, axis_name, values_csv;
    int sweep_requests = 40;
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "fine-tune/generate/evaluate over an axis");
    add_common(sweep_cmd, sweep_args);
    sweep_cmd->add_option("--base", sweep_base, "base acoustic checkpoint")->required();
    sweep_cmd->add_option("--axis", axis_name, "lora_rank | cross_attn_dim | data_fraction")->required();
    sweep_cmd->add_option("--values", values_csv, "comma-separated axis values")->required();
    sweep_cmd->add_option("--requests-per-value", sweep_requests, "held-out requests per value");

    CLI11_PARSE(app, argc, argv);

    try {
        if (corpus_cmd->parsed()) {
            run_corpus(load_with_seed(corpus_args), corpus_args.out);
        } else if (pretrain_cmd->parsed()) {
            run_pretrain(load_with_seed(pretrain_args), pretrain_args.out);
        } else if (finetune_cmd->parsed()) {
            run_finetune(load_with_seed(finetune_args), base_ckpt, base_duration_ckpt,
                         finetune_args.out, override_fp);
        } else if (generate_cmd->parsed()) {
            GenerateResult r = run_generate(load_with_seed(generate_args), gen_ckpt, request_file,
                                            generate_args.out, duration_ckpt, gen_override_fp);
            std::printf("generated %d ok, %d failed -> %s\n", r.ok, r.failed, r.manifest_path.c_str());
            if (r.failed > 0) return 1;
        } else if (evaluate_cmd->parsed()) {
            RunConfig cfg = load_config(evaluate_args.config);
            if (cfg.corpus.kind != CorpusKind::task) {
                throw std::invalid_argument("evaluate: config must describe a task corpus");
            }
            EvalSummary s = run_evaluate(gen_manifest, eval_requests, cfg.corpus.task, evaluate_args.out);
            std::printf("evaluated %d (missing %d): micro F1 %.4f", s.evaluated, s.missing,
                        s.f1.micro_f1);
            if (s.paired_total > 0) {
                std::printf(", paired energy wins %d/%d", s.paired_wins, s.paired_total);
            }
            std::printf("\n");
            if (s.missing > 0) return 1;
        } else if (sweep_cmd->parsed()) {
            RunConfig cfg = load_with_seed(sweep_args);
            auto rows = run_sweep(cfg, sweep_base, sweep_axis_from(axis_name),
                                  parse_values(values_csv), sweep_args.out, sweep_requests);
            bool all_ok = true;
            for (const auto& row : rows) {
                std::printf("%s=%g: %s micro_f1=%.4f trainable=%lld adaptive=%lld %s\n",
                            axis_name.c_str(), row.value, row.ok ? "ok" : "ERROR", row.micro_f1,
                            static_cast<long long>(row.trainable_params),
                            static_cast<long long>(row.adaptive_params), row.error.c_str());
                all_ok = all_ok && row.ok;
            }
            if (!all_ok) return 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
