// ept: efficient prototype tuning over precomputed embeddings.
// Subcommands: gen-synth, run, grad-check, compare, inspect.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "ept/config.hpp"
#include "ept/embedding.hpp"
#include "ept/grad_check.hpp"
#include "ept/runner.hpp"

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ept::IoError("cannot open " + path + " for writing");
    out << text;
    out.flush();
    if (!out) throw ept::IoError("write failed for " + path);
}

void print_stage_grid(const ept::RunReport& report) {
    std::printf("stage   ");
    for (const auto& s : report.stages) std::printf("%8s", ("S" + std::to_string(s.stage)).c_str());
    std::printf("\nacc(%%) ");
    for (const auto& s : report.stages) std::printf("%8.2f", 100.0 * s.accuracy);
    std::printf("\naverage %.2f%%   trainable params %lld\n", 100.0 * report.average,
                static_cast<long long>(report.params_trainable));
}

int cmd_gen_synth(const ept::SynthSpec& spec, std::uint64_t seed, const std::string& out_path) {
    const ept::EmbeddingDataset ds = ept::generate_synthetic(spec, seed);
    ept::save_embeddings(ds, out_path);
    std::printf("wrote %s: N=%lld d_f=%lld num_classes=%u\n", out_path.c_str(),
                static_cast<long long>(ds.size()), static_cast<long long>(ds.dim()),
                ds.num_classes);
    return 0;
}

struct RunFlags {
    std::string embeddings;
    std::string config;
    std::string out;
    std::string save_pool;
    std::vector<std::string> ablation;
    std::string train_logits;
    std::int64_t seed = -1;
    int threads = 0;
    double bias_shift = -1.0;
};

ept::CliConfig resolve_config(const RunFlags& flags) {
    ept::CliConfig cfg = ept::load_cli_config(flags.config);
    for (const std::string& a : flags.ablation) {
        if (a == "no-nep")
            cfg.ablation.nep = false;
        else if (a == "no-cs")
            cfg.ablation.cs_offset = false;
        else if (a == "no-ta")
            cfg.ablation.ta_offset = false;
        else
            throw ept::ConfigError("unknown --ablation value \"" + a +
                                   "\" (expected no-nep, no-cs or no-ta)");
    }
    if (!flags.train_logits.empty()) {
        if (flags.train_logits == "nep")
            cfg.train.train_logits = ept::LogitMode::Nep;
        else if (flags.train_logits == "distance")
            cfg.train.train_logits = ept::LogitMode::Distance;
        else
            throw ept::ConfigError("--train-logits must be nep or distance");
    }
    if (flags.seed >= 0) cfg.train.seed = std::uint64_t(flags.seed);
    if (flags.threads > 0) cfg.threads = flags.threads;
    if (flags.bias_shift >= 0) cfg.bias_shift = flags.bias_shift;
    if (!flags.out.empty()) cfg.out = flags.out;
    cfg.validate();
    return cfg;
}

int cmd_run(const RunFlags& flags) {
    const ept::CliConfig cfg = resolve_config(flags);
    if (!cfg.out) throw ept::ConfigError("run: no report path (--out or config \"out\")");
    const ept::EmbeddingDataset ds = ept::load_embeddings(flags.embeddings);

    ept::RunHooks hooks;
    if (!flags.save_pool.empty())
        hooks.on_pool_ready = [&](const ept::CalibrationPool& pool) {
            ept::save_pool(pool, flags.save_pool);
        };

    const ept::RunReport report = ept::run_protocol(ds, cfg, &hooks);
    write_text(*cfg.out, ept::to_json(report));
    print_stage_grid(report);
    std::printf("report written to %s\n", cfg.out->c_str());
    return 0;
}

int cmd_compare(const RunFlags& flags, const std::string& csv_path) {
    const ept::CliConfig cfg = resolve_config(flags);
    const ept::EmbeddingDataset ds = ept::load_embeddings(flags.embeddings);
    const ept::CompareReport report = ept::compare_baselines(ds, cfg);

    std::printf("%-18s %10s %10s %10s\n", "metric", "off_avg(%)", "on_avg(%)", "delta");
    for (const char* m : {"nep", "euclidean", "squared_euclidean", "cosine"}) {
        double on = 0, off = 0;
        for (const auto& cell : report.cells)
            if (cell.metric == m) (cell.offsets_on ? on : off) = cell.avg_acc;
        std::printf("%-18s %10.2f %10.2f %+10.2f\n", m, 100.0 * off, 100.0 * on,
                    100.0 * report.delta_avg(m));
    }
    write_text(csv_path, ept::compare_csv(report));
    std::printf("grid written to %s\n", csv_path.c_str());
    return 0;
}

int cmd_grad_check(int trials, std::uint64_t seed, bool float32) {
    ept::GradCheckOptions opts;
    opts.trials = trials;
    opts.seed = seed;
    opts.float32 = float32;
    const ept::GradCheckReport report = ept::run_gradient_check(opts);
    if (float32)
        std::printf("float32 mode: tolerance relaxed to %g\n", report.tolerance);
    std::printf("trials=%d h=%g max_rel_err=%.3e (tolerance %g)\n", report.trials_run, report.step,
                report.max_rel_err, report.tolerance);
    if (!report.passed) {
        std::printf("FAIL: worst parameter: %s\n", report.worst_param.c_str());
        return 1;
    }
    std::printf("max_rel_err <= %g\n", report.tolerance);
    return 0;
}

int cmd_inspect(const std::string& path) {
    const ept::EmbeddingDataset ds = ept::load_embeddings(path);
    std::printf("EPTB v1: N=%lld d_f=%lld num_classes=%u\n", static_cast<long long>(ds.size()),
                static_cast<long long>(ds.dim()), ds.num_classes);
    std::map<std::uint32_t, std::int64_t> histogram;
    for (std::uint32_t label : ds.labels) ++histogram[label];
    std::printf("label histogram:\n");
    for (const auto& [label, count] : histogram)
        std::printf("  %u: %lld\n", label, static_cast<long long>(count));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ept: prototype calibration and negative-error-projector "
                 "classification over precomputed embeddings"};
    app.require_subcommand(1);

    // gen-synth
    auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic embedding file");
    ept::SynthSpec spec;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--classes", spec.num_classes, "Number of classes")->required();
    gen->add_option("--dim", spec.dim, "Feature dimension")->required();
    gen->add_option("--per-class", spec.samples_per_class, "Samples per class")->required();
    gen->add_option("--mean-scale", spec.mean_scale, "Radius of the class-mean sphere");
    gen->add_option("--noise-std", spec.noise_std, "Within-class noise std");
    gen->add_option("--seed", gen_seed, "RNG seed");
    gen->add_option("--out", gen_out, "Output EPTB path")->required();

    // run
    auto* run = app.add_subcommand("run", "Run the full incremental protocol");
    RunFlags run_flags;
    run->add_option("--embeddings", run_flags.embeddings, "EPTB embedding file")->required();
    run->add_option("--config", run_flags.config, "JSON config file")->required();
    run->add_option("--out", run_flags.out, "Report JSON path");
    run->add_option("--seed", run_flags.seed, "Override config seed");
    run->add_option("--threads", run_flags.threads, "Evaluation threads");
    run->add_option("--bias-shift", run_flags.bias_shift,
                    "Shift incremental support sets by this length");
    run->add_option("--ablation", run_flags.ablation, "Disable components: no-nep, no-cs, no-ta");
    run->add_option("--train-logits", run_flags.train_logits, "Training logits: nep or distance");
    run->add_option("--save-pool", run_flags.save_pool, "Write the final calibration pool here");

    // grad-check
    auto* grad = app.add_subcommand("grad-check", "Finite-difference check of the backward pass");
    int trials = 100;
    std::uint64_t grad_seed = 1;
    bool float32 = false;
    grad->add_option("--trials", trials, "Random instances to check");
    grad->add_option("--seed", grad_seed, "RNG seed");
    grad->add_flag("--float32", float32, "Check the float32 kernels (tolerance 1e-2)");

    // compare
    auto* cmp = app.add_subcommand("compare", "Metric x offsets baseline grid");
    RunFlags cmp_flags;
    std::string cmp_out;
    cmp->add_option("--embeddings", cmp_flags.embeddings, "EPTB embedding file")->required();
    cmp->add_option("--config", cmp_flags.config, "JSON config file")->required();
    cmp->add_option("--out", cmp_out, "Output CSV path")->required();
    cmp->add_option("--seed", cmp_flags.seed, "Override config seed");
    cmp->add_option("--threads", cmp_flags.threads, "Evaluation threads");
    cmp->add_option("--bias-shift", cmp_flags.bias_shift,
                    "Shift incremental support sets by this length");

    // inspect
    auto* ins = app.add_subcommand("inspect", "Print an EPTB header and label histogram");
    std::string inspect_path;
    ins->add_option("file", inspect_path, "EPTB file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_synth(spec, gen_seed, gen_out);
        if (run->parsed()) return cmd_run(run_flags);
        if (grad->parsed()) return cmd_grad_check(trials, grad_seed, float32);
        if (cmp->parsed()) return cmd_compare(cmp_flags, cmp_out);
        if (ins->parsed()) return cmd_inspect(inspect_path);
    } catch (const ept::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ept::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
