#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "latentlm/bench.hpp"
#include "latentlm/errors.hpp"
#include "latentlm/metrics.hpp"
#include "latentlm/trainer.hpp"

namespace fs = std::filesystem;
using namespace latentlm;

namespace {

constexpr int kUsageExit = 2;
constexpr int kHaltExit = 3;

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out = "run";
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "Run config (sectioned key = value file)")->check(CLI::ExistingFile);
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&c](std::uint64_t s) { c.seed = s, c.seed_set = true; }, "Overrides train.seed");
    cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

RunConfig load_config(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
    if (c.seed_set) cfg.train.seed = c.seed;
    cfg.validate();
    return cfg;
}

fs::path out_dir(const Common& c) {
    fs::path dir(c.out);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << text;
}

GenerateConfig generate_config(const RunConfig& cfg) {
    GenerateConfig g;
    g.max_new = cfg.generate.max_new;
    g.discrete = cfg.generate.discrete;
    g.continuous = cfg.generate.sampler;
    return g;
}

std::string resolve_checkpoint(const std::string& given, const Common& c) {
    if (!given.empty()) return given;
    return (fs::path(c.out) / "model.ckpt").string();
}

int cmd_vae_train(const Common& c) {
    auto cfg = load_config(c);
    auto dir = out_dir(c);
    data::LinearGaussianTask task;
    task.d_input = cfg.vae.d_input;
    task.seed = cfg.train.seed;
    auto stream = Rng::stream(cfg.train.seed, 1);
    auto x = task.sample(cfg.vae_n_train, stream);
    auto init = Rng::stream(cfg.train.seed, 0);
    vae::SigmaVae model(cfg.vae, init);
    auto tc = cfg.vae_train;
    tc.seed = cfg.train.seed;
    auto losses = vae::train_vae(model, x, tc);

    std::ostringstream csv;
    csv << "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) csv << i + 1 << ',' << losses[i] << '\n';
    write_file(dir / "vae_metrics.csv", csv.str());

    Checkpoint ckpt;
    ckpt.kind = "sigma_vae";
    ckpt.config_text = to_text(cfg);
    ParamList params;
    model.collect(params, "vae");
    ckpt.tensors = snapshot(params);
    ckpt.step = losses.size();
    save_checkpoint((dir / "vae.ckpt").string(), ckpt);

    auto eval_rng = Rng::stream(cfg.train.seed, 2);
    auto report = vae::latent_variance_report(model, task.sample(1024, eval_rng), eval_rng);
    std::cout << "reconstruction mse " << model.reconstruction_mse(x) << "\n";
    for (std::size_t j = 0; j < report.var_noise.size(); ++j) {
        std::cout << "channel " << j << ": var(mu) " << report.var_mu[j] << "  var(z-mu) " << report.var_noise[j]
                  << (report.collapsed[j] ? "  collapsed" : "") << "\n";
    }
    std::cout << "wrote " << (dir / "vae.ckpt").string() << "\n";
    return 0;
}

int cmd_train(const Common& c, const std::string& resume) {
    auto dir = out_dir(c);
    const auto ckpt_path = (dir / "model.ckpt").string();
    Trainer trainer = resume.empty() ? Trainer(load_config(c)) : Trainer::from_checkpoint(load_checkpoint(resume));
    const auto& cfg = trainer.config();
    auto data = build_datasets(cfg);

    std::ofstream csv(dir / "metrics.csv", std::ios::binary);
    csv << kMetricsHeader << '\n';
    const auto remaining = cfg.train.total_steps > trainer.step_count() ? cfg.train.total_steps - trainer.step_count() : 0;
    auto result = trainer.run(data.train, remaining, [&](const MetricsRow& row) {
        csv << format_metrics_row(row) << '\n';
        std::printf("step %zu  lm %.4f  diff %.4f  lr %.3g\n", row.step, row.lm_loss, row.diff_loss, row.lr);
    }, ckpt_path);
    csv.flush();
    if (result.halted) {
        // The last periodic checkpoint is left as is.
        std::cerr << "halted: " << result.message << "\n";
        return kHaltExit;
    }
    save_checkpoint(ckpt_path, trainer.checkpoint());
    if (cfg.data.task != TaskKind::gmm) {
        std::printf("held-out ppl %.4f\n", metrics::perplexity(trainer.model(), data.eval));
    }
    std::cout << "wrote " << ckpt_path << "\n";
    return 0;
}

int cmd_generate(const Common& c, const std::string& ckpt_arg, std::size_t n_override) {
    RunConfig cfg;
    auto model = load_model(load_checkpoint(resolve_checkpoint(ckpt_arg, c)), &cfg);
    if (!c.config.empty()) cfg.generate = load_run_config(c.config).generate;
    const auto seed = c.seed_set ? c.seed : cfg.train.seed;
    const auto n = n_override ? n_override : cfg.generate.n_samples;
    auto prompt = cfg.generate.prompt.empty() ? MixedSequence{Vocabulary::BOS} : parse_sequence(cfg.generate.prompt);
    const auto gc = generate_config(cfg);

    std::string text;
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = Rng::stream(seed, i);
        auto seq = prompt;
        for (auto& e : model.generate(prompt, gc, rng)) seq.push_back(std::move(e));
        text += format_sequence(seq) + "\n";
    }
    auto path = out_dir(c) / "samples.txt";
    write_file(path, text);
    std::cout << text;
    return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt_arg, std::vector<std::string> wanted, std::size_t n_gen) {
    RunConfig cfg;
    auto model = load_model(load_checkpoint(resolve_checkpoint(ckpt_arg, c)), &cfg);
    if (c.seed_set) cfg.train.seed = c.seed;
    const bool gmm = cfg.data.task == TaskKind::gmm;
    if (wanted.empty()) {
        wanted = gmm ? std::vector<std::string>{"diff_loss", "mmd", "class_recovery"}
                     : std::vector<std::string>{"ppl"};
    }
    auto data = build_datasets(cfg);
    auto rng = Rng::stream(cfg.train.seed, 3);
    std::ostringstream report;
    const auto task = data::two_class_gmm();
    std::vector<metrics::Samples> generated;
    auto class_samples = [&]() -> const std::vector<metrics::Samples>& {
        if (generated.empty()) {
            for (std::size_t k = 0; k < cfg.model.n_classes; ++k) {
                generated.push_back(metrics::generate_class_latents(model, k, n_gen, generate_config(cfg), rng));
            }
        }
        return generated;
    };
    for (const auto& m : wanted) {
        if (m == "ppl") {
            report << "ppl," << metrics::perplexity(model, data.eval) << "\n";
        } else if (m == "diff_loss") {
            if (!gmm) throw ArgumentError("eval: diff_loss needs a dataset with latents");
            report << "diff_loss," << metrics::diffusion_loss(model, data.eval, rng) << "\n";
        } else if (m == "mmd" || m == "class_recovery") {
            if (!gmm) throw ArgumentError("eval: " + m + " needs the class-conditional latent task");
            const auto& gen = class_samples();
            for (std::size_t k = 0; k < gen.size(); ++k) {
                if (m == "mmd") {
                    metrics::Samples ref;
                    for (std::size_t i = 0; i < 2 * n_gen; ++i) ref.push_back(data::gen_class_gmm(task, k, rng));
                    auto t = metrics::mmd_test(gen[k], ref, rng);
                    report << "mmd2_class" << k << "," << t.statistic << "\n";
                    report << "mmd2_threshold_class" << k << "," << t.threshold << "\n";
                } else {
                    report << "recovery_class" << k << "," << metrics::class_recovery(task, gen[k], k) << "\n";
                }
            }
        } else {
            throw ArgumentError("eval: unknown metric '" + m + "' (expected ppl|diff_loss|mmd|class_recovery)");
        }
    }
    write_file(out_dir(c) / "eval.csv", "metric,value\n" + report.str());
    std::cout << report.str();
    return 0;
}

int cmd_bench(const Common& c, const std::string& ckpt_arg, const std::vector<std::size_t>& batches,
              std::size_t latents, std::size_t repeats) {
    RunConfig cfg;
    LatentLM model;
    if (!ckpt_arg.empty()) {
        model = load_model(load_checkpoint(ckpt_arg), &cfg);
    } else {
        cfg = load_config(c);
        auto init = Rng::stream(cfg.train.seed, 0);
        model = LatentLM(cfg.model, init);
    }
    std::ostringstream csv;
    csv << "mode,batch,n_kv_heads,tokens_per_sec,backbone_calls_per_token\n";
    for (auto b : batches) {
        for (auto mode : {bench::Mode::latentlm, bench::Mode::iterative_denoise}) {
            bench::ThroughputConfig tc;
            tc.batch = b;
            tc.latents = latents;
            tc.repeats = repeats;
            tc.denoise_steps = cfg.generate.sampler.steps;
            tc.seed = cfg.train.seed;
            auto r = bench::bench_throughput(model, mode, tc);
            csv << bench::to_string(mode) << ',' << b << ',' << r.n_kv_heads << ',' << r.tokens_per_sec << ','
                << r.backbone_calls_per_token << '\n';
        }
    }
    write_file(out_dir(c) / "bench.csv", csv.str());
    std::cout << csv.str();
    return 0;
}

int cmd_inspect(const std::string& path) {
    auto ckpt = load_checkpoint(path);
    std::cout << "kind " << ckpt.kind << "\nstep " << ckpt.step << "\n\n" << ckpt.config_text << "\n";
    std::size_t total = 0;
    for (const auto& t : ckpt.tensors) {
        std::cout << t.name << " " << ad::shape_string(t.shape) << " " << t.values.size() << "\n";
        total += t.values.size();
    }
    std::cout << "parameters " << total << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent language model toolkit: tokenizer training, next-token diffusion training, sampling"};
    app.name("latentlm");
    app.require_subcommand(1);
    Common common;

    auto* vae_cmd = app.add_subcommand("vae-train", "Train the sigma-VAE tokenizer on a synthetic linear-Gaussian task");
    add_common(vae_cmd, common);

    std::string resume;
    auto* train_cmd = app.add_subcommand("train", "Train a model; writes metrics.csv and model.ckpt");
    add_common(train_cmd, common);
    train_cmd->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

    std::string ckpt;
    std::size_t n_samples = 0;
    auto* gen_cmd = app.add_subcommand("generate", "Sample sequences; writes samples.txt");
    add_common(gen_cmd, common);
    gen_cmd->add_option("--checkpoint", ckpt, "Model checkpoint (default <out>/model.ckpt)");
    gen_cmd->add_option("-n,--samples", n_samples, "Number of sequences (default sampler.n_samples)");

    std::vector<std::string> wanted;
    std::size_t n_gen = 300;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; writes eval.csv");
    add_common(eval_cmd, common);
    eval_cmd->add_option("--checkpoint", ckpt, "Model checkpoint (default <out>/model.ckpt)");
    eval_cmd->add_option("--metrics", wanted, "ppl, diff_loss, mmd, class_recovery")->delimiter(',');
    eval_cmd->add_option("--n-generate", n_gen, "Latents generated per class")->capture_default_str();

    std::vector<std::size_t> batches{1, 64};
    std::size_t latents = 8, repeats = 3;
    auto* bench_cmd = app.add_subcommand("bench", "Throughput of cached generation vs iterative denoising");
    add_common(bench_cmd, common);
    bench_cmd->add_option("--checkpoint", ckpt, "Model checkpoint (default: fresh model from --config)");
    bench_cmd->add_option("--batch", batches, "Batch sizes")->delimiter(',')->capture_default_str();
    bench_cmd->add_option("--latents", latents, "Latents per stream")->capture_default_str();
    bench_cmd->add_option("--repeats", repeats, "Timed repeats (best is kept)")->capture_default_str();

    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect", "Print a checkpoint's config snapshot and parameter counts");
    inspect_cmd->add_option("checkpoint", inspect_path, "Checkpoint file")->required()->check(CLI::ExistingFile);

    if (argc <= 1) {
        std::cerr << app.help();
        return kUsageExit;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << "\n" << app.help();
        return kUsageExit;
    }

    try {
        if (*vae_cmd) return cmd_vae_train(common);
        if (*train_cmd) return cmd_train(common, resume);
        if (*gen_cmd) return cmd_generate(common, ckpt, n_samples);
        if (*eval_cmd) return cmd_eval(common, ckpt, wanted, n_gen);
        if (*bench_cmd) return cmd_bench(common, ckpt, batches, latents, repeats);
        if (*inspect_cmd) return cmd_inspect(inspect_path);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kUsageExit;
}
