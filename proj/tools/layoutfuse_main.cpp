#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "layoutfuse/pipeline.hpp"

namespace {

// Exit codes: 0 ok, 1 I/O, 2 invalid input/spec, 3 numeric failure.
int run_guarded(const std::function<void()>& fn) {
    try {
        fn();
        return 0;
    } catch (const lf::SpecError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const lf::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const lf::IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layout-guided dual-stream attention sampler"};
    app.set_version_flag("--version", lf::kVersion);
    app.require_subcommand(1);

    // generate
    lf::GenerateOptions gen;
    std::string gen_mode;
    int gen_steps = -1;
    double gen_image_scale = -1.0, gen_guidance = -1.0;
    std::optional<uint64_t> gen_seed;
    auto* generate = app.add_subcommand("generate", "Sample an image from a layout spec");
    generate->add_option("--spec", gen.spec_path, "Layout spec JSON")->required();
    generate->add_option("--weights", gen.weights_path, "Weights container")->required();
    generate->add_option("--out", gen.out_path, "Output image (PPM)")->required();
    generate->add_option("--mode", gen_mode, "anyms|masked-sum|global-sum|text-only");
    generate->add_option("--steps", gen_steps, "Sampling steps");
    generate->add_option("--seed", gen_seed, "Seed override");
    generate->add_option("--image-scale", gen_image_scale, "Image stream scale");
    generate->add_option("--guidance", gen_guidance, "Classifier-free guidance scale (0 = off)");
    generate->add_option("--dump-attn", gen.dump_attn_dir, "Directory for attention heatmaps");
    generate->add_option("--dump-latent", gen.dump_latent_path, "Path for the z0 container");
    generate->add_option("--manifest", gen.manifest_path, "Manifest path");
    generate->add_option("--attn-every", gen.attn_every, "Keep every k-th step in the dump");

    // train-toy
    lf::TrainToyOptions train;
    std::optional<int> train_epochs;
    std::optional<uint64_t> train_seed;
    auto* train_toy = app.add_subcommand("train-toy", "Train the toy denoiser on synthetic data");
    train_toy->add_option("--out", train.out_path, "Output weights container")->required();
    train_toy->add_option("--config", train.config_path, "Training config JSON");
    train_toy->add_option("--epochs", train_epochs, "Epoch count override");
    train_toy->add_option("--seed", train_seed, "Seed override");
    train_toy->add_option("--manifest", train.manifest_path, "Manifest path");
    train_toy->add_flag("--quiet", train.quiet, "Suppress the loss log");

    // bench
    lf::BenchOptions bench;
    auto* bench_cmd = app.add_subcommand("bench", "Time cropped vs masked image attention");
    bench_cmd->add_option("--grid", bench.grid, "Grid side length");
    bench_cmd->add_option("--subjects", bench.subjects, "Subject count");
    bench_cmd->add_option("--coverage", bench.coverage, "Per-box area fraction, in (0,1]");
    bench_cmd->add_option("--repeat", bench.repeat, "Repeats (median reported)");
    bench_cmd->add_option("--seed", bench.seed, "Seed");
    bench_cmd->add_option("--tokens", bench.subject_tokens, "Tokens per subject");
    bench_cmd->add_option("--format", bench.format, "json|table");
    bench_cmd->add_option("--out", bench.out_path, "Write the JSON report here");
    bench_cmd->add_option("--manifest", bench.manifest_path, "Manifest path");

    // eval-layout
    lf::EvalLayoutOptions eval;
    auto* eval_cmd = app.add_subcommand("eval-layout", "Score layout control (mIoU)");
    eval_cmd->add_option("--pred", eval.pred_path, "Predicted rects JSON (fixture mode)");
    eval_cmd->add_option("--target", eval.target_path, "Target rects JSON (fixture mode)");
    eval_cmd->add_option("--image", eval.image_path, "Generated image (PPM)");
    eval_cmd->add_option("--spec", eval.spec_path, "Layout spec JSON");
    eval_cmd->add_option("--weights", eval.weights_path, "Weights container (palette source)");
    eval_cmd->add_option("--threshold", eval.threshold,
                         "Squared color distance cutoff (<0 = always assign nearest)");
    eval_cmd->add_option("--out", eval.out_path, "Write the JSON report here");

    // inspect-attn
    lf::InspectAttnOptions inspect;
    std::string inspect_mode;
    std::optional<int> inspect_steps;
    std::optional<uint64_t> inspect_seed;
    auto* inspect_cmd = app.add_subcommand("inspect-attn", "Dump attention heatmaps for a run");
    inspect_cmd->add_option("--spec", inspect.spec_path, "Layout spec JSON")->required();
    inspect_cmd->add_option("--weights", inspect.weights_path, "Weights container")->required();
    inspect_cmd->add_option("--out-dir", inspect.out_dir, "Heatmap directory")->required();
    inspect_cmd->add_option("--mode", inspect_mode, "Mode override");
    inspect_cmd->add_option("--steps", inspect_steps, "Sampling steps");
    inspect_cmd->add_option("--seed", inspect_seed, "Seed override");
    inspect_cmd->add_option("--every", inspect.every, "Keep every k-th step");
    inspect_cmd->add_option("--manifest", inspect.manifest_path, "Manifest path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (generate->parsed()) {
        if (!gen_mode.empty()) gen.mode = gen_mode;
        if (gen_steps >= 0) gen.steps = gen_steps;
        if (gen_seed) gen.seed = *gen_seed;
        if (gen_image_scale >= 0.0) gen.image_scale = gen_image_scale;
        if (gen_guidance >= 0.0) gen.guidance = gen_guidance;
        return run_guarded([&] { lf::run_generate(gen); });
    }
    if (train_toy->parsed()) {
        if (train_epochs) train.epochs = *train_epochs;
        if (train_seed) train.seed = *train_seed;
        return run_guarded([&] {
            const lf::RunManifest m = lf::run_train_toy(train);
            std::cout << m.to_json() << "\n";
        });
    }
    if (bench_cmd->parsed()) {
        return run_guarded([&] {
            const lf::BenchResult r = lf::run_bench(bench);
            std::cout << (bench.format == "table" ? r.table : r.report_json) << "\n";
        });
    }
    if (eval_cmd->parsed()) {
        return run_guarded([&] {
            const lf::EvalLayoutResult r = lf::run_eval_layout(eval);
            std::cout << r.report_json << "\n";
        });
    }
    if (inspect_cmd->parsed()) {
        if (!inspect_mode.empty()) inspect.mode = inspect_mode;
        if (inspect_steps) inspect.steps = *inspect_steps;
        if (inspect_seed) inspect.seed = *inspect_seed;
        return run_guarded([&] { lf::run_inspect_attn(inspect); });
    }
    return 2;
}
