#pragma once

#include <optional>
#include <string>
#include <vector>

#include "layoutfuse/diffusion.hpp"
#include "layoutfuse/metrics.hpp"

namespace lf {

inline constexpr const char* kVersion = "layoutfuse 0.1.0";

// Every successful command records what ran: resolved settings, input hashes,
// output paths and wall clock. Serialized as JSON.
struct RunManifest {
    std::string command;
    std::string version = kVersion;
    uint64_t seed = 0;
    std::string config_json;  // resolved settings, JSON object text
    std::vector<std::pair<std::string, std::string>> input_hashes;
    std::vector<std::string> outputs;
    double wall_clock_s = 0.0;

    std::string to_json() const;
    void write(const std::string& path) const;
};

struct GenerateOptions {
    std::string spec_path;
    std::string weights_path;
    std::string out_path;
    std::optional<std::string> mode;
    std::optional<int> steps;
    std::optional<uint64_t> seed;
    std::optional<double> image_scale;
    std::optional<double> guidance;
    std::string dump_attn_dir;     // empty = no heatmaps
    std::string dump_latent_path;  // empty = no latent container
    std::string manifest_path;     // empty = <out>.manifest.json
    int attn_every = 1;            // keep every k-th sampled step in the dump
};

RunManifest run_generate(const GenerateOptions& opt);

struct TrainToyOptions {
    std::string out_path;
    std::string config_path;  // optional JSON with TrainConfig fields
    std::optional<int> epochs;
    std::optional<uint64_t> seed;
    std::string manifest_path;  // empty = <out>.manifest.json
    bool quiet = false;
};

RunManifest run_train_toy(const TrainToyOptions& opt);

struct BenchOptions {
    int grid = 64;
    int subjects = 4;
    double coverage = 0.25;  // per-box area fraction of the canvas
    int repeat = 20;
    uint64_t seed = 0;
    int subject_tokens = 4;
    std::string format = "json";  // json|table
    std::string out_path;         // empty = stdout only
    std::string manifest_path;    // empty = no manifest file (report embeds one)
};

struct BenchResult {
    std::string report_json;
    std::string table;
    double anyms_median_ms = 0.0;
    double masked_median_ms = 0.0;
    uint64_t anyms_flops = 0;
    uint64_t masked_flops = 0;
    double flop_ratio = 0.0;
};

BenchResult run_bench(const BenchOptions& opt);

struct EvalLayoutOptions {
    // Fixture mode: scored directly from rect lists.
    std::string pred_path;
    std::string target_path;
    // Image mode: localize subjects in a generated image against the layout
    // spec's boxes, with the palette from the weights container.
    std::string image_path;
    std::string spec_path;
    std::string weights_path;
    double threshold = -1.0;
    std::string out_path;  // empty = stdout only
};

struct EvalLayoutResult {
    LayoutScore score;
    std::string report_json;
};

EvalLayoutResult run_eval_layout(const EvalLayoutOptions& opt);

struct InspectAttnOptions {
    std::string spec_path;
    std::string weights_path;
    std::string out_dir;
    std::optional<std::string> mode;
    std::optional<int> steps;
    std::optional<uint64_t> seed;
    int every = 1;
    std::string manifest_path;  // empty = <out_dir>/manifest.json
};

RunManifest run_inspect_attn(const InspectAttnOptions& opt);

}  // namespace lf
