#include "layoutfuse/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

namespace lf {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string hash_of_file(const std::string& path) {
    return fnv1a64_hex(read_file_bytes(path));
}

std::string read_text_file(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

void write_text_file(const std::string& path, const std::string& text) {
    write_file_bytes(path, std::vector<uint8_t>(text.begin(), text.end()));
}

LayoutSpec load_spec_with_overrides(const std::string& spec_path, const TensorContainer& weights,
                                    const std::optional<std::string>& mode,
                                    const std::optional<int>& steps,
                                    const std::optional<uint64_t>& seed,
                                    const std::optional<double>& image_scale,
                                    const std::optional<double>& guidance) {
    LayoutSpec spec = parse_layout_spec(read_text_file(spec_path), weights);
    if (mode) spec.mode = mode_from_string(*mode);
    if (steps) {
        if (*steps < 1) throw SpecError("steps must be >= 1");
        spec.steps = *steps;
    }
    if (seed) spec.seed = *seed;
    if (image_scale) {
        if (*image_scale < 0.0) throw SpecError("image-scale must be >= 0");
        spec.image_scale = *image_scale;
    }
    if (guidance) spec.guidance = *guidance;
    return spec;
}

json spec_config_json(const LayoutSpec& spec) {
    json subjects = json::array();
    for (const SubjectSpec& s : spec.subjects) {
        subjects.push_back({{"id", s.id},
                            {"embedding", s.embedding_name},
                            {"box", s.box},
                            {"priority", s.priority}});
    }
    return json{{"grid", {{"h", spec.grid_h}, {"w", spec.grid_w}, {"c", spec.grid_c}}},
                {"prompt", spec.prompt_name},
                {"subjects", subjects},
                {"seed", spec.seed},
                {"steps", spec.steps},
                {"mode", mode_to_string(spec.mode)},
                {"image_scale", spec.image_scale},
                {"guidance", spec.guidance}};
}

// Keeps only every k-th sampled step in a captured trace (ordered as in the
// sampling trajectory).
void thin_trace(AttnTrace& trace, const std::vector<int>& timesteps, int every) {
    if (every <= 1) return;
    std::vector<int> keep;
    for (size_t i = 0; i < timesteps.size(); i += static_cast<size_t>(every)) {
        keep.push_back(timesteps[i]);
    }
    for (auto it = trace.subject_mass.begin(); it != trace.subject_mass.end();) {
        const int step = std::get<0>(it->first);
        if (std::find(keep.begin(), keep.end(), step) == keep.end()) {
            it = trace.subject_mass.erase(it);
        } else {
            ++it;
        }
    }
}

}  // namespace

std::string RunManifest::to_json() const {
    json inputs = json::object();
    for (const auto& [path, hash] : input_hashes) inputs[path] = hash;
    json j{{"command", command},
           {"version", version},
           {"seed", seed},
           {"config", json::parse(config_json.empty() ? "{}" : config_json)},
           {"inputs", inputs},
           {"outputs", outputs},
           {"wall_clock_s", wall_clock_s}};
    return j.dump(2);
}

void RunManifest::write(const std::string& path) const {
    write_text_file(path, to_json() + "\n");
}

RunManifest run_generate(const GenerateOptions& opt) {
    const auto start = Clock::now();
    const TensorContainer weights = TensorContainer::read_file(opt.weights_path);
    const LayoutSpec spec = load_spec_with_overrides(opt.spec_path, weights, opt.mode, opt.steps,
                                                     opt.seed, opt.image_scale, opt.guidance);
    const ToyModel model = ToyModel::load(weights);
    const Schedule schedule = make_schedule(model.T, model.beta_start, model.beta_end);

    AttnTrace trace;
    trace.capture_maps = !opt.dump_attn_dir.empty();
    AttnTrace* trace_ptr = trace.capture_maps ? &trace : nullptr;

    const GenerationResult result = sample(spec, model, schedule, trace_ptr);

    RunManifest manifest;
    manifest.command = "generate";
    manifest.seed = spec.seed;
    manifest.config_json = spec_config_json(spec).dump();
    manifest.input_hashes = {{opt.spec_path, hash_of_file(opt.spec_path)},
                             {opt.weights_path, hash_of_file(opt.weights_path)}};

    write_image(result.image, opt.out_path);
    manifest.outputs.push_back(opt.out_path);

    if (!opt.dump_latent_path.empty()) {
        TensorContainer latent;
        TensorEntry e;
        e.dtype = Dtype::F64;
        e.shape = {static_cast<size_t>(result.z0.h), static_cast<size_t>(result.z0.w),
                   static_cast<size_t>(result.z0.c)};
        e.values = result.z0.values;
        latent.put("z0", std::move(e));
        latent.write_file(opt.dump_latent_path);
        manifest.outputs.push_back(opt.dump_latent_path);
    }

    if (trace_ptr) {
        thin_trace(trace, result.timesteps, opt.attn_every);
        const std::vector<std::string> files =
            attention_heatmap_dump(trace, spec.grid_h, spec.grid_w, opt.dump_attn_dir);
        manifest.outputs.insert(manifest.outputs.end(), files.begin(), files.end());
    }

    manifest.wall_clock_s = seconds_since(start);
    const std::string manifest_path =
        opt.manifest_path.empty() ? opt.out_path + ".manifest.json" : opt.manifest_path;
    manifest.write(manifest_path);
    return manifest;
}

RunManifest run_train_toy(const TrainToyOptions& opt) {
    const auto start = Clock::now();
    TrainConfig cfg;
    std::vector<std::pair<std::string, std::string>> inputs;
    if (!opt.config_path.empty()) {
        json j;
        try {
            j = json::parse(read_text_file(opt.config_path));
        } catch (const json::exception& e) {
            throw SpecError(std::string("train config: invalid JSON: ") + e.what());
        }
        inputs.emplace_back(opt.config_path, hash_of_file(opt.config_path));
        auto get_int = [&](const char* k, int& dst) { if (j.contains(k)) dst = j[k].get<int>(); };
        auto get_dbl = [&](const char* k, double& dst) { if (j.contains(k)) dst = j[k].get<double>(); };
        get_int("grid_h", cfg.grid_h);
        get_int("grid_w", cfg.grid_w);
        get_int("grid_c", cfg.grid_c);
        get_int("layers", cfg.layers);
        get_int("heads", cfg.heads);
        get_int("d_model", cfg.d_model);
        get_int("d_head", cfg.d_head);
        get_int("d_cond", cfg.d_cond);
        get_int("d_hidden", cfg.d_hidden);
        get_int("schedule_steps", cfg.schedule_steps);
        get_dbl("beta_start", cfg.beta_start);
        get_dbl("beta_end", cfg.beta_end);
        get_int("subject_count", cfg.subject_count);
        get_int("epochs", cfg.epochs);
        get_int("batches_per_epoch", cfg.batches_per_epoch);
        get_int("batch_size", cfg.batch_size);
        get_dbl("learning_rate", cfg.learning_rate);
        get_dbl("blob_min_frac", cfg.blob_min_frac);
        get_dbl("blob_max_frac", cfg.blob_max_frac);
        if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    }
    if (opt.epochs) cfg.epochs = *opt.epochs;
    if (opt.seed) cfg.seed = *opt.seed;

    const TrainResult result = train_toy(
        cfg, opt.quiet ? std::function<void(const std::string&)>()
                       : [](const std::string& line) { std::cout << line << "\n"; });

    TensorContainer out;
    result.model.save(out);
    out.write_file(opt.out_path);

    RunManifest manifest;
    manifest.command = "train-toy";
    manifest.seed = cfg.seed;
    manifest.config_json =
        json{{"grid_h", cfg.grid_h},
             {"grid_w", cfg.grid_w},
             {"layers", cfg.layers},
             {"heads", cfg.heads},
             {"d_model", cfg.d_model},
             {"d_head", cfg.d_head},
             {"d_cond", cfg.d_cond},
             {"d_hidden", cfg.d_hidden},
             {"schedule_steps", cfg.schedule_steps},
             {"subject_count", cfg.subject_count},
             {"epochs", cfg.epochs},
             {"batches_per_epoch", cfg.batches_per_epoch},
             {"batch_size", cfg.batch_size},
             {"learning_rate", cfg.learning_rate},
             {"parameters", result.model.parameter_count()},
             {"holdout_loss_initial", result.holdout_loss_initial},
             {"holdout_loss_final", result.holdout_loss_final}}
            .dump();
    manifest.input_hashes = inputs;
    manifest.outputs.push_back(opt.out_path);
    manifest.wall_clock_s = seconds_since(start);
    const std::string manifest_path =
        opt.manifest_path.empty() ? opt.out_path + ".manifest.json" : opt.manifest_path;
    manifest.write(manifest_path);
    return manifest;
}

BenchResult run_bench(const BenchOptions& opt) {
    if (!(opt.coverage > 0.0) || opt.coverage > 1.0) {
        throw SpecError("bench: coverage must be in (0, 1]");
    }
    if (opt.grid < 2 || opt.subjects < 1 || opt.repeat < 1 || opt.subject_tokens < 1) {
        throw SpecError("bench: bad grid/subjects/repeat settings");
    }
    if (opt.format != "json" && opt.format != "table") {
        throw SpecError("bench: format must be json or table");
    }

    AttentionConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.d_head = 16;
    cfg.d_model = cfg.heads * cfg.d_head;
    cfg.d_cond = 8;
    cfg.validate();

    const int n = opt.grid;
    // Each box covers `coverage` of the canvas; side chosen square-ish and
    // exact in area when sqrt(coverage)*grid is integral.
    const int side_h = std::max(1, std::min(n, static_cast<int>(std::lround(n * std::sqrt(opt.coverage)))));
    const int side_w = side_h;

    Rng rng(opt.seed);
    std::vector<double> anyms_ms, masked_ms;
    uint64_t anyms_flops_measured = 0, masked_flops_measured = 0;
    uint64_t anyms_flops_analytic = 0, masked_flops_analytic = 0;

    for (int rep = 0; rep < opt.repeat; ++rep) {
        const BlockWeights weights = BlockWeights::random(cfg, rng, 0.2);
        const AdapterWeights adapter =
            AdapterWeights::random(cfg.layers, cfg.heads, cfg.d_cond, cfg.d_head, rng, 0.2);
        const Matrix z = Matrix::random_gaussian(n * n, cfg.d_model, rng, 1.0);

        std::vector<SubjectCondition> subjects;
        std::vector<NormBox> boxes;
        std::vector<int> priorities;
        std::vector<int> tokens;
        for (int j = 0; j < opt.subjects; ++j) {
            const int y0 = static_cast<int>(rng.next_below(static_cast<uint64_t>(n - side_h + 1)));
            const int x0 = static_cast<int>(rng.next_below(static_cast<uint64_t>(n - side_w + 1)));
            // Box edges exactly on grid lines so rect area is exact.
            NormBox box{static_cast<double>(x0) / n, static_cast<double>(y0) / n,
                        static_cast<double>(x0 + side_w) / n, static_cast<double>(y0 + side_h) / n};
            SubjectCondition s;
            s.id = "s" + std::to_string(j);
            s.embedding = Matrix::random_gaussian(opt.subject_tokens, cfg.d_cond, rng, 1.0);
            s.box = box;
            s.priority = j;
            subjects.push_back(std::move(s));
            boxes.push_back(box);
            priorities.push_back(j);
            tokens.push_back(opt.subject_tokens);
        }
        const RegionAssignment assignment = build_region_assignment(boxes, priorities, n, n);
        const std::vector<SubjectMask> masks = masks_from_layout(boxes, n, n);

        FlopCounter fc_anyms;
        auto t0 = Clock::now();
        const Matrix out_a =
            local_image_cross_attention(z, subjects, assignment, 0, weights, adapter, cfg,
                                        &fc_anyms);
        anyms_ms.push_back(seconds_since(t0) * 1e3);
        anyms_flops_measured += fc_anyms.ops;

        FlopCounter fc_masked;
        t0 = Clock::now();
        const Matrix out_m = masked_sum_image_cross_attention(z, subjects, masks, 0, weights,
                                                              adapter, cfg, &fc_masked);
        masked_ms.push_back(seconds_since(t0) * 1e3);
        masked_flops_measured += fc_masked.ops;

        anyms_flops_analytic +=
            flop_count(Mode::Anyms, boxes, n, n, cfg, tokens, 1).image_ops;
        masked_flops_analytic +=
            flop_count(Mode::MaskedSum, boxes, n, n, cfg, tokens, 1).image_ops;
        static_cast<void>(out_a);
        static_cast<void>(out_m);
    }

    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const size_t mid = v.size() / 2;
        return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
    };

    BenchResult result;
    result.anyms_median_ms = median(anyms_ms);
    result.masked_median_ms = median(masked_ms);
    result.anyms_flops = anyms_flops_analytic;
    result.masked_flops = masked_flops_analytic;
    result.flop_ratio = masked_flops_analytic
                            ? static_cast<double>(anyms_flops_analytic) / masked_flops_analytic
                            : 0.0;

    json report{{"grid", opt.grid},
                {"subjects", opt.subjects},
                {"coverage", opt.coverage},
                {"repeat", opt.repeat},
                {"seed", opt.seed},
                {"subject_tokens", opt.subject_tokens},
                {"anyms", {{"median_ms", result.anyms_median_ms},
                           {"flops", anyms_flops_analytic},
                           {"flops_measured", anyms_flops_measured}}},
                {"masked-sum", {{"median_ms", result.masked_median_ms},
                                {"flops", masked_flops_analytic},
                                {"flops_measured", masked_flops_measured}}},
                {"flop_ratio", result.flop_ratio},
                {"wallclock_ratio", result.masked_median_ms > 0.0
                                        ? result.anyms_median_ms / result.masked_median_ms
                                        : 0.0},
                {"manifest", {{"command", "bench"}, {"version", kVersion}, {"seed", opt.seed}}}};
    result.report_json = report.dump(2);

    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "mode        median_ms      flops   ratio\n"
                  "anyms       %9.3f %10llu  %0.4f\n"
                  "masked-sum  %9.3f %10llu  1.0000\n",
                  result.anyms_median_ms,
                  static_cast<unsigned long long>(anyms_flops_analytic), result.flop_ratio,
                  result.masked_median_ms,
                  static_cast<unsigned long long>(masked_flops_analytic));
    result.table = buf;

    if (!opt.out_path.empty()) {
        write_text_file(opt.out_path, result.report_json + "\n");
    }
    if (!opt.manifest_path.empty()) {
        RunManifest manifest;
        manifest.command = "bench";
        manifest.seed = opt.seed;
        manifest.config_json = json{{"grid", opt.grid},
                                    {"subjects", opt.subjects},
                                    {"coverage", opt.coverage},
                                    {"repeat", opt.repeat}}
                                   .dump();
        if (!opt.out_path.empty()) manifest.outputs.push_back(opt.out_path);
        manifest.write(opt.manifest_path);
    }
    return result;
}

namespace {

std::vector<GridRect> rects_from_json(const json& arr, const char* what) {
    if (!arr.is_array()) throw SpecError(std::string(what) + ": expected an array of rects");
    std::vector<GridRect> rects;
    for (const json& r : arr) {
        GridRect rect;
        rect.h_s = r.at("h_s").get<int>();
        rect.h_e = r.at("h_e").get<int>();
        rect.w_s = r.at("w_s").get<int>();
        rect.w_e = r.at("w_e").get<int>();
        rects.push_back(rect);
    }
    return rects;
}

}  // namespace

EvalLayoutResult run_eval_layout(const EvalLayoutOptions& opt) {
    LayoutScore score;
    json config;
    const bool fixture_mode = !opt.pred_path.empty();
    if (fixture_mode) {
        if (opt.target_path.empty()) throw SpecError("eval-layout: --pred requires --target");
        json pred_j, target_j;
        try {
            pred_j = json::parse(read_text_file(opt.pred_path));
            target_j = json::parse(read_text_file(opt.target_path));
        } catch (const json::exception& e) {
            throw SpecError(std::string("eval-layout: invalid JSON: ") + e.what());
        }
        const std::vector<GridRect> targets = rects_from_json(target_j, "targets");
        std::vector<SubjectDetection> preds;
        if (!pred_j.is_array()) throw SpecError("predictions: expected an array of rects");
        for (const json& r : pred_j) {
            SubjectDetection d;
            d.detected = r.value("detected", true);
            if (d.detected) {
                d.rect.h_s = r.at("h_s").get<int>();
                d.rect.h_e = r.at("h_e").get<int>();
                d.rect.w_s = r.at("w_s").get<int>();
                d.rect.w_e = r.at("w_e").get<int>();
            }
            preds.push_back(d);
        }
        score = layout_miou(preds, targets);
        config = {{"pred", opt.pred_path}, {"target", opt.target_path}};
    } else {
        if (opt.image_path.empty() || opt.spec_path.empty() || opt.weights_path.empty()) {
            throw SpecError(
                "eval-layout: need either --pred/--target or --image/--spec/--weights");
        }
        const TensorContainer weights = TensorContainer::read_file(opt.weights_path);
        const LayoutSpec spec = parse_layout_spec(read_text_file(opt.spec_path), weights);
        const ToyModel model = ToyModel::load(weights);
        const LatentGrid image = read_ppm_file(opt.image_path);

        std::vector<std::array<double, 3>> signatures;
        std::vector<GridRect> targets;
        for (const SubjectSpec& s : spec.subjects) {
            const auto it = std::find(model.subject_ids.begin(), model.subject_ids.end(), s.id);
            if (it == model.subject_ids.end()) {
                throw SpecError("eval-layout: no palette entry for subject \"" + s.id + "\"");
            }
            signatures.push_back(
                model.palette[static_cast<size_t>(it - model.subject_ids.begin())]);
            targets.push_back(box_to_grid(s.box, image.h, image.w));
        }
        const std::vector<SubjectDetection> preds =
            localize_subjects(image, signatures, model.background, opt.threshold);
        score = layout_miou(preds, targets);
        config = {{"image", opt.image_path}, {"spec", opt.spec_path}, {"threshold", opt.threshold}};
    }

    json subjects = json::array();
    for (size_t j = 0; j < score.per_subject_iou.size(); ++j) {
        subjects.push_back({{"iou", score.per_subject_iou[j]},
                            {"detected", static_cast<bool>(score.detected[j])}});
    }
    json report{{"miou", score.miou},
                {"subjects", subjects},
                {"manifest", {{"command", "eval-layout"}, {"version", kVersion},
                              {"config", config}}}};

    EvalLayoutResult result;
    result.score = score;
    result.report_json = report.dump(2);
    if (!opt.out_path.empty()) write_text_file(opt.out_path, result.report_json + "\n");
    return result;
}

RunManifest run_inspect_attn(const InspectAttnOptions& opt) {
    const auto start = Clock::now();
    if (opt.every < 1) throw SpecError("inspect-attn: --every must be >= 1");
    const TensorContainer weights = TensorContainer::read_file(opt.weights_path);
    const LayoutSpec spec = load_spec_with_overrides(opt.spec_path, weights, opt.mode, opt.steps,
                                                     opt.seed, std::nullopt, std::nullopt);
    const ToyModel model = ToyModel::load(weights);
    const Schedule schedule = make_schedule(model.T, model.beta_start, model.beta_end);

    AttnTrace trace;
    trace.capture_maps = true;
    const GenerationResult result = sample(spec, model, schedule, &trace);
    thin_trace(trace, result.timesteps, opt.every);
    const std::vector<std::string> files =
        attention_heatmap_dump(trace, spec.grid_h, spec.grid_w, opt.out_dir);

    RunManifest manifest;
    manifest.command = "inspect-attn";
    manifest.seed = spec.seed;
    manifest.config_json =
        json{{"mode", mode_to_string(spec.mode)}, {"steps", spec.steps}, {"every", opt.every},
             {"files", files.size()}}
            .dump();
    manifest.input_hashes = {{opt.spec_path, hash_of_file(opt.spec_path)},
                             {opt.weights_path, hash_of_file(opt.weights_path)}};
    manifest.outputs = files;
    manifest.wall_clock_s = seconds_since(start);
    const std::string manifest_path =
        opt.manifest_path.empty() ? opt.out_dir + "/manifest.json" : opt.manifest_path;
    manifest.write(manifest_path);
    return manifest;
}

}  // namespace lf
