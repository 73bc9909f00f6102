#include "layoutfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>

namespace lf {

namespace {

double color_dist2(const double* pixel, const std::array<double, 3>& color) {
    double d = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        const double diff = pixel[ch] - color[static_cast<size_t>(ch)];
        d += diff * diff;
    }
    return d;
}

}  // namespace

std::vector<SubjectDetection> localize_subjects(
    const LatentGrid& image, const std::vector<std::array<double, 3>>& signatures,
    const std::array<double, 3>& background, double threshold) {
    if (image.c != 3) throw SpecError("localize_subjects: image must have 3 channels");
    for (size_t a = 0; a < signatures.size(); ++a) {
        for (size_t b = a + 1; b < signatures.size(); ++b) {
            if (signatures[a] == signatures[b]) {
                throw SpecError("localize_subjects: signatures must be pairwise distinct");
            }
        }
    }
    const int h = image.h;
    const int w = image.w;
    // label per pixel: -1 background, else subject index
    std::vector<int> label(static_cast<size_t>(h) * w, -1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double* px = &image.values[(static_cast<size_t>(y) * w + x) * 3];
            int best = -1;
            double best_d = color_dist2(px, background);
            for (size_t j = 0; j < signatures.size(); ++j) {
                const double d = color_dist2(px, signatures[j]);
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(j);
                }
            }
            if (best >= 0 && threshold >= 0.0 && best_d > threshold) best = -1;
            label[static_cast<size_t>(y) * w + x] = best;
        }
    }

    // Largest 4-connected component per subject, by pixel count; ties keep
    // the first component in scan order.
    std::vector<SubjectDetection> out(signatures.size());
    std::vector<int> best_count(signatures.size(), 0);
    std::vector<uint8_t> seen(static_cast<size_t>(h) * w, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const size_t start = static_cast<size_t>(y) * w + x;
            if (seen[start] || label[start] < 0) continue;
            const int subj = label[start];
            int count = 0;
            GridRect rect{y, y + 1, x, x + 1};
            std::deque<std::pair<int, int>> queue{{y, x}};
            seen[start] = 1;
            while (!queue.empty()) {
                const auto [cy, cx] = queue.front();
                queue.pop_front();
                ++count;
                rect.h_s = std::min(rect.h_s, cy);
                rect.h_e = std::max(rect.h_e, cy + 1);
                rect.w_s = std::min(rect.w_s, cx);
                rect.w_e = std::max(rect.w_e, cx + 1);
                const int dy[4] = {-1, 1, 0, 0};
                const int dx[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int ny = cy + dy[k];
                    const int nx = cx + dx[k];
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    const size_t ni = static_cast<size_t>(ny) * w + nx;
                    if (seen[ni] || label[ni] != subj) continue;
                    seen[ni] = 1;
                    queue.emplace_back(ny, nx);
                }
            }
            if (count > best_count[static_cast<size_t>(subj)]) {
                best_count[static_cast<size_t>(subj)] = count;
                out[static_cast<size_t>(subj)] = {true, rect};
            }
        }
    }
    return out;
}

LayoutScore layout_miou(const std::vector<SubjectDetection>& predictions,
                        const std::vector<GridRect>& targets) {
    if (predictions.size() != targets.size()) {
        throw SpecError("layout_miou: prediction/target count mismatch");
    }
    LayoutScore score;
    double total = 0.0;
    for (size_t j = 0; j < predictions.size(); ++j) {
        const bool det = predictions[j].detected;
        const double v = det ? iou(predictions[j].rect, targets[j]) : 0.0;
        score.per_subject_iou.push_back(v);
        score.detected.push_back(det);
        total += v;
    }
    score.miou = predictions.empty() ? 0.0 : total / static_cast<double>(predictions.size());
    return score;
}

FlopReport flop_count(Mode mode, const std::vector<NormBox>& boxes, int grid_h, int grid_w,
                      const AttentionConfig& cfg, const std::vector<int>& subject_tokens,
                      int prompt_tokens) {
    if (boxes.size() != subject_tokens.size()) {
        throw SpecError("flop_count: box/token count mismatch");
    }
    FlopReport report;
    report.mode = mode;
    int applied = 0;
    for (int l = 0; l < cfg.layers; ++l) {
        if (cfg.layer_applies(l)) ++applied;
    }
    report.applied_layers = applied;
    const uint64_t pixels = static_cast<uint64_t>(grid_h) * grid_w;
    const uint64_t per_layer_heads = static_cast<uint64_t>(applied) * cfg.heads;

    report.text_ops = 4ull * pixels * static_cast<uint64_t>(prompt_tokens) * cfg.d_head *
                      static_cast<uint64_t>(cfg.layers) * cfg.heads;

    if (mode == Mode::TextOnly) return report;
    for (size_t j = 0; j < boxes.size(); ++j) {
        const uint64_t rows =
            mode == Mode::Anyms
                ? static_cast<uint64_t>(box_to_grid(boxes[j], grid_h, grid_w).area())
                : pixels;
        const uint64_t m = static_cast<uint64_t>(subject_tokens[j]);
        // 2*rows*m*d_head for Q K', the same again for A V.
        const uint64_t ops = (2ull * rows * m * cfg.d_head + 2ull * rows * m * cfg.d_head) *
                             per_layer_heads;
        report.per_subject_ops.push_back(ops);
        report.image_ops += ops;
        report.softmax_exps += rows * m * per_layer_heads;
    }
    return report;
}

std::vector<std::string> attention_heatmap_dump(const AttnTrace& trace, int grid_h, int grid_w,
                                                const std::string& out_dir) {
    if (!trace.capture_maps) {
        throw SpecError("attention_heatmap_dump: trace was not captured with maps enabled");
    }
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> files;
    for (const auto& [key, mass] : trace.subject_mass) {
        const auto [step, layer, subject] = key;
        double lo = mass[0];
        double hi = mass[0];
        for (double v : mass) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        LatentGrid img(grid_h, grid_w, 3);
        for (int p = 0; p < grid_h * grid_w; ++p) {
            // Flat maps normalize to all-zero (rendered mid-gray).
            const double norm = hi > lo ? (mass[static_cast<size_t>(p)] - lo) / (hi - lo) : 0.0;
            for (int ch = 0; ch < 3; ++ch) {
                img.values[static_cast<size_t>(p) * 3 + static_cast<size_t>(ch)] = norm;
            }
        }
        const std::string path = out_dir + "/attn_L" + std::to_string(layer) + "_t" +
                                 std::to_string(step) + "_s" + std::to_string(subject) + ".ppm";
        write_image(img, path);
        files.push_back(path);
    }
    return files;
}

}  // namespace lf
