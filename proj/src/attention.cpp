#include "layoutfuse/attention.hpp"

#include <algorithm>
#include <cstring>
#include <string>

namespace lf {

void AttentionConfig::validate() const {
    if (layers < 1 || heads < 1 || d_model < 1 || d_head < 1 || d_cond < 1) {
        throw SpecError("attention config: dimensions must be positive");
    }
    if (d_model != heads * d_head) {
        throw SpecError("attention config: d_model must equal heads * d_head");
    }
    if (image_scale < 0.0) {
        throw SpecError("attention config: image_scale must be >= 0");
    }
}

bool AttentionConfig::layer_applies(int layer) const {
    if (apply_layers.empty()) return true;
    return std::find(apply_layers.begin(), apply_layers.end(), layer) != apply_layers.end();
}

bool AttentionConfig::step_applies(int step) const {
    return step >= apply_step_min && step <= apply_step_max;
}

const LayerWeights& BlockWeights::layer(int l) const {
    if (l < 0 || l >= static_cast<int>(layers.size())) {
        throw SpecError("block weights: no layer " + std::to_string(l));
    }
    return layers[static_cast<size_t>(l)];
}

static std::string block_key(int layer, int head, const char* which) {
    return "denoiser.layer" + std::to_string(layer) + ".head" + std::to_string(head) + "." + which;
}

void BlockWeights::save(TensorContainer& c) const {
    for (size_t l = 0; l < layers.size(); ++l) {
        for (size_t h = 0; h < layers[l].heads.size(); ++h) {
            const HeadWeights& hw = layers[l].heads[h];
            c.put_matrix(block_key(static_cast<int>(l), static_cast<int>(h), "wq"), hw.wq);
            c.put_matrix(block_key(static_cast<int>(l), static_cast<int>(h), "wk"), hw.wk);
            c.put_matrix(block_key(static_cast<int>(l), static_cast<int>(h), "wv"), hw.wv);
        }
        c.put_matrix("denoiser.layer" + std::to_string(l) + ".wo", layers[l].wo);
    }
}

BlockWeights BlockWeights::load(const TensorContainer& c, int layer_count, int heads) {
    BlockWeights w;
    w.layers.resize(static_cast<size_t>(layer_count));
    for (int l = 0; l < layer_count; ++l) {
        LayerWeights& lw = w.layers[static_cast<size_t>(l)];
        for (int h = 0; h < heads; ++h) {
            HeadWeights hw;
            hw.wq = c.get_matrix(block_key(l, h, "wq"));
            hw.wk = c.get_matrix(block_key(l, h, "wk"));
            hw.wv = c.get_matrix(block_key(l, h, "wv"));
            lw.heads.push_back(std::move(hw));
        }
        lw.wo = c.get_matrix("denoiser.layer" + std::to_string(l) + ".wo");
    }
    return w;
}

BlockWeights BlockWeights::random(const AttentionConfig& cfg, Rng& rng, double scale) {
    BlockWeights w;
    w.layers.resize(static_cast<size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
        LayerWeights& lw = w.layers[static_cast<size_t>(l)];
        for (int h = 0; h < cfg.heads; ++h) {
            HeadWeights hw;
            hw.wq = Matrix::random_gaussian(cfg.d_model, cfg.d_head, rng, scale);
            hw.wk = Matrix::random_gaussian(cfg.d_cond, cfg.d_head, rng, scale);
            hw.wv = Matrix::random_gaussian(cfg.d_cond, cfg.d_head, rng, scale);
            lw.heads.push_back(std::move(hw));
        }
        lw.wo = Matrix::random_gaussian(cfg.d_model, cfg.d_model, rng, scale);
    }
    return w;
}

static void check_block_inputs(const Matrix& z, int layer, const BlockWeights& w,
                               const AttentionConfig& cfg) {
    cfg.validate();
    if (z.cols != cfg.d_model) {
        throw SpecError("attention: latent feature dim " + std::to_string(z.cols) +
                        " does not match d_model " + std::to_string(cfg.d_model));
    }
    const LayerWeights& lw = w.layer(layer);
    if (static_cast<int>(lw.heads.size()) != cfg.heads) {
        throw SpecError("attention: weight head count mismatch at layer " + std::to_string(layer));
    }
}

// Copies src into the columns [head*d_head, (head+1)*d_head) of dst.
static void place_head_block(Matrix& dst, const Matrix& src, int head, int d_head) {
    for (int r = 0; r < src.rows; ++r) {
        std::memcpy(dst.row_ptr(r) + head * d_head, src.row_ptr(r),
                    sizeof(double) * static_cast<size_t>(d_head));
    }
}

static void trace_add_mass(AttnTrace* trace, int layer, int subject, int n_pixels, int heads,
                           const std::vector<std::pair<int, double>>& pixel_mass) {
    if (!trace || !trace->capture_maps) return;
    auto key = std::make_tuple(trace->step, layer, subject);
    auto& map = trace->subject_mass[key];
    if (map.empty()) map.assign(static_cast<size_t>(n_pixels), 0.0);
    for (const auto& [pixel, mass] : pixel_mass) {
        map[static_cast<size_t>(pixel)] += mass / heads;
    }
}

static double attn_row_sum(const Matrix& attn, int row) {
    double s = 0.0;
    const double* p = attn.row_ptr(row);
    for (int j = 0; j < attn.cols; ++j) s += p[j];
    return s;
}

Matrix text_cross_attention(const Matrix& z, const Matrix& c_t, int layer, const BlockWeights& w,
                            const AttentionConfig& cfg, FlopCounter* fc, AttnTrace* trace) {
    check_block_inputs(z, layer, w, cfg);
    if (c_t.cols != cfg.d_cond) {
        throw SpecError("text_cross_attention: prompt embedding dim mismatch");
    }
    const LayerWeights& lw = w.layer(layer);
    Matrix out(z.rows, cfg.d_model);
    SoftmaxStats* stats = trace ? &trace->softmax : nullptr;
    const bool sequential = fc != nullptr || trace != nullptr;
    auto run_head = [&](int h) {
        const HeadWeights& hw = lw.heads[static_cast<size_t>(h)];
        const Matrix q = matmul(z, hw.wq);
        const Matrix k = matmul(c_t, hw.wk);
        const Matrix v = matmul(c_t, hw.wv);
        const Matrix a = scaled_dot_attention(q, k, v, fc, stats);
        place_head_block(out, a, h, cfg.d_head);
    };
    if (sequential) {
        for (int h = 0; h < cfg.heads; ++h) run_head(h);
    } else {
        parallel_for(cfg.heads, run_head);
    }
    return out;
}

Matrix local_image_cross_attention(const Matrix& z, const std::vector<SubjectCondition>& subjects,
                                   const RegionAssignment& assignment, int layer,
                                   const BlockWeights& w, const AdapterWeights& adapter,
                                   const AttentionConfig& cfg, FlopCounter* fc, AttnTrace* trace) {
    check_block_inputs(z, layer, w, cfg);
    if (subjects.empty()) {
        throw SpecError("local_image_cross_attention: empty subject list (route to text-only)");
    }
    if (assignment.h * assignment.w != z.rows) {
        throw SpecError("local_image_cross_attention: assignment grid does not match latent rows");
    }
    const LayerWeights& lw = w.layer(layer);
    const int grid_w = assignment.w;
    Matrix out(z.rows, cfg.d_model);
    SoftmaxStats* stats = trace ? &trace->softmax : nullptr;
    const bool sequential = fc != nullptr || trace != nullptr;

    auto run_head = [&](int h) {
        const HeadWeights& hw = lw.heads[static_cast<size_t>(h)];
        const Matrix q = matmul(z, hw.wq);
        // Exterior pixels keep the query feature (or 0 under the sensitivity
        // switch); every covered pixel is overwritten by its winner below.
        Matrix head_out(q.rows, q.cols);
        if (!cfg.zero_init_exterior) head_out.values = q.values;

        for (size_t j = 0; j < subjects.size(); ++j) {
            const GridRect& rect = assignment.rects[j];
            Matrix q_crop(rect.area(), cfg.d_head);
            int local = 0;
            for (int y = rect.h_s; y < rect.h_e; ++y) {
                for (int x = rect.w_s; x < rect.w_e; ++x, ++local) {
                    std::memcpy(q_crop.row_ptr(local), q.row_ptr(y * grid_w + x),
                                sizeof(double) * static_cast<size_t>(cfg.d_head));
                }
            }
            const auto [k_j, v_j] = subject_kv(subjects[j].embedding, layer, h, adapter);
            Matrix attn;
            const Matrix z_j = scaled_dot_attention_full(q_crop, k_j, v_j,
                                                         trace ? &attn : nullptr, fc, stats);
            std::vector<std::pair<int, double>> mass;
            local = 0;
            for (int y = rect.h_s; y < rect.h_e; ++y) {
                for (int x = rect.w_s; x < rect.w_e; ++x, ++local) {
                    const int pixel = y * grid_w + x;
                    if (assignment.winner[static_cast<size_t>(pixel)] == static_cast<int>(j)) {
                        std::memcpy(head_out.row_ptr(pixel), z_j.row_ptr(local),
                                    sizeof(double) * static_cast<size_t>(cfg.d_head));
                        if (trace && trace->capture_maps) {
                            mass.emplace_back(pixel, attn_row_sum(attn, local));
                        }
                    }
                }
            }
            trace_add_mass(trace, layer, static_cast<int>(j), z.rows, cfg.heads, mass);
        }
        place_head_block(out, head_out, h, cfg.d_head);
    };
    if (sequential) {
        for (int h = 0; h < cfg.heads; ++h) run_head(h);
    } else {
        parallel_for(cfg.heads, run_head);
    }
    return out;
}

Matrix masked_sum_image_cross_attention(const Matrix& z,
                                        const std::vector<SubjectCondition>& subjects,
                                        const std::vector<SubjectMask>& masks, int layer,
                                        const BlockWeights& w, const AdapterWeights& adapter,
                                        const AttentionConfig& cfg, FlopCounter* fc,
                                        AttnTrace* trace) {
    check_block_inputs(z, layer, w, cfg);
    if (subjects.empty()) {
        throw SpecError("masked_sum_image_cross_attention: empty subject list");
    }
    if (masks.size() != subjects.size()) {
        throw SpecError("masked_sum_image_cross_attention: mask/subject count mismatch");
    }
    const LayerWeights& lw = w.layer(layer);
    Matrix out(z.rows, cfg.d_model);
    SoftmaxStats* stats = trace ? &trace->softmax : nullptr;
    const bool sequential = fc != nullptr || trace != nullptr;

    auto run_head = [&](int h) {
        const HeadWeights& hw = lw.heads[static_cast<size_t>(h)];
        const Matrix q = matmul(z, hw.wq);
        Matrix head_out(q.rows, q.cols);  // zeros; exterior stays exactly 0
        for (size_t j = 0; j < subjects.size(); ++j) {
            const auto [k_j, v_j] = subject_kv(subjects[j].embedding, layer, h, adapter);
            Matrix attn;
            const Matrix z_j =
                scaled_dot_attention_full(q, k_j, v_j, trace ? &attn : nullptr, fc, stats);
            std::vector<std::pair<int, double>> mass;
            for (int pixel = 0; pixel < z.rows; ++pixel) {
                if (!masks[j].on[static_cast<size_t>(pixel)]) continue;
                const double* src = z_j.row_ptr(pixel);
                double* dst = head_out.row_ptr(pixel);
                for (int d = 0; d < cfg.d_head; ++d) dst[d] += src[d];
                if (trace && trace->capture_maps) {
                    mass.emplace_back(pixel, attn_row_sum(attn, pixel));
                }
            }
            trace_add_mass(trace, layer, static_cast<int>(j), z.rows, cfg.heads, mass);
        }
        place_head_block(out, head_out, h, cfg.d_head);
    };
    if (sequential) {
        for (int h = 0; h < cfg.heads; ++h) run_head(h);
    } else {
        parallel_for(cfg.heads, run_head);
    }
    return out;
}

Matrix global_sum_image_cross_attention(const Matrix& z,
                                        const std::vector<SubjectCondition>& subjects, int layer,
                                        const BlockWeights& w, const AdapterWeights& adapter,
                                        const AttentionConfig& cfg, FlopCounter* fc,
                                        AttnTrace* trace) {
    check_block_inputs(z, layer, w, cfg);
    if (subjects.empty()) {
        throw SpecError("global_sum_image_cross_attention: empty subject list");
    }
    const LayerWeights& lw = w.layer(layer);
    Matrix out(z.rows, cfg.d_model);
    SoftmaxStats* stats = trace ? &trace->softmax : nullptr;
    const bool sequential = fc != nullptr || trace != nullptr;

    auto run_head = [&](int h) {
        const HeadWeights& hw = lw.heads[static_cast<size_t>(h)];
        const Matrix q = matmul(z, hw.wq);
        Matrix head_out(q.rows, q.cols);
        for (size_t j = 0; j < subjects.size(); ++j) {
            const auto [k_j, v_j] = subject_kv(subjects[j].embedding, layer, h, adapter);
            Matrix attn;
            const Matrix z_j =
                scaled_dot_attention_full(q, k_j, v_j, trace ? &attn : nullptr, fc, stats);
            for (size_t i = 0; i < head_out.values.size(); ++i) {
                head_out.values[i] += z_j.values[i];
            }
            if (trace && trace->capture_maps) {
                std::vector<std::pair<int, double>> mass;
                mass.reserve(static_cast<size_t>(z.rows));
                for (int pixel = 0; pixel < z.rows; ++pixel) {
                    mass.emplace_back(pixel, attn_row_sum(attn, pixel));
                }
                trace_add_mass(trace, layer, static_cast<int>(j), z.rows, cfg.heads, mass);
            }
        }
        place_head_block(out, head_out, h, cfg.d_head);
    };
    if (sequential) {
        for (int h = 0; h < cfg.heads; ++h) run_head(h);
    } else {
        parallel_for(cfg.heads, run_head);
    }
    return out;
}

Matrix decoupled_block(const Matrix& z, const Matrix& c_t,
                       const std::vector<SubjectCondition>& subjects, Mode mode, int layer,
                       int step, const BlockWeights& w, const AdapterWeights& adapter,
                       const AttentionConfig& cfg, int grid_h, int grid_w, FlopCounter* fc,
                       AttnTrace* trace) {
    if (grid_h * grid_w != z.rows) {
        throw SpecError("decoupled_block: grid dims do not match latent rows");
    }
    Matrix streams = text_cross_attention(z, c_t, layer, w, cfg, fc, trace);

    const bool image_active = mode != Mode::TextOnly && !subjects.empty() &&
                              cfg.layer_applies(layer) && cfg.step_applies(step) &&
                              cfg.image_scale != 0.0;
    if (image_active) {
        std::vector<NormBox> boxes;
        std::vector<int> priorities;
        boxes.reserve(subjects.size());
        for (const SubjectCondition& s : subjects) {
            boxes.push_back(s.box);
            priorities.push_back(s.priority);
        }
        Matrix z_image;
        switch (mode) {
            case Mode::Anyms: {
                const RegionAssignment assignment =
                    build_region_assignment(boxes, priorities, grid_h, grid_w);
                z_image = local_image_cross_attention(z, subjects, assignment, layer, w, adapter,
                                                      cfg, fc, trace);
                break;
            }
            case Mode::MaskedSum: {
                const std::vector<SubjectMask> masks = masks_from_layout(boxes, grid_h, grid_w);
                z_image = masked_sum_image_cross_attention(z, subjects, masks, layer, w, adapter,
                                                           cfg, fc, trace);
                break;
            }
            case Mode::GlobalSum:
                z_image =
                    global_sum_image_cross_attention(z, subjects, layer, w, adapter, cfg, fc, trace);
                break;
            case Mode::TextOnly:
                break;  // unreachable
        }
        for (size_t i = 0; i < streams.values.size(); ++i) {
            streams.values[i] += cfg.image_scale * z_image.values[i];
        }
    }
    return matmul(streams, w.layer(layer).wo);
}

}  // namespace lf
