#pragma once

#include <limits>
#include <map>
#include <tuple>
#include <vector>

#include "layoutfuse/adapter.hpp"
#include "layoutfuse/layout.hpp"
#include "layoutfuse/matrix.hpp"

namespace lf {

struct AttentionConfig {
    int layers = 2;
    int heads = 2;
    int d_model = 32;
    int d_head = 16;
    int d_cond = 8;
    double image_scale = 1.0;
    // Decoupling is applied at every layer and timestep unless narrowed here.
    std::vector<int> apply_layers;  // empty = all
    int apply_step_min = 0;
    int apply_step_max = std::numeric_limits<int>::max();
    // Sensitivity switch: initialize the image stream's uncovered pixels to 0
    // instead of the query feature.
    bool zero_init_exterior = false;

    void validate() const;
    bool layer_applies(int layer) const;
    bool step_applies(int step) const;
};

struct HeadWeights {
    Matrix wq;  // d_model x d_head
    Matrix wk;  // d_cond x d_head
    Matrix wv;  // d_cond x d_head
};

struct LayerWeights {
    std::vector<HeadWeights> heads;
    Matrix wo;  // d_model x d_model output projection
};

struct BlockWeights {
    std::vector<LayerWeights> layers;

    const LayerWeights& layer(int l) const;

    // Container entry names: denoiser.layer{L}.head{H}.wq/.wk/.wv, denoiser.layer{L}.wo
    void save(TensorContainer& c) const;
    static BlockWeights load(const TensorContainer& c, int layers, int heads);
    static BlockWeights random(const AttentionConfig& cfg, Rng& rng, double scale);
};

// Sampling-time instrumentation: softmax row-sum checks plus optional
// per-subject attention-mass maps for the heatmap dump.
struct AttnTrace {
    SoftmaxStats softmax;
    bool capture_maps = false;
    int step = 0;  // set by the sampler before each denoiser call
    // head-mean attention mass per pixel, keyed by (step, layer, subject)
    std::map<std::tuple<int, int, int>, std::vector<double>> subject_mass;
};

// Text stream: per head Q = Z*Wq, K = c_t*Wk, V = c_t*Wv, heads concatenated.
// Output lives in pre-output-projection space.
Matrix text_cross_attention(const Matrix& z, const Matrix& c_t, int layer,
                            const BlockWeights& w, const AttentionConfig& cfg,
                            FlopCounter* fc = nullptr, AttnTrace* trace = nullptr);

// Crop-and-merge image stream: the output starts as the query feature, each
// subject attends only within its grid rect, and results are merged back at
// the pixels that subject wins.
Matrix local_image_cross_attention(const Matrix& z, const std::vector<SubjectCondition>& subjects,
                                   const RegionAssignment& assignment, int layer,
                                   const BlockWeights& w, const AdapterWeights& adapter,
                                   const AttentionConfig& cfg, FlopCounter* fc = nullptr,
                                   AttnTrace* trace = nullptr);

// Ablation: full-grid attention per subject, elementwise-masked, summed.
// Pixels outside every box are exactly zero.
Matrix masked_sum_image_cross_attention(const Matrix& z,
                                        const std::vector<SubjectCondition>& subjects,
                                        const std::vector<SubjectMask>& masks, int layer,
                                        const BlockWeights& w, const AdapterWeights& adapter,
                                        const AttentionConfig& cfg, FlopCounter* fc = nullptr,
                                        AttnTrace* trace = nullptr);

// Ablation: full-grid attention per subject, summed, no layout at all.
Matrix global_sum_image_cross_attention(const Matrix& z,
                                        const std::vector<SubjectCondition>& subjects, int layer,
                                        const BlockWeights& w, const AdapterWeights& adapter,
                                        const AttentionConfig& cfg, FlopCounter* fc = nullptr,
                                        AttnTrace* trace = nullptr);

// Full dual-stream block: (Z_text + image_scale * Z_image) * Wo. The image
// term is dropped when the mode is text-only, there are no subjects, the
// layer/step is outside the apply window, or image_scale is 0.
Matrix decoupled_block(const Matrix& z, const Matrix& c_t,
                       const std::vector<SubjectCondition>& subjects, Mode mode, int layer,
                       int step, const BlockWeights& w, const AdapterWeights& adapter,
                       const AttentionConfig& cfg, int grid_h, int grid_w,
                       FlopCounter* fc = nullptr, AttnTrace* trace = nullptr);

}  // namespace lf
