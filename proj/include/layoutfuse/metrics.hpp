#pragma once

#include <optional>
#include <string>
#include <vector>

#include "layoutfuse/attention.hpp"
#include "layoutfuse/layout.hpp"

namespace lf {

struct SubjectDetection {
    bool detected = false;
    GridRect rect;
};

// Nearest-color pixel classification against the subject signatures plus the
// background, then the tightest bounding rect of each subject's largest
// 4-connected component. threshold < 0 means "always assign nearest"; with a
// threshold, pixels farther than it (squared RGB distance) fall back to
// background.
std::vector<SubjectDetection> localize_subjects(
    const LatentGrid& image, const std::vector<std::array<double, 3>>& signatures,
    const std::array<double, 3>& background, double threshold = -1.0);

struct LayoutScore {
    std::vector<double> per_subject_iou;
    std::vector<bool> detected;
    double miou = 0.0;
};

LayoutScore layout_miou(const std::vector<SubjectDetection>& predictions,
                        const std::vector<GridRect>& targets);

// Analytic multiply-add accounting for the image stream. Per subject and
// head, the crop-and-merge path costs 2*|B_j|*m_j*d_head for Q K' plus the
// same for A V; the masked/global variants replace |B_j| with H*W. Totals
// scale by heads and applied layers. Softmax exponentials are listed
// separately, not folded into the op count.
struct FlopReport {
    Mode mode = Mode::Anyms;
    std::vector<uint64_t> per_subject_ops;  // image stream, all heads/layers
    uint64_t image_ops = 0;
    uint64_t text_ops = 0;  // 2 * (H*W) * m_t * d_head * heads * layers, both matmuls
    uint64_t softmax_exps = 0;
    int applied_layers = 0;
};

FlopReport flop_count(Mode mode, const std::vector<NormBox>& boxes, int grid_h, int grid_w,
                      const AttentionConfig& cfg, const std::vector<int>& subject_tokens,
                      int prompt_tokens);

// Writes one grayscale PPM per captured (layer, step, subject) attention-mass
// map, min-max normalized to [0,1] (flat maps render as mid-gray).
// Files are named attn_L{layer}_t{step}_s{subject}.ppm.
std::vector<std::string> attention_heatmap_dump(const AttnTrace& trace, int grid_h, int grid_w,
                                                const std::string& out_dir);

}  // namespace lf
