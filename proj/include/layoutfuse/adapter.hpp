#pragma once

#include <string>
#include <vector>

#include "layoutfuse/tensorio.hpp"

namespace lf {

// One subject's conditioning: the context embedding sequence that stands in
// for a reference image after adapter encoding, plus its placement.
struct SubjectCondition {
    std::string id;
    Matrix embedding;  // m_j x d_cond
    std::array<double, 4> box{};
    int priority = 0;
};

// Image-stream key/value projections, per layer and head.
struct AdapterHeadWeights {
    Matrix wk;  // d_cond x d_head
    Matrix wv;  // d_cond x d_head
};

struct AdapterWeights {
    std::vector<std::vector<AdapterHeadWeights>> layers;  // [layer][head]

    int layer_count() const { return static_cast<int>(layers.size()); }
    const AdapterHeadWeights& head(int layer, int h) const;

    // Container entry names: adapter.layer{L}.head{H}.wk / .wv
    void save(TensorContainer& c) const;
    static AdapterWeights load(const TensorContainer& c, int layers, int heads);
    static AdapterWeights random(int layers, int heads, int d_cond, int d_head, Rng& rng,
                                 double scale);
};

// K_j = c_j * W_k', V_j = c_j * W_v' (row-vector convention).
std::pair<Matrix, Matrix> subject_kv(const Matrix& c_j, int layer, int head,
                                     const AdapterWeights& weights);

// Resolves each subject's embedding into a SubjectCondition, in spec order.
// d_cond must match the adapter projections.
std::vector<SubjectCondition> load_conditions(const LayoutSpec& spec,
                                              const AdapterWeights& weights);

}  // namespace lf
