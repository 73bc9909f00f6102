#include "layoutfuse/adapter.hpp"

#include <string>

namespace lf {

const AdapterHeadWeights& AdapterWeights::head(int layer, int h) const {
    if (layer < 0 || layer >= static_cast<int>(layers.size()) || h < 0 ||
        h >= static_cast<int>(layers[static_cast<size_t>(layer)].size())) {
        throw SpecError("adapter: no weights for layer " + std::to_string(layer) + " head " +
                        std::to_string(h));
    }
    return layers[static_cast<size_t>(layer)][static_cast<size_t>(h)];
}

static std::string adapter_key(int layer, int head, const char* which) {
    return "adapter.layer" + std::to_string(layer) + ".head" + std::to_string(head) + "." + which;
}

void AdapterWeights::save(TensorContainer& c) const {
    for (size_t l = 0; l < layers.size(); ++l) {
        for (size_t h = 0; h < layers[l].size(); ++h) {
            c.put_matrix(adapter_key(static_cast<int>(l), static_cast<int>(h), "wk"),
                         layers[l][h].wk);
            c.put_matrix(adapter_key(static_cast<int>(l), static_cast<int>(h), "wv"),
                         layers[l][h].wv);
        }
    }
}

AdapterWeights AdapterWeights::load(const TensorContainer& c, int layer_count, int heads) {
    AdapterWeights w;
    w.layers.resize(static_cast<size_t>(layer_count));
    for (int l = 0; l < layer_count; ++l) {
        w.layers[static_cast<size_t>(l)].resize(static_cast<size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            AdapterHeadWeights& hw = w.layers[static_cast<size_t>(l)][static_cast<size_t>(h)];
            hw.wk = c.get_matrix(adapter_key(l, h, "wk"));
            hw.wv = c.get_matrix(adapter_key(l, h, "wv"));
        }
    }
    return w;
}

AdapterWeights AdapterWeights::random(int layer_count, int heads, int d_cond, int d_head, Rng& rng,
                                      double scale) {
    AdapterWeights w;
    w.layers.resize(static_cast<size_t>(layer_count));
    for (int l = 0; l < layer_count; ++l) {
        for (int h = 0; h < heads; ++h) {
            AdapterHeadWeights hw;
            hw.wk = Matrix::random_gaussian(d_cond, d_head, rng, scale);
            hw.wv = Matrix::random_gaussian(d_cond, d_head, rng, scale);
            w.layers[static_cast<size_t>(l)].push_back(std::move(hw));
        }
    }
    return w;
}

std::pair<Matrix, Matrix> subject_kv(const Matrix& c_j, int layer, int head,
                                     const AdapterWeights& weights) {
    const AdapterHeadWeights& hw = weights.head(layer, head);
    if (c_j.cols != hw.wk.rows) {
        throw SpecError("subject_kv: embedding dim " + std::to_string(c_j.cols) +
                        " does not match adapter d_cond " + std::to_string(hw.wk.rows));
    }
    return {matmul(c_j, hw.wk), matmul(c_j, hw.wv)};
}

std::vector<SubjectCondition> load_conditions(const LayoutSpec& spec,
                                              const AdapterWeights& weights) {
    const int d_cond = (weights.layer_count() > 0 && !weights.layers[0].empty())
                           ? weights.layers[0][0].wk.rows
                           : -1;
    std::vector<SubjectCondition> out;
    out.reserve(spec.subjects.size());
    for (const SubjectSpec& s : spec.subjects) {
        if (s.embedding.rows < 1) {
            throw SpecError("subject \"" + s.id + "\": embedding must have at least one row");
        }
        if (d_cond >= 0 && s.embedding.cols != d_cond) {
            throw SpecError("subject \"" + s.id + "\": embedding dim " +
                            std::to_string(s.embedding.cols) + " does not match adapter d_cond " +
                            std::to_string(d_cond));
        }
        if (!s.embedding.all_finite()) {
            throw NumericError("subject \"" + s.id + "\": embedding has non-finite values");
        }
        SubjectCondition c;
        c.id = s.id;
        c.embedding = s.embedding;
        c.box = s.box;
        c.priority = s.priority;
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace lf
