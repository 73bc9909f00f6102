#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "layoutfuse/matrix.hpp"

namespace lf {

enum class Dtype { F32, F64 };

size_t dtype_size(Dtype d);
const char* dtype_name(Dtype d);

// One named tensor. Values are held widened to f64; the declared dtype is
// kept so writing narrows back and the byte round trip stays exact.
struct TensorEntry {
    Dtype dtype = Dtype::F64;
    std::vector<size_t> shape;
    std::vector<double> values;

    size_t element_count() const;
    size_t byte_length() const { return element_count() * dtype_size(dtype); }
};

// Container layout: 8-byte little-endian u64 header length N, then N bytes of
// UTF-8 JSON mapping name -> {dtype, shape, offset}, then the data section
// with row-major little-endian tensors packed back to back, no padding.
// Entries are keyed in name order and offsets are assigned in that order, so
// serialization is canonical: equal contents give equal bytes.
class TensorContainer {
public:
    void put(const std::string& name, TensorEntry entry);
    void put_matrix(const std::string& name, const Matrix& m);
    void put_vector(const std::string& name, const std::vector<double>& v);
    void put_scalar(const std::string& name, double v);

    bool has(const std::string& name) const { return entries_.count(name) > 0; }
    const TensorEntry& get(const std::string& name) const;
    Matrix get_matrix(const std::string& name) const;
    std::vector<double> get_vector(const std::string& name) const;
    double get_scalar(const std::string& name) const;

    std::vector<std::string> names() const;
    size_t size() const { return entries_.size(); }
    const std::map<std::string, TensorEntry>& entries() const { return entries_; }

    std::vector<uint8_t> write() const;
    void write_file(const std::string& path) const;

    static TensorContainer read(const std::vector<uint8_t>& bytes);
    static TensorContainer read_file(const std::string& path);

private:
    std::map<std::string, TensorEntry> entries_;
};

// H x W x C feature map, pixel-major storage: (y, x, ch) -> (y*W + x)*C + ch.
struct LatentGrid {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<double> values;

    LatentGrid() = default;
    LatentGrid(int h_, int w_, int c_)
        : h(h_), w(w_), c(c_), values(static_cast<size_t>(h_) * w_ * c_, 0.0) {}

    double& at(int y, int x, int ch) {
        return values[(static_cast<size_t>(y) * w + x) * c + ch];
    }
    double at(int y, int x, int ch) const {
        return values[(static_cast<size_t>(y) * w + x) * c + ch];
    }

    bool all_finite() const;

    // (H*W) x C view used by the attention stack (one row per pixel).
    Matrix to_matrix() const;
    static LatentGrid from_matrix(const Matrix& m, int h, int w);
};

enum class Mode { Anyms, MaskedSum, GlobalSum, TextOnly };

Mode mode_from_string(const std::string& s);
const char* mode_to_string(Mode m);

struct SubjectSpec {
    std::string id;
    std::string embedding_name;
    std::array<double, 4> box{};  // [x0, y0, x1, y1], normalized
    int priority = 0;
    Matrix embedding;  // attached at parse time, m_j x d_cond
};

struct LayoutSpec {
    int grid_h = 0;
    int grid_w = 0;
    int grid_c = 0;
    std::string prompt_name;
    Matrix prompt_embedding;  // m_t x d_cond
    std::vector<SubjectSpec> subjects;
    uint64_t seed = 0;
    int steps = 1;
    Mode mode = Mode::Anyms;
    double image_scale = 1.0;
    double guidance = 0.0;
};

// Parses and validates the layout-spec JSON, attaching the referenced
// embeddings from the container. Every schema violation maps to a SpecError.
LayoutSpec parse_layout_spec(const std::string& json_text, const TensorContainer& container);

// Binary PPM (P6). Channel mapping: v -> clamp(round((v+1)/2*255), 0, 255).
void write_image(const LatentGrid& grid, const std::string& path);
std::vector<uint8_t> encode_ppm(const LatentGrid& grid);

// Reads a P6 file back into value space (byte -> b/255*2 - 1). Used by the
// layout evaluator to score images produced by generate.
LatentGrid read_ppm_file(const std::string& path);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace lf
