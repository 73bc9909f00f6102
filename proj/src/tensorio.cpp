#include "layoutfuse/tensorio.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

namespace lf {

using nlohmann::json;

size_t dtype_size(Dtype d) {
    return d == Dtype::F32 ? 4 : 8;
}

const char* dtype_name(Dtype d) {
    return d == Dtype::F32 ? "f32" : "f64";
}

static Dtype dtype_from_name(const std::string& s) {
    if (s == "f32") return Dtype::F32;
    if (s == "f64") return Dtype::F64;
    throw IoError("container: unknown dtype \"" + s + "\"");
}

size_t TensorEntry::element_count() const {
    size_t n = 1;
    for (size_t d : shape) {
        if (d != 0 && n > std::numeric_limits<size_t>::max() / d) {
            throw IoError("container: shape product overflow");
        }
        n *= d;
    }
    return n;
}

void TensorContainer::put(const std::string& name, TensorEntry entry) {
    if (entries_.count(name)) {
        throw IoError("container: duplicate tensor name \"" + name + "\"");
    }
    if (entry.values.size() != entry.element_count()) {
        throw IoError("container: value count does not match shape for \"" + name + "\"");
    }
    entries_.emplace(name, std::move(entry));
}

void TensorContainer::put_matrix(const std::string& name, const Matrix& m) {
    TensorEntry e;
    e.dtype = Dtype::F64;
    e.shape = {static_cast<size_t>(m.rows), static_cast<size_t>(m.cols)};
    e.values = m.values;
    put(name, std::move(e));
}

void TensorContainer::put_vector(const std::string& name, const std::vector<double>& v) {
    TensorEntry e;
    e.dtype = Dtype::F64;
    e.shape = {v.size()};
    e.values = v;
    put(name, std::move(e));
}

void TensorContainer::put_scalar(const std::string& name, double v) {
    TensorEntry e;
    e.dtype = Dtype::F64;
    e.shape = {};
    e.values = {v};
    put(name, std::move(e));
}

const TensorEntry& TensorContainer::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw IoError("container: missing tensor \"" + name + "\"");
    }
    return it->second;
}

Matrix TensorContainer::get_matrix(const std::string& name) const {
    const TensorEntry& e = get(name);
    if (e.shape.size() != 2) {
        throw IoError("container: tensor \"" + name + "\" is not 2-D");
    }
    Matrix m(static_cast<int>(e.shape[0]), static_cast<int>(e.shape[1]));
    m.values = e.values;
    return m;
}

std::vector<double> TensorContainer::get_vector(const std::string& name) const {
    const TensorEntry& e = get(name);
    if (e.shape.size() != 1) {
        throw IoError("container: tensor \"" + name + "\" is not 1-D");
    }
    return e.values;
}

double TensorContainer::get_scalar(const std::string& name) const {
    const TensorEntry& e = get(name);
    if (!e.shape.empty() || e.values.size() != 1) {
        throw IoError("container: tensor \"" + name + "\" is not a scalar");
    }
    return e.values[0];
}

std::vector<std::string> TensorContainer::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
}

static void append_u64_le(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

static uint64_t load_u64_le(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

std::vector<uint8_t> TensorContainer::write() const {
    json header = json::object();
    size_t offset = 0;
    for (const auto& [name, e] : entries_) {
        header[name] = {{"dtype", dtype_name(e.dtype)},
                        {"shape", e.shape},
                        {"offset", offset}};
        offset += e.byte_length();
    }
    const std::string header_str = header.dump();

    std::vector<uint8_t> out;
    out.reserve(8 + header_str.size() + offset);
    append_u64_le(out, header_str.size());
    out.insert(out.end(), header_str.begin(), header_str.end());

    for (const auto& [name, e] : entries_) {
        if (e.dtype == Dtype::F64) {
            for (double v : e.values) {
                uint64_t bits;
                std::memcpy(&bits, &v, 8);
                append_u64_le(out, bits);
            }
        } else {
            for (double v : e.values) {
                const float f = static_cast<float>(v);
                uint32_t bits;
                std::memcpy(&bits, &f, 4);
                for (int i = 0; i < 4; ++i) {
                    out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xff));
                }
            }
        }
    }
    return out;
}

TensorContainer TensorContainer::read(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8) throw IoError("container: truncated file (no header length)");
    const uint64_t header_len = load_u64_le(bytes.data());
    if (bytes.size() < 8 + header_len) {
        throw IoError("container: truncated file (header shorter than declared)");
    }
    json header;
    try {
        header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<size_t>(header_len));
    } catch (const json::exception& e) {
        throw IoError(std::string("container: malformed JSON header: ") + e.what());
    }
    if (!header.is_object()) throw IoError("container: header is not a JSON object");

    const size_t data_offset = 8 + static_cast<size_t>(header_len);
    const size_t data_size = bytes.size() - data_offset;
    const uint8_t* data = bytes.data() + data_offset;

    TensorContainer c;
    // (offset, end) per entry, for the packing check below.
    std::vector<std::pair<size_t, size_t>> extents;
    for (auto it = header.begin(); it != header.end(); ++it) {
        const json& meta = it.value();
        if (!meta.is_object() || !meta.contains("dtype") || !meta.contains("shape") ||
            !meta.contains("offset")) {
            throw IoError("container: malformed entry for \"" + it.key() + "\"");
        }
        TensorEntry e;
        e.dtype = dtype_from_name(meta["dtype"].get<std::string>());
        for (const json& d : meta["shape"]) {
            if (!d.is_number_unsigned()) {
                throw IoError("container: negative or non-integer shape for \"" + it.key() + "\"");
            }
            e.shape.push_back(d.get<size_t>());
        }
        const size_t offset = meta["offset"].get<size_t>();
        const size_t len = e.byte_length();
        if (offset > data_size || len > data_size - offset) {
            throw IoError("container: tensor \"" + it.key() + "\" extends past the data section");
        }
        const size_t count = e.element_count();
        e.values.resize(count);
        if (e.dtype == Dtype::F64) {
            for (size_t i = 0; i < count; ++i) {
                const uint64_t bits = load_u64_le(data + offset + 8 * i);
                double v;
                std::memcpy(&v, &bits, 8);
                e.values[i] = v;
            }
        } else {
            for (size_t i = 0; i < count; ++i) {
                uint32_t bits = 0;
                for (int b = 0; b < 4; ++b) {
                    bits |= static_cast<uint32_t>(data[offset + 4 * i + b]) << (8 * b);
                }
                float f;
                std::memcpy(&f, &bits, 4);
                e.values[i] = static_cast<double>(f);
            }
        }
        extents.emplace_back(offset, offset + len);
        c.put(it.key(), std::move(e));
    }

    // Offsets must be strictly ascending and tightly packed (the writer never
    // emits padding), and must cover the whole data section.
    std::sort(extents.begin(), extents.end());
    size_t cursor = 0;
    for (const auto& [start, end] : extents) {
        if (start != cursor) {
            throw IoError("container: overlapping or misaligned tensor offsets");
        }
        cursor = end;
    }
    if (cursor != data_size) {
        throw IoError("container: data section size does not match declared tensors");
    }
    return c;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open \"" + path + "\" for reading");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open \"" + path + "\" for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for \"" + path + "\"");
}

void TensorContainer::write_file(const std::string& path) const {
    write_file_bytes(path, write());
}

TensorContainer TensorContainer::read_file(const std::string& path) {
    return read(read_file_bytes(path));
}

bool LatentGrid::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Matrix LatentGrid::to_matrix() const {
    Matrix m(h * w, c);
    m.values = values;
    return m;
}

LatentGrid LatentGrid::from_matrix(const Matrix& m, int h, int w) {
    if (m.rows != h * w) throw SpecError("from_matrix: row count does not match grid");
    LatentGrid g(h, w, m.cols);
    g.values = m.values;
    return g;
}

Mode mode_from_string(const std::string& s) {
    if (s == "anyms") return Mode::Anyms;
    if (s == "masked-sum") return Mode::MaskedSum;
    if (s == "global-sum") return Mode::GlobalSum;
    if (s == "text-only") return Mode::TextOnly;
    throw SpecError("unknown mode \"" + s + "\" (expected anyms|masked-sum|global-sum|text-only)");
}

const char* mode_to_string(Mode m) {
    switch (m) {
        case Mode::Anyms: return "anyms";
        case Mode::MaskedSum: return "masked-sum";
        case Mode::GlobalSum: return "global-sum";
        case Mode::TextOnly: return "text-only";
    }
    return "?";
}

static const json& require_field(const json& j, const char* field, const char* ctx) {
    auto it = j.find(field);
    if (it == j.end()) {
        throw SpecError(std::string(ctx) + ": missing field \"" + field + "\"");
    }
    return *it;
}

LayoutSpec parse_layout_spec(const std::string& json_text, const TensorContainer& container) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw SpecError(std::string("layout spec: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw SpecError("layout spec: top level must be an object");

    LayoutSpec spec;
    const json& grid = require_field(j, "grid", "layout spec");
    spec.grid_h = require_field(grid, "h", "grid").get<int>();
    spec.grid_w = require_field(grid, "w", "grid").get<int>();
    spec.grid_c = require_field(grid, "c", "grid").get<int>();
    if (spec.grid_h < 1 || spec.grid_w < 1 || spec.grid_c < 1) {
        throw SpecError("layout spec: grid dimensions must be positive");
    }

    spec.prompt_name = require_field(j, "prompt", "layout spec").get<std::string>();
    if (!container.has(spec.prompt_name)) {
        throw SpecError("layout spec: unknown prompt tensor \"" + spec.prompt_name + "\"");
    }
    spec.prompt_embedding = container.get_matrix(spec.prompt_name);

    spec.steps = require_field(j, "steps", "layout spec").get<int>();
    if (spec.steps < 1) throw SpecError("layout spec: steps must be >= 1");

    if (j.contains("seed")) spec.seed = j["seed"].get<uint64_t>();
    if (j.contains("mode")) spec.mode = mode_from_string(j["mode"].get<std::string>());
    if (j.contains("image_scale")) {
        spec.image_scale = j["image_scale"].get<double>();
        if (spec.image_scale < 0.0) throw SpecError("layout spec: image_scale must be >= 0");
    }
    if (j.contains("guidance")) spec.guidance = j["guidance"].get<double>();

    const json& subjects = require_field(j, "subjects", "layout spec");
    if (!subjects.is_array()) throw SpecError("layout spec: subjects must be an array");
    std::set<std::string> seen_ids;
    for (const json& sj : subjects) {
        SubjectSpec s;
        s.id = require_field(sj, "id", "subject").get<std::string>();
        if (!seen_ids.insert(s.id).second) {
            throw SpecError("layout spec: duplicate subject id \"" + s.id + "\"");
        }
        s.embedding_name = require_field(sj, "embedding", "subject").get<std::string>();
        if (!container.has(s.embedding_name)) {
            throw SpecError("layout spec: unknown embedding tensor \"" + s.embedding_name +
                            "\" for subject \"" + s.id + "\"");
        }
        const json& box = require_field(sj, "box", "subject");
        if (!box.is_array() || box.size() != 4) {
            throw SpecError("layout spec: subject \"" + s.id + "\": box must be [x0,y0,x1,y1]");
        }
        for (int i = 0; i < 4; ++i) s.box[static_cast<size_t>(i)] = box[i].get<double>();
        const auto [x0, y0, x1, y1] = s.box;
        if (x0 < 0.0 || y0 < 0.0 || x1 > 1.0 || y1 > 1.0) {
            throw SpecError("layout spec: subject \"" + s.id + "\": box out of [0,1]");
        }
        if (!(x0 < x1) || !(y0 < y1)) {
            throw SpecError("layout spec: subject \"" + s.id + "\": degenerate box (x0<x1, y0<y1 required)");
        }
        s.priority = require_field(sj, "priority", "subject").get<int>();
        s.embedding = container.get_matrix(s.embedding_name);
        spec.subjects.push_back(std::move(s));
    }
    return spec;
}

std::vector<uint8_t> encode_ppm(const LatentGrid& grid) {
    if (grid.c != 3) throw SpecError("write_image: grid must have C=3");
    if (!grid.all_finite()) throw NumericError("write_image: NaN or Inf in grid");
    std::string header = "P6\n" + std::to_string(grid.w) + " " + std::to_string(grid.h) + "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + grid.values.size());
    for (double v : grid.values) {
        double mapped = std::round((v + 1.0) / 2.0 * 255.0);
        if (mapped < 0.0) mapped = 0.0;
        if (mapped > 255.0) mapped = 255.0;
        out.push_back(static_cast<uint8_t>(mapped));
    }
    return out;
}

void write_image(const LatentGrid& grid, const std::string& path) {
    write_file_bytes(path, encode_ppm(grid));
}

LatentGrid read_ppm_file(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file_bytes(path);
    size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        if (pos < bytes.size() && bytes[pos] == '#') {  // comment line
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        }
        size_t start = pos;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
        return std::string(bytes.begin() + start, bytes.begin() + pos);
    };
    if (next_token() != "P6") throw IoError("read_ppm: not a P6 file: " + path);
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (w < 1 || h < 1 || maxval != 255) throw IoError("read_ppm: unsupported header in " + path);
    ++pos;  // single whitespace after maxval
    const size_t need = static_cast<size_t>(w) * h * 3;
    if (bytes.size() - pos < need) throw IoError("read_ppm: truncated pixel data in " + path);
    LatentGrid g(h, w, 3);
    for (size_t i = 0; i < need; ++i) {
        g.values[i] = static_cast<double>(bytes[pos + i]) / 255.0 * 2.0 - 1.0;
    }
    return g;
}

}  // namespace lf
