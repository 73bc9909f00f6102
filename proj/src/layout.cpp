#include "layoutfuse/layout.hpp"

#include <algorithm>
#include <cmath>

namespace lf {

GridRect box_to_grid(const NormBox& box, int h, int w) {
    const auto [x0, y0, x1, y1] = box;
    GridRect r;
    r.h_s = std::max(0, static_cast<int>(std::floor(y0 * h)));
    r.h_e = std::min(h, static_cast<int>(std::ceil(y1 * h)));
    r.w_s = std::max(0, static_cast<int>(std::floor(x0 * w)));
    r.w_e = std::min(w, static_cast<int>(std::ceil(x1 * w)));
    if (r.h_s >= r.h_e || r.w_s >= r.w_e) {
        // Cannot happen for a valid normalized box (x0 < x1 implies
        // ceil(x1*w) > floor(x0*w)); kept as a hard failure.
        throw SpecError("box_to_grid: empty grid rect");
    }
    return r;
}

RegionAssignment build_region_assignment(const std::vector<NormBox>& boxes,
                                         const std::vector<int>& priorities, int h, int w) {
    if (boxes.size() != priorities.size()) {
        throw SpecError("build_region_assignment: box/priority count mismatch");
    }
    RegionAssignment a;
    a.h = h;
    a.w = w;
    a.winner.assign(static_cast<size_t>(h) * w, kNoWinner);
    a.rects.reserve(boxes.size());
    for (const NormBox& b : boxes) a.rects.push_back(box_to_grid(b, h, w));

    for (size_t j = 0; j < boxes.size(); ++j) {
        const GridRect& r = a.rects[j];
        const int pr = priorities[j];
        for (int y = r.h_s; y < r.h_e; ++y) {
            for (int x = r.w_s; x < r.w_e; ++x) {
                int& win = a.winner[static_cast<size_t>(y) * w + x];
                if (win == kNoWinner || pr > priorities[static_cast<size_t>(win)]) {
                    win = static_cast<int>(j);
                }
                // Equal priority: the earlier (smaller) index stays.
            }
        }
    }
    return a;
}

std::vector<SubjectMask> masks_from_layout(const std::vector<NormBox>& boxes, int h, int w) {
    std::vector<SubjectMask> masks;
    masks.reserve(boxes.size());
    for (const NormBox& b : boxes) {
        const GridRect r = box_to_grid(b, h, w);
        SubjectMask m;
        m.h = h;
        m.w = w;
        m.on.assign(static_cast<size_t>(h) * w, 0);
        for (int y = r.h_s; y < r.h_e; ++y) {
            for (int x = r.w_s; x < r.w_e; ++x) {
                m.on[static_cast<size_t>(y) * w + x] = 1;
            }
        }
        masks.push_back(std::move(m));
    }
    return masks;
}

double iou(const GridRect& a, const GridRect& b) {
    const int ih = std::max(0, std::min(a.h_e, b.h_e) - std::max(a.h_s, b.h_s));
    const int iw = std::max(0, std::min(a.w_e, b.w_e) - std::max(a.w_s, b.w_s));
    const int inter = ih * iw;
    const int uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / uni : 0.0;
}

}  // namespace lf
