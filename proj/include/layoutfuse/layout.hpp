#pragma once

#include <array>
#include <vector>

#include "layoutfuse/tensorio.hpp"

namespace lf {

// Grid-space rectangle, end-exclusive: rows [h_s, h_e), columns [w_s, w_e).
struct GridRect {
    int h_s = 0;
    int h_e = 0;
    int w_s = 0;
    int w_e = 0;

    int area() const { return (h_e - h_s) * (w_e - w_s); }
    bool contains(int y, int x) const { return y >= h_s && y < h_e && x >= w_s && x < w_e; }
    bool operator==(const GridRect&) const = default;
};

constexpr int kNoWinner = -1;

// Per-pixel winner map resolving box overlaps: the covering subject with the
// highest priority wins, ties go to the smallest subject index.
struct RegionAssignment {
    int h = 0;
    int w = 0;
    std::vector<int> winner;  // h*w, subject index or kNoWinner
    std::vector<GridRect> rects;

    int winner_at(int y, int x) const { return winner[static_cast<size_t>(y) * w + x]; }
};

// Raw per-box indicator, overlaps not resolved.
struct SubjectMask {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> on;  // h*w

    bool at(int y, int x) const { return on[static_cast<size_t>(y) * w + x] != 0; }
};

using NormBox = std::array<double, 4>;  // [x0, y0, x1, y1] in [0,1]

// floor/ceil rounding so the grid region always covers the normalized box.
GridRect box_to_grid(const NormBox& box, int h, int w);

RegionAssignment build_region_assignment(const std::vector<NormBox>& boxes,
                                         const std::vector<int>& priorities, int h, int w);

std::vector<SubjectMask> masks_from_layout(const std::vector<NormBox>& boxes, int h, int w);

// |a n b| / |a u b| for rects on the same grid.
double iou(const GridRect& a, const GridRect& b);

}  // namespace lf
