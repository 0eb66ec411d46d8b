#include "ctxdet/geometry.hpp"

#include "ctxdet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace ctxdet::geom {

namespace {

// Column/row index range covered by [lo, lo+len) under pixel-center
// sampling, clamped to [0, n). Pixel i is covered iff lo <= i+0.5 < lo+len.
std::pair<int, int> covered_range(double lo, double len, int n) {
    int first = static_cast<int>(std::ceil(lo - 0.5));
    int last = static_cast<int>(std::ceil(lo + len - 0.5)); // exclusive
    first = std::max(first, 0);
    last = std::min(last, n);
    return {first, std::max(first, last)};
}

const Mask* as_mask(const Region& r) { return std::get_if<Mask>(&r); }
const BBox* as_box(const Region& r) { return std::get_if<BBox>(&r); }

void check_same_grid(const Mask& a, const Mask& b) {
    if (a.width != b.width || a.height != b.height) {
        throw DataError("mask grids differ: " + std::to_string(a.width) + "x" +
                        std::to_string(a.height) + " vs " + std::to_string(b.width) +
                        "x" + std::to_string(b.height));
    }
}

// Bring a box/mask pair onto one grid so pixel logic applies uniformly.
Mask on_grid(const Region& r, int width, int height) {
    if (const Mask* m = as_mask(r)) {
        check_same_grid(*m, Mask(width, height));
        return *m;
    }
    return rasterize(*as_box(r), width, height);
}

} // namespace

double area(const BBox& b) { return b.area(); }

double area(const Mask& m) {
    return static_cast<double>(std::count_if(m.bits.begin(), m.bits.end(),
                                             [](std::uint8_t v) { return v != 0; }));
}

double area(const Region& r) {
    return std::visit([](const auto& v) { return area(v); }, r);
}

Mask rasterize(const BBox& box, int width, int height) {
    Mask m(width, height);
    auto [c0, c1] = covered_range(box.x, box.w, width);
    auto [r0, r1] = covered_range(box.y, box.h, height);
    for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
            m.set(c, r);
        }
    }
    return m;
}

double intersection_area(const BBox& a, const BBox& b) {
    const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
    const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
    if (iw <= 0.0 || ih <= 0.0) {
        return 0.0;
    }
    return iw * ih;
}

double intersection_area(const Mask& a, const Mask& b) {
    check_same_grid(a, b);
    double count = 0.0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        if (a.bits[i] && b.bits[i]) {
            count += 1.0;
        }
    }
    return count;
}

double intersection_area(const Region& a, const Region& b) {
    if (const BBox* ba = as_box(a)) {
        if (const BBox* bb = as_box(b)) {
            return intersection_area(*ba, *bb);
        }
        const Mask& mb = *as_mask(b);
        return intersection_area(rasterize(*ba, mb.width, mb.height), mb);
    }
    const Mask& ma = *as_mask(a);
    return intersection_area(ma, on_grid(b, ma.width, ma.height));
}

double ios(const Region& subject, const Region& object) {
    const double subject_area = area(subject);
    if (subject_area <= 0.0) {
        throw DataError("degenerate region: subject has zero area");
    }
    const double ratio = intersection_area(subject, object) / subject_area;
    return std::clamp(ratio, 0.0, 1.0);
}

double iou(const BBox& a, const BBox& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) {
        return 0.0;
    }
    return inter / uni;
}

bool contains(const Region& outer, const Region& inner) {
    const double inner_area = area(inner);
    if (inner_area <= 0.0) {
        return false;
    }
    const double inter = intersection_area(inner, outer);
    return inter >= inner_area * (1.0 - 1e-6);
}

bool touches(const Region& a, const Region& b) {
    if (intersection_area(a, b) > 0.0) {
        return false;
    }
    if (const BBox* ba = as_box(a)) {
        if (const BBox* bb = as_box(b)) {
            const bool x_meet = std::max(ba->x, bb->x) <= std::min(ba->right(), bb->right());
            const bool y_meet = std::max(ba->y, bb->y) <= std::min(ba->bottom(), bb->bottom());
            return x_meet && y_meet;
        }
    }
    // At least one mask: compare on the mask grid with 8-adjacency.
    const Mask* grid = as_mask(a) ? as_mask(a) : as_mask(b);
    const Mask ma = on_grid(a, grid->width, grid->height);
    const Mask mb = on_grid(b, grid->width, grid->height);
    for (int r = 0; r < ma.height; ++r) {
        for (int c = 0; c < ma.width; ++c) {
            if (!ma.at(c, r)) {
                continue;
            }
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = r + dr;
                    const int cc = c + dc;
                    if (rr < 0 || rr >= mb.height || cc < 0 || cc >= mb.width) {
                        continue;
                    }
                    if (mb.at(cc, rr)) {
                        return true;
                    }
                }
            }
        }
    }
    return false;
}

std::pair<double, double> centroid(const Region& r) {
    if (const BBox* b = as_box(r)) {
        return {b->center_x(), b->center_y()};
    }
    const Mask& m = *as_mask(r);
    double sx = 0.0;
    double sy = 0.0;
    double n = 0.0;
    for (int row = 0; row < m.height; ++row) {
        for (int col = 0; col < m.width; ++col) {
            if (m.at(col, row)) {
                sx += col + 0.5;
                sy += row + 0.5;
                n += 1.0;
            }
        }
    }
    if (n == 0.0) {
        return {0.0, 0.0};
    }
    return {sx / n, sy / n};
}

std::optional<std::pair<double, double>> intersection_centroid(const Region& a,
                                                               const Region& b) {
    const BBox* ba = as_box(a);
    const BBox* bb = as_box(b);
    if (ba && bb) {
        const double x0 = std::max(ba->x, bb->x);
        const double y0 = std::max(ba->y, bb->y);
        const double x1 = std::min(ba->right(), bb->right());
        const double y1 = std::min(ba->bottom(), bb->bottom());
        if (x1 - x0 <= 0.0 || y1 - y0 <= 0.0) {
            return std::nullopt;
        }
        return std::make_pair((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    }
    const Mask* grid = as_mask(a) ? as_mask(a) : as_mask(b);
    const Mask ma = on_grid(a, grid->width, grid->height);
    const Mask mb = on_grid(b, grid->width, grid->height);
    double sx = 0.0;
    double sy = 0.0;
    double n = 0.0;
    for (int row = 0; row < ma.height; ++row) {
        for (int col = 0; col < ma.width; ++col) {
            if (ma.at(col, row) && mb.at(col, row)) {
                sx += col + 0.5;
                sy += row + 0.5;
                n += 1.0;
            }
        }
    }
    if (n == 0.0) {
        return std::nullopt;
    }
    return std::make_pair(sx / n, sy / n);
}

BBox clip(const BBox& box, double width, double height) {
    const double x0 = std::max(box.x, 0.0);
    const double y0 = std::max(box.y, 0.0);
    const double x1 = std::min(box.right(), width);
    const double y1 = std::min(box.bottom(), height);
    return BBox{x0, y0, x1 - x0, y1 - y0};
}

} // namespace ctxdet::geom
