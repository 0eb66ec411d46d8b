#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

namespace ctxdet::geom {

/// Axis-aligned box in image coordinates (y grows downward), stored as
/// COCO-style (x, y, w, h). Coordinates may be fractional.
struct BBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double right() const { return x + w; }
    double bottom() const { return y + h; }
    double area() const { return w * h; }
    double center_x() const { return x + w / 2.0; }
    double center_y() const { return y + h / 2.0; }
    bool valid() const { return w > 0.0 && h > 0.0; }

    bool operator==(const BBox&) const = default;
};

/// Binary raster region on an integer pixel grid, row-major.
/// Pixel (col, row) covers the unit square [col, col+1) x [row, row+1);
/// its center is (col + 0.5, row + 0.5).
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int w, int h)
        : width(w), height(h),
          bits(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0) {}

    bool at(int col, int row) const {
        return bits[static_cast<std::size_t>(row) * width + col] != 0;
    }
    void set(int col, int row, bool value = true) {
        bits[static_cast<std::size_t>(row) * width + col] = value ? 1 : 0;
    }

    bool operator==(const Mask&) const = default;
};

/// A relation participant: either a box or a rasterized mask.
using Region = std::variant<BBox, Mask>;

double area(const BBox& b);
double area(const Mask& m);
double area(const Region& r);

/// Rasterize a box onto a pixel grid with pixel-center sampling: pixel
/// (c, r) is covered when its center lies inside [x, x+w) x [y, y+h).
/// For integer-aligned boxes the covered pixel count equals w*h.
Mask rasterize(const BBox& box, int width, int height);

/// Exact rectangle intersection for box pairs; pixel counting (after
/// rasterizing any box onto the mask grid) when a mask is involved.
/// Mask-mask pairs must share a grid.
double intersection_area(const BBox& a, const BBox& b);
double intersection_area(const Mask& a, const Mask& b);
double intersection_area(const Region& a, const Region& b);

/// Intersection over subject: |s ∩ o| / |s|, clamped to [0, 1].
/// Directional; throws DataError on a zero-area subject.
double ios(const Region& subject, const Region& object);

/// Intersection over union for box pairs; symmetric.
double iou(const BBox& a, const BBox& b);

/// inner ⊆ outer, tested as intersection == area(inner) within relative
/// tolerance 1e-6 (absorbs rasterization and rounding noise).
bool contains(const Region& outer, const Region& inner);

/// Boundary contact with zero interior overlap. Boxes: closed rectangles
/// meet but the open interiors do not. Masks: no joint pixel but some
/// pixel of one is 8-adjacent to a pixel of the other.
bool touches(const Region& a, const Region& b);

/// Centroid of a region: box center, or the mean of set-pixel centers.
std::pair<double, double> centroid(const Region& r);

/// Centroid of the intersection of two regions, when non-empty.
std::optional<std::pair<double, double>> intersection_centroid(const Region& a,
                                                               const Region& b);

/// Clip a box to the image rectangle [0, width] x [0, height]. The result
/// may be degenerate (w or h <= 0) when the box lies outside.
BBox clip(const BBox& box, double width, double height);

} // namespace ctxdet::geom
