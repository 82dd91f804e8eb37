#pragma once

#include <array>
#include <cmath>

namespace sitfuse {

// Affine map from continuous pixel coordinates to world coordinates, GDAL
// coefficient order: x = g[0] + u*g[1] + v*g[2], y = g[3] + u*g[4] + v*g[5].
// Pixel (col,row) spans [col,col+1)x[row,row+1); its center is (col+.5,row+.5).
struct GeoTransform {
    std::array<double, 6> g{0.0, 1.0, 0.0, 0.0, 0.0, 1.0};

    double det() const { return g[1] * g[5] - g[2] * g[4]; }
    bool invertible() const { return det() != 0.0 && std::isfinite(det()); }

    void apply(double u, double v, double& x, double& y) const {
        x = g[0] + u * g[1] + v * g[2];
        y = g[3] + u * g[4] + v * g[5];
    }

    void pixel_center_to_world(int col, int row, double& x, double& y) const {
        apply(col + 0.5, row + 0.5, x, y);
    }

    // World -> continuous pixel coordinates. Caller must check invertible().
    void world_to_pixel(double x, double y, double& u, double& v) const {
        const double d = det();
        const double dx = x - g[0];
        const double dy = y - g[3];
        u = (dx * g[5] - dy * g[2]) / d;
        v = (dy * g[1] - dx * g[4]) / d;
    }

    bool operator==(const GeoTransform& o) const { return g == o.g; }
};

struct GridGeometry {
    int width = 0;
    int height = 0;
    GeoTransform transform;

    long pixel_count() const { return static_cast<long>(width) * height; }
    bool operator==(const GridGeometry& o) const {
        return width == o.width && height == o.height && transform == o.transform;
    }
};

}  // namespace sitfuse
