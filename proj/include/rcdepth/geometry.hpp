#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "rcdepth/common.hpp"
#include "rcdepth/ops.hpp"
#include "rcdepth/tensor.hpp"

// Camera projection, neighbor queries, Chamfer distance, point-cloud
// normalization and ground-truth subset selection.
//
// Conventions (documented once, used everywhere):
//   * camera looks along +z; a point is projectable iff z > 0
//   * pixel (x,y) = (floor(fx*X/Z + cx), floor(fy*Y/Z + cy)), origin top-left
//   * back-projection inverts at the integer coordinate itself (no +0.5)
//   * all ties break toward the lower point index
namespace rcdepth {

struct CameraIntrinsics {
    double fx, fy, cx, cy;

    CameraIntrinsics(double fx_, double fy_, double cx_, double cy_) : fx(fx_), fy(fy_), cx(cx_), cy(cy_) {
        if (fx <= 0.0 || fy <= 0.0) throw DataError("intrinsics: focal lengths must be positive");
    }
};

struct Pixel {
    std::int64_t x = 0;
    std::int64_t y = 0;
    bool operator==(const Pixel&) const = default;
};

// N x 6 rows of (x_3d, y_3d, z_3d, v_x, v_y, rcs); meters, m/s, dimensionless.
struct RadarPointCloud {
    Tensor points;

    RadarPointCloud() : points(Shape{0, 6}) {}
    explicit RadarPointCloud(Tensor rows) : points(std::move(rows)) {
        if (points.rank() != 2 || points.extent(1) != 6) throw ShapeError("radar cloud must be N x 6");
    }

    std::size_t size() const { return points.extent(0); }

    Tensor positions() const {
        Tensor out({size(), 3});
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t c = 0; c < 3; ++c) out.at(i, c) = points.at(i, c);
        return out;
    }
};

// M x 3 rows of (x, y, z) in meters.
struct LidarPointCloud {
    Tensor points;

    LidarPointCloud() : points(Shape{0, 3}) {}
    explicit LidarPointCloud(Tensor rows) : points(std::move(rows)) {
        if (points.rank() != 2 || points.extent(1) != 3) throw ShapeError("lidar cloud must be M x 3");
    }

    std::size_t size() const { return points.extent(0); }
};

struct NormalizationTransform {
    std::array<double, 3> centroid{0.0, 0.0, 0.0};
    double scale = 1.0;
};

struct ProjectionResult {
    std::vector<Pixel> pixels;        // one per retained point
    std::vector<double> depths;       // z of retained points
    std::vector<std::size_t> kept;    // indices into the input cloud
};

inline ProjectionResult project_points(const Tensor& pts, const CameraIntrinsics& cam, std::size_t height,
                                       std::size_t width) {
    require_rank(pts, 2, "project_points input");
    if (pts.extent(1) < 3) throw ShapeError("project_points: points need at least 3 columns");
    if (height == 0 || width == 0) throw PreconditionError("project_points: image extents must be positive");
    ProjectionResult res;
    for (std::size_t i = 0; i < pts.extent(0); ++i) {
        const double z = pts.at(i, 2);
        if (!(z > 0.0)) continue;
        const double u = cam.fx * pts.at(i, 0) / z + cam.cx;
        const double v = cam.fy * pts.at(i, 1) / z + cam.cy;
        const std::int64_t px = static_cast<std::int64_t>(std::floor(u));
        const std::int64_t py = static_cast<std::int64_t>(std::floor(v));
        if (px < 0 || py < 0 || px >= static_cast<std::int64_t>(width) || py >= static_cast<std::int64_t>(height))
            continue;
        res.pixels.push_back({px, py});
        res.depths.push_back(z);
        res.kept.push_back(i);
    }
    return res;
}

// Inverse of project_points at the integer pixel coordinate with a known
// depth.
inline std::array<double, 3> back_project(const Pixel& p, double depth, const CameraIntrinsics& cam) {
    return {(static_cast<double>(p.x) - cam.cx) * depth / cam.fx,
            (static_cast<double>(p.y) - cam.cy) * depth / cam.fy, depth};
}

// Indices of the k nearest rows (squared Euclidean, self excluded, ties by
// lower index) within one set. Brute force; the sets here are small.
inline std::vector<std::size_t> knn_indices(const Tensor& pts, std::size_t k) {
    require_rank(pts, 2, "knn input");
    const std::size_t n = pts.extent(0), c = pts.extent(1);
    if (k == 0) throw PreconditionError("knn: k must be positive");
    if (n < k + 1) throw PreconditionError("knn: need at least k+1 points");
    std::vector<std::size_t> out(n * k);
    std::vector<std::pair<double, std::size_t>> cand(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t w = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d = 0.0;
            for (std::size_t a = 0; a < c; ++a) {
                const double diff = pts.at(i, a) - pts.at(j, a);
                d += diff * diff;
            }
            cand[w++] = {d, j};
        }
        std::sort(cand.begin(), cand.end());
        for (std::size_t a = 0; a < k; ++a) out[i * k + a] = cand[a].second;
    }
    return out;
}

inline double chamfer_distance(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "chamfer lhs");
    require_rank(b, 2, "chamfer rhs");
    if (a.extent(0) == 0 || b.extent(0) == 0) throw PreconditionError("chamfer_distance: empty point set");
    if (a.extent(1) != b.extent(1)) throw ShapeError("chamfer_distance: dimension mismatch");
    std::vector<std::size_t> nn;
    const double sum_ab = nn::detail::nearest_sum(a, b, nn);
    const double sum_ba = nn::detail::nearest_sum(b, a, nn);
    return sum_ab / static_cast<double>(a.extent(0)) + sum_ba / static_cast<double>(b.extent(0));
}

// The N_L LiDAR points nearest to the radar cloud (per-point min squared
// distance to any radar point, ties by index).
inline LidarPointCloud select_gt_points(const Tensor& radar_positions, const LidarPointCloud& lidar, std::size_t n_l) {
    require_rank(radar_positions, 2, "select_gt_points radar");
    if (radar_positions.extent(0) == 0) throw PreconditionError("select_gt_points: empty radar cloud");
    if (lidar.size() < n_l) throw DataError("select_gt_points: lidar cloud smaller than N_L");
    const std::size_t m = lidar.size();
    std::vector<std::pair<double, std::size_t>> scored(m);
    for (std::size_t j = 0; j < m; ++j) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < radar_positions.extent(0); ++i) {
            double d = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double diff = lidar.points.at(j, c) - radar_positions.at(i, c);
                d += diff * diff;
            }
            best = std::min(best, d);
        }
        scored[j] = {best, j};
    }
    std::sort(scored.begin(), scored.end());
    Tensor out({n_l, 3});
    for (std::size_t r = 0; r < n_l; ++r)
        for (std::size_t c = 0; c < 3; ++c) out.at(r, c) = lidar.points.at(scored[r].second, c);
    return LidarPointCloud(std::move(out));
}

struct NormalizedCloud {
    Tensor points;
    NormalizationTransform transform;
};

// Subtract the centroid and divide by the max point-to-centroid distance.
inline NormalizedCloud normalize_points(const Tensor& pts) {
    require_rank(pts, 2, "normalize input");
    const std::size_t n = pts.extent(0);
    if (n == 0) throw PreconditionError("normalize: empty cloud");
    if (pts.extent(1) != 3) throw ShapeError("normalize: points must be N x 3");
    NormalizationTransform t;
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += pts.at(i, c);
        t.centroid[c] = s / static_cast<double>(n);
    }
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double diff = pts.at(i, c) - t.centroid[c];
            d += diff * diff;
        }
        scale = std::max(scale, d);
    }
    scale = std::sqrt(scale);
    if (scale <= 0.0) throw DataError("normalize: degenerate cloud (zero scale)");
    t.scale = scale;
    Tensor out({n, 3});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c) out.at(i, c) = (pts.at(i, c) - t.centroid[c]) / scale;
    return {std::move(out), t};
}

inline Tensor denormalize_points(const Tensor& pts, const NormalizationTransform& t) {
    require_rank(pts, 2, "denormalize input");
    Tensor out({pts.extent(0), 3});
    for (std::size_t i = 0; i < pts.extent(0); ++i)
        for (std::size_t c = 0; c < 3; ++c) out.at(i, c) = pts.at(i, c) * t.scale + t.centroid[c];
    return out;
}

inline Tensor apply_normalization(const Tensor& pts, const NormalizationTransform& t) {
    require_rank(pts, 2, "apply_normalization input");
    Tensor out({pts.extent(0), 3});
    for (std::size_t i = 0; i < pts.extent(0); ++i)
        for (std::size_t c = 0; c < 3; ++c) out.at(i, c) = (pts.at(i, c) - t.centroid[c]) / t.scale;
    return out;
}

// |depth_radar - depth_lidar| against the nearest LiDAR pixel in 2D image
// plane distance, per radar point. The search is unrestricted (no radius).
inline std::vector<double> nearest_depth_discrepancy(const std::vector<Pixel>& radar_px,
                                                     const std::vector<double>& radar_depth,
                                                     const std::vector<Pixel>& lidar_px,
                                                     const std::vector<double>& lidar_depth) {
    if (radar_px.size() != radar_depth.size() || lidar_px.size() != lidar_depth.size())
        throw ShapeError("nearest_depth_discrepancy: coordinate/depth count mismatch");
    if (radar_px.empty() || lidar_px.empty())
        throw PreconditionError("nearest_depth_discrepancy: empty projected set");
    std::vector<double> out(radar_px.size());
    for (std::size_t i = 0; i < radar_px.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0;
        for (std::size_t j = 0; j < lidar_px.size(); ++j) {
            const double dx = static_cast<double>(radar_px[i].x - lidar_px[j].x);
            const double dy = static_cast<double>(radar_px[i].y - lidar_px[j].y);
            const double d = dx * dx + dy * dy;
            if (d < best) {
                best = d;
                bi = j;
            }
        }
        out[i] = std::abs(radar_depth[i] - lidar_depth[bi]);
    }
    return out;
}

}  // namespace rcdepth
