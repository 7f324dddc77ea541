#pragma once

#include <vector>

#include "rcdepth/common.hpp"
#include "rcdepth/geometry.hpp"
#include "rcdepth/ops.hpp"
#include "rcdepth/tape.hpp"

// Feature refinement: aggregated point features written back into the
// per-scale radar feature maps, and the full-resolution global map F_2d^0
// assembled from f_agg^G at the radar pixels plus the projected upsampled
// features. Collisions accumulate by summation.
namespace rcdepth {

// Add f_agg^i rows into F_2d^i at each point's floor-scaled cell.
inline Var scatter_add_scale(Var map, Var rows, const std::vector<Pixel>& full_res_coords, std::size_t level) {
    std::vector<nn::Cell> cells;
    cells.reserve(full_res_coords.size());
    for (const Pixel& p : full_res_coords)
        cells.push_back(nn::Cell{static_cast<std::size_t>(p.y) >> level, static_cast<std::size_t>(p.x) >> level});
    return nn::scatter_add_cells(map, rows, cells);
}

// Zero-initialized H x W x C map holding f_agg^G at the radar pixels and the
// upsampled features at the projected (already denormalized) upsampled
// points. Upsampled points behind the camera or off the image plane are
// discarded.
inline Var build_global_map(Tape& tape, Var f_agg_g, const std::vector<Pixel>& radar_px,
                            const Tensor& upsampled_metric, Var f_up, const CameraIntrinsics& cam,
                            std::size_t height, std::size_t width) {
    if (f_agg_g.value().extent(0) != radar_px.size())
        throw ShapeError("build_global_map: radar feature/pixel count mismatch");
    if (f_agg_g.value().extent(1) != f_up.value().extent(1))
        throw ShapeError("build_global_map: f_agg^G and F_up widths must match to share one map");
    const std::size_t channels = f_agg_g.value().extent(1);
    Var map = tape.constant(Tensor({height, width, channels}));

    std::vector<nn::Cell> radar_cells;
    radar_cells.reserve(radar_px.size());
    for (const Pixel& p : radar_px)
        radar_cells.push_back(nn::Cell{static_cast<std::size_t>(p.y), static_cast<std::size_t>(p.x)});
    if (!radar_cells.empty()) map = nn::scatter_add_cells(map, f_agg_g, radar_cells);

    ProjectionResult proj = project_points(upsampled_metric, cam, height, width);
    if (!proj.kept.empty()) {
        Var kept_rows = nn::gather_rows(f_up, proj.kept);
        std::vector<nn::Cell> up_cells;
        up_cells.reserve(proj.pixels.size());
        for (const Pixel& p : proj.pixels)
            up_cells.push_back(nn::Cell{static_cast<std::size_t>(p.y), static_cast<std::size_t>(p.x)});
        map = nn::scatter_add_cells(map, kept_rows, up_cells);
    }
    return map;
}

}  // namespace rcdepth
