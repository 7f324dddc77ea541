#pragma once

#include <limits>
#include <string>
#include <vector>

#include "rcdepth/common.hpp"
#include "rcdepth/geometry.hpp"
#include "rcdepth/ops.hpp"
#include "rcdepth/params.hpp"
#include "rcdepth/tape.hpp"

// Adaptive sparse convolution block: distance-gated observation masks and
// per-group stacks of normalized sparse convolutions that densify the radar
// projection map. Group outputs are summed element-wise in group order.
namespace rcdepth {

// Dense H x W x C_R grid (channel 0 depth in meters, then v_x, v_y, rcs)
// plus the binary observation mask. Unobserved pixels carry zeros.
struct RadarProjectionMap {
    Tensor features;  // H x W x C_R
    Tensor mask;      // H x W

    std::size_t height() const { return features.extent(0); }
    std::size_t width() const { return features.extent(1); }
    std::size_t channels() const { return features.extent(2); }
};

// When several radar points land on one pixel the closest one wins
// (nearest object occludes).
inline RadarProjectionMap build_radar_map(const RadarPointCloud& cloud, const ProjectionResult& proj,
                                          std::size_t height, std::size_t width) {
    RadarProjectionMap map;
    map.features = Tensor({height, width, 4});
    map.mask = Tensor({height, width});
    for (std::size_t p = 0; p < proj.pixels.size(); ++p) {
        const Pixel px = proj.pixels[p];
        const std::size_t y = static_cast<std::size_t>(px.y), x = static_cast<std::size_t>(px.x);
        const double depth = proj.depths[p];
        if (map.mask.at(y, x) != 0.0 && map.features.at(y, x, 0) <= depth) continue;
        const std::size_t src = proj.kept[p];
        map.mask.at(y, x) = 1.0;
        map.features.at(y, x, 0) = depth;
        map.features.at(y, x, 1) = cloud.points.at(src, 3);
        map.features.at(y, x, 2) = cloud.points.at(src, 4);
        map.features.at(y, x, 3) = cloud.points.at(src, 5);
    }
    return map;
}

struct DistanceGroup {
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> kernels;  // odd sizes, non-increasing
};

struct DistanceGroupSpec {
    std::vector<DistanceGroup> groups;

    // [0,40) / [40,70) / [70,inf) meters with kernel schedules
    // [11,7,7,5,5,3], [11,7,5,5,3,3], [11,7,5,3].
    static DistanceGroupSpec standard() {
        DistanceGroupSpec s;
        s.groups = {{0.0, 40.0, {11, 7, 7, 5, 5, 3}},
                    {40.0, 70.0, {11, 7, 5, 5, 3, 3}},
                    {70.0, std::numeric_limits<double>::infinity(), {11, 7, 5, 3}}};
        return s;
    }

    // Single-mask baseline with the kernel list [11,7,5,3,3].
    static DistanceGroupSpec conventional() {
        DistanceGroupSpec s;
        s.groups = {{0.0, std::numeric_limits<double>::infinity(), {11, 7, 5, 3, 3}}};
        return s;
    }

    void validate() const {
        if (groups.empty()) throw ConfigError("distance spec: no groups");
        if (groups.front().lo != 0.0) throw ConfigError("distance spec: intervals must start at 0");
        for (std::size_t g = 0; g < groups.size(); ++g) {
            if (g + 1 < groups.size() && groups[g].hi != groups[g + 1].lo)
                throw ConfigError("distance spec: intervals must partition [0,inf)");
            if (groups[g].lo >= groups[g].hi) throw ConfigError("distance spec: empty interval");
            if (groups[g].kernels.empty()) throw ConfigError("distance spec: empty kernel schedule");
            for (std::size_t l = 0; l < groups[g].kernels.size(); ++l) {
                if (groups[g].kernels[l] % 2 == 0) throw ConfigError("distance spec: kernel sizes must be odd");
                if (l && groups[g].kernels[l] > groups[g].kernels[l - 1])
                    throw ConfigError("distance spec: kernel schedule must be non-increasing");
            }
        }
        if (!std::isinf(groups.back().hi)) throw ConfigError("distance spec: last interval must be unbounded");
    }
};

// One binary mask per group: observed and depth inside the half-open
// interval [lo, hi). Masks are pairwise disjoint and sum to the observation
// mask exactly.
inline std::vector<Tensor> partition_masks(const RadarProjectionMap& map, const DistanceGroupSpec& spec) {
    std::vector<Tensor> masks;
    masks.reserve(spec.groups.size());
    for (const DistanceGroup& g : spec.groups) {
        Tensor m({map.height(), map.width()});
        for (std::size_t y = 0; y < map.height(); ++y)
            for (std::size_t x = 0; x < map.width(); ++x) {
                if (map.mask.at(y, x) == 0.0) continue;
                const double d = map.features.at(y, x, 0);
                if (d >= g.lo && d < g.hi) m.at(y, x) = 1.0;
            }
        masks.push_back(std::move(m));
    }
    return masks;
}

// Sparse conv kernels start as identity box filters: together with the
// mask-count normalization the initial layer averages observed neighbours.
inline Tensor identity_box_kernel(std::size_t k, std::size_t channels) {
    Tensor t({k, k, channels, channels});
    for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx)
            for (std::size_t c = 0; c < channels; ++c) t.at(ky, kx, c, c) = 1.0;
    return t;
}

inline std::string ascb_kernel_name(const std::string& prefix, std::size_t group, std::size_t layer) {
    return prefix + ".g" + std::to_string(group) + ".l" + std::to_string(layer);
}

inline void register_ascb_params(ParameterStore& ps, const DistanceGroupSpec& spec, std::size_t channels,
                                 const std::string& prefix) {
    spec.validate();
    for (std::size_t g = 0; g < spec.groups.size(); ++g)
        for (std::size_t l = 0; l < spec.groups[g].kernels.size(); ++l)
            ps.add(ascb_kernel_name(prefix, g, l), identity_box_kernel(spec.groups[g].kernels[l], channels));
}

namespace detail {

inline Tensor expand_mask(const Tensor& mask, std::size_t channels) {
    Tensor out({mask.extent(0), mask.extent(1), channels});
    for (std::size_t y = 0; y < mask.extent(0); ++y)
        for (std::size_t x = 0; x < mask.extent(1); ++x)
            for (std::size_t c = 0; c < channels; ++c) out.at(y, x, c) = mask.at(y, x);
    return out;
}

}  // namespace detail

// One group's pipeline: the masked copy of the input run through the
// stacked sparse convolutions, the observation mask dilating per layer.
// `learn_kernels` false freezes the kernels as tape constants.
inline Var ascb_group_forward(Tape& tape, ParameterStore& ps, Var features, const Tensor& group_mask,
                              const DistanceGroup& group, std::size_t group_index, const std::string& prefix,
                              bool learn_kernels) {
    const std::size_t channels = features.value().extent(2);
    Var x = nn::mul_const(features, detail::expand_mask(group_mask, channels));
    Tensor mask = group_mask;
    for (std::size_t l = 0; l < group.kernels.size(); ++l) {
        const std::string name = ascb_kernel_name(prefix, group_index, l);
        Var kernel = learn_kernels ? tape.param(ps, name) : tape.constant(ps.value(name));
        x = nn::sparse_conv2d(x, kernel, mask);
        mask = nn::dilate_mask(mask, group.kernels[l]);
    }
    return x;
}

// Full block: per-group pipelines summed element-wise in group order.
inline Var ascb_forward(Tape& tape, ParameterStore& ps, const RadarProjectionMap& map,
                        const DistanceGroupSpec& spec, const std::string& prefix, bool learn_kernels) {
    spec.validate();
    std::vector<Tensor> masks = partition_masks(map, spec);
    Var features = tape.constant(map.features);
    Var out = ascb_group_forward(tape, ps, features, masks[0], spec.groups[0], 0, prefix, learn_kernels);
    for (std::size_t g = 1; g < spec.groups.size(); ++g)
        out = nn::add(out, ascb_group_forward(tape, ps, features, masks[g], spec.groups[g], g, prefix, learn_kernels));
    return out;
}

}  // namespace rcdepth
