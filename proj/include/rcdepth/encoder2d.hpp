#pragma once

#include <random>
#include <string>
#include <vector>

#include "rcdepth/common.hpp"
#include "rcdepth/geometry.hpp"
#include "rcdepth/ops.hpp"
#include "rcdepth/params.hpp"
#include "rcdepth/tape.hpp"

// Desk-scale stand-ins for the ResNet image/radar encoders: five levels,
// each a stride-2 entry conv followed by two 3x3 convs with a residual add.
// Per-channel affine replaces batch norm. Level i halves H and W, so inputs
// must be divisible by 2^5.
namespace rcdepth {

inline constexpr std::size_t kPyramidLevels = 5;

namespace detail {

inline std::string enc_name(const std::string& prefix, std::size_t level, const char* part) {
    return prefix + ".L" + std::to_string(level) + "." + part;
}

}  // namespace detail

inline void register_encoder_params(ParameterStore& ps, const std::string& prefix, std::size_t in_channels,
                                    const std::vector<std::size_t>& channels, std::mt19937_64& rng) {
    if (channels.size() != kPyramidLevels) throw ConfigError("encoder: channel list must have five entries");
    std::size_t cin = in_channels;
    for (std::size_t lvl = 1; lvl <= kPyramidLevels; ++lvl) {
        const std::size_t cout = channels[lvl - 1];
        ps.add(detail::enc_name(prefix, lvl, "entry.k"), uniform_init({3, 3, cin, cout}, 9 * cin, rng));
        ps.add(detail::enc_name(prefix, lvl, "entry.b"), Tensor({cout}));
        ps.add(detail::enc_name(prefix, lvl, "a.k"), uniform_init({3, 3, cout, cout}, 9 * cout, rng));
        ps.add(detail::enc_name(prefix, lvl, "a.gamma"), Tensor::full({cout}, 1.0));
        ps.add(detail::enc_name(prefix, lvl, "a.beta"), Tensor({cout}));
        ps.add(detail::enc_name(prefix, lvl, "b.k"), uniform_init({3, 3, cout, cout}, 9 * cout, rng));
        ps.add(detail::enc_name(prefix, lvl, "b.gamma"), Tensor::full({cout}, 1.0));
        ps.add(detail::enc_name(prefix, lvl, "b.beta"), Tensor({cout}));
        cin = cout;
    }
}

// Five-scale pyramid; level i has shape (H/2^i) x (W/2^i) x C_i.
inline std::vector<Var> encode_pyramid(Tape& tape, ParameterStore& ps, Var input, const std::string& prefix,
                                       double slope) {
    const Tensor& x = input.value();
    require_rank(x, 3, "encoder input");
    const std::size_t div = std::size_t{1} << kPyramidLevels;
    if (x.extent(0) % div != 0 || x.extent(1) % div != 0)
        throw ConfigError("encoder: spatial extents must be divisible by " + std::to_string(div));
    std::vector<Var> pyramid;
    Var h = input;
    for (std::size_t lvl = 1; lvl <= kPyramidLevels; ++lvl) {
        Var entry = nn::conv2d(h, tape.param(ps, detail::enc_name(prefix, lvl, "entry.k")), 2, nn::Pad::same);
        entry = nn::add_channel_bias(entry, tape.param(ps, detail::enc_name(prefix, lvl, "entry.b")));
        entry = nn::leaky_relu(entry, slope);
        Var t = nn::conv2d(entry, tape.param(ps, detail::enc_name(prefix, lvl, "a.k")), 1, nn::Pad::same);
        t = nn::channel_affine(t, tape.param(ps, detail::enc_name(prefix, lvl, "a.gamma")),
                               tape.param(ps, detail::enc_name(prefix, lvl, "a.beta")));
        t = nn::leaky_relu(t, slope);
        t = nn::conv2d(t, tape.param(ps, detail::enc_name(prefix, lvl, "b.k")), 1, nn::Pad::same);
        t = nn::channel_affine(t, tape.param(ps, detail::enc_name(prefix, lvl, "b.gamma")),
                               tape.param(ps, detail::enc_name(prefix, lvl, "b.beta")));
        h = nn::leaky_relu(nn::add(entry, t), slope);
        pyramid.push_back(h);
    }
    return pyramid;
}

// Level-i feature row for point j read at (floor(x/2^i), floor(y/2^i)). A
// pure gather: permuting input points permutes output rows identically.
inline std::vector<Var> select_point_features(const std::vector<Var>& pyramid, const std::vector<Pixel>& coords) {
    if (pyramid.size() != kPyramidLevels) throw ShapeError("select_point_features: need a five-level pyramid");
    std::vector<Var> out;
    out.reserve(kPyramidLevels);
    for (std::size_t lvl = 1; lvl <= kPyramidLevels; ++lvl) {
        const std::size_t shift = lvl;
        std::vector<nn::Cell> cells;
        cells.reserve(coords.size());
        for (const Pixel& p : coords)
            cells.push_back(nn::Cell{static_cast<std::size_t>(p.y) >> shift, static_cast<std::size_t>(p.x) >> shift});
        out.push_back(nn::gather_cells(pyramid[lvl - 1], cells));
    }
    return out;
}

}  // namespace rcdepth
