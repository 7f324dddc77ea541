#pragma once

#include <random>
#include <string>
#include <vector>

#include "rcdepth/common.hpp"
#include "rcdepth/encoder2d.hpp"
#include "rcdepth/ops.hpp"
#include "rcdepth/params.hpp"
#include "rcdepth/tape.hpp"

// Gated radar/image fusion, the coarse-to-fine decoder producing the dense
// depth map, and the two training losses.
namespace rcdepth {

struct DecoderConfig {
    std::vector<std::size_t> widths{128, 64, 64, 32, 32};  // h5..h1
    std::size_t level0_width = 32;
    double max_depth = 80.0;
    double slope = 0.2;
};

namespace detail {

inline std::string dec_name(const std::string& prefix, std::size_t level, const char* part) {
    return prefix + ".d" + std::to_string(level) + "." + part;
}

inline std::string gate_name(const std::string& prefix, std::size_t level, const char* part) {
    return prefix + ".f" + std::to_string(level) + "." + part;
}

}  // namespace detail

inline void register_decoder_params(ParameterStore& ps, const std::string& prefix,
                                    const std::vector<std::size_t>& image_channels,
                                    const std::vector<std::size_t>& radar_channels, std::size_t global_width,
                                    const DecoderConfig& cfg, std::mt19937_64& rng) {
    if (image_channels.size() != kPyramidLevels || radar_channels.size() != kPyramidLevels)
        throw ConfigError("decoder: need five image and radar channel widths");
    if (cfg.widths.size() != kPyramidLevels) throw ConfigError("decoder: need five decoder widths");
    for (std::size_t lvl = 1; lvl <= kPyramidLevels; ++lvl) {
        const std::size_t ci = image_channels[lvl - 1], cr = radar_channels[lvl - 1];
        ps.add(detail::gate_name(prefix, lvl, "gate.k"), uniform_init({3, 3, ci + cr, ci}, 9 * (ci + cr), rng));
        ps.add(detail::gate_name(prefix, lvl, "gate.b"), Tensor({ci}));
        ps.add(detail::gate_name(prefix, lvl, "value.k"), uniform_init({3, 3, cr, ci}, 9 * cr, rng));
        ps.add(detail::gate_name(prefix, lvl, "value.b"), Tensor({ci}));
    }
    // widths[0] pairs with level 5, widths[4] with level 1
    ps.add(detail::dec_name(prefix, 5, "k"), uniform_init({3, 3, image_channels[4], cfg.widths[0]},
                                                          9 * image_channels[4], rng));
    ps.add(detail::dec_name(prefix, 5, "b"), Tensor({cfg.widths[0]}));
    for (std::size_t lvl = 4; lvl >= 1; --lvl) {
        const std::size_t cin = cfg.widths[4 - lvl] + image_channels[lvl - 1];
        const std::size_t cout = cfg.widths[5 - lvl];
        ps.add(detail::dec_name(prefix, lvl, "k"), uniform_init({3, 3, cin, cout}, 9 * cin, rng));
        ps.add(detail::dec_name(prefix, lvl, "b"), Tensor({cout}));
    }
    const std::size_t c0_in = cfg.widths[4] + global_width;
    ps.add(detail::dec_name(prefix, 0, "k"), uniform_init({3, 3, c0_in, cfg.level0_width}, 9 * c0_in, rng));
    ps.add(detail::dec_name(prefix, 0, "b"), Tensor({cfg.level0_width}));
    ps.add(prefix + ".head.k", uniform_init({1, 1, cfg.level0_width, 1}, cfg.level0_width, rng));
    ps.add(prefix + ".head.b", Tensor({1}));
}

// fused = F_img + sigmoid(conv_g(F_img (+) F_radar)) .* conv_v(F_radar)
inline Var gated_fuse(Tape& tape, ParameterStore& ps, Var f_img, Var f_radar, const std::string& prefix,
                      std::size_t level) {
    const Tensor& iv = f_img.value();
    const Tensor& rv = f_radar.value();
    if (iv.extent(0) != rv.extent(0) || iv.extent(1) != rv.extent(1))
        throw ShapeError("gated_fuse: spatial extents differ");
    Var cat = nn::concat_last({f_img, f_radar});
    Var gate = nn::conv2d(cat, tape.param(ps, detail::gate_name(prefix, level, "gate.k")), 1, nn::Pad::same);
    gate = nn::add_channel_bias(gate, tape.param(ps, detail::gate_name(prefix, level, "gate.b")));
    gate = nn::sigmoid(gate);
    Var value = nn::conv2d(f_radar, tape.param(ps, detail::gate_name(prefix, level, "value.k")), 1, nn::Pad::same);
    value = nn::add_channel_bias(value, tape.param(ps, detail::gate_name(prefix, level, "value.b")));
    return nn::add(f_img, nn::mul(gate, value));
}

// Coarse-to-fine upsample-conv chain with skip fusion at each scale; the
// level-0 stage concatenates the global radar map; a 1x1 head plus softplus
// scaled by max_depth keeps the output strictly positive. Returns H x W.
inline Var decode(Tape& tape, ParameterStore& ps, const std::vector<Var>& fused, Var global_map,
                  const DecoderConfig& cfg, const std::string& prefix) {
    if (fused.size() != kPyramidLevels) throw ShapeError("decode: need five fused maps");
    auto conv_block = [&](Var x, std::size_t lvl) {
        Var h = nn::conv2d(x, tape.param(ps, detail::dec_name(prefix, lvl, "k")), 1, nn::Pad::same);
        h = nn::add_channel_bias(h, tape.param(ps, detail::dec_name(prefix, lvl, "b")));
        return nn::leaky_relu(h, cfg.slope);
    };
    Var h = conv_block(fused[4], 5);
    for (std::size_t lvl = 4; lvl >= 1; --lvl)
        h = conv_block(nn::concat_last({nn::upsample2x_nearest(h), fused[lvl - 1]}), lvl);
    h = conv_block(nn::concat_last({nn::upsample2x_nearest(h), global_map}), 0);
    Var logits = nn::conv2d(h, tape.param(ps, prefix + ".head.k"), 1, nn::Pad::same);
    logits = nn::add_channel_bias(logits, tape.param(ps, prefix + ".head.b"));
    Var depth = nn::scale(nn::softplus(logits), cfg.max_depth);
    const Tensor& dv = depth.value();
    return nn::reshape(depth, {dv.extent(0), dv.extent(1)});
}

// L_Depth: mean absolute error over the valid pixels of the single-scan map
// D_s plus the same over the dense map D. Validity is depth > 0.
inline Var depth_loss(Var pred, const Tensor& d_s, const Tensor& d_dense) {
    const Tensor& pv = pred.value();
    if (!pv.same_shape(d_s) || !pv.same_shape(d_dense)) throw ShapeError("depth_loss: shape mismatch");
    std::size_t count_s = 0, count_d = 0;
    for (std::size_t i = 0; i < d_s.numel(); ++i) count_s += d_s[i] > 0.0 ? 1 : 0;
    for (std::size_t i = 0; i < d_dense.numel(); ++i) count_d += d_dense[i] > 0.0 ? 1 : 0;
    if (count_s == 0 && count_d == 0) throw DataError("depth_loss: both validity masks are empty");
    if (count_s == 0) return nn::masked_l1_mean(pred, d_dense);
    if (count_d == 0) return nn::masked_l1_mean(pred, d_s);
    return nn::add(nn::masked_l1_mean(pred, d_s), nn::masked_l1_mean(pred, d_dense));
}

// L = L_Depth + alpha * L_Up
inline Var total_loss(Var depth_term, Var chamfer_term, double alpha) {
    if (alpha < 0.0) throw ConfigError("total_loss: alpha must be non-negative");
    return nn::add(depth_term, nn::scale(chamfer_term, alpha));
}

}  // namespace rcdepth
