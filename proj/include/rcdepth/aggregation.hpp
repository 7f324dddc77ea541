#pragma once

#include <random>
#include <string>
#include <vector>

#include "rcdepth/common.hpp"
#include "rcdepth/encoder2d.hpp"
#include "rcdepth/ops.hpp"
#include "rcdepth/params.hpp"
#include "rcdepth/tape.hpp"

// 2D-3D feature aggregation: per-scale cross-attention with f_3d as query
// and f_2d^i as key/value (output width C_i, no skip), plus the global
// variant over the channel-concatenated 2D features (output width C).
namespace rcdepth {

namespace detail {

inline std::string agg_name(const std::string& prefix, std::size_t scale, const char* part) {
    return prefix + ".a" + std::to_string(scale) + "." + part;
}

}  // namespace detail

inline void register_aggregation_params(ParameterStore& ps, const std::string& prefix, std::size_t f3d_width,
                                        const std::vector<std::size_t>& f2d_widths, std::size_t global_width,
                                        std::mt19937_64& rng) {
    if (f2d_widths.size() != kPyramidLevels) throw ConfigError("aggregation: need five point-feature widths");
    for (std::size_t s = 0; s < kPyramidLevels; ++s) {
        const std::size_t ci = f2d_widths[s];
        ps.add(detail::agg_name(prefix, s, "q.w"), uniform_init({f3d_width, ci}, f3d_width, rng));
        ps.add(detail::agg_name(prefix, s, "q.b"), Tensor({ci}));
        ps.add(detail::agg_name(prefix, s, "k.w"), uniform_init({ci, ci}, ci, rng));
        ps.add(detail::agg_name(prefix, s, "k.b"), Tensor({ci}));
        ps.add(detail::agg_name(prefix, s, "v.w"), uniform_init({ci, ci}, ci, rng));
        ps.add(detail::agg_name(prefix, s, "v.b"), Tensor({ci}));
    }
    std::size_t concat_width = 0;
    for (std::size_t w : f2d_widths) concat_width += w;
    ps.add(prefix + ".g.q.w", uniform_init({f3d_width, global_width}, f3d_width, rng));
    ps.add(prefix + ".g.q.b", Tensor({global_width}));
    ps.add(prefix + ".g.k.w", uniform_init({concat_width, global_width}, concat_width, rng));
    ps.add(prefix + ".g.k.b", Tensor({global_width}));
    ps.add(prefix + ".g.v.w", uniform_init({concat_width, global_width}, concat_width, rng));
    ps.add(prefix + ".g.v.b", Tensor({global_width}));
}

// f_agg^i = Attention(f_3d W_Q^i, f_2d^i W_K^i, f_2d^i W_V^i); no skip term.
inline Var aggregate_per_scale(Tape& tape, ParameterStore& ps, Var f3d, Var f2d, const std::string& prefix,
                               std::size_t scale) {
    if (f3d.value().extent(0) != f2d.value().extent(0))
        throw ShapeError("aggregate_per_scale: row count mismatch");
    Var q = nn::linear(f3d, tape.param(ps, detail::agg_name(prefix, scale, "q.w")),
                       tape.param(ps, detail::agg_name(prefix, scale, "q.b")));
    Var k = nn::linear(f2d, tape.param(ps, detail::agg_name(prefix, scale, "k.w")),
                       tape.param(ps, detail::agg_name(prefix, scale, "k.b")));
    Var v = nn::linear(f2d, tape.param(ps, detail::agg_name(prefix, scale, "v.w")),
                       tape.param(ps, detail::agg_name(prefix, scale, "v.b")));
    return nn::attention(q, k, v);
}

// f_2d^G = f_2d^1 (+) ... (+) f_2d^5 along channels, then attention with
// f_3d as the query, output width C.
inline Var aggregate_global(Tape& tape, ParameterStore& ps, Var f3d, const std::vector<Var>& f2d,
                            const std::string& prefix) {
    if (f2d.size() != kPyramidLevels) throw ShapeError("aggregate_global: need five point-feature sets");
    for (const Var& f : f2d)
        if (f.value().extent(0) != f3d.value().extent(0)) throw ShapeError("aggregate_global: row count mismatch");
    Var f2d_g = nn::concat_last(f2d);
    Var q = tape.param(ps, prefix + ".g.q.w");
    Var out = nn::attention(nn::linear(f3d, q, tape.param(ps, prefix + ".g.q.b")),
                            nn::linear(f2d_g, tape.param(ps, prefix + ".g.k.w"), tape.param(ps, prefix + ".g.k.b")),
                            nn::linear(f2d_g, tape.param(ps, prefix + ".g.v.w"), tape.param(ps, prefix + ".g.v.b")));
    return out;
}

}  // namespace rcdepth
