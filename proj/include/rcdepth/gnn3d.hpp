#pragma once

#include <random>
#include <string>
#include <vector>

#include "rcdepth/common.hpp"
#include "rcdepth/encoder2d.hpp"
#include "rcdepth/geometry.hpp"
#include "rcdepth/ops.hpp"
#include "rcdepth/params.hpp"
#include "rcdepth/tape.hpp"

// Attention-enhanced dynamic-graph feature extraction: five EdgeConv blocks
// whose KNN graphs are recomputed in the current feature space, each followed
// by cross-attention against the matching-scale 2D point features with a
// residual skip, then channel concatenation and MLP fusion.
namespace rcdepth {

struct GnnConfig {
    std::size_t k = 4;
    std::vector<std::size_t> stage_widths{16, 16, 32, 32, 64};  // C_i'
    std::size_t out_width = 64;                                 // C
    double slope = 0.2;
    bool use_attention = true;  // false: plain DGCNN (no cross-attention)
};

struct GnnDiagnostics {
    std::vector<std::vector<std::size_t>> stage_neighbors;  // flat N*k_eff per stage
    std::vector<std::size_t> stage_k;
    bool self_loop = false;
};

namespace detail {

inline std::string gnn_name(const std::string& prefix, std::size_t stage, const char* part) {
    return prefix + ".s" + std::to_string(stage) + "." + part;
}

}  // namespace detail

inline void register_gnn_params(ParameterStore& ps, const std::string& prefix, std::size_t in_width,
                                const std::vector<std::size_t>& f2d_widths, const GnnConfig& cfg,
                                std::mt19937_64& rng) {
    if (cfg.stage_widths.size() != kPyramidLevels || f2d_widths.size() != kPyramidLevels)
        throw ConfigError("gnn: need five stage and point-feature widths");
    std::size_t cin = in_width;
    std::size_t concat_width = 0;
    for (std::size_t s = 0; s < kPyramidLevels; ++s) {
        const std::size_t cs = cfg.stage_widths[s];
        ps.add(detail::gnn_name(prefix, s, "edge.w"), uniform_init({2 * cin, cs}, 2 * cin, rng));
        ps.add(detail::gnn_name(prefix, s, "edge.b"), Tensor({cs}));
        if (cfg.use_attention) {
            ps.add(detail::gnn_name(prefix, s, "q.w"), uniform_init({cs, cs}, cs, rng));
            ps.add(detail::gnn_name(prefix, s, "q.b"), Tensor({cs}));
            ps.add(detail::gnn_name(prefix, s, "k.w"), uniform_init({f2d_widths[s], cs}, f2d_widths[s], rng));
            ps.add(detail::gnn_name(prefix, s, "k.b"), Tensor({cs}));
            ps.add(detail::gnn_name(prefix, s, "v.w"), uniform_init({f2d_widths[s], cs}, f2d_widths[s], rng));
            ps.add(detail::gnn_name(prefix, s, "v.b"), Tensor({cs}));
        }
        concat_width += cs;
        cin = cs;
    }
    ps.add(prefix + ".fuse1.w", uniform_init({concat_width, cfg.out_width}, concat_width, rng));
    ps.add(prefix + ".fuse1.b", Tensor({cfg.out_width}));
    ps.add(prefix + ".fuse2.w", uniform_init({cfg.out_width, cfg.out_width}, cfg.out_width, rng));
    ps.add(prefix + ".fuse2.b", Tensor({cfg.out_width}));
}

// One EdgeConv block: for each node the max over its k neighbors of
// MLP(x_i (+) (x_j - x_i)). The graph comes from the current feature rows.
// With fewer than k+1 points the neighbor count degrades to N-1; a single
// point falls back to a self loop (flagged in diagnostics).
inline Var edgeconv(Tape& tape, ParameterStore& ps, Var x, std::size_t k, const std::string& name, double slope,
                    GnnDiagnostics* diag = nullptr) {
    const Tensor& xv = x.value();
    require_rank(xv, 2, "edgeconv input");
    const std::size_t n = xv.extent(0);
    std::size_t k_eff;
    std::vector<std::size_t> nbr;
    if (n < 2) {
        if (n == 0) throw PreconditionError("edgeconv: empty point set");
        k_eff = 1;
        nbr = {0};
        if (diag) diag->self_loop = true;
    } else {
        k_eff = std::min(k, n - 1);
        nbr = knn_indices(xv, k_eff);
    }
    if (diag) {
        diag->stage_neighbors.push_back(nbr);
        diag->stage_k.push_back(k_eff);
    }
    std::vector<std::size_t> self_idx(n * k_eff);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < k_eff; ++l) self_idx[i * k_eff + l] = i;
    Var self_rows = nn::gather_rows(x, self_idx);
    Var nbr_rows = nn::gather_rows(x, nbr);
    Var edge = nn::concat_cols(self_rows, nn::sub(nbr_rows, self_rows));
    Var h = nn::linear(edge, tape.param(ps, name + ".w"), tape.param(ps, name + ".b"));
    h = nn::leaky_relu(h, slope);
    return nn::group_max(h, k_eff);
}

// f_3d' = Attention(f_3d W_Q, f_2d W_K, f_2d W_V) + f_3d
inline Var attention_stage(Tape& tape, ParameterStore& ps, Var f3d, Var f2d, const std::string& prefix,
                           std::size_t stage) {
    if (f3d.value().extent(0) != f2d.value().extent(0))
        throw ShapeError("attention_stage: row count mismatch between 3D and 2D features");
    Var q = nn::linear(f3d, tape.param(ps, detail::gnn_name(prefix, stage, "q.w")),
                       tape.param(ps, detail::gnn_name(prefix, stage, "q.b")));
    Var k = nn::linear(f2d, tape.param(ps, detail::gnn_name(prefix, stage, "k.w")),
                       tape.param(ps, detail::gnn_name(prefix, stage, "k.b")));
    Var v = nn::linear(f2d, tape.param(ps, detail::gnn_name(prefix, stage, "v.w")),
                       tape.param(ps, detail::gnn_name(prefix, stage, "v.b")));
    return nn::add(nn::attention(q, k, v), f3d);
}

// Five EdgeConv blocks with per-stage cross-attention; the concatenated
// stage outputs pass through the fusion MLP to width C. Block 1 consumes the
// full six-channel radar rows.
inline Var gnn_forward(Tape& tape, ParameterStore& ps, Var radar_rows, const std::vector<Var>& f2d,
                       const GnnConfig& cfg, const std::string& prefix, GnnDiagnostics* diag = nullptr) {
    if (f2d.size() != kPyramidLevels) throw ShapeError("gnn_forward: need five 2D point-feature sets");
    Var h = radar_rows;
    std::vector<Var> stages;
    for (std::size_t s = 0; s < kPyramidLevels; ++s) {
        Var e = edgeconv(tape, ps, h, cfg.k, detail::gnn_name(prefix, s, "edge"), cfg.slope, diag);
        Var f = cfg.use_attention ? attention_stage(tape, ps, e, f2d[s], prefix, s) : e;
        stages.push_back(f);
        h = f;
    }
    Var cat = nn::concat_last(stages);
    Var fused = nn::linear(cat, tape.param(ps, prefix + ".fuse1.w"), tape.param(ps, prefix + ".fuse1.b"));
    fused = nn::leaky_relu(fused, cfg.slope);
    return nn::linear(fused, tape.param(ps, prefix + ".fuse2.w"), tape.param(ps, prefix + ".fuse2.b"));
}

}  // namespace rcdepth
