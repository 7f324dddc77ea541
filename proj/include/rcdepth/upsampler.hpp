#pragma once

#include <random>
#include <string>
#include <vector>

#include "rcdepth/common.hpp"
#include "rcdepth/ops.hpp"
#include "rcdepth/params.hpp"
#include "rcdepth/tape.hpp"

// Variable-ratio point-cloud upsampling: a reshape block interpolating the
// variable-size input to a fixed point count n = N_L / tau^n_u, n_u cascaded
// upsample units of rate tau, and coordinate reconstruction via learned
// per-point offsets added to the replicated base points. Runs in normalized
// coordinates; the caller denormalizes.
namespace rcdepth {

struct UpsamplerConfig {
    std::size_t n_l = 128;     // target point count N_L
    std::size_t tau = 2;       // per-unit rate
    std::size_t n_units = 2;   // number of upsample units

    void validate() const {
        if (n_l == 0 || n_units == 0) throw ConfigError("upsampler: N_L and n_units must be positive");
        if (tau < 2) throw ConfigError("upsampler: rate tau must be >= 2");
        std::size_t f = 1;
        for (std::size_t u = 0; u < n_units; ++u) f *= tau;
        if (n_l % f != 0) throw ConfigError("upsampler: N_L must be divisible by tau^n_units");
    }

    std::size_t rate() const {
        std::size_t f = 1;
        for (std::size_t u = 0; u < n_units; ++u) f *= tau;
        return f;
    }

    std::size_t base_count() const {
        validate();
        return n_l / rate();
    }
};

struct UpsampledCloud {
    Tensor base_points;  // R_up': replicated reshape output, N_L x 3
    Var offsets;         // Delta r, N_L x 3
    Var points;          // R_up = R_up' + Delta r
    Var features;        // F_up, N_L x C
};

namespace detail {

inline std::string up_name(const std::string& prefix, std::size_t unit, const char* part) {
    return prefix + ".u" + std::to_string(unit) + "." + part;
}

inline Tensor repeat_rows_value(const Tensor& x, std::size_t factor) {
    Tensor out({x.extent(0) * factor, x.extent(1)});
    for (std::size_t i = 0; i < x.extent(0); ++i)
        for (std::size_t r = 0; r < factor; ++r)
            for (std::size_t c = 0; c < x.extent(1); ++c) out.at(i * factor + r, c) = x.at(i, c);
    return out;
}

}  // namespace detail

inline void register_upsampler_params(ParameterStore& ps, const std::string& prefix, std::size_t width,
                                      const UpsamplerConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    for (std::size_t u = 0; u < cfg.n_units; ++u) {
        ps.add(detail::up_name(prefix, u, "tconv.k"), uniform_init({3, width, width}, 3 * width, rng));
        ps.add(detail::up_name(prefix, u, "mlp1.w"), uniform_init({2 * width, width}, 2 * width, rng));
        ps.add(detail::up_name(prefix, u, "mlp1.b"), Tensor({width}));
        ps.add(detail::up_name(prefix, u, "mlp2.w"), uniform_init({width, width}, width, rng));
        ps.add(detail::up_name(prefix, u, "mlp2.b"), Tensor({width}));
    }
    const std::size_t half = width / 2 ? width / 2 : 1;
    ps.add(prefix + ".off1.w", uniform_init({width, half}, width, rng));
    ps.add(prefix + ".off1.b", Tensor({half}));
    ps.add(prefix + ".off2.w", uniform_init({half, 3}, half, rng));
    ps.add(prefix + ".off2.b", Tensor({3}));
}

struct ReshapeResult {
    Tensor points;  // n x 3
    Var features;   // n x C
};

// Treat the N rows as samples at 0..N-1 and linearly interpolate points and
// features at n evenly spaced positions spanning [0, N-1]. N == n is the
// bit-exact identity; N == 1 replicates the single row.
inline ReshapeResult reshape_block(Tape&, const Tensor& points, Var features, std::size_t n) {
    require_rank(points, 2, "reshape_block points");
    if (points.extent(0) == 0) throw PreconditionError("reshape_block: empty input");
    if (points.extent(0) != features.value().extent(0)) throw ShapeError("reshape_block: row count mismatch");
    const auto stops = nn::interp_positions(points.extent(0), n);
    return {nn::interp_rows_value(points, stops), nn::interp_rows(features, stops)};
}

struct UnitResult {
    Tensor points;  // tau*m x 3
    Var features;   // tau*m x C
};

// One upsample unit: duplicated features alongside a transposed-conv branch,
// concatenated and refined by two MLP layers; points replicate in block
// order.
inline UnitResult upsample_unit(Tape& tape, ParameterStore& ps, const Tensor& points, Var features,
                                const UpsamplerConfig& cfg, const std::string& prefix, std::size_t unit,
                                double slope) {
    Var dup = nn::repeat_rows(features, cfg.tau);
    Var conv = nn::transposed_conv1d_points(features, tape.param(ps, detail::up_name(prefix, unit, "tconv.k")),
                                            cfg.tau);
    Var h = nn::concat_cols(dup, conv);
    h = nn::linear(h, tape.param(ps, detail::up_name(prefix, unit, "mlp1.w")),
                   tape.param(ps, detail::up_name(prefix, unit, "mlp1.b")));
    h = nn::leaky_relu(h, slope);
    h = nn::linear(h, tape.param(ps, detail::up_name(prefix, unit, "mlp2.w")),
                   tape.param(ps, detail::up_name(prefix, unit, "mlp2.b")));
    h = nn::leaky_relu(h, slope);
    return {detail::repeat_rows_value(points, cfg.tau), h};
}

// Delta r = MLP2(MLP1(F_up)); R_up = R_up' + Delta r.
inline UpsampledCloud reconstruct_coordinates(Tape& tape, ParameterStore& ps, Var features, Tensor base_points,
                                              const std::string& prefix, double slope) {
    if (features.value().extent(0) != base_points.extent(0))
        throw ShapeError("reconstruct_coordinates: row count mismatch");
    Var h = nn::linear(features, tape.param(ps, prefix + ".off1.w"), tape.param(ps, prefix + ".off1.b"));
    h = nn::leaky_relu(h, slope);
    Var offsets = nn::linear(h, tape.param(ps, prefix + ".off2.w"), tape.param(ps, prefix + ".off2.b"));
    Var points = nn::add(tape.constant(base_points), offsets);
    return {std::move(base_points), offsets, points, features};
}

// The deterministic baseline the learned offsets start from: the reshape
// output replicated through all units with no feature path.
inline Tensor replicate_of_reshape(const Tensor& points, const UpsamplerConfig& cfg) {
    const auto stops = nn::interp_positions(points.extent(0), cfg.base_count());
    Tensor base = nn::interp_rows_value(points, stops);
    for (std::size_t u = 0; u < cfg.n_units; ++u) base = detail::repeat_rows_value(base, cfg.tau);
    return base;
}

// Full submodule: reshape -> n_units upsample units -> coordinate
// reconstruction. Exactly N_L output points for every admissible input size.
inline UpsampledCloud upsample(Tape& tape, ParameterStore& ps, const Tensor& r3d, Var f_agg_g,
                               const UpsamplerConfig& cfg, const std::string& prefix, double slope) {
    cfg.validate();
    ReshapeResult reshaped = reshape_block(tape, r3d, f_agg_g, cfg.base_count());
    Tensor points = std::move(reshaped.points);
    Var features = reshaped.features;
    for (std::size_t u = 0; u < cfg.n_units; ++u) {
        UnitResult unit = upsample_unit(tape, ps, points, features, cfg, prefix, u, slope);
        points = std::move(unit.points);
        features = unit.features;
    }
    return reconstruct_coordinates(tape, ps, features, std::move(points), prefix, slope);
}

}  // namespace rcdepth
