#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "rcdepth/params.hpp"
#include "rcdepth/tape.hpp"
#include "rcdepth/tensor.hpp"

namespace rcdepth {

// Central finite-difference verification of analytic gradients. Used by the
// test suites and the `gradcheck` CLI subcommand.
struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::string worst;  // "param[index]" of the worst element

    bool pass(double tol) const { return checked > 0 && max_rel_err < tol; }
};

namespace detail {

inline double rel_err(double analytic, double fd) {
    const double scale = std::max({std::abs(analytic), std::abs(fd), 1.0});
    return std::abs(analytic - fd) / scale;
}

}  // namespace detail

// Checks d(loss)/d(theta) for every element of every parameter in `store`
// (up to `probe_limit` evenly spaced elements per tensor). `build_loss` must
// construct the loss from current store values on the given tape; it is
// re-invoked per perturbed evaluation.
inline GradCheckReport check_param_gradients(ParameterStore& store,
                                             const std::function<Var(Tape&)>& build_loss,
                                             double eps = 1e-5,
                                             std::size_t probe_limit = static_cast<std::size_t>(-1)) {
    store.zero_grads();
    {
        Tape tape;
        Var loss = build_loss(tape);
        tape.backward(loss, &store);
    }
    std::map<std::string, Tensor> analytic;
    for (const auto& [name, p] : store.entries()) analytic.emplace(name, store.grad(name));

    GradCheckReport report;
    for (auto& [name, p] : store.entries()) {
        const std::size_t stride = p.numel() > probe_limit ? (p.numel() + probe_limit - 1) / probe_limit : 1;
        for (std::size_t i = 0; i < p.numel(); i += stride) {
            const double saved = p[i];
            p[i] = saved + eps;
            Tape tp;
            const double lp = build_loss(tp).value().item();
            p[i] = saved - eps;
            Tape tm;
            const double lm = build_loss(tm).value().item();
            p[i] = saved;
            const double fd = (lp - lm) / (2.0 * eps);
            const double err = detail::rel_err(analytic.at(name)[i], fd);
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst = name + "[" + std::to_string(i) + "]";
            }
            ++report.checked;
        }
    }
    return report;
}

// Checks d(loss)/d(x) for a single input tensor. `build_loss` receives the
// input as a tape constant and must return the scalar loss.
inline GradCheckReport check_input_gradient(const Tensor& x,
                                            const std::function<Var(Tape&, Var)>& build_loss,
                                            double eps = 1e-5,
                                            std::size_t probe_limit = static_cast<std::size_t>(-1)) {
    Tensor analytic;
    {
        Tape tape;
        Var xv = tape.constant(x);
        Var loss = build_loss(tape, xv);
        tape.backward(loss);
        analytic = tape.grad(xv);
    }
    GradCheckReport report;
    Tensor probe = x;
    const std::size_t stride = probe.numel() > probe_limit ? (probe.numel() + probe_limit - 1) / probe_limit : 1;
    for (std::size_t i = 0; i < probe.numel(); i += stride) {
        const double saved = probe[i];
        probe[i] = saved + eps;
        Tape tp;
        const double lp = build_loss(tp, tp.constant(probe)).value().item();
        probe[i] = saved - eps;
        Tape tm;
        const double lm = build_loss(tm, tm.constant(probe)).value().item();
        probe[i] = saved;
        const double fd = (lp - lm) / (2.0 * eps);
        const double err = detail::rel_err(analytic[i], fd);
        if (err > report.max_rel_err) {
            report.max_rel_err = err;
            report.worst = "input[" + std::to_string(i) + "]";
        }
        ++report.checked;
    }
    return report;
}

}  // namespace rcdepth
