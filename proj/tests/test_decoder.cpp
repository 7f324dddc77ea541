#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "oracles.hpp"
#include "rcdepth/decoder.hpp"
#include "rcdepth/gradcheck.hpp"

using namespace rcdepth;

namespace {

const std::vector<std::size_t> kImgCh{2, 2, 3, 3, 4};
const std::vector<std::size_t> kRadCh{1, 2, 2, 3, 3};
constexpr std::size_t kGlobal = 2;

DecoderConfig tiny_decoder() {
    DecoderConfig cfg;
    cfg.widths = {4, 3, 3, 2, 2};
    cfg.level0_width = 2;
    return cfg;
}

ParameterStore make_params(std::mt19937_64& rng) {
    ParameterStore ps;
    register_decoder_params(ps, "dec", kImgCh, kRadCh, kGlobal, tiny_decoder(), rng);
    return ps;
}

std::vector<Var> random_pyramid(Tape& tape, std::size_t h, std::size_t w, const std::vector<std::size_t>& ch,
                                std::mt19937_64& rng) {
    std::vector<Var> out;
    for (std::size_t lvl = 1; lvl <= 5; ++lvl)
        out.push_back(tape.constant(oracle::random_tensor({h >> lvl, w >> lvl, ch[lvl - 1]}, rng)));
    return out;
}

}  // namespace

TEST_CASE("gated fusion passes the image through when radar is zero") {
    std::mt19937_64 rng(701);
    ParameterStore ps = make_params(rng);
    // zero the value-conv bias so conv_v(0) == 0
    ps.value("dec.f1.value.b") = Tensor({kImgCh[0]});
    Tape tape;
    Tensor img = oracle::random_tensor({8, 8, kImgCh[0]}, rng);
    Var fused = gated_fuse(tape, ps, tape.constant(img), tape.constant(Tensor({8, 8, kRadCh[0]})), "dec", 1);
    REQUIRE(fused.value() == img);  // bit-exact radar-free passthrough
}

TEST_CASE("saturated-negative gate bias recovers the image branch in the limit") {
    std::mt19937_64 rng(702);
    ParameterStore ps = make_params(rng);
    ps.value("dec.f2.gate.b") = Tensor::full({kImgCh[1]}, -120.0);
    Tape tape;
    Tensor img = oracle::random_tensor({4, 4, kImgCh[1]}, rng);
    Tensor radar = oracle::random_tensor({4, 4, kRadCh[1]}, rng);
    Var fused = gated_fuse(tape, ps, tape.constant(img), tape.constant(radar), "dec", 2);
    REQUIRE(max_abs_diff(fused.value(), img) < 1e-12);
}

TEST_CASE("gate output lies strictly inside (0,1)") {
    std::mt19937_64 rng(703);
    // sigmoid of any finite input is in (0,1); spot-check through the op
    Tape tape;
    Var x = tape.constant(oracle::random_tensor({3, 3, 2}, rng, -50.0, 50.0));
    Tensor s = nn::sigmoid(x).value();
    for (std::size_t i = 0; i < s.numel(); ++i) {
        REQUIRE(s[i] > 0.0);
        REQUIRE(s[i] < 1.0);
    }
}

TEST_CASE("gated fusion spatial mismatch is a shape error") {
    std::mt19937_64 rng(704);
    ParameterStore ps = make_params(rng);
    Tape tape;
    Var img = tape.constant(Tensor({8, 8, kImgCh[0]}));
    Var radar = tape.constant(Tensor({4, 8, kRadCh[0]}));
    REQUIRE_THROWS_AS(gated_fuse(tape, ps, img, radar, "dec", 1), ShapeError);
}

TEST_CASE("gated fusion gradients flow into both branches") {
    std::mt19937_64 rng(705);
    ParameterStore ps;
    register_decoder_params(ps, "dec", kImgCh, kRadCh, kGlobal, tiny_decoder(), rng);
    ParameterStore inputs;
    inputs.add("img", oracle::random_tensor({4, 4, kImgCh[0]}, rng));
    inputs.add("radar", oracle::random_tensor({4, 4, kRadCh[0]}, rng));
    Tensor proj = oracle::random_tensor({4, 4, kImgCh[0]}, rng);
    auto report = check_param_gradients(inputs, [&](Tape& t) {
        Var fused = gated_fuse(t, ps, t.param(inputs, "img"), t.param(inputs, "radar"), "dec", 1);
        return nn::sum(nn::mul_const(fused, proj));
    });
    CAPTURE(report.worst, report.max_rel_err);
    REQUIRE(report.pass(1e-4));

    Tape t;
    Var fused = gated_fuse(t, ps, t.param(inputs, "img"), t.param(inputs, "radar"), "dec", 1);
    inputs.zero_grads();
    t.backward(nn::sum(nn::mul_const(fused, proj)), &inputs);
    double gi = 0.0, gr = 0.0;
    for (std::size_t i = 0; i < inputs.grad("img").numel(); ++i) gi += std::abs(inputs.grad("img")[i]);
    for (std::size_t i = 0; i < inputs.grad("radar").numel(); ++i) gr += std::abs(inputs.grad("radar")[i]);
    REQUIRE(gi > 0.0);
    REQUIRE(gr > 0.0);
}

TEST_CASE("decode produces a strictly positive full-resolution map") {
    std::mt19937_64 rng(706);
    ParameterStore ps = make_params(rng);
    Tape tape;
    auto fused = random_pyramid(tape, 32, 64, kImgCh, rng);
    Var global = tape.constant(oracle::random_tensor({32, 64, kGlobal}, rng));
    Var depth = decode(tape, ps, fused, global, tiny_decoder(), "dec");
    REQUIRE(depth.value().shape() == Shape{32, 64});
    for (std::size_t i = 0; i < depth.value().numel(); ++i) REQUIRE(depth.value()[i] > 0.0);
}

TEST_CASE("scaling decoder parameters changes the output (non-degenerate head)") {
    std::mt19937_64 rng(707);
    ParameterStore ps = make_params(rng);
    Tape t1;
    auto fused1 = random_pyramid(t1, 32, 32, kImgCh, rng);
    Var g1 = t1.constant(Tensor({32, 32, kGlobal}));
    Tensor before = decode(t1, ps, fused1, g1, tiny_decoder(), "dec").value();

    for (auto& [name, p] : ps.entries())
        for (std::size_t i = 0; i < p.numel(); ++i) p[i] *= 2.0;
    Tape t2;
    std::vector<Var> fused2;
    for (const Var& f : fused1) fused2.push_back(t2.constant(f.value()));
    Tensor after = decode(t2, ps, fused2, t2.constant(Tensor({32, 32, kGlobal})), tiny_decoder(), "dec").value();
    REQUIRE(max_abs_diff(before, after) > 1e-9);
}

TEST_CASE("end-to-end decoder gradients at 32x64 match finite differences") {
    std::mt19937_64 rng(708);
    ParameterStore ps = make_params(rng);
    Tape probe;
    auto fused_data = random_pyramid(probe, 32, 64, kImgCh, rng);
    std::vector<Tensor> fused_tensors;
    for (const Var& f : fused_data) fused_tensors.push_back(f.value());
    Tensor global = oracle::random_tensor({32, 64, kGlobal}, rng);
    Tensor proj = oracle::random_tensor({32, 64}, rng);

    auto report = check_param_gradients(
        ps,
        [&](Tape& t) {
            std::vector<Var> fused;
            for (const Tensor& f : fused_tensors) fused.push_back(t.constant(f));
            Var depth = decode(t, ps, fused, t.constant(global), tiny_decoder(), "dec");
            return nn::sum(nn::mul_const(depth, proj));
        },
        1e-5, 6);
    CAPTURE(report.worst, report.max_rel_err);
    REQUIRE(report.pass(1e-4));
}

TEST_CASE("depth loss follows Eq. 4's two-term masked structure") {
    // D_s valid at two pixels with errors 1 and 3, D invalid everywhere -> 2
    Tensor pred({2, 2}, {5.0, 9.0, 4.0, 7.0});
    Tensor d_s({2, 2}, {4.0, 0.0, 7.0, 0.0});
    Tensor d_dense({2, 2}, {0.0, 0.0, 0.0, 0.0});
    Tape tape;
    Var loss = depth_loss(tape.constant(pred), d_s, d_dense);
    REQUIRE(loss.value().item() == 2.0);

    // perfect prediction on both maps -> 0
    Tape t2;
    REQUIRE(depth_loss(t2.constant(pred), pred, pred).value().item() == 0.0);

    // both masks empty -> data error
    Tape t3;
    REQUIRE_THROWS_AS(depth_loss(t3.constant(pred), d_dense, d_dense), DataError);

    // perturbing invalid pixels leaves the loss bit-identical
    Tensor d_s2 = d_s;
    d_s2.at(0, 1) = -42.0;
    Tensor d_dense2 = d_dense;
    d_dense2.at(1, 1) = -0.5;
    Tape t4;
    Var loss2 = depth_loss(t4.constant(pred), d_s2, d_dense2);
    REQUIRE(loss2.value().item() == loss.value().item());
}

TEST_CASE("total loss weighting") {
    Tape tape;
    Var depth = tape.constant(Tensor::scalar(3.0));
    Var up = tape.constant(Tensor::scalar(2.0));
    REQUIRE(total_loss(depth, up, 0.0).value().item() == 3.0);
    REQUIRE(total_loss(depth, up, 1.0).value().item() == 5.0);
    REQUIRE_THROWS_AS(total_loss(depth, up, -0.1), ConfigError);
}

TEST_CASE("total loss gradient splits linearly between branches") {
    std::mt19937_64 rng(709);
    ParameterStore ps;
    ps.add("pred", oracle::random_tensor({3, 3}, rng, 1.0, 6.0));
    ps.add("cloud", oracle::random_tensor({4, 3}, rng));
    Tensor d_s = oracle::random_tensor({3, 3}, rng, 0.5, 5.0);
    d_s.at(1, 1) = 0.0;
    Tensor d_dense = oracle::random_tensor({3, 3}, rng, 0.5, 5.0);
    Tensor gt = oracle::random_tensor({5, 3}, rng);
    const double alpha = 0.7;
    auto report = check_param_gradients(ps, [&](Tape& t) {
        Var depth_term = depth_loss(t.param(ps, "pred"), d_s, d_dense);
        Var up_term = nn::chamfer(t.param(ps, "cloud"), t.constant(gt));
        return total_loss(depth_term, up_term, alpha);
    });
    CAPTURE(report.worst, report.max_rel_err);
    REQUIRE(report.pass(1e-4));
}
