#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "oracles.hpp"
#include "rcdepth/encoder2d.hpp"
#include "rcdepth/gradcheck.hpp"

using namespace rcdepth;

TEST_CASE("pyramid levels halve exactly") {
    std::mt19937_64 rng(201);
    ParameterStore ps;
    std::vector<std::size_t> channels{4, 8, 8, 16, 16};
    register_encoder_params(ps, "img", 3, channels, rng);
    Tape tape;
    Var x = tape.constant(oracle::random_tensor({64, 64, 3}, rng));
    auto pyr = encode_pyramid(tape, ps, x, "img", 0.2);
    REQUIRE(pyr.size() == 5);
    std::size_t side = 32;
    for (std::size_t i = 0; i < 5; ++i) {
        REQUIRE(pyr[i].value().extent(0) == side);
        REQUIRE(pyr[i].value().extent(1) == side);
        REQUIRE(pyr[i].value().extent(2) == channels[i]);
        side /= 2;
    }
}

TEST_CASE("indivisible input size is a config error") {
    std::mt19937_64 rng(202);
    ParameterStore ps;
    register_encoder_params(ps, "img", 3, {2, 2, 2, 2, 2}, rng);
    Tape tape;
    Var x = tape.constant(Tensor({48, 64, 3}));
    REQUIRE_THROWS_AS(encode_pyramid(tape, ps, x, "img", 0.2), ConfigError);
    REQUIRE_THROWS_AS(register_encoder_params(ps, "bad", 3, {2, 2}, rng), ConfigError);
}

TEST_CASE("zero image through a zero-bias encoder yields a zero pyramid") {
    std::mt19937_64 rng(203);
    ParameterStore ps;
    register_encoder_params(ps, "img", 3, {2, 4, 4, 4, 4}, rng);
    // biases and betas are zero-initialized already; gammas stay as-is
    Tape tape;
    Var x = tape.constant(Tensor({32, 32, 3}));
    auto pyr = encode_pyramid(tape, ps, x, "img", 0.2);
    for (const Var& level : pyr)
        for (std::size_t i = 0; i < level.value().numel(); ++i) REQUIRE(level.value()[i] == 0.0);
}

TEST_CASE("encoder gradient wrt input matches finite differences") {
    std::mt19937_64 rng(204);
    ParameterStore ps;
    register_encoder_params(ps, "img", 1, {2, 2, 2, 2, 2}, rng);
    Tensor x = oracle::random_tensor({32, 32, 1}, rng);
    Tensor proj = oracle::random_tensor({16, 16, 2}, rng);
    auto report = check_input_gradient(
        x,
        [&](Tape& t, Var xv) {
            auto pyr = encode_pyramid(t, ps, xv, "img", 0.2);
            return nn::sum(nn::mul_const(pyr[0], proj));
        },
        1e-5, 64);
    CAPTURE(report.worst, report.max_rel_err);
    REQUIRE(report.pass(1e-4));
}

TEST_CASE("encoder parameter gradients match finite differences") {
    std::mt19937_64 rng(205);
    ParameterStore ps;
    register_encoder_params(ps, "r", 2, {2, 2, 2, 2, 2}, rng);
    Tensor x = oracle::random_tensor({32, 32, 2}, rng);
    Tensor proj = oracle::random_tensor({1, 1, 2}, rng);
    auto report = check_param_gradients(
        ps,
        [&](Tape& t) {
            auto pyr = encode_pyramid(t, ps, t.constant(x), "r", 0.2);
            return nn::sum(nn::mul_const(pyr[4], proj));
        },
        1e-5, 8);
    CAPTURE(report.worst, report.max_rel_err);
    REQUIRE(report.pass(1e-4));
}

TEST_CASE("point feature selection reads floor-scaled cells") {
    std::mt19937_64 rng(206);
    Tape tape;
    std::vector<Var> pyramid;
    const std::size_t H = 64, W = 64;
    for (std::size_t lvl = 1; lvl <= 5; ++lvl)
        pyramid.push_back(tape.constant(oracle::random_tensor({H >> lvl, W >> lvl, 3}, rng)));

    // pixel (13, 27): at level 2 the cell is (13/4, 27/4) = (3, 6)
    std::vector<Pixel> coords{{13, 27}, {0, 0}};
    auto feats = select_point_features(pyramid, coords);
    REQUIRE(feats.size() == 5);
    const Tensor& level2 = pyramid[1].value();
    for (std::size_t c = 0; c < 3; ++c) {
        REQUIRE(feats[1].value().at(0, c) == level2.at(27 / 4, 13 / 4, c));
        // pixel (0,0) reads cell (0,0) at every level
        REQUIRE(feats[1].value().at(1, c) == level2.at(0, 0, c));
    }

    // two points sharing the level-5 cell give identical rows
    std::vector<Pixel> pair{{1, 1}, {30, 30}};
    auto f5 = select_point_features(pyramid, pair)[4];
    for (std::size_t c = 0; c < 3; ++c) REQUIRE(f5.value().at(0, c) == f5.value().at(1, c));
}

TEST_CASE("point feature selection is a pure gather (permutation equivariance)") {
    std::mt19937_64 rng(207);
    Tape tape;
    std::vector<Var> pyramid;
    for (std::size_t lvl = 1; lvl <= 5; ++lvl)
        pyramid.push_back(tape.constant(oracle::random_tensor({64 >> lvl, 128 >> lvl, 2}, rng)));

    std::uniform_int_distribution<std::int64_t> xd(0, 127), yd(0, 63);
    std::vector<Pixel> coords;
    for (int i = 0; i < 9; ++i) coords.push_back({xd(rng), yd(rng)});
    std::vector<std::size_t> perm(coords.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Pixel> permuted(coords.size());
    for (std::size_t i = 0; i < perm.size(); ++i) permuted[i] = coords[perm[i]];

    auto base = select_point_features(pyramid, coords);
    auto shuf = select_point_features(pyramid, permuted);
    for (std::size_t lvl = 0; lvl < 5; ++lvl)
        for (std::size_t i = 0; i < perm.size(); ++i)
            for (std::size_t c = 0; c < 2; ++c)
                REQUIRE(shuf[lvl].value().at(i, c) == base[lvl].value().at(perm[i], c));
}
