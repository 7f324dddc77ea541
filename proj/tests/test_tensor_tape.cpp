#include <catch2/catch_amalgamated.hpp>

#include "rcdepth/ops.hpp"
#include "rcdepth/params.hpp"
#include "rcdepth/tape.hpp"
#include "rcdepth/tensor.hpp"

using namespace rcdepth;

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3});
    REQUIRE(t.numel() == 6);
    REQUIRE(t.rank() == 2);
    t.at(1, 2) = 5.0;
    REQUIRE(t[5] == 5.0);

    REQUIRE_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("tensor rejects non-finite values at construction") {
    REQUIRE_THROWS_AS(Tensor({2}, {1.0, std::nan("")}), DataError);
    REQUIRE_THROWS_AS(Tensor({1}, {std::numeric_limits<double>::infinity()}), DataError);
}

TEST_CASE("backward fills gradients for contributing parameters only") {
    ParameterStore ps;
    ps.add("a", Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
    ps.add("unused", Tensor({3}, {1.0, 1.0, 1.0}));

    Tape tape;
    Var a = tape.param(ps, "a");
    Var loss = nn::sum(a);
    tape.backward(loss, &ps);

    // loss = sum of a parameter tensor -> gradient all ones
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(ps.grad("a")[i] == 1.0);
    // parameter absent from the loss -> gradient stays zero
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(ps.grad("unused")[i] == 0.0);
}

TEST_CASE("backward state errors") {
    Tape empty;
    REQUIRE_THROWS_AS(empty.backward(Var{&empty, 0}), StateError);

    Tape tape;
    Var x = tape.constant(Tensor::scalar(2.0));
    REQUIRE_THROWS_AS(tape.grad(x), StateError);  // grad before backward
    tape.backward(x);
    REQUIRE_THROWS_AS(tape.backward(x), StateError);  // double backward

    Tape other;
    Var y = other.constant(Tensor::scalar(1.0));
    Tape third;
    REQUIRE_THROWS_AS(third.backward(y), StateError);
}

TEST_CASE("backward requires scalar loss") {
    Tape tape;
    Var x = tape.constant(Tensor({2}, {1.0, 2.0}));
    REQUIRE_THROWS_AS(tape.backward(x), ShapeError);
}

TEST_CASE("param nodes are memoized per tape and grads accumulate once") {
    ParameterStore ps;
    ps.add("w", Tensor({2}, {3.0, 4.0}));
    Tape tape;
    Var w1 = tape.param(ps, "w");
    Var w2 = tape.param(ps, "w");
    REQUIRE(w1.id == w2.id);
    Var loss = nn::sum(nn::add(w1, w2));
    tape.backward(loss, &ps);
    REQUIRE(ps.grad("w")[0] == 2.0);
    REQUIRE(ps.grad("w")[1] == 2.0);
}

TEST_CASE("checkpoint round trip is exact") {
    ParameterStore ps;
    std::mt19937_64 rng(7);
    ps.add("enc.w", uniform_init({3, 4}, 3, rng));
    ps.add("enc.b", uniform_init({4}, 4, rng));
    ps.add("head", uniform_init({2, 2, 1, 3}, 4, rng));

    const std::string path = "checkpoint_roundtrip.ckpt";
    save_checkpoint(ps, path);

    ParameterStore ps2;
    ps2.add("enc.w", Tensor({3, 4}));
    ps2.add("enc.b", Tensor({4}));
    ps2.add("head", Tensor({2, 2, 1, 3}));
    load_checkpoint(ps2, path);

    for (const auto& [name, t] : ps.entries()) REQUIRE(ps2.value(name) == t);

    ParameterStore wrong;
    wrong.add("enc.w", Tensor({3, 4}));
    REQUIRE_THROWS_AS(load_checkpoint(wrong, path), DataError);
    REQUIRE_THROWS_AS(load_checkpoint(ps2, "missing_file.ckpt"), FileError);
    std::remove(path.c_str());
}

TEST_CASE("uniform init respects the fan-in bound") {
    std::mt19937_64 rng(3);
    Tensor t = uniform_init({64, 16}, 64, rng);
    const double bound = std::sqrt(1.0 / 64.0);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        REQUIRE(t[i] <= bound);
        REQUIRE(t[i] >= -bound);
    }
}
