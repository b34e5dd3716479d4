#include <doctest.h>

#include <unordered_set>

#include "cdcn/ops.hpp"
#include "cdcn/tensor.hpp"
#include "test_helpers.hpp"

using namespace cdcn;
using cdcn::testing::make_rng;

TEST_CASE("tensor construction and accessors") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rank() == 2);
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 6.0f);
    CHECK(t.at({0, 0}) == 1.0f);

    Tensor z = Tensor::zeros({4});
    CHECK(z.numel() == 4);
    CHECK(z.data()[3] == 0.0f);

    Tensor f = Tensor::full({2, 2}, 0.5f);
    CHECK(f.at({1, 1}) == 0.5f);

    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor({0, 2}), ShapeError);
    CHECK_THROWS_AS(t.at({2, 0}), ShapeError);
}

TEST_CASE("item and scalar rules") {
    Tensor s({1}, {3.5f});
    CHECK(s.item() == 3.5f);
    Tensor m({2}, {1, 2});
    CHECK_THROWS_AS(m.item(), ShapeError);
    CHECK_THROWS_AS(m.backward(), ShapeError);
}

TEST_CASE("rand_uniform is deterministic per seed and respects bounds") {
    auto r1 = make_rng(7);
    auto r2 = make_rng(7);
    Tensor a = Tensor::rand_uniform({32}, -0.25f, 0.75f, r1);
    Tensor b = Tensor::rand_uniform({32}, -0.25f, 0.75f, r2);
    CHECK(cdcn::testing::max_abs_diff(a, b) == 0.0f);
    for (int64_t i = 0; i < a.numel(); ++i) {
        CHECK(a.data()[i] >= -0.25f);
        CHECK(a.data()[i] < 0.75f);
    }
}

TEST_CASE("backward accumulates into leaves and resets intermediates") {
    Tensor x({3}, {1, 2, 3});
    x.set_requires_grad(true);

    Tensor y = sum(mul(x, x));  // d/dx = 2x
    y.backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0f));
    CHECK(x.grad()[2] == doctest::Approx(6.0f));

    y.backward();  // same graph again: leaf grads accumulate
    CHECK(x.grad()[0] == doctest::Approx(4.0f));
    CHECK(x.grad()[2] == doctest::Approx(12.0f));

    x.zero_grad();
    y.backward();
    CHECK(x.grad()[1] == doctest::Approx(4.0f));
}

TEST_CASE("diamond graph gets correct fan-in gradients") {
    Tensor x({2}, {1.0f, -2.0f});
    x.set_requires_grad(true);
    Tensor a = scale(x, 3.0f);
    Tensor b = scale(x, 5.0f);
    Tensor y = sum(add(a, b));
    y.backward();
    CHECK(x.grad()[0] == doctest::Approx(8.0f));
    CHECK(x.grad()[1] == doctest::Approx(8.0f));
}

TEST_CASE("tape order puts parents before children, root last, no duplicates") {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    Tensor a = relu(x);
    Tensor b = sigmoid(x);
    Tensor c = add(a, b);
    Tensor root = sum(c);

    auto tape = build_tape(root);
    REQUIRE(!tape.empty());
    CHECK(tape.back() == root.impl().get());

    std::unordered_set<const void*> seen;
    for (auto* node : tape) {
        for (const auto& parent : node->parents) {
            CHECK(seen.count(parent.get()) == 1);
        }
        CHECK(seen.insert(node).second);  // no duplicates
    }
}

TEST_CASE("requires_grad is a leaf-only property") {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    Tensor y = relu(x);
    CHECK(y.requires_grad());
    CHECK_THROWS_AS(y.set_requires_grad(false), ValueError);
}

TEST_CASE("NoGradGuard suppresses graph recording") {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    NoGradGuard guard;
    Tensor y = mul(x, x);
    CHECK(!y.requires_grad());
    CHECK(y.impl()->parents.empty());
}

TEST_CASE("detach breaks the graph") {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    Tensor y = mul(x, x).detach();
    CHECK(!y.requires_grad());
    CHECK(y.data()[1] == doctest::Approx(4.0f));
}

TEST_CASE("reshape preserves data and routes gradients") {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    x.set_requires_grad(true);
    Tensor y = x.reshape({3, 2});
    CHECK(y.at({2, 1}) == 6.0f);
    CHECK_THROWS_AS(x.reshape({4, 2}), ShapeError);

    sum(mul(y, y)).backward();
    CHECK(x.grad()[3] == doctest::Approx(8.0f));
}

TEST_CASE("grad access on fresh tensor throws") {
    Tensor x({2}, {1, 2});
    CHECK(!x.has_grad());
    CHECK_THROWS_AS(x.grad(), ValueError);
}

TEST_CASE("double-precision tensors share the same machinery") {
    TensorD x({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    sum(mul(x, x)).backward();
    CHECK(x.grad()[1] == doctest::Approx(4.0));
}
