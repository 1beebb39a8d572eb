#include "sisrnn/graph.hpp"
#include "sisrnn/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace sisrnn;

namespace {

Tensor random_tensor(std::vector<Index> shape, RngState& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.values_mut()) v = lo + (hi - lo) * rng.uniform01();
    return t;
}

/// Central-difference check of backward() on a graph whose parameters are
/// exactly `params`.
double graph_fd_error(const Graph& g, NodeId out, const GradMap& params, double step = 1e-6) {
    Evaluation ev(g);
    for (const auto& [name, v] : params) ev.bind(name, v);
    ev.forward();
    GradMap analytic = ev.backward(out);
    auto loss = [&](const GradMap& p) {
        Evaluation e2(g);
        for (const auto& [name, v] : p) e2.bind(name, v);
        e2.forward();
        return e2.value(out).value();
    };
    return finite_difference_check(loss, params, analytic, step);
}

}  // namespace

TEST_CASE("elementwise forward values") {
    Graph g;
    NodeId x = g.input("x");
    NodeId s = sigmoid(g, x);
    NodeId t = tanh(g, x);
    NodeId sp = softplus(g, x);
    Evaluation ev(g);
    ev.bind(x, Tensor::vector({0.0}));
    ev.forward();
    CHECK(ev.value(s).at(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(ev.value(t).at(0) == 0.0);
    CHECK(ev.value(sp).at(0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("matmul plus bias") {
    Graph g;
    NodeId a = g.input("a");
    NodeId w = g.input("w");
    NodeId b = g.input("b");
    NodeId y = add_bias(g, matmul(g, a, w), b);
    Evaluation ev(g);
    ev.bind(a, Tensor::vector({1.0, 0.0}));
    ev.bind(w, Tensor::matrix((Mat(2, 2) << 2, 3, 4, 5).finished()));
    ev.bind(b, Tensor::vector({1.0, 1.0}));
    ev.forward();
    CHECK(ev.value(y).at(0) == 3.0);
    CHECK(ev.value(y).at(1) == 4.0);
}

TEST_CASE("simple analytic gradients") {
    SUBCASE("d(x^2)/dx at 3") {
        Graph g;
        NodeId x = g.param("x", {1});
        NodeId y = sum_all(g, mul(g, x, x));
        Evaluation ev(g);
        ev.bind(x, Tensor::vector({3.0}));
        ev.forward();
        GradMap grads = ev.backward(y);
        CHECK(grads.at("x").at(0) == doctest::Approx(6.0).epsilon(1e-14));
    }
    SUBCASE("d(sigmoid)/dx at 0") {
        Graph g;
        NodeId x = g.param("x", {1});
        NodeId y = sum_all(g, sigmoid(g, x));
        Evaluation ev(g);
        ev.bind(x, Tensor::vector({0.0}));
        ev.forward();
        CHECK(ev.backward(y).at("x").at(0) == doctest::Approx(0.25).epsilon(1e-14));
    }
}

TEST_CASE("two-layer perceptron gradients match central differences") {
    Graph g;
    NodeId x = g.param("x", {2});
    NodeId w1 = g.param("w1", {2, 2});
    NodeId b1 = g.param("b1", {2});
    NodeId w2 = g.param("w2", {2, 1});
    NodeId b2 = g.param("b2", {1});
    NodeId h = tanh(g, add_bias(g, matmul(g, x, w1), b1));
    NodeId out = sum_all(g, add_bias(g, matmul(g, h, w2), b2));

    RngState rng = RngState::from_seed(42);
    GradMap params;
    params["x"] = random_tensor({2}, rng);
    params["w1"] = random_tensor({2, 2}, rng);
    params["b1"] = random_tensor({2}, rng);
    params["w2"] = random_tensor({2, 1}, rng);
    params["b2"] = random_tensor({1}, rng);
    CHECK(graph_fd_error(g, out, params, 1e-5) < 1e-6);
}

TEST_CASE("finite_difference_check contract") {
    SUBCASE("x^2 at 2 against the closed-form slope 4") {
        GradMap params{{"x", Tensor::vector({2.0})}};
        GradMap analytic{{"x", Tensor::vector({4.0})}};
        auto loss = [](const GradMap& p) { return p.at("x").at(0) * p.at("x").at(0); };
        CHECK(finite_difference_check(loss, params, analytic, 1e-5) < 1e-8);
    }
    SUBCASE("kink of |x| at 0 is reported loudly") {
        GradMap params{{"x", Tensor::vector({0.0})}};
        GradMap analytic{{"x", Tensor::vector({1.0})}};
        auto loss = [](const GradMap& p) { return std::abs(p.at("x").at(0)); };
        CHECK(finite_difference_check(loss, params, analytic, 1e-5) > 0.5);
    }
    SUBCASE("constant loss reports exactly zero") {
        GradMap params{{"x", Tensor::vector({1.0})}};
        GradMap analytic{{"x", Tensor::vector({0.0})}};
        auto loss = [](const GradMap&) { return 7.0; };
        CHECK(finite_difference_check(loss, params, analytic, 1e-5) == 0.0);
    }
    SUBCASE("rejects nonpositive step") {
        GradMap params{{"x", Tensor::vector({1.0})}};
        auto loss = [](const GradMap&) { return 0.0; };
        CHECK_THROWS_AS(finite_difference_check(loss, params, params, 0.0), std::invalid_argument);
    }
    SUBCASE("non-finite loss is an error") {
        GradMap params{{"x", Tensor::vector({0.0})}};
        GradMap analytic{{"x", Tensor::vector({0.0})}};
        auto loss = [](const GradMap& p) { return std::log(p.at("x").at(0)); };
        CHECK_THROWS_AS(finite_difference_check(loss, params, analytic, 1e-3), std::runtime_error);
    }
}

TEST_CASE("every primitive passes a randomized gradient check") {
    // One graph that routes through all differentiable primitives; repeated
    // over 100 seeds with fresh random values.
    Graph g;
    NodeId a = g.param("a", {2, 3});
    NodeId b = g.param("b", {3, 2});
    NodeId bias = g.param("bias", {2});
    NodeId s = g.param("s", {});
    NodeId c = matmul(g, a, b);
    NodeId d = add(g, c, c);
    NodeId e = mul(g, d, d);
    NodeId f = scale(g, e, 0.7);
    NodeId g1 = add_bias(g, f, bias);
    NodeId h = scalar_mul(g, s, g1);
    NodeId cc = concat(g, {h, f});
    NodeId sl = slice(g, cc, 1, 3);
    NodeId sg = sigmoid(g, sl);
    NodeId th = tanh(g, sg);
    NodeId sp = softplus(g, th);
    NodeId lsp = log_softplus(g, th);
    NodeId ex = exp(g, scale(g, sp, 0.1));
    NodeId lg = log(g, ex);
    NodeId rs = row_sum(g, lg);
    NodeId lse = logsumexp_rows(g, concat(g, {rs, scale(g, rs, 2.0)}));
    NodeId out = add(g, sum_all(g, add(g, lse, rs)), sum_all(g, lsp));

    for (uint64_t seed = 0; seed < 100; ++seed) {
        RngState rng = RngState::from_seed(seed);
        GradMap params;
        params["a"] = random_tensor({2, 3}, rng, -0.8, 0.8);
        params["b"] = random_tensor({3, 2}, rng, -0.8, 0.8);
        params["bias"] = random_tensor({2}, rng, -0.5, 0.5);
        params["s"] = random_tensor({}, rng, 0.3, 1.2);
        CAPTURE(seed);
        const double err = graph_fd_error(g, out, params);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("forward is referentially transparent") {
    Graph g;
    NodeId a = g.input("a");
    NodeId b = g.input("b");
    NodeId y = logsumexp_rows(g, sigmoid(g, matmul(g, a, b)));
    RngState rng = RngState::from_seed(9);
    Tensor av = random_tensor({4, 3}, rng);
    Tensor bv = random_tensor({3, 5}, rng);

    Evaluation e1(g);
    e1.bind(a, av);
    e1.bind(b, bv);
    e1.forward();
    Evaluation e2(g);
    e2.bind(a, av);
    e2.bind(b, bv);
    e2.forward();
    CHECK(bit_equal(e1.value(y), e2.value(y)));

    // Repeated forward on the same workspace is also bit-identical.
    Tensor first = e1.value(y);
    e1.forward();
    CHECK(bit_equal(first, e1.value(y)));
}

TEST_CASE("gradient of a batch sum equals the sum of per-example gradients") {
    Graph g;
    NodeId x = g.input("x");
    NodeId w = g.param("w", {3, 2});
    NodeId bias = g.param("bias", {2});
    NodeId out = sum_all(g, tanh(g, add_bias(g, matmul(g, x, w), bias)));

    RngState rng = RngState::from_seed(5);
    Tensor batch = random_tensor({4, 3}, rng);
    Tensor wv = random_tensor({3, 2}, rng);
    Tensor bv = random_tensor({2}, rng);

    Evaluation ev(g);
    ev.bind(x, batch);
    ev.bind(w, wv);
    ev.bind(bias, bv);
    ev.forward();
    GradMap whole = ev.backward(out);

    Tensor acc_w = Tensor::zeros({3, 2});
    Tensor acc_b = Tensor::zeros({2});
    for (Index r = 0; r < batch.rows(); ++r) {
        Evaluation er(g);
        er.bind(x, Tensor::matrix(batch.mat().row(r)));
        er.bind(w, wv);
        er.bind(bias, bv);
        er.forward();
        GradMap one = er.backward(out);
        acc_w.mat() += one.at("w").mat();
        acc_b.mat() += one.at("bias").mat();
    }
    CHECK((whole.at("w").mat() - acc_w.mat()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((whole.at("bias").mat() - acc_b.mat()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("shape errors name the offending node") {
    Graph g;
    NodeId a = g.input("a");
    NodeId b = g.input("b");
    matmul(g, a, b);
    Evaluation ev(g);
    ev.bind(a, Tensor::matrix(Mat::Zero(2, 3)));
    ev.bind(b, Tensor::matrix(Mat::Zero(4, 5)));
    CHECK_THROWS_WITH_AS(ev.forward(),
                         doctest::Contains("inner dimensions differ: [2,3] x [4,5]"),
                         std::invalid_argument);
}

TEST_CASE("backward requires a scalar output") {
    Graph g;
    NodeId a = g.param("a", {2});
    NodeId y = mul(g, a, a);
    Evaluation ev(g);
    ev.bind(a, Tensor::vector({1.0, 2.0}));
    ev.forward();
    CHECK_THROWS_AS(ev.backward(y), std::invalid_argument);
}

TEST_CASE("unreached parameters get zero gradients") {
    Graph g;
    NodeId a = g.param("a", {2});
    NodeId unused = g.param("unused", {3});
    NodeId y = sum_all(g, mul(g, a, a));
    (void)unused;
    Evaluation ev(g);
    ev.bind(a, Tensor::vector({1.0, 2.0}));
    ev.bind("unused", Tensor::zeros({3}));
    ev.forward();
    GradMap grads = ev.backward(y);
    CHECK(grads.at("unused").shape() == std::vector<Index>{3});
    CHECK(grads.at("unused").mat().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("unbound input is rejected by name") {
    Graph g;
    NodeId a = g.input("left_operand");
    sigmoid(g, a);
    Evaluation ev(g);
    CHECK_THROWS_WITH_AS(ev.forward(), doctest::Contains("left_operand"), std::invalid_argument);
}
