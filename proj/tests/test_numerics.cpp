#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "vnn/errors.hpp"
#include "vnn/gradcheck.hpp"
#include "vnn/optim.hpp"
#include "vnn/rng.hpp"
#include "vnn/tape.hpp"

using namespace vnn;

namespace {

std::vector<Real> values_of(Var v) { return {v.value().begin(), v.value().end()}; }

std::vector<Real> random_vector(std::mt19937_64& gen, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<Real> v(n);
  for (auto& x : v) x = static_cast<Real>(d(gen));
  return v;
}

}  // namespace

TEST_CASE("linear") {
  Tape tape;
  SUBCASE("identity map") {
    auto y = linear(tape.constant({2}, {1, 2}), tape.constant({2, 2}, {1, 0, 0, 1}), tape.constant({2}, {0, 0}));
    CHECK(values_of(y) == std::vector<Real>{1, 2});
  }
  SUBCASE("row sum minus bias") {
    auto y = linear(tape.constant({2}, {1, 1}), tape.constant({1, 2}, {1, 1}), tape.constant({1}, {-2}));
    CHECK(values_of(y) == std::vector<Real>{0});
  }
  SUBCASE("diagonal weight") {
    auto y = linear(tape.constant({2}, {2, 3}), tape.constant({2, 2}, {1, 0, 0, 2}), tape.constant({2}, {1, 1}));
    CHECK(values_of(y) == std::vector<Real>{3, 7});
  }
  SUBCASE("shape mismatch names both shapes") {
    try {
      linear(tape.constant({3}, {1, 2, 3}), tape.constant({2, 2}, {1, 0, 0, 1}), tape.constant({2}, {0, 0}));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x2]") != std::string::npos);
      CHECK(msg.find("[3]") != std::string::npos);
    }
  }
}

TEST_CASE("relu values and tie rule") {
  Tape tape;
  CHECK(values_of(relu(tape.constant({2}, {-1, 2}))) == std::vector<Real>{0, 2});
  CHECK(values_of(relu(tape.constant({2}, {0, 0}))) == std::vector<Real>{0, 0});
  CHECK(values_of(relu(tape.constant({3}, {3.5, -0.1, 0.1}))) == std::vector<Real>{3.5, 0, 0.1});

  Tensor x({3}, {-1, 0, 2}, true);
  Tape t2;
  Var s = dot(relu(t2.parameter(x)), t2.constant({3}, {1, 1, 1}));
  t2.backward(s);
  CHECK(x.grad()[0] == 0);
  CHECK(x.grad()[1] == 0);
  CHECK(x.grad()[2] == 1);
}

TEST_CASE("softmax") {
  CHECK(math::softmax(std::vector<Real>{0, 0}) == std::vector<Real>{0.5, 0.5});
  CHECK(math::softmax(std::vector<Real>{42.0})[0] == doctest::Approx(1.0));
  const auto big = math::softmax(std::vector<Real>{1000, 1000});
  CHECK(big[0] == doctest::Approx(0.5));
  CHECK(big[1] == doctest::Approx(0.5));
  CHECK_THROWS_AS(math::softmax(std::vector<Real>{}), DomainError);

  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = random_vector(gen, 1 + trial % 9, 5.0);
    const auto p = math::softmax(s);
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    CHECK(std::abs(total - 1.0) < 1e-12);
    for (Real x : p) {
      CHECK(x > 0);
      CHECK(x < 1.0 + 1e-15);
      if (s.size() > 1) CHECK(x < 1);
    }
    auto shifted = s;
    const Real c = static_cast<Real>(trial) - 500;
    for (auto& x : shifted) x += c;
    const auto q = math::softmax(shifted);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-12);
  }
}

TEST_CASE("layer_norm") {
  const auto y = math::layer_norm(std::vector<Real>{1, 2, 3}, 0);
  CHECK(y[0] == doctest::Approx(-1.224745).epsilon(1e-6));
  CHECK(y[1] == doctest::Approx(0.0));
  CHECK(y[2] == doctest::Approx(1.224745).epsilon(1e-6));

  CHECK(math::layer_norm(std::vector<Real>{4, 4, 4}, 1e-5) == std::vector<Real>{0, 0, 0});
  CHECK_THROWS_AS(math::layer_norm(std::vector<Real>{1}, 1e-5), DomainError);
  CHECK_THROWS_AS(math::layer_norm(std::vector<Real>{}, 1e-5), DomainError);

  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto v = random_vector(gen, 2 + trial % 30, 3.0);
    auto doubled = v;
    for (auto& x : doubled) x *= 2;
    const auto a = math::layer_norm(v, 0);
    const auto b = math::layer_norm(doubled, 0);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

    const auto out = math::layer_norm(v, 1e-5);
    double mean = 0;
    for (Real x : out) mean += x;
    CHECK(std::abs(mean / static_cast<double>(out.size())) < 1e-10);
  }
}

TEST_CASE("layer_norm variance is within 1e-6 of one when variance dominates eps") {
  std::mt19937_64 gen(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = random_vector(gen, 16, 100.0);
    const auto out = math::layer_norm(v, 1e-5);
    double mean = 0, var = 0;
    for (Real x : out) mean += x;
    mean /= 16.0;
    CHECK(std::abs(mean) < 1e-10);
    for (Real x : out) var += (x - mean) * (x - mean);
    var /= 16.0;
    CHECK(std::abs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("cross_entropy") {
  CHECK(math::cross_entropy(std::vector<Real>{0, 0}, 0) == doctest::Approx(std::log(2.0)));
  const Real tiny = math::cross_entropy(std::vector<Real>{10, -10}, 0);
  CHECK(tiny == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-9));
  CHECK(tiny == doctest::Approx(2.06e-9).epsilon(0.01));
  CHECK(math::cross_entropy(std::vector<Real>{0, 0, 0, 0}, 3) == doctest::Approx(std::log(4.0)));
  CHECK_THROWS_AS(math::cross_entropy(std::vector<Real>{0, 0}, 2), IndexError);
}

TEST_CASE("backward") {
  SUBCASE("x*x at 3") {
    Tensor x({1}, {3}, true);
    Tape tape;
    Var v = tape.parameter(x);
    tape.backward(mul(v, v));
    CHECK(x.grad()[0] == 6);
  }
  SUBCASE("relu at -1") {
    Tensor x({1}, {-1}, true);
    Tape tape;
    tape.backward(relu(tape.parameter(x)));
    CHECK(x.grad()[0] == 0);
  }
  SUBCASE("non-scalar loss") {
    Tensor x({2}, {1, 2}, true);
    Tape tape;
    CHECK_THROWS_AS(tape.backward(relu(tape.parameter(x))), DomainError);
  }
  SUBCASE("tape consumed once") {
    Tensor x({1}, {2}, true);
    Tape tape;
    Var loss = mul(tape.parameter(x), tape.parameter(x));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), StateError);
  }
  SUBCASE("unreachable parameters get zero gradient") {
    Tensor used({1}, {2}, true);
    Tensor unused({2}, {5, 6}, true);
    Tape tape;
    Var a = tape.parameter(used);
    tape.parameter(unused);
    tape.backward(mul(a, a));
    CHECK(unused.grad()[0] == 0);
    CHECK(unused.grad()[1] == 0);
    CHECK(used.grad()[0] == 4);
  }
}

// Every differentiable operation against central differences on random inputs.
TEST_CASE("per-operation gradients match finite differences") {
  std::mt19937_64 gen(2024);
  const Real step = 1e-5;

  auto check = [&](const char* name, ParameterSet& params, const LossBuilder& builder) {
    const auto r = finite_diff_check(params, builder, step);
    INFO(name << " worst " << r.worst_parameter << "[" << r.worst_index << "] analytic " << r.worst_analytic
              << " numeric " << r.worst_numeric);
    CHECK(r.max_relative_error < 1e-6);
  };

  for (int trial = 0; trial < 5; ++trial) {
    ParameterSet p;
    p.add("x", Tensor({5}, random_vector(gen, 5), true));
    p.add("W", Tensor({4, 5}, random_vector(gen, 20), true));
    p.add("b", Tensor({4}, random_vector(gen, 4), true));
    p.add("A", Tensor({3, 4}, random_vector(gen, 12), true));
    const auto probe4 = random_vector(gen, 4);
    const auto probe3 = random_vector(gen, 3);

    check("linear", p, [&](Tape& t, ParameterSet& ps) {
      Var y = linear(t.parameter(ps.at("x")), t.parameter(ps.at("W")), t.parameter(ps.at("b")));
      return dot(y, t.constant({4}, probe4));
    });
    check("matvec", p, [&](Tape& t, ParameterSet& ps) {
      return dot(matvec(t.parameter(ps.at("A")), t.parameter(ps.at("b"))), t.constant({3}, probe3));
    });
    check("matvec_transposed", p, [&](Tape& t, ParameterSet& ps) {
      Var y = matvec_transposed(t.parameter(ps.at("A")), t.constant({3}, probe3));
      return dot(y, t.parameter(ps.at("b")));
    });
    check("softmax", p, [&](Tape& t, ParameterSet& ps) {
      return dot(softmax(t.parameter(ps.at("b"))), t.constant({4}, probe4));
    });
    check("layer_norm", p, [&](Tape& t, ParameterSet& ps) {
      return dot(layer_norm(t.parameter(ps.at("b")), 1e-5), t.constant({4}, probe4));
    });
    check("cross_entropy", p, [&](Tape& t, ParameterSet& ps) {
      return cross_entropy(t.parameter(ps.at("b")), static_cast<std::size_t>(trial % 4));
    });
    check("relu", p, [&](Tape& t, ParameterSet& ps) {
      return dot(relu(t.parameter(ps.at("b"))), t.constant({4}, probe4));
    });
    check("column_max", p, [&](Tape& t, ParameterSet& ps) {
      return dot(column_max(t.parameter(ps.at("A"))), t.constant({4}, probe4));
    });
    check("concat/scale/add/mean", p, [&](Tape& t, ParameterSet& ps) {
      Var b = t.parameter(ps.at("b"));
      Var x = t.parameter(ps.at("x"));
      std::vector<Var> parts{scale(b, 0.5), x};
      Var c = concat(parts);
      Var s1 = dot(c, c);
      Var s2 = dot(add(b, b), b);
      std::vector<Var> scalars{s1, s2};
      return mean(scalars);
    });
    for (bool circular : {false, true}) {
      ParameterSet q;
      q.add("F", Tensor({5, 3}, random_vector(gen, 15), true));
      q.add("K", Tensor({2, 6}, random_vector(gen, 12), true));
      q.add("c", Tensor({2}, random_vector(gen, 2), true));
      const auto probe = random_vector(gen, circular ? 10 : 8);
      check("window_conv", q, [&](Tape& t, ParameterSet& ps) {
        Var g = window_conv(t.parameter(ps.at("F")), t.parameter(ps.at("K")), t.parameter(ps.at("c")), 2, circular);
        return dot(g, t.constant(g.shape(), probe));
      });
    }
  }
}

TEST_CASE("clip_gradients") {
  std::vector<Real> g{0.5, -0.02, 0.005};
  clip_values(g, 0.01);
  CHECK(g == std::vector<Real>{0.01, -0.01, 0.005});

  std::vector<Real> inside{0.001, -0.009, 0};
  auto copy = inside;
  clip_values(copy, 0.01);
  CHECK(copy == inside);

  std::vector<Real> huge{-1e9};
  clip_values(huge, 0.01);
  CHECK(huge == std::vector<Real>{-0.01});

  CHECK_THROWS_AS(clip_values(huge, 0), DomainError);

  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto v = random_vector(gen, 10, 0.05);
    clip_values(v, 0.01);
    auto twice = v;
    clip_values(twice, 0.01);
    CHECK(twice == v);
  }
}

TEST_CASE("sgd_step") {
  auto single = [](Real theta, Real grad, Real lr, Real momentum, Real wd) {
    ParameterSet p;
    Tensor& t = p.add("w", Tensor({1}, {theta}, true));
    t.grad()[0] = grad;
    auto state = make_optimizer(p, lr, momentum, wd, 0.01);
    return std::make_tuple(std::move(p), std::move(state));
  };

  SUBCASE("hand computed step") {
    auto [p, state] = single(1.0, 0.1, 0.001, 0.9, 1e-4);
    sgd_step(p, state);
    CHECK(state.velocity[0][0] == doctest::Approx(0.1001).epsilon(1e-12));
    CHECK(p[0].tensor[0] == doctest::Approx(0.9998999).epsilon(1e-12));
  }
  SUBCASE("zero gradient is a fixed point") {
    auto [p, state] = single(0.75, 0.0, 0.001, 0.9, 0.0);
    sgd_step(p, state);
    CHECK(p[0].tensor[0] == 0.75);
  }
  SUBCASE("two steps accumulate g(1+m)") {
    auto [p, state] = single(1.0, 0.2, 0.01, 0.9, 0.0);
    sgd_step(p, state);
    sgd_step(p, state);
    CHECK(state.velocity[0][0] == doctest::Approx(0.2 * 1.9).epsilon(1e-12));
  }
  SUBCASE("momentum 0 and wd 0 is plain gradient descent") {
    std::mt19937_64 gen(8);
    ParameterSet p;
    Tensor& t = p.add("w", Tensor({6}, random_vector(gen, 6), true));
    const auto before = std::vector<Real>(t.data().begin(), t.data().end());
    const auto g = random_vector(gen, 6);
    std::copy(g.begin(), g.end(), t.grad().begin());
    auto state = make_optimizer(p, 0.05, 0.0, 0.0, 0.01);
    sgd_step(p, state);
    for (std::size_t i = 0; i < 6; ++i) CHECK(t[i] == before[i] - Real(0.05) * g[i]);
  }
  SUBCASE("velocity shape mismatch") {
    ParameterSet p;
    p.add("w", Tensor({2}, {1, 2}, true));
    auto state = make_optimizer(p, 0.1, 0.9, 0.0, 0.01);
    state.velocity[0] = Tensor::zeros({3});
    CHECK_THROWS_AS(sgd_step(p, state), DimensionError);
    state.velocity.clear();
    CHECK_THROWS_AS(sgd_step(p, state), DimensionError);
  }
}

TEST_CASE("finite_diff_check") {
  SUBCASE("quadratic is exact up to rounding") {
    ParameterSet p;
    p.add("x", Tensor({3}, {0.3, -1.2, 2.5}, true));
    const auto r = finite_diff_check(p, [](Tape& t, ParameterSet& ps) {
      Var x = t.parameter(ps.at("x"));
      return add(dot(x, x), dot(x, t.constant({3}, {1, 2, 3})));
    }, 1e-3);
    CHECK(r.max_relative_error < 1e-8);
    CHECK(r.elements_checked == 3);
  }
  SUBCASE("dead relu path gives zero on both sides") {
    ParameterSet p;
    p.add("w", Tensor({2}, {-3, -4}, true));
    const auto r = finite_diff_check(p, [](Tape& t, ParameterSet& ps) {
      return dot(relu(t.parameter(ps.at("w"))), t.constant({2}, {1, 1}));
    }, 1e-5);
    CHECK(r.max_relative_error == 0);
    CHECK(p.at("w").grad()[0] == 0);
  }
  SUBCASE("non-finite loss") {
    ParameterSet p;
    p.add("w", Tensor({1}, {1}, true));
    CHECK_THROWS_AS(finite_diff_check(p, [](Tape& t, ParameterSet& ps) {
      return scale(t.parameter(ps.at("w")), std::numeric_limits<Real>::infinity());
    }, 1e-5), NumericError);
  }
  SUBCASE("parameters are restored") {
    ParameterSet p;
    p.add("x", Tensor({2}, {0.25, 0.5}, true));
    finite_diff_check(p, [](Tape& t, ParameterSet& ps) {
      Var x = t.parameter(ps.at("x"));
      return dot(x, x);
    }, 1e-4);
    CHECK(p.at("x")[0] == 0.25);
    CHECK(p.at("x")[1] == 0.5);
  }
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor({0}, {}), DimensionError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  CHECK(t.grad().size() == t.size());
}

TEST_CASE("seeded generator") {
  Rng a(0), b(0);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(0), d(1);
  bool differs = false;
  for (int i = 0; i < 10; ++i) differs = differs || (c.uniform() != d.uniform());
  CHECK(differs);

  Rng e(123);
  for (int i = 0; i < 10000; ++i) {
    const double u = e.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 1000; ++i) CHECK(e.uniform_index(7) < 7);

  Rng f(9);
  f.next_u64();
  Rng g = Rng::from_state(f.state());
  CHECK(f.next_u64() == g.next_u64());
}

TEST_CASE("NaN is not swallowed by relu, column_max or layer_norm") {
  const Real nan = std::numeric_limits<Real>::quiet_NaN();
  Tape tape;
  CHECK(std::isnan(relu(tape.constant({2}, {nan, 1})).value()[0]));
  const auto cm = column_max(tape.constant({3, 1}, {1, nan, 5})).value();
  CHECK(std::isnan(cm[0]));
  const auto ln = layer_norm(tape.constant({3}, {1, nan, 2}), 1e-5).value();
  for (Real x : ln) CHECK(std::isnan(x));
}
