#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "avobj/autodiff.hpp"
#include "support/fd.hpp"

using namespace avobj;
using avobj::testing::fd_check;
using avobj::testing::project;
using avobj::testing::random_tensor;

namespace {

constexpr double kTol = 1e-7;

}  // namespace

TEST_CASE("tape computes a hand-derived gradient") {
  // L = sum((a*b + exp(c))^2)
  Tape<double> tape;
  Tensor<double> ta({3}, {1.0, -2.0, 0.5});
  Tensor<double> tb({3}, {0.3, 1.1, -0.7});
  Tensor<double> tc({3}, {0.0, 0.2, -1.0});
  Var<double> a = tape.leaf(ta), b = tape.leaf(tb), c = tape.leaf(tc);
  Var<double> y = add(mul(a, b), exp(c));
  Var<double> loss = sum(square(y));
  tape.backward(loss);
  for (Index i = 0; i < 3; ++i) {
    const double yi = ta[i] * tb[i] + std::exp(tc[i]);
    CHECK(tape.grad(a.id)[i] == doctest::Approx(2 * yi * tb[i]).epsilon(kTol));
    CHECK(tape.grad(b.id)[i] == doctest::Approx(2 * yi * ta[i]).epsilon(kTol));
    CHECK(tape.grad(c.id)[i] ==
          doctest::Approx(2 * yi * std::exp(tc[i])).epsilon(kTol));
  }
}

TEST_CASE("broadcast add matches explicit loop") {
  Rng rng(11);
  Tensor<double> a = random_tensor(rng, {2, 3, 4});
  Tensor<double> b = random_tensor(rng, {3, 1});
  Tape<double> tape;
  Var<double> y = add(tape.leaf(a), tape.leaf(b));
  REQUIRE(y.shape() == Shape{2, 3, 4});
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j)
      for (Index k = 0; k < 4; ++k)
        CHECK(y.val()(i, j, k) == doctest::Approx(a(i, j, k) + b(j, Index(0))));
}

TEST_CASE("incompatible broadcast throws") {
  Tape<double> tape;
  Var<double> a = tape.leaf(Tensor<double>({2, 3}));
  Var<double> b = tape.leaf(Tensor<double>({4, 3}));
  CHECK_THROWS_AS(add(a, b), config_error);
}

TEST_CASE("reduce_to sums over broadcast axes") {
  Tensor<double> g({2, 3, 4});
  for (Index i = 0; i < g.size(); ++i) g[i] = static_cast<double>(i);
  Tensor<double> r = reduce_to(g, Shape{3, 1});
  REQUIRE(r.shape() == Shape{3, 1});
  for (Index j = 0; j < 3; ++j) {
    double want = 0;
    for (Index i = 0; i < 2; ++i)
      for (Index k = 0; k < 4; ++k) want += g(i, j, k);
    CHECK(r[j] == doctest::Approx(want));
  }
}

TEST_CASE("elementwise ops pass finite-difference checks") {
  Rng rng(42);
  auto check_binary = [&](auto opfn, Shape sa, Shape sb, double scale) {
    Tensor<double> r =
        random_tensor(rng, broadcast_shape(sa, sb));
    auto build = [opfn, r](Tape<double>&, const std::vector<Var<double>>& v) {
      return project(opfn(v[0], v[1]), r);
    };
    auto res = fd_check(build, {random_tensor(rng, sa, scale),
                                random_tensor(rng, sb, scale)});
    CHECK(res.max_err < 1e-6);
  };
  check_binary([](Var<double> a, Var<double> b) { return add(a, b); },
               {2, 3}, {2, 3}, 1.0);
  check_binary([](Var<double> a, Var<double> b) { return sub(a, b); },
               {2, 3}, {3}, 1.0);
  check_binary([](Var<double> a, Var<double> b) { return mul(a, b); },
               {2, 3, 2}, {3, 1}, 1.0);
  check_binary([](Var<double> a, Var<double> b) { return div(a, add(square(b), 0.5)); },
               {4}, {4}, 1.0);
}

TEST_CASE("unary ops pass finite-difference checks") {
  Rng rng(7);
  auto check_unary = [&](auto opfn, double lo, double hi) {
    Tensor<double> x({2, 5});
    for (Index i = 0; i < x.size(); ++i) x[i] = rng.uniform(lo, hi);
    Tensor<double> r = random_tensor(rng, {2, 5});
    auto build = [opfn, r](Tape<double>&, const std::vector<Var<double>>& v) {
      return project(opfn(v[0]), r);
    };
    auto res = fd_check(build, {x});
    CHECK(res.max_err < 1e-6);
  };
  check_unary([](Var<double> a) { return neg(a); }, -2, 2);
  check_unary([](Var<double> a) { return exp(a); }, -2, 2);
  check_unary([](Var<double> a) { return log(a); }, 0.2, 3);
  check_unary([](Var<double> a) { return sqrt(a); }, 0.2, 3);
  check_unary([](Var<double> a) { return square(a); }, -2, 2);
  check_unary([](Var<double> a) { return tanh(a); }, -2, 2);
  check_unary([](Var<double> a) { return sigmoid(a); }, -4, 4);
  // relu away from the kink
  check_unary([](Var<double> a) { return relu(a); }, 0.5, 2);
}

TEST_CASE("matmul value and gradient") {
  Rng rng(3);
  Tensor<double> a = random_tensor(rng, {3, 4});
  Tensor<double> b = random_tensor(rng, {4, 2});
  {
    Tape<double> tape;
    Var<double> y = matmul(tape.leaf(a), tape.leaf(b));
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 2; ++j) {
        double want = 0;
        for (Index k = 0; k < 4; ++k) want += a(i, k) * b(k, j);
        CHECK(y.val()(i, j) == doctest::Approx(want).epsilon(kTol));
      }
  }
  Tensor<double> r = random_tensor(rng, {3, 2});
  auto build = [r](Tape<double>&, const std::vector<Var<double>>& v) {
    return project(matmul(v[0], v[1]), r);
  };
  CHECK(fd_check(build, {a, b}).max_err < 1e-6);
}

TEST_CASE("shape ops pass finite-difference checks") {
  Rng rng(5);
  Tensor<double> x = random_tensor(rng, {2, 3, 4});
  {
    Tensor<double> r = random_tensor(rng, {4, 6});
    auto build = [r](Tape<double>&, const std::vector<Var<double>>& v) {
      return project(reshape(v[0], {4, 6}), r);
    };
    CHECK(fd_check(build, {x}).max_err < 1e-6);
  }
  {
    Tensor<double> r = random_tensor(rng, {4, 2, 3});
    auto build = [r](Tape<double>&, const std::vector<Var<double>>& v) {
      return project(permute(v[0], {2, 0, 1}), r);
    };
    CHECK(fd_check(build, {x}).max_err < 1e-6);
  }
  {
    Tensor<double> r = random_tensor(rng, {2, 2, 4});
    auto build = [r](Tape<double>&, const std::vector<Var<double>>& v) {
      return project(slice(v[0], 1, 1, 2), r);
    };
    CHECK(fd_check(build, {x}).max_err < 1e-6);
  }
  {
    Tensor<double> y = random_tensor(rng, {2, 2, 4});
    Tensor<double> r = random_tensor(rng, {2, 5, 4});
    auto build = [r](Tape<double>&, const std::vector<Var<double>>& v) {
      return project(concat<double>({v[0], v[1]}, 1), r);
    };
    CHECK(fd_check(build, {x, y}).max_err < 1e-6);
  }
}

TEST_CASE("permute moves data correctly") {
  Tensor<double> x({2, 3});
  for (Index i = 0; i < 6; ++i) x[i] = static_cast<double>(i);
  Tape<double> tape;
  Var<double> y = permute(tape.leaf(x), {1, 0});
  REQUIRE(y.shape() == Shape{3, 2});
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j) CHECK(y.val()(j, i) == x(i, j));
}

TEST_CASE("reductions pass finite-difference checks") {
  Rng rng(13);
  Tensor<double> x = random_tensor(rng, {3, 4, 2});
  {
    Tensor<double> r = random_tensor(rng, {3, 2});
    auto build = [r](Tape<double>&, const std::vector<Var<double>>& v) {
      return project(sum(v[0], {1}, false), r);
    };
    CHECK(fd_check(build, {x}).max_err < 1e-6);
  }
  {
    Tensor<double> r = random_tensor(rng, {1, 4, 1});
    auto build = [r](Tape<double>&, const std::vector<Var<double>>& v) {
      return project(mean(v[0], {0, 2}, true), r);
    };
    CHECK(fd_check(build, {x}).max_err < 1e-6);
  }
  {
    auto build = [](Tape<double>&, const std::vector<Var<double>>& v) {
      return mean(v[0]);
    };
    CHECK(fd_check(build, {x}).max_err < 1e-6);
  }
  {
    Tensor<double> r = random_tensor(rng, {3, 2});
    auto build = [r](Tape<double>&, const std::vector<Var<double>>& v) {
      return project(max(v[0], {1}, false), r);
    };
    CHECK(fd_check(build, {x}).max_err < 1e-6);
  }
  {
    auto build = [](Tape<double>&, const std::vector<Var<double>>& v) {
      return max_all(v[0]);
    };
    CHECK(fd_check(build, {x}).max_err < 1e-6);
  }
}

TEST_CASE("sum and max values match loops") {
  Rng rng(17);
  Tensor<double> x = random_tensor(rng, {2, 3, 4});
  Tape<double> tape;
  Var<double> vx = tape.leaf(x);
  Var<double> s = sum(vx, {0, 2}, false);
  Var<double> m = max(vx, {2}, true);
  REQUIRE(s.shape() == Shape{3});
  REQUIRE(m.shape() == Shape{2, 3, 1});
  for (Index j = 0; j < 3; ++j) {
    double want = 0;
    for (Index i = 0; i < 2; ++i)
      for (Index k = 0; k < 4; ++k) want += x(i, j, k);
    CHECK(s.val()[j] == doctest::Approx(want).epsilon(kTol));
  }
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j) {
      double want = x(i, j, Index(0));
      for (Index k = 1; k < 4; ++k) want = std::max(want, x(i, j, k));
      CHECK(m.val()(i, j, Index(0)) == want);
    }
}

TEST_CASE("max gradient routes ties to the first maximizer") {
  Tensor<double> x({4}, {1.0, 3.0, 3.0, 2.0});
  Tape<double> tape;
  Var<double> v = tape.leaf(x);
  Var<double> m = max_all(v);
  tape.backward(m);
  CHECK(tape.grad(v.id)[0] == 0.0);
  CHECK(tape.grad(v.id)[1] == 1.0);
  CHECK(tape.grad(v.id)[2] == 0.0);
  CHECK(tape.grad(v.id)[3] == 0.0);
}

TEST_CASE("logsumexp is stable and exact") {
  Tensor<double> x({3}, {1000.0, 1000.0, 1000.0});
  Tape<double> tape;
  Var<double> lse = logsumexp(tape.leaf(x), {0}, false);
  CHECK(lse.val()[0] == doctest::Approx(1000.0 + std::log(3.0)).epsilon(1e-12));

  Rng rng(23);
  Tensor<double> y = random_tensor(rng, {2, 5});
  Tensor<double> r = random_tensor(rng, {2});
  auto build = [r](Tape<double>&, const std::vector<Var<double>>& v) {
    return project(logsumexp(v[0], {1}, false), r);
  };
  CHECK(fd_check(build, {y}).max_err < 1e-6);
}

TEST_CASE("logsumexp gradient is softmax") {
  Tensor<double> x({4}, {0.1, -0.4, 0.7, 0.2});
  Tape<double> tape;
  Var<double> v = tape.leaf(x);
  tape.backward(logsumexp(v, {0}, false));
  double z = 0;
  for (Index i = 0; i < 4; ++i) z += std::exp(x[i]);
  for (Index i = 0; i < 4; ++i)
    CHECK(tape.grad(v.id)[i] ==
          doctest::Approx(std::exp(x[i]) / z).epsilon(1e-10));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(29);
  Tensor<double> x = random_tensor(rng, {3, 6});
  Tape<double> tape;
  Var<double> p = softmax(tape.leaf(x), 1);
  for (Index i = 0; i < 3; ++i) {
    double s = 0;
    for (Index j = 0; j < 6; ++j) s += p.val()(i, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("l2_normalize produces unit rows and zero maps to zero") {
  Rng rng(31);
  Tensor<double> x = random_tensor(rng, {4, 8});
  for (Index j = 0; j < 8; ++j) x(Index(2), j) = 0.0;
  Tape<double> tape;
  Var<double> y = l2_normalize(tape.leaf(x), Index(1));
  for (Index i = 0; i < 4; ++i) {
    double n = 0;
    for (Index j = 0; j < 8; ++j) n += y.val()(i, j) * y.val()(i, j);
    if (i == 2)
      CHECK(n == doctest::Approx(0.0));
    else
      CHECK(n == doctest::Approx(1.0).epsilon(1e-9));
  }
  Tensor<double> r = random_tensor(rng, {4, 8});
  auto build = [r](Tape<double>&, const std::vector<Var<double>>& v) {
    return project(l2_normalize(v[0], Index(1)), r);
  };
  Tensor<double> x2 = random_tensor(rng, {4, 8});
  CHECK(fd_check(build, {x2}).max_err < 1e-6);
}

TEST_CASE("stop_gradient blocks the path") {
  Tensor<double> x({2}, {1.0, 2.0});
  Tape<double> tape;
  Var<double> v = tape.leaf(x);
  Var<double> loss = sum(mul(stop_gradient(v), v));
  tape.backward(loss);
  // d/dv (c * v) with c = v detached
  CHECK(tape.grad(v.id)[0] == doctest::Approx(1.0));
  CHECK(tape.grad(v.id)[1] == doctest::Approx(2.0));
}

TEST_CASE("gradients accumulate across fan-out") {
  Tensor<double> x({1}, {3.0});
  Tape<double> tape;
  Var<double> v = tape.leaf(x);
  Var<double> y = add(mul(v, v), v);  // x^2 + x
  tape.backward(sum(y));
  CHECK(tape.grad(v.id)[0] == doctest::Approx(2 * 3.0 + 1.0));
}
