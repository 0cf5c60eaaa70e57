#include <doctest.h>

#include <cmath>
#include <random>

#include "salfau/errors.hpp"
#include "salfau/parallel.hpp"
#include "salfau/tensor.hpp"
#include "support.hpp"

using namespace salfau;
using salfau::testing::param;
using salfau::testing::project;
using salfau::testing::random_tensor;

TEST_CASE("creation fills and copies values") {
  CHECK(Tensor::zeros({2, 2}).to_vector() == std::vector<double>{0, 0, 0, 0});
  CHECK(Tensor::from_values({3}, {1, 2, 3}).to_vector() == std::vector<double>{1, 2, 3});
  CHECK_FALSE(Tensor::zeros({2}).requires_grad());
  CHECK_THROWS_WITH_AS(Tensor::from_values({2}, {1, 2, 3}), "expected 2 elements, got 3", ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), ShapeError);
}

TEST_CASE("elementwise arithmetic") {
  const Tensor a = Tensor::from_values({2}, {1, 2});
  const Tensor b = Tensor::from_values({2}, {3, 4});
  CHECK(add(a, b).to_vector() == std::vector<double>{4, 6});
  CHECK(sub(b, a).to_vector() == std::vector<double>{2, 2});
  CHECK(mul(a, b).to_vector() == std::vector<double>{3, 8});
  CHECK(scale(a, -2).to_vector() == std::vector<double>{-2, -4});

  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 3, 4, 5}, rng, -10, 10, Precision::Single);
  CHECK(sub(x, x).to_vector() == std::vector<double>(x.numel(), 0.0));
  CHECK(add(x, Tensor::zeros(x.shape())).to_vector() == x.to_vector());
}

TEST_CASE("mul by zeros annihilates value and gradient") {
  std::mt19937_64 rng(2);
  Tensor x = param({3, 4}, rng);
  const Tensor y = mul(x, Tensor::zeros({3, 4}, Precision::Double));
  CHECK(y.to_vector() == std::vector<double>(12, 0.0));
  sum(y).backward();
  CHECK(x.grad().to_vector() == std::vector<double>(12, 0.0));
}

TEST_CASE("channel vector broadcasts over spatial dims") {
  const Tensor x = Tensor::zeros({1, 2, 2, 2});
  const Tensor bias = Tensor::from_values({2}, {1, -1});
  CHECK(add(x, bias).to_vector() == std::vector<double>{1, 1, 1, 1, -1, -1, -1, -1});

  Tensor b = Tensor::from_values({2}, {0.5, 2}, Precision::Double);
  b.set_requires_grad(true);
  sum(add(Tensor::zeros({2, 2, 3, 3}, Precision::Double), b)).backward();
  CHECK(b.grad().to_vector() == std::vector<double>{18, 18});
}

TEST_CASE("incompatible shapes name both operands") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2,3]"), ShapeError);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[3,2]"), ShapeError);
}

TEST_CASE("shape evaluator agrees with execution") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> dim(1, 4), pick(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    Shape a{static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(dim(rng)),
            static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(dim(rng))};
    Shape b = a;
    switch (pick(rng)) {
      case 0: break;
      case 1: b = {a[1]}; break;
      case 2: b[2] = 1; b[0] = 1; break;
      default: b[3] = a[3] + 1; break;
    }
    const Tensor ta = Tensor::zeros(a), tb = Tensor::zeros(b);
    bool shape_ok = true, exec_ok = true;
    Shape predicted, actual;
    try { predicted = ewise_shape(a, b); } catch (const ShapeError&) { shape_ok = false; }
    try { actual = mul(ta, tb).shape(); } catch (const ShapeError&) { exec_ok = false; }
    REQUIRE(shape_ok == exec_ok);
    if (shape_ok) CHECK(predicted == actual);
  }
}

TEST_CASE("activations") {
  CHECK(sigmoid(Tensor::from_values({1}, {0})).item() == 0.5);
  CHECK(relu(Tensor::from_values({2}, {-3, 3})).to_vector() == std::vector<double>{0, 3});

  const Tensor s = sigmoid(Tensor::from_values({4}, {-200, -30, 30, 200}));
  for (double v : s.to_vector()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("sigmoid derivative at zero matches finite differences") {
  Tensor x = Tensor::from_values({1}, {0}, Precision::Double);
  x.set_requires_grad(true);
  sum(sigmoid(x)).backward();
  const double h = 1e-5;
  const double numeric = (1 / (1 + std::exp(-h)) - 1 / (1 + std::exp(h))) / (2 * h);
  CHECK(x.grad().item() == doctest::Approx(numeric).epsilon(1e-9));
  CHECK(x.grad().item() == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("concat and slice") {
  std::mt19937_64 rng(4);
  const Tensor a = random_tensor({1, 1, 4, 4}, rng, -1, 1, Precision::Single);
  const Tensor b = random_tensor({1, 2, 4, 4}, rng, -1, 1, Precision::Single);
  const Tensor c = concat_channels({a, b});
  CHECK(c.shape() == Shape{1, 3, 4, 4});
  CHECK(slice_channels(c, 0, 1).to_vector() == a.to_vector());
  CHECK(slice_channels(c, 1, 2).to_vector() == b.to_vector());
  CHECK(concat_channels({a}).to_vector() == a.to_vector());
  CHECK_THROWS_AS(concat_channels({a, Tensor::zeros({1, 1, 4, 5})}), ShapeError);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, Precision::Double);
  x.set_requires_grad(true);
  sum(x).backward();
  CHECK(x.grad().to_vector() == std::vector<double>(6, 1.0));

  Tensor y = Tensor::from_values({2}, {1, 2}, Precision::Double);
  y.set_requires_grad(true);
  sum(mul(y, y)).backward();
  CHECK(y.grad().to_vector() == std::vector<double>{2, 4});

  CHECK_THROWS_AS(mul(y, y).backward(), ContractError);
}

TEST_CASE("gradients accumulate over repeated uses and calls") {
  std::mt19937_64 rng(5);
  Tensor x = param({5}, rng);
  sum(sigmoid(x)).backward();
  const std::vector<double> once = x.grad().to_vector();
  x.zero_grad();
  sum(add(sigmoid(x), sigmoid(x))).backward();
  const std::vector<double> twice = x.grad().to_vector();
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == doctest::Approx(2 * once[i]));
  sum(sigmoid(x)).backward();
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(x.grad().at(i) == doctest::Approx(3 * once[i]));
}

TEST_CASE("graph nodes are visited in reverse creation order") {
  std::mt19937_64 rng(6);
  Tensor x = param({3}, rng);
  const Tensor a = sigmoid(x);
  const Tensor b = relu(a);
  const Tensor loss = sum(mul(a, b));
  const auto nodes = trace_graph(loss);
  REQUIRE(nodes.size() == 4);
  for (std::size_t i = 1; i < nodes.size(); ++i) CHECK(nodes[i - 1].seq < nodes[i].seq);
  for (const auto& n : nodes) {
    for (auto s : n.input_seqs) CHECK(s < n.seq);
  }
  CHECK(nodes.back().op == "sum");
}

TEST_CASE("no-grad mode records nothing") {
  std::mt19937_64 rng(7);
  Tensor x = param({3}, rng);
  NoGradGuard guard;
  const Tensor y = sigmoid(x);
  CHECK_FALSE(y.requires_grad());
  CHECK(trace_graph(y).empty());
}

TEST_CASE("grad_check refuses single precision and bad eps") {
  Tensor x = Tensor::from_values({2}, {0.1, 0.2});
  x.set_requires_grad(true);
  CHECK_THROWS_AS(grad_check([&] { return sum(sigmoid(x)); }, {x}), ContractError);
  Tensor d = Tensor::from_values({2}, {0.1, 0.2}, Precision::Double);
  d.set_requires_grad(true);
  GradCheckOptions opt;
  opt.eps = 1e-2;
  CHECK_THROWS_AS(grad_check([&] { return sum(sigmoid(d)); }, {d}, opt), ContractError);
}

TEST_CASE("elementwise ops pass gradient checks") {
  std::mt19937_64 rng(8);
  Tensor a = param({2, 3, 4, 4}, rng);
  Tensor b = param({2, 3, 4, 4}, rng);
  Tensor c = param({3}, rng);
  Tensor d = param({2, 1, 4, 4}, rng);
  CHECK(grad_check([&] { return project(add(a, b)); }, {a, b}) < 1e-6);
  CHECK(grad_check([&] { return project(sub(a, b)); }, {a, b}) < 1e-6);
  CHECK(grad_check([&] { return project(mul(a, b)); }, {a, b}) < 1e-6);
  CHECK(grad_check([&] { return project(add(a, c)); }, {a, c}) < 1e-6);
  CHECK(grad_check([&] { return project(mul(a, d)); }, {a, d}) < 1e-6);
  CHECK(grad_check([&] { return project(scale(a, 3.5)); }, {a}) < 1e-6);
  CHECK(grad_check([&] { return project(sigmoid(a)); }, {a}) < 1e-6);
  CHECK(grad_check([&] { return project(concat_channels({a, d})); }, {a, d}) < 1e-6);
  CHECK(grad_check([&] { return project(slice_channels(a, 1, 2)); }, {a}) < 1e-6);
}

TEST_CASE("relu passes gradient check away from the kink") {
  std::mt19937_64 rng(9);
  Tensor x = param({4, 6}, rng);
  auto v = x.mutable_data<double>();
  for (double& e : v) e = e >= 0 ? e + 0.1 : e - 0.1;
  CHECK(grad_check([&] { return project(relu(x)); }, {x}) < 1e-6);
}

TEST_CASE("sigmoid grad check with the single-input form") {
  Tensor x = Tensor::from_values({5}, {-2, -0.5, 0, 0.7, 3}, Precision::Double);
  CHECK(grad_check([](const Tensor& t) { return sum(sigmoid(t)); }, x, 1e-5) < 1e-6);
}

TEST_CASE("composite graph matches finite differences") {
  std::mt19937_64 rng(10);
  Tensor x = param({1, 2, 3, 3}, rng);
  Tensor w = param({2}, rng);
  auto f = [&] {
    const Tensor h = sigmoid(add(mul(x, x), w));
    return project(concat_channels({h, mul(h, x)}));
  };
  CHECK(grad_check(f, {x, w}) < 1e-4);
}

TEST_CASE("precision conversion and detach") {
  const Tensor x = Tensor::from_values({2}, {0.1, 0.2}, Precision::Double);
  const Tensor f = x.to(Precision::Single);
  CHECK(f.precision() == Precision::Single);
  CHECK(f.at(0) == static_cast<double>(0.1f));
  Tensor y = x;
  y.set_requires_grad(true);
  CHECK_FALSE(sigmoid(y).detach().requires_grad());
  CHECK_THROWS_AS(add(x, f), ContractError);
}

TEST_CASE("elementwise results do not depend on thread count") {
  std::mt19937_64 rng(11);
  const Tensor a = random_tensor({2, 8, 16, 16}, rng, -3, 3, Precision::Single);
  set_num_threads(1);
  const auto one = sigmoid(mul(a, a)).to_vector();
  set_num_threads(4);
  const auto four = sigmoid(mul(a, a)).to_vector();
  set_num_threads(1);
  CHECK(one == four);
}

namespace {

// Square with a deliberately wrong gradient at one element.
Tensor faulty_square(const Tensor& x, std::size_t bad_index, double bad_factor) {
  const auto v = x.to_vector();
  std::vector<double> y(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) y[i] = v[i] * v[i];
  return make_op_result(x.shape(), Storage(y), "faulty_square", {x},
                        [v, bad_index, bad_factor](const Storage& g, const std::vector<bool>&) {
                          const auto& go = std::get<std::vector<double>>(g);
                          std::vector<double> dx(v.size());
                          for (std::size_t i = 0; i < v.size(); ++i) {
                            dx[i] = 2.0 * v[i] * go[i] * (i == bad_index ? bad_factor : 1.0);
                          }
                          return std::vector<std::optional<Storage>>{Storage(dx)};
                        });
}

}  // namespace

TEST_CASE("directional check agrees with the elementwise one on correct gradients") {
  std::mt19937_64 rng(21);
  Tensor a = param({3, 4}, rng), b = param({4}, rng);
  auto loss = [&] { return project(sigmoid(add(mul(a, a), b))); };
  CHECK(grad_check_directional(loss, {a, b}, 4) < 1e-7);
  GradCheckOptions opt;
  opt.eps = 1e-5;
  CHECK(grad_check_directional(loss, {a, b}, 4, opt) < 1e-7);
}

TEST_CASE("directional check flags a single wrong gradient entry") {
  std::mt19937_64 rng(22);
  Tensor x = param({50}, rng, 0.5, 1.5);
  auto loss = [&](double factor) { return [&x, factor] { return project(faulty_square(x, 17, factor)); }; };
  CHECK(grad_check_directional(loss(1.0), {x}, 3) < 1e-7);
  CHECK(grad_check(loss(1.0), {x}) < 1e-7);
  // one bad entry out of 50 is diluted in a directional derivative, but
  // still lands well above the 1e-4 acceptance bound
  CHECK(grad_check_directional(loss(1.5), {x}, 3) > 2e-4);
  CHECK(grad_check(loss(1.5), {x}) > 1e-1);
  CHECK(grad_check_directional(loss(-1.0), {x}, 3) > 1e-3);
}

TEST_CASE("directional check handles single-element and zero-gradient tensors") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor s = param({1}, rng);
    Tensor unused = param({3}, rng);
    CHECK(grad_check_directional([&] { return sum(mul(s, s)); }, {s, unused}, 4, {1e-6, 0, static_cast<std::uint64_t>(trial)}) < 1e-7);
  }
}
