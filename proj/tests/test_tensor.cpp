#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cammac/gradcheck.hpp"
#include "cammac/tensor.hpp"

using namespace cammac;

using Ten = TensorT<double>;
using Tape = GradTape<double>;

TEST_CASE("matmul identity and hand-computed product") {
  Tape tp;
  Ten eye({2, 2}, {1, 0, 0, 1});
  Ten a({2, 2}, {1, 2, 3, 4});
  Ten ones({2, 1}, {1, 1});

  auto id2 = matmul(tp, eye, eye);
  CHECK(id2.data == std::vector<double>{1, 0, 0, 1});

  auto prod = matmul(tp, a, ones);
  CHECK(prod.shape == std::vector<int>{2, 1});
  CHECK(prod.data == std::vector<double>{3, 7});
}

TEST_CASE("matmul shape mismatch reports both shapes") {
  Tape tp;
  Ten a = Ten::zeros({2, 3});
  Ten b = Ten::zeros({4, 2});
  try {
    matmul(tp, a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient of sum matches finite differences at 1e-5") {
  Rng rng(7);
  auto a = random_tensor(rng, {3, 4});
  auto b = random_tensor(rng, {4, 2});
  const double err = max_rel_err_fd(
      [](Tape& t, const std::vector<Ten>& in) { return sum_all(t, matmul(t, in[0], in[1])); }, {a, b});
  CHECK(err <= 1e-5);
}

TEST_CASE("elementwise basics") {
  Tape tp;
  auto r = relu(tp, Ten({1, 3}, {-1, 0, 2}));
  CHECK(r.data == std::vector<double>{0, 0, 2});

  auto s = sigmoid(tp, Ten({1, 1}, {0}));
  CHECK(s.data[0] == doctest::Approx(0.5));

  auto m = mul(tp, Ten({1, 2}, {2, 3}), Ten({1, 2}, {4, 5}));
  CHECK(m.data == std::vector<double>{8, 15});
}

TEST_CASE("broadcast over leading dimension and its rejection") {
  Tape tp;
  auto y = add(tp, Ten({2, 3}, {1, 2, 3, 4, 5, 6}), Ten({1, 3}, {10, 20, 30}));
  CHECK(y.data == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK_THROWS_AS(add(tp, Ten::zeros({2, 3}), Ten::zeros({2, 2})), ShapeError);
}

TEST_CASE("mul gradient check vs finite differences") {
  Rng rng(11);
  auto a = random_tensor(rng, {3, 3});
  auto b = random_tensor(rng, {1, 3});
  const double err = max_rel_err_fd(
      [](Tape& t, const std::vector<Ten>& in) {
        auto y = mul(t, in[0], in[1]);
        return sum_all(t, mul(t, y, y));
      },
      {a, b});
  CHECK(err <= 1e-5);
}

TEST_CASE("softmax basics") {
  Tape tp;
  auto one = softmax_lastdim(tp, Ten({1, 1}, {3.7}));
  CHECK(one.data[0] == doctest::Approx(1.0));

  auto half = softmax_lastdim(tp, Ten({1, 2}, {0, 0}));
  CHECK(half.data[0] == doctest::Approx(0.5));
  CHECK(half.data[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax with masked entry: closed form and exact zero") {
  Tape tp;
  auto y = softmax_lastdim(tp, Ten({1, 3}, {1, 2, mask_sentinel<double>()}));
  const double e = std::exp(1.0);
  CHECK(y.data[0] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-12));
  CHECK(y.data[1] == doctest::Approx(e / (1.0 + e)).epsilon(1e-12));
  CHECK(y.data[2] == 0.0);  // exactly
  double sum = y.data[0] + y.data[1] + y.data[2];
  CHECK(std::abs(sum - 1.0) <= 1e-6);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(3);
  Tape tp;
  auto x = random_tensor(rng, {5, 7}, -4, 4);
  auto y = softmax_lastdim(tp, x);
  for (int r = 0; r < 5; ++r) {
    double sum = 0;
    for (int c = 0; c < 7; ++c) sum += y.at(r, c);
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("fully masked softmax row is a degenerate-mask error") {
  Tape tp;
  Ten x = Ten::full({1, 3}, mask_sentinel<double>());
  CHECK_THROWS_AS(softmax_lastdim(tp, x), DegenerateMaskError);
}

TEST_CASE("causal mask zeroes the strict upper triangle after softmax") {
  Rng rng(5);
  Tape tp;
  auto x = random_tensor(rng, {4, 4});
  auto y = softmax_lastdim(tp, causal_mask(tp, x));
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) CHECK(y.at(i, j) == 0.0);
  for (int i = 0; i < 4; ++i) {
    double sum = 0;
    for (int j = 0; j < 4; ++j) sum += y.at(i, j);
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("concat shapes and identity") {
  Tape tp;
  auto y = concat_lastdim(tp, {Ten::zeros({2, 3}), Ten::zeros({2, 1})});
  CHECK(y.shape == std::vector<int>{2, 4});

  Ten a({2, 2}, {1, 2, 3, 4});
  auto single = concat_lastdim(tp, {a});
  CHECK(single.data == a.data);
  CHECK(single.shape == a.shape);

  CHECK_THROWS_AS(concat_lastdim(tp, {Ten::zeros({2, 3}), Ten::zeros({3, 3})}), ShapeError);
}

TEST_CASE("gradient of a slice-sum flows only to the originating part") {
  Tape tp;
  Ten a = Ten::full({2, 3}, 1.0);
  Ten b = Ten::full({2, 2}, 1.0);
  auto wa = tp.leaf(a);
  auto wb = tp.leaf(b);
  auto y = concat_lastdim(tp, {wa, wb});
  auto right = slice_cols(tp, y, 3, 2);  // only b's columns
  auto loss = sum_all(tp, right);
  tp.backward(loss);
  for (double g : tp.grad(wa.node)) CHECK(g == 0.0);
  for (double g : tp.grad(wb.node)) CHECK(g == 1.0);
}

TEST_CASE("backward: sum and sum of squares") {
  {
    Tape tp;
    auto w = tp.leaf(Ten({1, 3}, {5, -1, 2}));
    tp.backward(sum_all(tp, w));
    CHECK(tp.grad(w.node) == std::vector<double>{1, 1, 1});
  }
  {
    Tape tp;
    auto w = tp.leaf(Ten({1, 2}, {1, 2}));
    tp.backward(sum_all(tp, mul(tp, w, w)));
    CHECK(tp.grad(w.node) == std::vector<double>{2, 4});
  }
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape tp;
  auto w = tp.leaf(Ten::zeros({1, 3}));
  CHECK_THROWS_AS(tp.backward(w), TensorError);
}

TEST_CASE("tape is topologically ordered and consumable once") {
  Tape tp;
  auto w = tp.leaf(Ten({1, 2}, {1, 2}));
  auto y = mul(tp, w, w);
  auto loss = sum_all(tp, y);
  for (std::size_t i = 0; i < tp.node_count(); ++i)
    for (int p : tp.parents(static_cast<int>(i))) CHECK(p < static_cast<int>(i));
  tp.backward(loss);
  CHECK_THROWS_AS(tp.backward(loss), TensorError);
}

TEST_CASE("non-finite forward output names the op") {
  Tape tp;
  Ten big = Ten::full({1, 2}, 1e200);
  try {
    mul(tp, big, big);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(e.op_name == "mul");
  }
}

TEST_CASE("every registered op passes its gradient check at 1e-5") {
  for (const auto& r : run_op_gradchecks(20260808)) {
    INFO(r.name, " max rel err ", r.max_rel_err);
    CHECK(r.passed);
  }
}

TEST_CASE("registered op list is stable and duplicate-free") {
  const auto results = run_op_gradchecks(1);
  std::set<std::string> names;
  for (const auto& r : results) names.insert(r.name);
  CHECK(names.size() == results.size());
  CHECK(names.count("matmul") == 1);
  CHECK(names.count("softmax_lastdim") == 1);
}

TEST_CASE("corrupted backward fixture is caught") {
  const auto results = run_op_gradchecks(2, true);
  bool found = false;
  for (const auto& r : results)
    if (r.name == "corrupted_fixture") {
      found = true;
      CHECK_FALSE(r.passed);
    }
  CHECK(found);
}

TEST_CASE("determinism: identical inputs give bit-identical outputs") {
  Rng rng(99);
  auto x = random_tensor(rng, {6, 6});
  Tape t1, t2;
  auto y1 = softmax_lastdim(t1, matmul(t1, x, x));
  auto y2 = softmax_lastdim(t2, matmul(t2, x, x));
  CHECK(y1.data == y2.data);
}
