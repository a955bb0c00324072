#include "cammac/gradcheck.hpp"

#include <cmath>

namespace cammac {

namespace {

using D = double;
using Ten = TensorT<D>;
using Tape = GradTape<D>;
using Inputs = std::vector<Ten>;
using LossFn = std::function<Ten(Tape&, const Inputs&)>;

// Keeps relu inputs away from the kink at 0 where finite differences lie.
Ten away_from_zero(Rng& rng, std::vector<int> shape, double margin = 1e-3) {
  Ten t = random_tensor(rng, std::move(shape));
  for (auto& v : t.data)
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  return t;
}

struct OpCase {
  std::string name;
  Inputs inputs;
  LossFn fn;
};

std::vector<OpCase> build_cases(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<OpCase> cases;

  cases.push_back({"matmul",
                   {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})},
                   [](Tape& t, const Inputs& in) { return sum_all(t, matmul(t, in[0], in[1])); }});
  cases.push_back({"add",
                   {random_tensor(rng, {3, 4}), random_tensor(rng, {1, 4})},
                   [](Tape& t, const Inputs& in) {
                     auto y = add(t, in[0], in[1]);
                     return sum_all(t, mul(t, y, y));
                   }});
  cases.push_back({"sub",
                   {random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})},
                   [](Tape& t, const Inputs& in) {
                     auto y = sub(t, in[0], in[1]);
                     return sum_all(t, mul(t, y, y));
                   }});
  cases.push_back({"mul",
                   {random_tensor(rng, {2, 5}), random_tensor(rng, {2, 5})},
                   [](Tape& t, const Inputs& in) { return sum_all(t, mul(t, in[0], in[1])); }});
  cases.push_back({"relu",
                   {away_from_zero(rng, {3, 5})},
                   [](Tape& t, const Inputs& in) {
                     auto y = relu(t, in[0]);
                     return sum_all(t, mul(t, y, y));
                   }});
  cases.push_back({"sigmoid",
                   {random_tensor(rng, {2, 6})},
                   [](Tape& t, const Inputs& in) { return sum_all(t, sigmoid(t, in[0])); }});
  cases.push_back({"tanh",
                   {random_tensor(rng, {2, 6})},
                   [](Tape& t, const Inputs& in) { return sum_all(t, tanh_op(t, in[0])); }});
  cases.push_back({"scale",
                   {random_tensor(rng, {2, 3})},
                   [](Tape& t, const Inputs& in) {
                     auto y = scale(t, in[0], 0.37);
                     return sum_all(t, mul(t, y, y));
                   }});
  cases.push_back({"softmax_lastdim",
                   {random_tensor(rng, {3, 5})},
                   [](Tape& t, const Inputs& in) {
                     auto y = softmax_lastdim(t, in[0]);
                     auto w = TensorT<D>::zeros({3, 5});
                     for (std::size_t i = 0; i < w.size(); ++i) w.data[i] = 0.1 * static_cast<double>(i);
                     return sum_all(t, mul(t, y, w));
                   }});
  cases.push_back({"causal_mask",
                   {random_tensor(rng, {4, 4})},
                   [](Tape& t, const Inputs& in) {
                     auto y = softmax_lastdim(t, causal_mask(t, in[0]));
                     auto w = TensorT<D>::zeros({4, 4});
                     for (std::size_t i = 0; i < w.size(); ++i) w.data[i] = 0.05 * static_cast<double>(i);
                     return sum_all(t, mul(t, y, w));
                   }});
  cases.push_back({"concat_lastdim",
                   {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 2})},
                   [](Tape& t, const Inputs& in) {
                     auto y = concat_lastdim(t, {in[0], in[1]});
                     return sum_all(t, mul(t, y, y));
                   }});
  cases.push_back({"stack_rows",
                   {random_tensor(rng, {1, 4}), random_tensor(rng, {1, 4}), random_tensor(rng, {1, 4})},
                   [](Tape& t, const Inputs& in) {
                     auto y = stack_rows(t, std::span<const Ten>(in));
                     return sum_all(t, mul(t, y, y));
                   }});
  cases.push_back({"slice_rows",
                   {random_tensor(rng, {5, 3})},
                   [](Tape& t, const Inputs& in) {
                     auto y = slice_rows(t, in[0], 1, 2);
                     return sum_all(t, mul(t, y, y));
                   }});
  cases.push_back({"slice_cols",
                   {random_tensor(rng, {3, 6})},
                   [](Tape& t, const Inputs& in) {
                     auto y = slice_cols(t, in[0], 2, 3);
                     return sum_all(t, mul(t, y, y));
                   }});
  cases.push_back({"embed_rows",
                   {random_tensor(rng, {6, 4})},
                   [](Tape& t, const Inputs& in) {
                     auto y = embed_rows(t, in[0], {1, 3, 3, 5});
                     return sum_all(t, mul(t, y, y));
                   }});
  cases.push_back({"transpose2d",
                   {random_tensor(rng, {3, 4})},
                   [](Tape& t, const Inputs& in) {
                     auto y = transpose2d(t, in[0]);
                     return sum_all(t, mul(t, y, y));
                   }});
  cases.push_back({"reshape",
                   {random_tensor(rng, {3, 4})},
                   [](Tape& t, const Inputs& in) {
                     auto y = reshape(t, in[0], {4, 3});
                     return sum_all(t, mul(t, y, y));
                   }});
  cases.push_back({"sum",
                   {random_tensor(rng, {3, 3})},
                   [](Tape& t, const Inputs& in) {
                     auto y = mul(t, in[0], in[0]);
                     return sum_all(t, y);
                   }});
  cases.push_back({"cross_entropy",
                   {random_tensor(rng, {1, 7})},
                   [](Tape& t, const Inputs& in) { return cross_entropy_logits(t, in[0], 2); }});
  return cases;
}

}  // namespace

std::vector<GradCheckResult> run_op_gradchecks(std::uint64_t seed, bool inject_fault) {
  constexpr double kTol = 1e-5;
  std::vector<GradCheckResult> out;
  for (auto& c : build_cases(seed)) {
    GradCheckResult r;
    r.name = c.name;
    r.tolerance = kTol;
    r.max_rel_err = max_rel_err_fd(c.fn, c.inputs);
    r.passed = r.max_rel_err <= kTol;
    out.push_back(std::move(r));
  }
  if (inject_fault) {
    // Forward computes x^2 but the reported loss used for differencing is x^3,
    // so the analytic gradient cannot match.
    Rng rng(seed ^ 0xfau);
    Ten x = random_tensor(rng, {2, 2}, 0.5, 1.5);
    GradCheckResult r;
    r.name = "corrupted_fixture";
    r.tolerance = kTol;
    r.max_rel_err = max_rel_err_fd(
        [step = 0](Tape& t, const Inputs& in) mutable {
          // First invocation (analytic pass) squares; later (FD) passes cube.
          auto y = mul(t, in[0], in[0]);
          if (step++ > 0) y = mul(t, y, in[0]);
          return sum_all(t, y);
        },
        {x});
    r.passed = r.max_rel_err <= kTol;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace cammac
