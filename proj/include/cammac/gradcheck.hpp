#pragma once

// Central finite-difference checking for tape gradients, double precision.
// Each registered tensor op gets one canonical random-input check; the same
// machinery drives the end-to-end model check.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cammac/params.hpp"
#include "cammac/rng.hpp"
#include "cammac/tensor.hpp"

namespace cammac {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  bool passed = false;
  double tolerance = 0.0;
};

// Relative error with an absolute floor. Central differences through a deep
// forward resolve derivatives only down to roughly forward-noise / (2 eps),
// about 1e-9 in double; the floor turns the comparison absolute below it
// (effective absolute tolerance = floor * rel tolerance).
inline double rel_err(double got, double want, double floor = 1e-4) {
  const double denom = std::max({std::abs(got), std::abs(want), floor});
  return std::abs(got - want) / denom;
}

// fn maps leaf tensors (already watched on the given tape) to a scalar loss.
// Checks d loss / d inputs[i] for every scalar entry of every input.
inline double max_rel_err_fd(
    const std::function<TensorT<double>(GradTape<double>&, const std::vector<TensorT<double>>&)>& fn,
    std::vector<TensorT<double>> inputs, double eps = 1e-6) {
  GradTape<double> tape;
  std::vector<TensorT<double>> watched;
  watched.reserve(inputs.size());
  for (const auto& in : inputs) watched.push_back(tape.leaf(in));
  TensorT<double> loss = fn(tape, watched);
  tape.backward(loss);

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::vector<double> analytic = tape.grad(watched[i].node);
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      auto eval = [&](double v) {
        std::vector<TensorT<double>> shifted = inputs;
        shifted[i].data[j] = v;
        GradTape<double> t2;
        std::vector<TensorT<double>> w2;
        w2.reserve(shifted.size());
        for (const auto& in : shifted) w2.push_back(t2.leaf(in));
        return fn(t2, w2).data[0];
      };
      const double x = inputs[i].data[j];
      const double fd = (eval(x + eps) - eval(x - eps)) / (2.0 * eps);
      worst = std::max(worst, rel_err(analytic[j], fd));
    }
  }
  return worst;
}

inline TensorT<double> random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  TensorT<double> t = TensorT<double>::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.uniform_real(lo, hi);
  return t;
}

// Differentiates a scalar loss with respect to every entry of every tensor in
// a parameter store, comparing the tape gradients against central finite
// differences. build must be a pure function of the store contents.
template <typename BuildLoss>
double max_rel_err_params(const BuildLoss& build, ParamStoreT<double>& store, double eps = 1e-5) {
  GradTape<double> tape;
  ParamContext<double> pc(tape, store);
  TensorT<double> loss = build(pc);
  tape.backward(loss);
  std::map<std::string, std::vector<double>> analytic;
  for (const auto& [name, leafy] : pc.watched()) analytic[name] = tape.grad(leafy.node);

  auto eval = [&]() {
    GradTape<double> t2;
    ParamContext<double> p2(t2, store);
    return build(p2).data[0];
  };

  double worst = 0.0;
  for (auto& [name, t] : store.tensors) {
    const auto it = analytic.find(name);
    for (std::size_t j = 0; j < t.data.size(); ++j) {
      const double x = t.data[j];
      t.data[j] = x + eps;
      const double fp = eval();
      t.data[j] = x - eps;
      const double fm = eval();
      t.data[j] = x;
      const double fd = (fp - fm) / (2.0 * eps);
      const double got = it == analytic.end() ? 0.0 : it->second[j];
      worst = std::max(worst, rel_err(got, fd));
    }
  }
  return worst;
}

// One finite-difference check per registered tensor op, tolerance 1e-5.
// When inject_fault is set, an extra entry with a deliberately wrong gradient
// is appended so harness failure detection can itself be tested.
std::vector<GradCheckResult> run_op_gradchecks(std::uint64_t seed, bool inject_fault = false);

}  // namespace cammac
