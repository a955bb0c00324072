#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "cammac/gradcheck.hpp"
#include "test_helpers.hpp"

using namespace cammac;
using cammac::testutil::ModelFixture;
using cammac::testutil::tiny_dataset;

using D = double;

namespace {

std::vector<std::vector<float>> run_dialog(const ParamStoreT<float>& params, const ModelConfig& cfg,
                                           const DialogRecord& rec, DialogStateT<float>* state_out = nullptr,
                                           std::vector<TurnTrace>* traces = nullptr) {
  std::vector<std::vector<float>> logits;
  DialogStateT<float> state;
  for (int t = 0; t <= static_cast<int>(rec.turns.size()); ++t) {
    GradTape<float> tape;
    ParamContext<float> pc(tape, params);
    TurnTrace trace;
    auto out = forward_turn(pc, rec, t, state, cfg, traces ? &trace : nullptr);
    state.detach_all();
    if (traces) traces->push_back(std::move(trace));
    logits.push_back(out.data);
  }
  if (state_out) *state_out = state;
  return logits;
}

}  // namespace

TEST_CASE("turn memory starts at zero, and with the carry disabled stays zero-initialized") {
  DialogStateT<D> fresh;
  auto m0 = init_turn_memory(fresh, true, 8);
  for (double v : m0.data) CHECK(v == 0.0);

  DialogStateT<D> later;
  later.turn_index = 3;
  later.carry_memory = TensorT<D>({1, 8}, std::vector<D>(8, 1.5));
  auto m_off = init_turn_memory(later, false, 8);
  for (double v : m_off.data) CHECK(v == 0.0);
  auto m_on = init_turn_memory(later, true, 8);
  for (double v : m_on.data) CHECK(v == 1.5);
}

TEST_CASE("with the carry enabled, turn 1 starts from turn 0's final memory bitwise") {
  const Dataset ds = tiny_dataset(1, 2);
  ModelFixture<float> fx(ds, {false, false, true});
  const DialogRecord& rec = ds.records[0];
  DialogStateT<float> state;
  {
    GradTape<float> tape;
    ParamContext<float> pc(tape, fx.params);
    forward_turn(pc, rec, 0, state, fx.cfg);
    state.detach_all();
  }
  const std::vector<float> carried = state.carry_memory.data;
  CHECK_FALSE(carried.empty());
  auto m = init_turn_memory(state, true, fx.cfg.d);
  CHECK(m.data == carried);
}

TEST_CASE("first reasoning step of a dialog self-attends with weight exactly 1") {
  const Dataset ds = tiny_dataset(2, 2);
  ModelFixture<float> fx(ds, {false, true, false});
  std::vector<TurnTrace> traces;
  run_dialog(fx.params, fx.cfg, ds.records[0], nullptr, &traces);
  const auto& first = traces[0].records[0];
  REQUIRE(first.weights.size() == 1);
  CHECK(first.weights[0] == 1.0);
}

TEST_CASE("first step's fused control equals fusion(c, c)") {
  const Dataset ds = tiny_dataset(3, 2);
  ModelFixture<D> fx(ds, {false, true, false});
  GradTape<D> tape;
  ParamContext<D> pc(tape, fx.params);
  Rng rng(5);
  auto raw = random_tensor(rng, {1, fx.cfg.d});
  auto out = context_attend(pc, raw, {raw}, 0, fx.cfg);
  GradTape<D> t2;
  ParamContext<D> p2(t2, fx.params);
  auto expect = fusion(p2, raw, raw);
  for (int j = 0; j < fx.cfg.d; ++j) CHECK(out.data[j] == doctest::Approx(expect.data[j]).epsilon(1e-12));
}

TEST_CASE("fusion with zero parameters halves its first argument") {
  const Dataset ds = tiny_dataset(4, 2);
  ModelFixture<D> fx(ds, {false, true, false});
  for (auto* n : {"caa.fusion.wr", "caa.fusion.br", "caa.fusion.wg", "caa.fusion.bg"})
    for (auto& v : fx.params.at(n).data) v = 0.0;
  GradTape<D> tape;
  ParamContext<D> pc(tape, fx.params);
  Rng rng(6);
  auto x = random_tensor(rng, {1, fx.cfg.d});
  auto y = random_tensor(rng, {1, fx.cfg.d});
  auto out = fusion(pc, x, y);
  for (int j = 0; j < fx.cfg.d; ++j) CHECK(out.data[j] == doctest::Approx(0.5 * x.data[j]).epsilon(1e-12));
}

TEST_CASE("fusion output lies between its gated operands") {
  const Dataset ds = tiny_dataset(5, 2);
  ModelFixture<D> fx(ds, {false, true, false});
  GradTape<D> tape;
  ParamContext<D> pc(tape, fx.params);
  Rng rng(7);
  auto x = random_tensor(rng, {1, fx.cfg.d});
  auto y = random_tensor(rng, {1, fx.cfg.d});
  auto out = fusion(pc, x, y);
  // Reconstruct x~ on a second pass to bound the convex combination.
  GradTape<D> t2;
  ParamContext<D> p2(t2, fx.params);
  auto z = concat_lastdim(t2, {x, y, mul(t2, x, y), sub(t2, x, y)});
  auto xt = relu(t2, linear(p2, z, "caa.fusion.wr", "caa.fusion.br"));
  for (int j = 0; j < fx.cfg.d; ++j) {
    const double lo = std::min(x.data[j], xt.data[j]);
    const double hi = std::max(x.data[j], xt.data[j]);
    CHECK(out.data[j] >= lo - 1e-12);
    CHECK(out.data[j] <= hi + 1e-12);
  }
}

TEST_CASE("fusion gradients match finite differences in x, y and all four parameter tensors") {
  const Dataset ds = tiny_dataset(6, 2);
  ModelConfig cfg = ModelConfig::from_dataset(ds, {false, true, false}, 6, 2);
  ParamStoreT<D> store;
  store.def("caa.fusion.wr", {4 * cfg.d, cfg.d});
  store.def("caa.fusion.br", {1, cfg.d});
  store.def("caa.fusion.wg", {4 * cfg.d, cfg.d});
  store.def("caa.fusion.bg", {1, cfg.d});
  store.def("x", {1, cfg.d});
  store.def("y", {1, cfg.d});
  Rng rng(8);
  for (auto& [name, t] : store.tensors)
    for (auto& v : t.data) v = rng.uniform_real(-0.8, 0.8);
  const double err = max_rel_err_params(
      [&](ParamContext<D>& pc) {
        auto out = fusion(pc, pc["x"], pc["y"]);
        return sum_all(pc.tape(), mul(pc.tape(), out, out));
      },
      store, 1e-6);
  CHECK(err <= 1e-5);
}

TEST_CASE("causality: every full attention matrix is exactly zero above the diagonal") {
  const Dataset ds = tiny_dataset(7, 6, 4);
  ModelFixture<float> fx(ds, {false, true, true}, 16, 3);
  for (const auto& rec : ds.records) {
    std::vector<TurnTrace> traces;
    run_dialog(fx.params, fx.cfg, rec, nullptr, &traces);
    for (const auto& trace : traces) {
      REQUIRE(trace.full_attention.size() == static_cast<std::size_t>(fx.cfg.p));
      for (std::size_t s = 0; s < trace.full_attention.size(); ++s) {
        const int n = trace.full_n[s];
        const auto& m = trace.full_attention[s];
        REQUIRE(static_cast<int>(m.size()) == n * n);
        for (int i = 0; i < n; ++i) {
          double sum = 0;
          for (int j = 0; j < n; ++j) {
            if (j > i) CHECK(m[static_cast<std::size_t>(i) * n + j] == 0.0);
            sum += m[static_cast<std::size_t>(i) * n + j];
          }
          CHECK(std::abs(sum - 1.0) <= 1e-6);
        }
      }
    }
  }
}

TEST_CASE("attention records cover exactly the visible prefix and sum to one") {
  const Dataset ds = tiny_dataset(8, 3);
  ModelFixture<float> fx(ds, {false, true, false}, 16, 2);
  std::vector<TurnTrace> traces;
  run_dialog(fx.params, fx.cfg, ds.records[0], nullptr, &traces);
  for (int t = 0; t < static_cast<int>(traces.size()); ++t)
    for (int k = 0; k < fx.cfg.p; ++k) {
      const auto& rec = traces[t].records[k];
      CHECK(rec.turn == t);
      CHECK(rec.step == k);
      CHECK(rec.weights.size() == static_cast<std::size_t>(t * fx.cfg.p + k + 1));
      CHECK(std::abs(std::accumulate(rec.weights.begin(), rec.weights.end(), 0.0) - 1.0) <= 1e-6);
    }
}

TEST_CASE("all extensions off reproduces a standalone single-turn forward") {
  const Dataset ds = tiny_dataset(9, 2);
  ModelFixture<float> fx(ds, {});
  const DialogRecord& rec = ds.records[0];
  // Turn 2 inside a sequential pass vs a fresh standalone pass.
  DialogStateT<float> seq;
  std::vector<std::vector<float>> all = run_dialog(fx.params, fx.cfg, rec, &seq);
  DialogStateT<float> solo;
  GradTape<float> tape;
  ParamContext<float> pc(tape, fx.params);
  auto logits = forward_turn(pc, rec, 2, solo, fx.cfg);
  CHECK(logits.data == all[2]);
}

TEST_CASE("the six ablation flag combinations build; only caa changes the parameter count") {
  const Dataset ds = tiny_dataset(10, 2);
  std::map<std::string, std::size_t> counts;
  for (const auto& name : {"vanilla", "caa", "caa+mtm", "cq", "cq+caa", "cq+caa+mtm"}) {
    ModelFixture<float> fx(ds, flags_from_name(name));
    DialogStateT<float> state;
    GradTape<float> tape;
    ParamContext<float> pc(tape, fx.params);
    auto logits = forward_turn(pc, ds.records[0], 1, state, fx.cfg);
    CHECK(logits.size() == static_cast<std::size_t>(fx.cfg.answer_size()));
    counts[name] = fx.params.scalar_count();
  }
  const int d = 16;
  const std::size_t caa_extra = 2 * d * d + 2 * (4 * d * d + d);
  CHECK(counts["caa"] == counts["vanilla"] + caa_extra);
  CHECK(counts["caa+mtm"] == counts["caa"]);
  CHECK(counts["cq"] == counts["vanilla"]);
  CHECK(counts["cq+caa"] == counts["caa"]);
  CHECK(counts["cq+caa+mtm"] == counts["caa"]);
}

TEST_CASE("with caa off the control log is written but never read") {
  const Dataset ds = tiny_dataset(11, 2);
  ModelFixture<float> fx(ds, {false, false, true});
  const DialogRecord& rec = ds.records[0];

  DialogStateT<float> logged, scrubbed;
  std::vector<std::vector<float>> with_log, without_log;
  for (int t = 0; t <= static_cast<int>(rec.turns.size()); ++t) {
    {
      GradTape<float> tape;
      ParamContext<float> pc(tape, fx.params);
      with_log.push_back(forward_turn(pc, rec, t, logged, fx.cfg).data);
      logged.detach_all();
    }
    {
      GradTape<float> tape;
      ParamContext<float> pc(tape, fx.params);
      without_log.push_back(forward_turn(pc, rec, t, scrubbed, fx.cfg).data);
      scrubbed.detach_all();
      scrubbed.control_log.clear();  // a build with no log at all
    }
  }
  CHECK(with_log == without_log);
  CHECK(logged.control_log.size() == (rec.turns.size() + 1) * static_cast<std::size_t>(fx.cfg.p));
}

TEST_CASE("turn-by-turn processing equals from-scratch replay bitwise") {
  const Dataset ds = tiny_dataset(12, 2, 4);
  ModelFixture<float> fx(ds, {false, true, true});
  const DialogRecord& rec = ds.records[0];
  const auto full = run_dialog(fx.params, fx.cfg, rec);
  for (int upto = 0; upto <= static_cast<int>(rec.turns.size()); ++upto) {
    DialogStateT<float> state;
    std::vector<float> last;
    for (int t = 0; t <= upto; ++t) {
      GradTape<float> tape;
      ParamContext<float> pc(tape, fx.params);
      last = forward_turn(pc, rec, t, state, fx.cfg).data;
      state.detach_all();
    }
    CHECK(last == full[upto]);
  }
}

TEST_CASE("reusing a live dialog state on a new tape is rejected") {
  const Dataset ds = tiny_dataset(14, 2);
  ModelFixture<float> fx(ds, {false, true, true});
  DialogStateT<float> state;
  GradTape<float> t1;
  ParamContext<float> p1(t1, fx.params);
  forward_turn(p1, ds.records[0], 0, state, fx.cfg);
  GradTape<float> t2;
  ParamContext<float> p2(t2, fx.params);
  CHECK_THROWS_AS(forward_turn(p2, ds.records[0], 1, state, fx.cfg), TensorError);
  state.detach_all();
  CHECK_NOTHROW(forward_turn(p2, ds.records[0], 1, state, fx.cfg));
}

TEST_CASE("without the carry, reordering turns permutes outputs identically") {
  const Dataset ds = tiny_dataset(13, 2, 4);
  ModelFixture<float> fx(ds, {});  // caa, cq, mtm all off
  DialogRecord rec = ds.records[0];
  const auto before = run_dialog(fx.params, fx.cfg, rec);

  DialogRecord shuffled = rec;
  std::swap(shuffled.turns[0], shuffled.turns[3]);
  std::swap(shuffled.turns[1], shuffled.turns[2]);
  const auto after = run_dialog(fx.params, fx.cfg, shuffled);

  CHECK(after[1] == before[4]);
  CHECK(after[2] == before[3]);
  CHECK(after[3] == before[2]);
  CHECK(after[4] == before[1]);
}
