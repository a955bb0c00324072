#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "cammac/gradcheck.hpp"
#include "cammac/trainer.hpp"
#include "test_helpers.hpp"

using namespace cammac;
using cammac::testutil::tiny_dataset;

namespace {

TrainConfig tiny_train(ModelFlags flags, std::uint64_t seed = 3) {
  TrainConfig cfg;
  cfg.flags = flags;
  cfg.d = 16;
  cfg.p = 2;
  cfg.batch_dialogs = 4;
  cfg.batch_turns = 16;
  cfg.max_epochs = 2;
  cfg.early_stop_patience = 2;
  cfg.seed = seed;
  return cfg;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/cammac_train_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

bool same_metrics(const std::vector<EpochMetrics>& a, const std::vector<EpochMetrics>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].epoch != b[i].epoch || a[i].train_loss != b[i].train_loss ||
        a[i].val_accuracy != b[i].val_accuracy)
      return false;
  return true;
}

bool same_tensors(const std::map<std::string, TensorT<float>>& a,
                  const std::map<std::string, TensorT<float>>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second.data != t.data || it->second.shape != t.shape) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("fresh-model loss sits near ln of the answer vocabulary size") {
  const Dataset ds = tiny_dataset(21, 16);
  ModelConfig mcfg = ModelConfig::from_dataset(ds, {false, true, true}, 64, 4);
  ParamStoreT<float> params = make_param_store<float>(mcfg);
  init_params(params, mcfg, 5);

  double loss_sum = 0;
  int n = 0;
  for (int di = 0; di < 8; ++di) {
    DialogStateT<float> state;
    for (int t = 0; t <= static_cast<int>(ds.records[di].turns.size()); ++t) {
      GradTape<float> tape;
      ParamContext<float> pc(tape, params);
      auto logits = forward_turn(pc, ds.records[di], t, state, mcfg);
      state.detach_all();
      if (t == 0) continue;
      loss_sum += cross_entropy_logits(tape, logits, mcfg.answer_id(ds.records[di].turns[t - 1].answer)).data[0];
      ++n;
    }
  }
  const double mean = loss_sum / n;
  const double expect = std::log(static_cast<double>(mcfg.answer_size()));
  CHECK(std::abs(mean - expect) <= 0.1 * expect);
}

TEST_CASE("one epoch over one dialog trains without error and yields finite loss") {
  GenConfig g = cammac::testutil::tiny_gen(22, 1);
  Dataset one = make_dataset(g, generate_dataset(g));
  TrainConfig cfg = tiny_train({false, true, true});
  cfg.max_epochs = 1;
  cfg.early_stop_patience = 1;
  TrainResult res = train(cfg, one, one);
  REQUIRE(res.metrics.size() == 1);
  CHECK(std::isfinite(res.metrics[0].train_loss));
  CHECK(res.metrics[0].val_accuracy >= 0.0);
  CHECK(res.metrics[0].val_accuracy <= 1.0);
}

TEST_CASE("identical seed and config reproduce the metric log exactly") {
  const Dataset tr = tiny_dataset(23, 10);
  const Dataset va = tiny_dataset(24, 4);
  for (ModelFlags flags : {ModelFlags{false, false, false}, ModelFlags{false, true, true}}) {
    TrainConfig cfg = tiny_train(flags, 11);
    TrainResult a = train(cfg, tr, va);
    TrainResult b = train(cfg, tr, va);
    CHECK(same_metrics(a.metrics, b.metrics));
    CHECK(same_tensors(a.last.tensors, b.last.tensors));
  }
}

TEST_CASE("training loss decreases over a few epochs on a small set") {
  const Dataset tr = tiny_dataset(25, 12);
  TrainConfig cfg = tiny_train({false, true, true}, 7);
  cfg.max_epochs = 4;
  cfg.early_stop_patience = 4;
  cfg.learning_rate = 1e-3;
  TrainResult res = train(cfg, tr, tr);
  REQUIRE(res.metrics.size() >= 2);
  CHECK(res.metrics.back().train_loss < res.metrics.front().train_loss);
}

TEST_CASE("checkpoint round-trips bitwise") {
  const Dataset tr = tiny_dataset(26, 6);
  TrainConfig cfg = tiny_train({false, true, false}, 13);
  cfg.max_epochs = 1;
  cfg.early_stop_patience = 1;
  TrainResult res = train(cfg, tr, tr);
  TempFile f("roundtrip.ckpt");
  save_checkpoint(res.last, f.path);
  Checkpoint back = load_checkpoint(f.path);
  CHECK(same_tensors(back.tensors, res.last.tensors));
  CHECK(back.epoch == res.last.epoch);
  CHECK(back.val_accuracy == res.last.val_accuracy);
  CHECK(back.rng_state == res.last.rng_state);
  CHECK(back.adam_step == res.last.adam_step);
  CHECK(same_metrics(back.metrics, res.last.metrics));
  CHECK(back.model_config.vocab == res.last.model_config.vocab);
}

TEST_CASE("corrupted magic bytes are rejected with a format error") {
  const Dataset tr = tiny_dataset(27, 4);
  TrainConfig cfg = tiny_train({}, 17);
  cfg.max_epochs = 1;
  cfg.early_stop_patience = 1;
  TrainResult res = train(cfg, tr, tr);
  TempFile f("magic.ckpt");
  save_checkpoint(res.last, f.path);
  {
    std::fstream fs(f.path, std::ios::in | std::ios::out | std::ios::binary);
    fs.seekp(0);
    fs.put('X');
  }
  try {
    load_checkpoint(f.path);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("magic") != std::string::npos);
  }
}

TEST_CASE("truncated checkpoint and inconsistent shape table are rejected") {
  const Dataset tr = tiny_dataset(28, 4);
  TrainConfig cfg = tiny_train({}, 19);
  cfg.max_epochs = 1;
  cfg.early_stop_patience = 1;
  TrainResult res = train(cfg, tr, tr);
  TempFile f("trunc.ckpt");
  save_checkpoint(res.last, f.path);

  std::string body;
  {
    std::ifstream in(f.path, std::ios::binary);
    body.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  {
    std::ofstream out(f.path, std::ios::binary | std::ios::trunc);
    out.write(body.data(), 40);
  }
  CHECK_THROWS_AS(load_checkpoint(f.path), CheckpointError);

  // Corrupt the first tensor's rank field into an absurd value.
  std::string bad = body;
  const std::size_t name_len = 12;  // "adam.m.ctrl..." comes first alphabetically
  (void)name_len;
  // magic(8) + count(4) + name_len(4) -> name starts at 16
  std::uint32_t stored_len = 0;
  for (int i = 0; i < 4; ++i) stored_len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bad[12 + i])) << (8 * i);
  const std::size_t rank_at = 16 + stored_len;
  bad[rank_at] = static_cast<char>(0xff);
  {
    std::ofstream out(f.path, std::ios::binary | std::ios::trunc);
    out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
  }
  try {
    load_checkpoint(f.path);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("shape table") != std::string::npos);
  }
}

TEST_CASE("resumed training replays the uninterrupted run step for step") {
  const Dataset tr = tiny_dataset(29, 8);
  const Dataset va = tiny_dataset(30, 4);
  for (ModelFlags flags : {ModelFlags{false, false, false}, ModelFlags{false, true, true}}) {
    TrainConfig cfg = tiny_train(flags, 23);
    cfg.max_epochs = 4;
    cfg.early_stop_patience = 4;
    TrainResult full = train(cfg, tr, va);

    TrainConfig half = cfg;
    half.max_epochs = 2;
    half.early_stop_patience = 2;
    TrainResult first = train(half, tr, va);
    TempFile f("resume.ckpt");
    save_checkpoint(first.last, f.path);
    Checkpoint mid = load_checkpoint(f.path);
    TrainResult second = train(cfg, tr, va, &mid);

    REQUIRE(full.metrics.size() == second.metrics.size());
    CHECK(same_metrics(full.metrics, second.metrics));
    CHECK(same_tensors(full.last.tensors, second.last.tensors));
  }
}

TEST_CASE("the best checkpoint carries the maximum validation accuracy seen") {
  const Dataset tr = tiny_dataset(31, 10);
  const Dataset va = tiny_dataset(32, 4);
  TrainConfig cfg = tiny_train({false, true, true}, 29);
  cfg.max_epochs = 5;
  cfg.early_stop_patience = 5;
  TrainResult res = train(cfg, tr, va);
  double best = -1;
  for (const auto& m : res.metrics) best = std::max(best, m.val_accuracy);
  CHECK(res.best.val_accuracy == best);
}

TEST_CASE("parameter counts depend on flags, never on the seed") {
  const Dataset ds = tiny_dataset(33, 2);
  for (const auto& name : known_model_names()) {
    std::size_t first = 0;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      ModelConfig mcfg = ModelConfig::from_dataset(ds, flags_from_name(name), 16, 2);
      ParamStoreT<float> ps = make_param_store<float>(mcfg);
      init_params(ps, mcfg, seed);
      if (seed == 1ull)
        first = ps.scalar_count();
      else
        CHECK(ps.scalar_count() == first);
    }
  }
}

TEST_CASE("end-to-end one-turn gradients match finite differences at 1e-4") {
  GenConfig g = cammac::testutil::tiny_gen(34, 2, 2);
  g.grid_h = g.grid_w = 2;
  g.min_objects = 1;
  g.max_objects = 2;
  Dataset ds = make_dataset(g, generate_dataset(g));
  ModelConfig mcfg = ModelConfig::from_dataset(ds, {true, true, true}, 6, 2);
  ParamStoreT<double> store = make_param_store<double>(mcfg);
  init_params(store, mcfg, 31);

  // Build cross-turn context first so the checked turn uses carry and log.
  DialogStateT<double> state;
  {
    GradTape<double> tape;
    ParamContext<double> pc(tape, store);
    forward_turn(pc, ds.records[0], 0, state, mcfg);
    state.detach_all();
  }
  const DialogStateT<double> frozen = state;
  const int target = mcfg.answer_id(ds.records[0].turns[0].answer);
  const double err = max_rel_err_params(
      [&](ParamContext<double>& pc) {
        DialogStateT<double> s = frozen;
        auto logits = forward_turn(pc, ds.records[0], 1, s, mcfg);
        return cross_entropy_logits(pc.tape(), logits, target);
      },
      store, 1e-5);
  CHECK(err <= 1e-4);
}
