#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cammac/evalreport.hpp"
#include "test_helpers.hpp"

using namespace cammac;
using cammac::testutil::ModelFixture;
using cammac::testutil::tiny_dataset;

namespace {

std::string majority_answer(const std::vector<DialogRecord>& records) {
  std::map<std::string, int> counts;
  for (const auto& r : records)
    for (const auto& t : r.turns) counts[t.answer]++;
  std::string best;
  int best_n = -1;
  for (const auto& [a, n] : counts)
    if (n > best_n) {
      best = a;
      best_n = n;
    }
  return best;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& name) : path("/tmp/cammac_eval_" + name) {
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("a constant majority-answer predictor scores the majority frequency") {
  const Dataset ds = tiny_dataset(41, 40);
  const std::string majority = majority_answer(ds.records);
  long long hits = 0, total = 0;
  for (const auto& r : ds.records)
    for (const auto& t : r.turns) {
      hits += t.answer == majority;
      ++total;
    }
  BreakdownReport rep = build_report(ds.records, [&](const DialogRecord& r) {
    return std::vector<std::string>(r.turns.size(), majority);
  });
  CHECK(rep.overall.accuracy() == doctest::Approx(static_cast<double>(hits) / total));
}

TEST_CASE("a constant-output model scores exactly its answer's frequency") {
  const Dataset ds = tiny_dataset(42, 20);
  ModelFixture<float> fx(ds, {});
  // Zero every parameter, then bias the output head toward one answer.
  for (auto& [name, t] : fx.params.tensors)
    for (auto& v : t.data) v = 0.0f;
  const std::string majority = majority_answer(ds.records);
  fx.params.at("out.logits.b").data[fx.cfg.answer_id(majority)] = 5.0f;

  long long hits = 0, total = 0;
  for (const auto& r : ds.records)
    for (const auto& t : r.turns) {
      hits += t.answer == majority;
      ++total;
    }
  BreakdownReport rep = evaluate_model(fx.params, fx.cfg, ds.records);
  CHECK(rep.overall.correct == hits);
  CHECK(rep.overall.total == total);
}

TEST_CASE("an oracle predictor is perfect in every bucket") {
  const Dataset ds = tiny_dataset(43, 30);
  BreakdownReport rep = build_report(ds.records, [&](const DialogRecord& r) {
    std::vector<std::string> out;
    for (const auto& t : r.turns) out.push_back(oracle_answer(r.scene, t.template_id, t.bindings));
    return out;
  });
  CHECK(rep.overall.accuracy() == 1.0);
  for (const auto& [k, v] : rep.by_family) CHECK(v.accuracy() == 1.0);
  for (const auto& [k, v] : rep.by_template) CHECK(v.accuracy() == 1.0);
  for (const auto& [k, v] : rep.by_turn) CHECK(v.accuracy() == 1.0);
  for (const auto& [k, v] : rep.by_coref) CHECK(v.accuracy() == 1.0);
}

TEST_CASE("bucket partitions stay consistent with the overall counts") {
  const Dataset ds = tiny_dataset(44, 30);
  // Deterministic but imperfect predictor.
  ModelFixture<float> fx(ds, {false, true, true});
  BreakdownReport rep = evaluate_model(fx.params, fx.cfg, ds.records);
  auto check_partition = [&](const auto& buckets) {
    long long correct = 0, total = 0;
    for (const auto& [k, v] : buckets) {
      correct += v.correct;
      total += v.total;
      CHECK(v.total > 0);
    }
    CHECK(correct == rep.overall.correct);
    CHECK(total == rep.overall.total);
  };
  check_partition(rep.by_family);
  check_partition(rep.by_template);
  check_partition(rep.by_turn);
  check_partition(rep.by_coref);
}

TEST_CASE("evaluation is repeatable with no side effects") {
  const Dataset ds = tiny_dataset(45, 8);
  ModelFixture<float> fx(ds, {false, true, true});
  BreakdownReport a = evaluate_model(fx.params, fx.cfg, ds.records);
  BreakdownReport b = evaluate_model(fx.params, fx.cfg, ds.records);
  CHECK(a.overall.correct == b.overall.correct);
  CHECK(a.by_turn.size() == b.by_turn.size());
  for (const auto& [k, v] : a.by_turn) CHECK(b.by_turn.at(k).correct == v.correct);
}

TEST_CASE("CSV reports round-trip and omit empty buckets") {
  GenConfig g = cammac::testutil::tiny_gen(46, 25);
  // Disable every exist template so that family bucket must be absent.
  for (const auto& t : template_inventory())
    if (t.family == Family::Exist) g.template_weights[t.id] = 0.0;
  Dataset ds = make_dataset(g, generate_dataset(g));
  BreakdownReport rep = build_report(ds.records, [&](const DialogRecord& r) {
    std::vector<std::string> out;
    for (const auto& t : r.turns) out.push_back(oracle_answer(r.scene, t.template_id, t.bindings));
    return out;
  });
  CHECK(rep.by_family.count("exist") == 0);

  TempDir dir("csv");
  write_reports(rep, dir.path);
  const auto overall = parse_csv(dir.path + "/breakdown_overall.csv");
  REQUIRE(overall.size() >= 2);
  CHECK(overall[0] == std::vector<std::string>{"bucket", "accuracy", "correct", "total"});
  for (std::size_t i = 1; i < overall.size(); ++i) CHECK(overall[i][0] != "family:exist");

  const auto turn = parse_csv(dir.path + "/breakdown_turn.csv");
  CHECK(turn.size() == 1 + g.turns);  // header + one row per question turn

  // Parse back and compare against the report, 4 decimal places.
  for (std::size_t i = 1; i < turn.size(); ++i) {
    const int t = std::stoi(turn[i][0]);
    std::ostringstream want;
    want << std::fixed << std::setprecision(4) << rep.by_turn.at(t).accuracy();
    CHECK(turn[i][1] == want.str());
    CHECK(std::stoll(turn[i][2]) == rep.by_turn.at(t).correct);
    CHECK(std::stoll(turn[i][3]) == rep.by_turn.at(t).total);
  }
}

TEST_CASE("attention summaries are triangular, bounded, and need caa") {
  const Dataset ds = tiny_dataset(47, 6);
  ModelFixture<float> vanilla(ds, {});
  CHECK_THROWS_AS(summarize_attention(vanilla.params, vanilla.cfg, ds.records), AnalysisError);

  ModelFixture<float> fx(ds, {false, true, true});
  const auto summaries = summarize_attention(fx.params, fx.cfg, ds.records);
  REQUIRE(summaries.size() == ds.records.size());
  for (const auto& s : summaries) {
    REQUIRE(s.max_weight.size() == ds.records[0].turns.size() + 1);
    CHECK(s.max_weight[0].size() == 1);  // caption row: self-attention only
    CHECK(s.max_weight[0][0] > 0.0);
    for (std::size_t t = 0; t < s.max_weight.size(); ++t) {
      CHECK(s.max_weight[t].size() == t + 1);
      for (double w : s.max_weight[t]) {
        CHECK(w >= 0.0);
        CHECK(w <= 1.0);
      }
    }
  }

  TempDir dir("attn");
  std::filesystem::create_directories(dir.path);
  const std::string path = dir.path + "/attention_summary.csv";
  write_attention_csv(summaries, path);
  const auto rows = parse_csv(path);
  CHECK(rows[0] == std::vector<std::string>{"dialog_id", "t", "s", "weight"});
  bool has_mean = false;
  for (std::size_t i = 1; i < rows.size(); ++i) has_mean |= rows[i][0] == "-1";
  CHECK(has_mean);
}
