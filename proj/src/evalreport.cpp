#include "cammac/evalreport.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>

namespace cammac {

BreakdownReport build_report(const std::vector<DialogRecord>& records, const Predictor& predict) {
  BreakdownReport rep;
  for (const auto& rec : records) {
    const std::vector<std::string> preds = predict(rec);
    if (preds.size() != rec.turns.size())
      throw AnalysisError("predictor returned " + std::to_string(preds.size()) + " answers for " +
                          std::to_string(rec.turns.size()) + " turns");
    for (std::size_t i = 0; i < rec.turns.size(); ++i) {
      const DialogTurn& turn = rec.turns[i];
      const bool ok = preds[i] == turn.answer;
      auto bump = [ok](BucketStat& b) {
        b.total++;
        if (ok) b.correct++;
      };
      bump(rep.overall);
      bump(rep.by_family[family_name(turn.family)]);
      bump(rep.by_template[turn.template_id]);
      bump(rep.by_turn[static_cast<int>(i) + 1]);
      bump(rep.by_coref[turn.coref_distance ? std::to_string(*turn.coref_distance) : "none"]);
    }
  }
  return rep;
}

namespace {

std::vector<std::string> predict_dialog(const ParamStoreT<float>& params, const ModelConfig& cfg,
                                        const DialogRecord& rec, TurnTrace* traces) {
  std::vector<std::string> out;
  DialogStateT<float> state;
  const int qturns = static_cast<int>(rec.turns.size());
  const int first = cfg.flags.context_aware() ? 0 : 1;
  for (int t = first; t <= qturns; ++t) {
    GradTape<float> tape;
    ParamContext<float> pc(tape, params);
    TensorT<float> logits = forward_turn(pc, rec, t, state, cfg, traces);
    state.detach_all();
    if (t == 0) continue;
    out.push_back(cfg.answer_vocab[argmax_index(std::span<const float>(logits.data))]);
  }
  return out;
}

}  // namespace

BreakdownReport evaluate_model(const ParamStoreT<float>& params, const ModelConfig& cfg,
                               const std::vector<DialogRecord>& records) {
  return build_report(records,
                      [&](const DialogRecord& rec) { return predict_dialog(params, cfg, rec, nullptr); });
}

std::vector<DialogAttentionSummary> summarize_attention(const ParamStoreT<float>& params,
                                                        const ModelConfig& cfg,
                                                        const std::vector<DialogRecord>& records) {
  if (!cfg.flags.caa)
    throw AnalysisError("attention analysis needs a caa-enabled checkpoint; this model has caa off");
  std::vector<DialogAttentionSummary> out;
  const int p = cfg.p;
  for (std::size_t di = 0; di < records.size(); ++di) {
    TurnTrace trace;
    predict_dialog(params, cfg, records[di], &trace);
    DialogAttentionSummary sum;
    sum.dialog_id = static_cast<int>(di);
    const int net_turns = static_cast<int>(records[di].turns.size()) + 1;
    sum.max_weight.assign(net_turns, {});
    for (int t = 0; t < net_turns; ++t) sum.max_weight[t].assign(t + 1, 0.0);
    for (const auto& rec : trace.records) {
      for (int s = 0; s <= rec.turn; ++s) {
        double best = 0.0;
        const int lo = s * p;
        const int hi = std::min<int>(static_cast<int>(rec.weights.size()), (s + 1) * p);
        for (int pos = lo; pos < hi; ++pos) best = std::max(best, rec.weights[pos]);
        auto& cell = sum.max_weight[rec.turn][s];
        cell = std::max(cell, best);
      }
    }
    out.push_back(std::move(sum));
  }
  return out;
}

namespace {

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::string>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw AnalysisError("cannot open '" + path + "' for writing");
  f << header << "\n";
  for (const auto& r : rows) f << r << "\n";
  if (!f) throw AnalysisError("write to '" + path + "' failed");
}

std::string stat_row(const std::string& key, const BucketStat& s) {
  std::ostringstream os;
  os << key << "," << std::fixed << std::setprecision(4) << s.accuracy() << "," << s.correct << ","
     << s.total;
  return os.str();
}

}  // namespace

void write_reports(const BreakdownReport& report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string head = "bucket,accuracy,correct,total";

  std::vector<std::string> rows = {stat_row("overall", report.overall)};
  for (const auto& [k, v] : report.by_family) rows.push_back(stat_row("family:" + k, v));
  write_csv((fs::path(out_dir) / "breakdown_overall.csv").string(), head, rows);

  rows.clear();
  for (const auto& [k, v] : report.by_template) rows.push_back(stat_row(k, v));
  write_csv((fs::path(out_dir) / "breakdown_template.csv").string(), head, rows);

  rows.clear();
  for (const auto& [k, v] : report.by_turn) rows.push_back(stat_row(std::to_string(k), v));
  write_csv((fs::path(out_dir) / "breakdown_turn.csv").string(), head, rows);

  rows.clear();
  for (const auto& [k, v] : report.by_coref) rows.push_back(stat_row(k, v));
  write_csv((fs::path(out_dir) / "breakdown_coref.csv").string(), head, rows);
}

void write_attention_csv(const std::vector<DialogAttentionSummary>& summaries, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw AnalysisError("cannot open '" + path + "' for writing");
  f << "dialog_id,t,s,weight\n";
  f << std::fixed << std::setprecision(4);
  std::map<std::pair<int, int>, std::pair<double, long long>> mean_acc;
  for (const auto& sum : summaries)
    for (int t = 0; t < static_cast<int>(sum.max_weight.size()); ++t)
      for (int s = 0; s <= t; ++s) {
        f << sum.dialog_id << "," << t << "," << s << "," << sum.max_weight[t][s] << "\n";
        auto& [acc, n] = mean_acc[{t, s}];
        acc += sum.max_weight[t][s];
        ++n;
      }
  // Mean matrix over all dialogs, keyed by dialog_id -1.
  for (const auto& [ts, acc_n] : mean_acc)
    f << -1 << "," << ts.first << "," << ts.second << "," << acc_n.first / acc_n.second << "\n";
  if (!f) throw AnalysisError("write to '" + path + "' failed");
}

}  // namespace cammac
