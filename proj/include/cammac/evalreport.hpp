#pragma once

// Accuracy breakdowns and control-attention analysis over a record set.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cammac/model.hpp"
#include "cammac/trainer.hpp"

namespace cammac {

class AnalysisError : public std::runtime_error {
 public:
  explicit AnalysisError(const std::string& msg) : std::runtime_error(msg) {}
};

struct BucketStat {
  long long correct = 0;
  long long total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct BreakdownReport {
  BucketStat overall;
  std::map<std::string, BucketStat> by_family;
  std::map<std::string, BucketStat> by_template;
  std::map<int, BucketStat> by_turn;           // question turn index, 1-based (caption = 0)
  std::map<std::string, BucketStat> by_coref;  // "none" or the decimal distance
};

// Predictor maps a dialog to one predicted answer per question turn.
using Predictor = std::function<std::vector<std::string>(const DialogRecord&)>;

BreakdownReport build_report(const std::vector<DialogRecord>& records, const Predictor& predict);

BreakdownReport evaluate_model(const ParamStoreT<float>& params, const ModelConfig& cfg,
                               const std::vector<DialogRecord>& records);

// Per-dialog turn-by-turn attention summary: entry [t][s] is the maximum
// attention weight between any control state of turn t and any of turn s,
// s <= t, turns counted with the caption as 0.
struct DialogAttentionSummary {
  int dialog_id = 0;
  std::vector<std::vector<double>> max_weight;
};

std::vector<DialogAttentionSummary> summarize_attention(const ParamStoreT<float>& params,
                                                        const ModelConfig& cfg,
                                                        const std::vector<DialogRecord>& records);

// CSV outputs, one file per breakdown axis, 4 decimal places, stable order.
void write_reports(const BreakdownReport& report, const std::string& out_dir);
void write_attention_csv(const std::vector<DialogAttentionSummary>& summaries, const std::string& path);

}  // namespace cammac
