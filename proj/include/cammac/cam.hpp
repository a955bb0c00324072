#pragma once

// Context-aware attention over past control states and the multi-turn memory
// carry, plus the per-turn driver that wires the whole cell together.

#include <cmath>
#include <optional>
#include <vector>

#include "cammac/maccell.hpp"

namespace cammac {

// Cross-turn carryover for one dialog. During training the carried tensors
// stay attached to the batch tape so later turns' losses reach earlier
// turns' computation; detach_all() severs that (evaluation processes turns
// on fresh tapes). A state holding live tensors is bound to one tape.
template <typename T>
struct DialogStateT {
  std::vector<TensorT<T>> control_log;  // raw (pre-attention) control states, turn-major
  TensorT<T> carry_memory;              // final memory of the previous turn; empty before turn 1
  int turn_index = 0;
  std::uint64_t tape_id = 0;            // tape the live tensors belong to

  void detach_all() {
    for (auto& c : control_log) {
      c.node = -1;
      c.stable_storage = false;
    }
    carry_memory.node = -1;
    carry_memory.stable_storage = false;
    tape_id = 0;
  }

  bool has_live_tensors() const {
    if (carry_memory.node >= 0) return true;
    for (const auto& c : control_log)
      if (c.node >= 0) return true;
    return false;
  }
};

struct AttentionRecord {
  int turn = 0;
  int step = 0;
  std::vector<double> weights;  // over log positions 0..turn*p+step, sums to 1
};

// Per-turn instrumentation. full_attention holds the complete causal matrix
// the step computed (n x n, row-major); analysis uses records, invariant
// checks use the matrices.
struct TurnTrace {
  std::vector<AttentionRecord> records;
  std::vector<std::vector<double>> full_attention;
  std::vector<int> full_n;
  std::vector<std::vector<double>> word_attention;
  std::vector<std::vector<double>> cell_attention;
};

// Gated merge of the unattended control x with the attended control y:
// z = [x ; y ; x*y ; x-y], xt = relu(Wr z + br), g = sig(Wg z + bg),
// out = g*xt + (1-g)*x.
template <typename T>
TensorT<T> fusion(ParamContext<T>& pc, const TensorT<T>& x, const TensorT<T>& y) {
  auto& tp = pc.tape();
  TensorT<T> z = concat_lastdim(tp, {x, y, mul(tp, x, y), sub(tp, x, y)});
  TensorT<T> xt = relu(tp, linear(pc, z, "caa.fusion.wr", "caa.fusion.br"));
  TensorT<T> g = sigmoid(tp, linear(pc, z, "caa.fusion.wg", "caa.fusion.bg"));
  TensorT<T> ones = TensorT<T>::full({1, x.cols()}, T(1));
  return add(tp, mul(tp, g, xt), mul(tp, sub(tp, ones, g), x));
}

// Zero vector on the first turn or when the carry is disabled; otherwise the
// previous turn's final memory (still tape-attached during training).
template <typename T>
TensorT<T> init_turn_memory(const DialogStateT<T>& state, bool mtm_enabled, int d) {
  if (state.turn_index == 0 || !mtm_enabled || state.carry_memory.data.empty())
    return TensorT<T>::zeros({1, d});
  return state.carry_memory;
}

// Causal self-attention over every control state so far (entries covers the
// whole log including the current raw state at self_pos). Two distinct key
// projections form the scores; values are the unprojected states.
template <typename T>
TensorT<T> context_attend(ParamContext<T>& pc, const TensorT<T>& raw,
                          const std::vector<TensorT<T>>& entries, int self_pos, const ModelConfig& cfg,
                          AttentionRecord* record = nullptr, std::vector<double>* full_matrix = nullptr) {
  auto& tp = pc.tape();
  const int n = static_cast<int>(entries.size());
  TensorT<T> C = stack_rows(tp, std::span<const TensorT<T>>(entries));
  TensorT<T> keys_a = matmul(tp, C, pc["caa.key_a.w"]);
  TensorT<T> keys_b = matmul(tp, C, pc["caa.key_b.w"]);
  TensorT<T> energy = scale(tp, matmul(tp, keys_a, transpose2d(tp, keys_b)),
                            static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.d))));
  TensorT<T> attn = softmax_lastdim(tp, causal_mask(tp, energy));
  if (full_matrix) full_matrix->assign(attn.data.begin(), attn.data.end());
  if (record) {
    record->weights.assign(attn.data.begin() + static_cast<std::size_t>(self_pos) * n,
                           attn.data.begin() + (static_cast<std::size_t>(self_pos) + 1) * n);
  }
  TensorT<T> attended = slice_rows(tp, matmul(tp, attn, C), self_pos, 1);
  return fusion(pc, raw, attended);
}

template <typename T>
struct TurnResult {
  TensorT<T> logits;
};

// Runs one dialog turn: p control/read/write triples with optional context
// attention and memory carry, then the answer head. Appends exactly p raw
// control states to the log whether or not CAA reads them.
template <typename T>
TurnResult<T> run_turn(ParamContext<T>& pc, DialogStateT<T>& state, const TensorT<T>& kb,
                       const QuestionEncodingT<T>& qenc, const ModelConfig& cfg,
                       TurnTrace* trace = nullptr) {
  const int d = cfg.d;
  const int t = state.turn_index;
  if (state.has_live_tensors() && state.tape_id != pc.tape().id())
    throw TensorError("dialog state holds tensors from another tape; call detach_all() first");

  TensorT<T> m = init_turn_memory(state, cfg.flags.mtm, d);
  TensorT<T> prev_c = TensorT<T>::zeros({1, d});
  std::vector<TensorT<T>> entries;
  if (cfg.flags.caa) {
    entries.reserve(state.control_log.size() + cfg.p);
    for (const auto& past : state.control_log) entries.push_back(past);
  }
  std::vector<TensorT<T>> new_log;
  new_log.reserve(cfg.p);

  for (int k = 0; k < cfg.p; ++k) {
    std::vector<double>* wattn = nullptr;
    std::vector<double>* cattn = nullptr;
    if (trace) {
      trace->word_attention.emplace_back();
      trace->cell_attention.emplace_back();
      wattn = &trace->word_attention.back();
      cattn = &trace->cell_attention.back();
    }
    TensorT<T> raw = control_step(pc, prev_c, qenc.q, qenc.words, k, cfg, wattn);
    new_log.push_back(raw);
    TensorT<T> c = raw;
    if (cfg.flags.caa) {
      entries.push_back(raw);
      AttentionRecord rec;
      rec.turn = t;
      rec.step = k;
      std::vector<double>* full = nullptr;
      if (trace) {
        trace->full_attention.emplace_back();
        full = &trace->full_attention.back();
        trace->full_n.push_back(static_cast<int>(entries.size()));
      }
      c = context_attend(pc, raw, entries, static_cast<int>(entries.size()) - 1, cfg,
                         trace ? &rec : nullptr, full);
      if (trace) trace->records.push_back(std::move(rec));
    }
    TensorT<T> r = read_step(pc, m, c, kb, cfg, cattn);
    m = write_step(pc, m, r);
    prev_c = c;
  }

  TurnResult<T> out{output_answer(pc, m, qenc.q)};

  for (auto& v : new_log) state.control_log.push_back(std::move(v));
  state.carry_memory = m;
  state.turn_index += 1;
  state.tape_id = pc.tape().id();
  return out;
}

}  // namespace cammac
