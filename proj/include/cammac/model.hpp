#pragma once

// One-turn forward pass over a dialog record. Turn 0 is the caption; the
// i-th question is turn i+1.

#include "cammac/cam.hpp"
#include "cammac/dialog.hpp"

namespace cammac {

template <typename T>
TensorT<T> forward_turn(ParamContext<T>& pc, const DialogRecord& rec, int net_turn,
                        DialogStateT<T>& state, const ModelConfig& cfg, TurnTrace* trace = nullptr) {
  const int total_turns = static_cast<int>(rec.turns.size()) + 1;
  if (net_turn < 0 || net_turn >= total_turns)
    throw ShapeError("turn " + std::to_string(net_turn) + " outside dialog of " +
                     std::to_string(total_turns) + " turns");
  TensorT<T> kb = embed_scene(pc, rec.scene, cfg);
  const std::vector<std::string>& current = net_turn == 0 ? rec.caption : rec.turns[net_turn - 1].text;

  QuestionEncodingT<T> qenc;
  if (cfg.flags.cq) {
    std::vector<HistoryPair> history;
    for (int i = 0; i + 1 < net_turn; ++i) history.push_back({rec.turns[i].text, rec.turns[i].answer});
    qenc = encode_history_concat(pc, net_turn == 0 ? std::vector<std::string>{} : rec.caption, history,
                                 current, cfg);
  } else {
    qenc = encode_question(pc, current, cfg);
  }
  return run_turn(pc, state, kb, qenc, cfg, trace).logits;
}

inline int argmax_index(std::span<const float> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace cammac
