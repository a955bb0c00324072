#pragma once

// The p-step reasoning core: control, read and write units plus the output
// classifier. Attention distributions are exposed for analysis.

#include <vector>

#include "cammac/encoder.hpp"
#include "cammac/params.hpp"

namespace cammac {

namespace detail {

template <typename T>
void copy_weights(const TensorT<T>& attn, std::vector<double>* out) {
  if (!out) return;
  out->assign(attn.data.begin(), attn.data.end());
}

}  // namespace detail

// Step-specific transform of q, interaction with the previous control state,
// then attention over word states; the new control state is the attention-
// weighted sum of words.
template <typename T>
TensorT<T> control_step(ParamContext<T>& pc, const TensorT<T>& prev_c, const TensorT<T>& q,
                        const TensorT<T>& words, int k, const ModelConfig& cfg,
                        std::vector<double>* attn_out = nullptr) {
  if (k < 0 || k >= cfg.p) throw ShapeError("control step " + std::to_string(k) + " outside p=" + std::to_string(cfg.p));
  auto& tp = pc.tape();
  const std::string step = "ctrl.step" + std::to_string(k);
  TensorT<T> cq = linear(pc, q, step + ".w", step + ".b");
  TensorT<T> inter = linear(pc, concat_lastdim(tp, {cq, prev_c}), "ctrl.inter.w", "ctrl.inter.b");
  TensorT<T> scores = linear(pc, mul(tp, words, inter), "ctrl.attn.w", "ctrl.attn.b");  // [L,1]
  TensorT<T> attn = softmax_lastdim(tp, reshape(tp, scores, {1, words.shape[0]}));
  detail::copy_weights(attn, attn_out);
  return matmul(tp, attn, words);
}

// Two-stage interaction of memory with each knowledge-base cell, attention
// over cells, projected weighted sum.
template <typename T>
TensorT<T> read_step(ParamContext<T>& pc, const TensorT<T>& m, const TensorT<T>& c, const TensorT<T>& kb,
                     const ModelConfig& cfg, std::vector<double>* attn_out = nullptr) {
  if (kb.shape[0] != cfg.cells())
    throw ShapeError("knowledge base rows " + shape_str(kb.shape) + " do not match grid cells " +
                     std::to_string(cfg.cells()));
  auto& tp = pc.tape();
  TensorT<T> inter = linear(pc, mul(tp, kb, m), "read.inter.w", "read.inter.b");
  TensorT<T> combined = linear(pc, concat_lastdim(tp, {inter, kb}), "read.comb.w", "read.comb.b");
  TensorT<T> scores = linear(pc, mul(tp, combined, c), "read.attn.w", "read.attn.b");  // [cells,1]
  TensorT<T> attn = softmax_lastdim(tp, reshape(tp, scores, {1, kb.shape[0]}));
  detail::copy_weights(attn, attn_out);
  return linear(pc, matmul(tp, attn, kb), "read.proj.w", "read.proj.b");
}

template <typename T>
TensorT<T> write_step(ParamContext<T>& pc, const TensorT<T>& m_prev, const TensorT<T>& r) {
  return linear(pc, concat_lastdim(pc.tape(), {r, m_prev}), "write.w", "write.b");
}

// Two-layer feed-forward over [memory ; question] to answer logits.
template <typename T>
TensorT<T> output_answer(ParamContext<T>& pc, const TensorT<T>& m_final, const TensorT<T>& q) {
  auto& tp = pc.tape();
  TensorT<T> h = relu(tp, linear(pc, concat_lastdim(tp, {m_final, q}), "out.h.w", "out.h.b"));
  return linear(pc, h, "out.logits.w", "out.logits.b");
}

}  // namespace cammac
