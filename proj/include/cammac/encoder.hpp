#pragma once

// Input unit: symbolic scene featurizer plus a bidirectional GRU question
// encoder producing a whole-question vector and contextual word states.

#include <string>
#include <utility>
#include <vector>

#include "cammac/params.hpp"
#include "cammac/scene.hpp"

namespace cammac {

template <typename T>
struct QuestionEncodingT {
  TensorT<T> q;      // [1, d]
  TensorT<T> words;  // [L, d]
  int length = 0;
};

// One feature row per grid cell: sum of the four attribute embeddings plus a
// positional embedding for occupied cells, the learned empty embedding plus
// position otherwise.
template <typename T>
TensorT<T> embed_scene(ParamContext<T>& pc, const SceneGraph& scene, const ModelConfig& cfg) {
  if (scene.grid_h != cfg.grid_h || scene.grid_w != cfg.grid_w)
    throw ShapeError("scene grid " + std::to_string(scene.grid_h) + "x" + std::to_string(scene.grid_w) +
                     " does not match model grid " + std::to_string(cfg.grid_h) + "x" +
                     std::to_string(cfg.grid_w));
  const int cells = cfg.cells();
  std::vector<int> color_ids(cells, 0), shape_ids(cells, 0), size_ids(cells, 0), mat_ids(cells, 0);
  std::vector<int> pos_ids(cells), empty_ids(cells, 0);
  TensorT<T> occupied = TensorT<T>::zeros({cells, cfg.d});
  TensorT<T> vacant = TensorT<T>::full({cells, cfg.d}, T(1));
  for (int i = 0; i < cells; ++i) pos_ids[i] = i;
  for (const auto& o : scene.objects) {
    if (o.row < 0 || o.row >= cfg.grid_h || o.col < 0 || o.col >= cfg.grid_w)
      throw ShapeError("object cell (" + std::to_string(o.row) + "," + std::to_string(o.col) +
                       ") outside the grid");
    const int cell = o.row * cfg.grid_w + o.col;
    color_ids[cell] = static_cast<int>(o.color);
    shape_ids[cell] = static_cast<int>(o.shape);
    size_ids[cell] = static_cast<int>(o.size);
    mat_ids[cell] = static_cast<int>(o.material);
    for (int c = 0; c < cfg.d; ++c) {
      occupied.at(cell, c) = T(1);
      vacant.at(cell, c) = T(0);
    }
  }
  auto& tp = pc.tape();
  TensorT<T> attrs = add(tp, add(tp, embed_rows(tp, pc["emb.color"], color_ids),
                                 embed_rows(tp, pc["emb.shape"], shape_ids)),
                         add(tp, embed_rows(tp, pc["emb.size"], size_ids),
                             embed_rows(tp, pc["emb.material"], mat_ids)));
  TensorT<T> empty = embed_rows(tp, pc["emb.empty"], empty_ids);
  TensorT<T> content = add(tp, mul(tp, attrs, occupied), mul(tp, empty, vacant));
  return add(tp, content, embed_rows(tp, pc["emb.pos"], pos_ids));
}

namespace detail {

// Fused-gate GRU step: gi = x Wx + b, gh = h Wh,
// r = sig(gi_r + gh_r), z = sig(gi_z + gh_z), n = tanh(gi_n + r*gh_n),
// h' = (1-z)*n + z*h.
template <typename T>
TensorT<T> gru_step(ParamContext<T>& pc, const std::string& prefix, const TensorT<T>& x,
                    const TensorT<T>& h, int d) {
  auto& tp = pc.tape();
  TensorT<T> gi = add(tp, matmul(tp, x, pc[prefix + ".wx"]), pc[prefix + ".b"]);
  TensorT<T> gh = matmul(tp, h, pc[prefix + ".wh"]);
  TensorT<T> r = sigmoid(tp, add(tp, slice_cols(tp, gi, 0, d), slice_cols(tp, gh, 0, d)));
  TensorT<T> z = sigmoid(tp, add(tp, slice_cols(tp, gi, d, d), slice_cols(tp, gh, d, d)));
  TensorT<T> n = tanh_op(tp, add(tp, slice_cols(tp, gi, 2 * d, d),
                                 mul(tp, r, slice_cols(tp, gh, 2 * d, d))));
  TensorT<T> ones = TensorT<T>::full({1, d}, T(1));
  return add(tp, mul(tp, sub(tp, ones, z), n), mul(tp, z, h));
}

}  // namespace detail

template <typename T>
QuestionEncodingT<T> encode_question(ParamContext<T>& pc, const std::vector<std::string>& tokens,
                                     const ModelConfig& cfg) {
  if (tokens.empty()) throw ShapeError("cannot encode an empty token sequence");
  const std::vector<int> ids = cfg.token_ids(tokens);
  const int L = static_cast<int>(ids.size());
  const int d = cfg.d;
  auto& tp = pc.tape();
  TensorT<T> x = embed_rows(tp, pc["emb.token"], ids);

  std::vector<TensorT<T>> h_fwd(L), h_bwd(L);
  TensorT<T> h = TensorT<T>::zeros({1, d});
  for (int i = 0; i < L; ++i) {
    h = detail::gru_step(pc, "gru.fwd", slice_rows(tp, x, i, 1), h, d);
    h_fwd[i] = h;
  }
  h = TensorT<T>::zeros({1, d});
  for (int i = L - 1; i >= 0; --i) {
    h = detail::gru_step(pc, "gru.bwd", slice_rows(tp, x, i, 1), h, d);
    h_bwd[i] = h;
  }

  TensorT<T> both = concat_lastdim(tp, {stack_rows(tp, std::span<const TensorT<T>>(h_fwd)),
                                        stack_rows(tp, std::span<const TensorT<T>>(h_bwd))});
  QuestionEncodingT<T> enc;
  enc.words = linear(pc, both, "enc.words.w", "enc.words.b");
  enc.q = linear(pc, concat_lastdim(tp, {h_fwd[L - 1], h_bwd[0]}), "enc.q.w", "enc.q.b");
  enc.length = L;
  return enc;
}

// History pairs for the CQ variant: earlier question token lists with their
// single-token answers.
using HistoryPair = std::pair<std::vector<std::string>, std::string>;

// Token sequence [caption, q1, a1, ..., q_{t-1}, a_{t-1}, <sep>, current].
// Over-length input drops the oldest history items first (caption, then turn
// pairs); the current question is never truncated.
template <typename T>
QuestionEncodingT<T> encode_history_concat(ParamContext<T>& pc, const std::vector<std::string>& caption,
                                           const std::vector<HistoryPair>& history,
                                           const std::vector<std::string>& current, const ModelConfig& cfg) {
  std::vector<std::vector<std::string>> items;
  if (!caption.empty()) items.push_back(caption);
  for (const auto& [q, a] : history) {
    std::vector<std::string> turn = q;
    turn.push_back(a);
    items.push_back(std::move(turn));
  }

  auto total_len = [&](std::size_t first_item) {
    std::size_t n = current.size();
    bool any = false;
    for (std::size_t i = first_item; i < items.size(); ++i) {
      n += items[i].size();
      any = true;
    }
    if (any) ++n;  // separator
    return n;
  };
  std::size_t first = 0;
  while (first < items.size() && total_len(first) > static_cast<std::size_t>(cfg.max_concat_tokens)) ++first;

  std::vector<std::string> seq;
  for (std::size_t i = first; i < items.size(); ++i)
    seq.insert(seq.end(), items[i].begin(), items[i].end());
  if (!seq.empty()) seq.push_back(kSepToken);
  seq.insert(seq.end(), current.begin(), current.end());
  return encode_question(pc, seq, cfg);
}

}  // namespace cammac
