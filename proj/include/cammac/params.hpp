#pragma once

// Named parameter tensors and their binding onto a gradient tape.

#include <map>
#include <string>

#include "cammac/model_config.hpp"
#include "cammac/rng.hpp"
#include "cammac/tensor.hpp"

namespace cammac {

template <typename T>
struct ParamStoreT {
  std::map<std::string, TensorT<T>> tensors;

  TensorT<T>& def(const std::string& name, std::vector<int> shape) {
    auto [it, fresh] = tensors.emplace(name, TensorT<T>::zeros(std::move(shape)));
    if (!fresh) throw TensorError("parameter '" + name + "' defined twice");
    return it->second;
  }

  TensorT<T>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw TensorError("unknown parameter '" + name + "'");
    return it->second;
  }
  const TensorT<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw TensorError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : tensors) n += v.size();
    return n;
  }
};

// Defines every tensor the configured model uses. CAA is the only flag that
// adds parameters; the vocabulary always contains answers and the separator,
// so CQ and MTM change nothing structurally.
template <typename T>
ParamStoreT<T> make_param_store(const ModelConfig& cfg) {
  ParamStoreT<T> ps;
  const int d = cfg.d;
  ps.def("emb.color", {kNumColors, d});
  ps.def("emb.shape", {kNumShapes, d});
  ps.def("emb.size", {kNumSizes, d});
  ps.def("emb.material", {kNumMaterials, d});
  ps.def("emb.empty", {1, d});
  ps.def("emb.pos", {cfg.cells(), d});
  ps.def("emb.token", {cfg.vocab_size(), d});

  for (const char* dir : {"fwd", "bwd"}) {
    ps.def(std::string("gru.") + dir + ".wx", {d, 3 * d});
    ps.def(std::string("gru.") + dir + ".wh", {d, 3 * d});
    ps.def(std::string("gru.") + dir + ".b", {1, 3 * d});
  }
  ps.def("enc.words.w", {2 * d, d});
  ps.def("enc.words.b", {1, d});
  ps.def("enc.q.w", {2 * d, d});
  ps.def("enc.q.b", {1, d});

  for (int k = 0; k < cfg.p; ++k) {
    ps.def("ctrl.step" + std::to_string(k) + ".w", {d, d});
    ps.def("ctrl.step" + std::to_string(k) + ".b", {1, d});
  }
  ps.def("ctrl.inter.w", {2 * d, d});
  ps.def("ctrl.inter.b", {1, d});
  ps.def("ctrl.attn.w", {d, 1});
  ps.def("ctrl.attn.b", {1, 1});

  ps.def("read.inter.w", {d, d});
  ps.def("read.inter.b", {1, d});
  ps.def("read.comb.w", {2 * d, d});
  ps.def("read.comb.b", {1, d});
  ps.def("read.attn.w", {d, 1});
  ps.def("read.attn.b", {1, 1});
  ps.def("read.proj.w", {d, d});
  ps.def("read.proj.b", {1, d});

  ps.def("write.w", {2 * d, d});
  ps.def("write.b", {1, d});

  ps.def("out.h.w", {2 * d, d});
  ps.def("out.h.b", {1, d});
  ps.def("out.logits.w", {d, cfg.answer_size()});
  ps.def("out.logits.b", {1, cfg.answer_size()});

  if (cfg.flags.caa) {
    ps.def("caa.key_a.w", {d, d});
    ps.def("caa.key_b.w", {d, d});
    ps.def("caa.fusion.wr", {4 * d, d});
    ps.def("caa.fusion.br", {1, d});
    ps.def("caa.fusion.wg", {4 * d, d});
    ps.def("caa.fusion.bg", {1, d});
  }
  return ps;
}

// Weights uniform in +-sqrt(6/(fan_in+fan_out)), biases zero, embedding
// tables normal(0, 1/sqrt(d)). Map order makes initialization seed-stable.
template <typename T>
void init_params(ParamStoreT<T>& ps, const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(splitmix64(seed ^ 0x706172616d73ull));
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  for (auto& [name, t] : ps.tensors) {
    const bool is_bias = name.ends_with(".b") || name.ends_with(".br") || name.ends_with(".bg");
    if (is_bias) continue;  // already zero
    if (name.starts_with("emb.")) {
      for (auto& v : t.data) v = static_cast<T>(emb_std * rng.normal());
    } else {
      const double limit = std::sqrt(6.0 / (t.shape[0] + t.shape[1]));
      for (auto& v : t.data) v = static_cast<T>(rng.uniform_real(-limit, limit));
    }
  }
}

// Binds a store to one tape for one forward pass; each parameter becomes a
// single tape leaf no matter how many times it is read.
template <typename T>
class ParamContext {
 public:
  ParamContext(GradTape<T>& tape, const ParamStoreT<T>& store) : tape_(&tape), store_(&store) {}

  const TensorT<T>& operator[](const std::string& name) {
    auto it = watched_.find(name);
    if (it != watched_.end()) return it->second;
    auto [ins, _] = watched_.emplace(name, tape_->leaf(store_->at(name)));
    // Map nodes never move and this context outlives the tape's backward
    // pass, so ops may capture pointers into these leaves.
    ins->second.stable_storage = true;
    return ins->second;
  }

  GradTape<T>& tape() { return *tape_; }

  // Leaf node handles for every parameter touched by the forward pass.
  const std::map<std::string, TensorT<T>>& watched() const { return watched_; }

 private:
  GradTape<T>* tape_;
  const ParamStoreT<T>* store_;
  std::map<std::string, TensorT<T>> watched_;
};

// y = x W + b with b broadcast over rows.
template <typename T>
TensorT<T> linear(ParamContext<T>& pc, const TensorT<T>& x, const std::string& w, const std::string& b) {
  return add(pc.tape(), matmul(pc.tape(), x, pc[w]), pc[b]);
}

}  // namespace cammac
