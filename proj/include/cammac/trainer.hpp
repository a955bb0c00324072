#pragma once

// Training protocol: cross-entropy on answer logits, Adam, gradient-norm
// clipping, early stopping on validation accuracy. Context-aware runs feed
// one dialog turn at a time; history-agnostic runs sample independent turns.

#include <map>
#include <string>
#include <vector>

#include "cammac/model.hpp"
#include "cammac/params.hpp"

namespace cammac {

class TrainError : public std::runtime_error {
 public:
  explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
  double learning_rate = 2e-4;
  int p = 8;  // reasoning steps; the desk preset runs 4
  int d = 64;
  int batch_dialogs = 12;   // context-aware regime: dialogs per step
  int batch_turns = 128;    // history-agnostic regime: turns per step
  int max_epochs = 25;
  int early_stop_patience = 5;
  double clip_norm = 8.0;
  int max_concat_tokens = 160;
  std::uint64_t seed = 0;
  ModelFlags flags;
  // Optional hard cap on optimizer steps (0 = none); epochs stop mid-way
  // once reached. Used by the overfit sanity preset.
  long long max_steps = 0;

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct Checkpoint {
  std::map<std::string, TensorT<float>> tensors;  // parameters plus adam.m.* / adam.v.*
  TrainConfig train_config;
  ModelConfig model_config;
  int epoch = 0;
  double val_accuracy = 0.0;
  std::vector<EpochMetrics> metrics;
  std::string rng_state;
  long long adam_step = 0;

  ParamStoreT<float> param_store() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double clip_norm) : lr_(lr), clip_(clip_norm) {}

  // Applies one update; grads must cover every parameter in the store.
  void step(ParamStoreT<float>& params, const std::map<std::string, std::vector<float>>& grads);

  long long step_count() const { return t_; }
  std::map<std::string, std::vector<float>>& moment1() { return m_; }
  std::map<std::string, std::vector<float>>& moment2() { return v_; }
  const std::map<std::string, std::vector<float>>& moment1() const { return m_; }
  const std::map<std::string, std::vector<float>>& moment2() const { return v_; }
  void set_step_count(long long t) { t_ = t; }

 private:
  double lr_;
  double clip_;
  long long t_ = 0;
  std::map<std::string, std::vector<float>> m_, v_;
};

struct TrainResult {
  Checkpoint best;         // highest validation accuracy seen
  Checkpoint last;         // state at the end of training, resumable
  std::vector<EpochMetrics> metrics;
  long long steps_taken = 0;
};

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                  const Checkpoint* resume = nullptr);

// Overall answer accuracy of a parameter snapshot on a record set.
double model_accuracy(const ParamStoreT<float>& params, const ModelConfig& cfg,
                      const std::vector<DialogRecord>& records);

}  // namespace cammac
