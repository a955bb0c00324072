#include "cammac/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace cammac {

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw TrainError("learning rate must be positive");
  if (p < 1 || d < 1) throw TrainError("p and d must be positive");
  if (batch_dialogs < 1 || batch_turns < 1) throw TrainError("batch sizes must be positive");
  if (max_epochs < 1) throw TrainError("max_epochs must be positive");
  if (early_stop_patience < 1 || early_stop_patience > max_epochs)
    throw TrainError("early stop patience must be in [1, max_epochs]");
  if (clip_norm <= 0) throw TrainError("clip norm must be positive");
}

void AdamOptimizer::step(ParamStoreT<float>& params, const std::map<std::string, std::vector<float>>& grads) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  double sq = 0.0;
  for (const auto& [name, p] : params.tensors) {
    auto it = grads.find(name);
    if (it == grads.end()) throw TrainError("missing gradient for parameter '" + name + "'");
    if (it->second.size() != p.size()) throw TrainError("gradient shape mismatch for '" + name + "'");
    for (float g : it->second) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  const double scale = norm > clip_ ? clip_ / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (auto& [name, p] : params.tensors) {
    const auto& g = grads.at(name);
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.size() != p.size()) m.assign(p.size(), 0.0f);
    if (v.size() != p.size()) v.assign(p.size(), 0.0f);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]) * scale;
      m[i] = static_cast<float>(kBeta1 * m[i] + (1.0 - kBeta1) * gi);
      v[i] = static_cast<float>(kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.data[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + kEps));
    }
  }
}

namespace {

using F = float;

std::map<std::string, std::vector<float>> collect_grads(GradTape<F>& tape, ParamContext<F>& pc,
                                                        const ParamStoreT<F>& params) {
  std::map<std::string, std::vector<float>> grads;
  for (const auto& [name, leafy] : pc.watched()) grads[name] = tape.grad(leafy.node);
  // Parameters never touched by this step's forward get zero gradients.
  for (const auto& [name, p] : params.tensors)
    if (!grads.count(name)) grads[name] = std::vector<float>(p.size(), 0.0f);
  return grads;
}

int question_turns(const std::vector<DialogRecord>& records) {
  const int t = static_cast<int>(records.front().turns.size());
  for (const auto& r : records)
    if (static_cast<int>(r.turns.size()) != t) throw TrainError("dialogs differ in turn count");
  return t;
}

}  // namespace

double model_accuracy(const ParamStoreT<float>& params, const ModelConfig& cfg,
                      const std::vector<DialogRecord>& records) {
  long long correct = 0, total = 0;
  for (const auto& rec : records) {
    DialogStateT<F> state;
    const int qturns = static_cast<int>(rec.turns.size());
    const int first = cfg.flags.context_aware() ? 0 : 1;
    for (int t = first; t <= qturns; ++t) {
      GradTape<F> tape;
      ParamContext<F> pc(tape, params);
      TensorT<F> logits = forward_turn(pc, rec, t, state, cfg);
      state.detach_all();  // evaluation never backpropagates across turns
      if (t == 0) continue;  // caption populates state, answers nothing
      const int pred = argmax_index(std::span<const float>(logits.data));
      correct += cfg.answer_vocab[pred] == rec.turns[t - 1].answer ? 1 : 0;
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

namespace {

struct TrainLoop {
  const TrainConfig& cfg;
  const Dataset& train_set;
  const Dataset& val_set;
  ModelConfig mcfg;
  ParamStoreT<F> params;
  AdamOptimizer adam;
  Rng rng;
  std::vector<EpochMetrics> metrics;
  long long steps = 0;
  double loss_sum = 0.0;
  long long loss_count = 0;

  TrainLoop(const TrainConfig& c, const Dataset& tr, const Dataset& va)
      : cfg(c), train_set(tr), val_set(va), adam(c.learning_rate, c.clip_norm), rng(c.seed) {}

  bool step_budget_spent() const { return cfg.max_steps > 0 && steps >= cfg.max_steps; }

  void apply(GradTape<F>& tape, ParamContext<F>& pc, const TensorT<F>& loss) {
    tape.backward(loss);
    adam.step(params, collect_grads(tape, pc, params));
    ++steps;
  }

  // One dialog turn at a time across a batch of dialogs, carrying state on a
  // single tape so every turn's loss backpropagates through earlier turns'
  // memory and control log. One optimizer step per batch.
  void epoch_context_aware(std::vector<int>& order) {
    const int qturns = question_turns(train_set.records);
    for (std::size_t base = 0; base < order.size(); base += cfg.batch_dialogs) {
      if (step_budget_spent()) return;
      const std::size_t end = std::min(order.size(), base + cfg.batch_dialogs);
      std::vector<DialogStateT<F>> states(end - base);
      GradTape<F> tape;
      ParamContext<F> pc(tape, params);
      TensorT<F> loss;
      int n = 0;
      for (int t = 0; t <= qturns; ++t) {
        for (std::size_t i = base; i < end; ++i) {
          const DialogRecord& rec = train_set.records[order[i]];
          TensorT<F> logits = forward_turn(pc, rec, t, states[i - base], mcfg);
          if (t == 0) continue;  // the caption populates state, contributes no loss
          TensorT<F> ce = cross_entropy_logits(tape, logits, mcfg.answer_id(rec.turns[t - 1].answer));
          loss = n == 0 ? ce : add(tape, loss, ce);
          ++n;
        }
      }
      loss = scale(tape, loss, F(1.0 / n));
      loss_sum += loss.data[0];
      ++loss_count;
      apply(tape, pc, loss);
    }
  }

  // Independent random turns, fresh state per sample.
  void epoch_history_agnostic(std::vector<std::pair<int, int>>& samples) {
    for (std::size_t base = 0; base < samples.size(); base += cfg.batch_turns) {
      if (step_budget_spent()) return;
      const std::size_t end = std::min(samples.size(), base + cfg.batch_turns);
      GradTape<F> tape;
      ParamContext<F> pc(tape, params);
      TensorT<F> loss;
      int n = 0;
      for (std::size_t i = base; i < end; ++i) {
        const auto& [di, qi] = samples[i];
        const DialogRecord& rec = train_set.records[di];
        DialogStateT<F> state;
        TensorT<F> logits = forward_turn(pc, rec, qi + 1, state, mcfg);
        TensorT<F> ce = cross_entropy_logits(tape, logits, mcfg.answer_id(rec.turns[qi].answer));
        loss = n == 0 ? ce : add(tape, loss, ce);
        ++n;
      }
      loss = scale(tape, loss, F(1.0 / n));
      loss_sum += loss.data[0];
      ++loss_count;
      apply(tape, pc, loss);
    }
  }
};

Checkpoint snapshot(const TrainLoop& loop, int epoch, double val_acc) {
  Checkpoint c;
  c.tensors = loop.params.tensors;
  for (const auto& [name, m] : loop.adam.moment1())
    c.tensors["adam.m." + name] = TensorT<float>({static_cast<int>(m.size())}, m);
  for (const auto& [name, v] : loop.adam.moment2())
    c.tensors["adam.v." + name] = TensorT<float>({static_cast<int>(v.size())}, v);
  c.train_config = loop.cfg;
  c.model_config = loop.mcfg;
  c.epoch = epoch;
  c.val_accuracy = val_acc;
  c.metrics = loop.metrics;
  c.rng_state = loop.rng.state_string();
  c.adam_step = loop.adam.step_count();
  return c;
}

}  // namespace

ParamStoreT<float> Checkpoint::param_store() const {
  ParamStoreT<float> ps;
  for (const auto& [name, t] : tensors)
    if (!name.starts_with("adam.")) ps.tensors[name] = t;
  return ps;
}

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                  const Checkpoint* resume) {
  cfg.validate();
  if (train_set.records.empty() || val_set.records.empty())
    throw TrainError("train and validation sets must be nonempty");
  if (train_set.vocab != val_set.vocab || train_set.answer_vocab != val_set.answer_vocab)
    throw TrainError("train/validation vocabularies differ");

  TrainLoop loop(cfg, train_set, val_set);
  loop.mcfg = ModelConfig::from_dataset(train_set, cfg.flags, cfg.d, cfg.p);
  loop.mcfg.max_concat_tokens = cfg.max_concat_tokens;
  loop.params = make_param_store<F>(loop.mcfg);
  int start_epoch = 0;

  if (resume) {
    if (!(resume->model_config.flags == cfg.flags)) throw TrainError("resume checkpoint flags differ from config");
    for (auto& [name, t] : loop.params.tensors) {
      auto it = resume->tensors.find(name);
      if (it == resume->tensors.end()) throw TrainError("resume checkpoint missing parameter '" + name + "'");
      if (it->second.data.size() != t.data.size()) throw TrainError("resume parameter shape mismatch for '" + name + "'");
      t.data = it->second.data;
    }
    for (const auto& [name, t] : resume->tensors) {
      if (name.starts_with("adam.m.")) loop.adam.moment1()[name.substr(7)] = t.data;
      if (name.starts_with("adam.v.")) loop.adam.moment2()[name.substr(7)] = t.data;
    }
    loop.adam.set_step_count(resume->adam_step);
    loop.steps = resume->adam_step;
    loop.rng.set_state(resume->rng_state);
    loop.metrics = resume->metrics;
    start_epoch = resume->epoch;
  } else {
    init_params(loop.params, loop.mcfg, cfg.seed);
  }

  TrainResult result;
  double best_acc = -1.0;
  int best_epoch = -1;
  for (const auto& m : loop.metrics)
    if (m.val_accuracy > best_acc) {
      best_acc = m.val_accuracy;
      best_epoch = m.epoch;
    }

  try {
    for (int epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
      loop.loss_sum = 0.0;
      loop.loss_count = 0;
      if (cfg.flags.context_aware()) {
        std::vector<int> order(train_set.records.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        loop.rng.shuffle(order.begin(), order.end());
        loop.epoch_context_aware(order);
      } else {
        std::vector<std::pair<int, int>> samples;
        for (std::size_t di = 0; di < train_set.records.size(); ++di)
          for (std::size_t qi = 0; qi < train_set.records[di].turns.size(); ++qi)
            samples.push_back({static_cast<int>(di), static_cast<int>(qi)});
        loop.rng.shuffle(samples.begin(), samples.end());
        loop.epoch_history_agnostic(samples);
      }

      const double val_acc = model_accuracy(loop.params, loop.mcfg, val_set.records);
      EpochMetrics em;
      em.epoch = epoch;
      em.train_loss = loop.loss_count ? loop.loss_sum / loop.loss_count : 0.0;
      em.val_accuracy = val_acc;
      loop.metrics.push_back(em);

      if (val_acc > best_acc) {
        best_acc = val_acc;
        best_epoch = epoch;
        result.best = snapshot(loop, epoch + 1, val_acc);
      }
      if (loop.step_budget_spent()) break;
      if (epoch - best_epoch >= cfg.early_stop_patience) break;
    }
  } catch (const NonFiniteError& e) {
    throw TrainError("training aborted: first non-finite value produced by op '" + e.op_name + "'");
  }

  result.metrics = loop.metrics;
  result.steps_taken = loop.steps;
  result.last = snapshot(loop, loop.metrics.empty() ? start_epoch : loop.metrics.back().epoch + 1,
                         loop.metrics.empty() ? 0.0 : loop.metrics.back().val_accuracy);
  if (best_epoch < 0) result.best = result.last;
  return result;
}

}  // namespace cammac
