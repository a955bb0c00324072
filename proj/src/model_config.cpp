#include "cammac/model_config.hpp"

#include <sstream>

namespace cammac {

ModelFlags flags_from_name(const std::string& name) {
  static const std::map<std::string, ModelFlags> kNames = {
      {"vanilla", {false, false, false}}, {"mtm", {false, false, true}},
      {"caa", {false, true, false}},      {"caa+mtm", {false, true, true}},
      {"cq", {true, false, false}},       {"cq+caa", {true, true, false}},
      {"cq+caa+mtm", {true, true, true}},
  };
  auto it = kNames.find(name);
  if (it == kNames.end()) {
    std::ostringstream os;
    os << "unknown model name '" << name << "'; valid names:";
    for (const auto& [k, v] : kNames) os << " " << k;
    throw std::runtime_error(os.str());
  }
  return it->second;
}

std::string flags_to_name(const ModelFlags& f) {
  if (!f.cq && !f.caa && !f.mtm) return "vanilla";
  std::string s;
  auto app = [&](const char* part) {
    if (!s.empty()) s += "+";
    s += part;
  };
  if (f.cq) app("cq");
  if (f.caa) app("caa");
  if (f.mtm) app("mtm");
  return s;
}

std::vector<std::string> known_model_names() {
  return {"vanilla", "mtm", "caa", "caa+mtm", "cq", "cq+caa", "cq+caa+mtm"};
}

void ModelConfig::finalize() {
  token_ids_.clear();
  answer_ids_.clear();
  for (int i = 0; i < static_cast<int>(vocab.size()); ++i) token_ids_[vocab[i]] = i;
  for (int i = 0; i < static_cast<int>(answer_vocab.size()); ++i) answer_ids_[answer_vocab[i]] = i;
  if (token_ids_.size() != vocab.size()) throw VocabError("duplicate tokens in vocabulary");
  if (answer_ids_.size() != answer_vocab.size()) throw VocabError("duplicate tokens in answer vocabulary");
}

ModelConfig ModelConfig::from_dataset(const Dataset& ds, ModelFlags flags, int d, int p) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.p = p;
  cfg.grid_h = ds.cfg.grid_h;
  cfg.grid_w = ds.cfg.grid_w;
  cfg.flags = flags;
  cfg.vocab = ds.vocab;
  cfg.answer_vocab = ds.answer_vocab;
  cfg.finalize();
  return cfg;
}

}  // namespace cammac
