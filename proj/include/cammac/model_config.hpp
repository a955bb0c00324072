#pragma once

#include <map>
#include <string>
#include <vector>

#include "cammac/dataset_io.hpp"

namespace cammac {

class VocabError : public std::runtime_error {
 public:
  explicit VocabError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ModelFlags {
  bool cq = false;
  bool caa = false;
  bool mtm = false;

  bool operator==(const ModelFlags&) const = default;
  bool context_aware() const { return caa || mtm; }
};

// Named flag combinations matching the ablation grid.
ModelFlags flags_from_name(const std::string& name);
std::string flags_to_name(const ModelFlags& f);
std::vector<std::string> known_model_names();

struct ModelConfig {
  int d = 64;
  int p = 4;
  int grid_h = 4;
  int grid_w = 4;
  int max_concat_tokens = 160;
  ModelFlags flags;
  std::vector<std::string> vocab;
  std::vector<std::string> answer_vocab;

  void finalize();  // builds the token maps; call after vocab assignment

  int token_id(const std::string& tok) const {
    auto it = token_ids_.find(tok);
    if (it == token_ids_.end()) throw VocabError("token '" + tok + "' not in the closed vocabulary");
    return it->second;
  }
  std::vector<int> token_ids(const std::vector<std::string>& toks) const {
    std::vector<int> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(token_id(t));
    return out;
  }
  int answer_id(const std::string& tok) const {
    auto it = answer_ids_.find(tok);
    if (it == answer_ids_.end()) throw VocabError("answer '" + tok + "' not in the closed answer set");
    return it->second;
  }
  int vocab_size() const { return static_cast<int>(vocab.size()); }
  int answer_size() const { return static_cast<int>(answer_vocab.size()); }
  int cells() const { return grid_h * grid_w; }

  static ModelConfig from_dataset(const Dataset& ds, ModelFlags flags, int d = 64, int p = 4);

 private:
  std::map<std::string, int> token_ids_;
  std::map<std::string, int> answer_ids_;
};

}  // namespace cammac
