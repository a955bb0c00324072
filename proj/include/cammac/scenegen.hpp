#pragma once

// Synthetic mini scene/dialog generator with an exact enumeration oracle.
// Twelve question templates (4 count, 3 exist, 5 seek); each family has at
// least one history-dependent variant ("previous <attr>", pronoun "it",
// whole-history "other").

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cammac/dialog.hpp"
#include "cammac/rng.hpp"
#include "cammac/scene.hpp"

namespace cammac {

class GenError : public std::runtime_error {
 public:
  explicit GenError(const std::string& msg) : std::runtime_error(msg) {}
};

class OracleError : public std::runtime_error {
 public:
  explicit OracleError(const std::string& msg) : std::runtime_error(msg) {}
};

struct GenConfig {
  int grid_h = 4;
  int grid_w = 4;
  int min_objects = 3;
  int max_objects = 6;
  int turns = 5;
  int dialogs = 0;
  int count_cap = 9;
  double weight_seek = 0.60;
  double weight_count = 0.23;
  double weight_exist = 0.17;
  // Share of history-dependent templates, interpolated linearly from the
  // first to the last question turn: later turns are mostly follow-ups,
  // early turns mostly scene questions.
  double coref_share_first = 0.2;
  double coref_share_last = 0.8;
  // Per-template multiplier on top of the family weight; 0 disables a template.
  std::map<std::string, double> template_weights;
  std::uint64_t seed = 0;

  void validate() const;
};

struct QuestionTemplate {
  std::string id;
  Family family;
  bool history_dependent;
};

const std::vector<QuestionTemplate>& template_inventory();

inline const std::string kSepToken = "<sep>";

// Closed answer set: counts 0..cap, yes/no, the "none" sentinel, then every
// attribute value.
std::vector<std::string> answer_vocabulary(const GenConfig& cfg);

// Closed question vocabulary (includes the answer tokens and the separator,
// which history concatenation feeds back through the same embedding table).
std::vector<std::string> question_vocabulary(const GenConfig& cfg);

SceneGraph sample_scene(Rng& rng, const GenConfig& cfg);

// Exact answer by exhaustive enumeration over scene objects.
std::string oracle_answer(const SceneGraph& scene, const std::string& template_id, const Bindings& b,
                          int count_cap = 9);

// One dialog over a fixed scene; nullopt signals the caller to resample the
// scene (a turn failed to instantiate within 50 attempts).
std::optional<DialogRecord> generate_dialog(const SceneGraph& scene, Rng& rng, const GenConfig& cfg);

// Scene + dialog with the retry loop, independently sub-seeded so serial and
// parallel generation agree byte for byte.
DialogRecord generate_dialog_at(const GenConfig& cfg, std::uint64_t dialog_index);

std::vector<DialogRecord> generate_dataset(const GenConfig& cfg, int workers = 1);

struct GenStats {
  std::map<std::string, int> per_template;
  std::map<int, int> per_coref_distance;  // -1 bucket = no coreference
  std::map<std::string, int> per_family;
};

GenStats collect_stats(const std::vector<DialogRecord>& records);

}  // namespace cammac
