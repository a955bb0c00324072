#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cammac/scene.hpp"

namespace cammac {

enum class Family : std::uint8_t { Count, Exist, Seek };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::Count: return "count";
    case Family::Exist: return "exist";
    case Family::Seek: return "seek";
  }
  return "?";
}

// Fully resolved template arguments. The generator fills these from ground
// truth, so the oracle never has to interpret language.
struct Bindings {
  std::optional<Attribute> attr1;             // referring / counted / queried attribute
  std::optional<Attribute> attr2;             // second attribute for two-attribute templates
  std::optional<AttrCategory> asked;          // category a seek question asks for
  std::optional<Relation> relation;
  std::optional<int> referent;                // index into SceneGraph.objects
  std::optional<std::vector<int>> mentioned;  // snapshot for whole-history templates

  bool operator==(const Bindings&) const = default;
};

// Turn indices count the caption as turn 0; the i-th question is turn i+1.
struct DialogTurn {
  std::vector<std::string> text;
  std::string answer;
  std::string template_id;
  Family family = Family::Count;
  std::optional<int> coref_turn;      // turn that introduced the referent
  std::optional<int> coref_distance;  // current turn - coref_turn
  std::optional<int> referent_object;
  Bindings bindings;

  bool operator==(const DialogTurn&) const = default;
};

struct DialogRecord {
  SceneGraph scene;
  std::vector<std::string> caption;
  std::vector<DialogTurn> turns;
  std::uint64_t seed = 0;

  bool operator==(const DialogRecord&) const = default;
};

}  // namespace cammac
