#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cammac {

enum class Color : std::uint8_t { Blue, Brown, Cyan, Gray, Green, Purple, Red, Yellow };
enum class Shape : std::uint8_t { Cylinder, Cube, Sphere };
enum class ObjSize : std::uint8_t { Large, Small };
enum class Material : std::uint8_t { Metal, Rubber };
enum class Relation : std::uint8_t { Front, Back, Left, Right };
enum class AttrCategory : std::uint8_t { Color, Shape, Size, Material };

inline constexpr int kNumColors = 8;
inline constexpr int kNumShapes = 3;
inline constexpr int kNumSizes = 2;
inline constexpr int kNumMaterials = 2;
inline constexpr int kNumRelations = 4;

inline const std::array<std::string, 8> kColorTokens = {"blue", "brown",  "cyan", "gray",
                                                        "green", "purple", "red",  "yellow"};
inline const std::array<std::string, 3> kShapeTokens = {"cylinder", "cube", "sphere"};
inline const std::array<std::string, 2> kSizeTokens = {"large", "small"};
inline const std::array<std::string, 2> kMaterialTokens = {"metal", "rubber"};
inline const std::array<std::string, 4> kRelationTokens = {"front", "back", "left", "right"};
inline const std::array<std::string, 4> kCategoryTokens = {"color", "shape", "size", "material"};

// One attribute value from one of the four categories.
struct Attribute {
  AttrCategory cat;
  int value;

  bool operator==(const Attribute&) const = default;

  const std::string& token() const {
    switch (cat) {
      case AttrCategory::Color: return kColorTokens[value];
      case AttrCategory::Shape: return kShapeTokens[value];
      case AttrCategory::Size: return kSizeTokens[value];
      case AttrCategory::Material: return kMaterialTokens[value];
    }
    throw std::logic_error("bad attribute category");
  }

  static int category_size(AttrCategory c) {
    switch (c) {
      case AttrCategory::Color: return kNumColors;
      case AttrCategory::Shape: return kNumShapes;
      case AttrCategory::Size: return kNumSizes;
      case AttrCategory::Material: return kNumMaterials;
    }
    throw std::logic_error("bad attribute category");
  }

  // All 15 attribute values in a fixed order.
  static std::vector<Attribute> all() {
    std::vector<Attribute> v;
    for (int i = 0; i < kNumColors; ++i) v.push_back({AttrCategory::Color, i});
    for (int i = 0; i < kNumShapes; ++i) v.push_back({AttrCategory::Shape, i});
    for (int i = 0; i < kNumSizes; ++i) v.push_back({AttrCategory::Size, i});
    for (int i = 0; i < kNumMaterials; ++i) v.push_back({AttrCategory::Material, i});
    return v;
  }
};

struct SceneObject {
  Color color;
  Shape shape;
  ObjSize size;
  Material material;
  int row = 0;
  int col = 0;

  bool operator==(const SceneObject&) const = default;

  bool has(const Attribute& a) const {
    switch (a.cat) {
      case AttrCategory::Color: return static_cast<int>(color) == a.value;
      case AttrCategory::Shape: return static_cast<int>(shape) == a.value;
      case AttrCategory::Size: return static_cast<int>(size) == a.value;
      case AttrCategory::Material: return static_cast<int>(material) == a.value;
    }
    return false;
  }

  const std::string& attribute_token(AttrCategory c) const {
    switch (c) {
      case AttrCategory::Color: return kColorTokens[static_cast<int>(color)];
      case AttrCategory::Shape: return kShapeTokens[static_cast<int>(shape)];
      case AttrCategory::Size: return kSizeTokens[static_cast<int>(size)];
      case AttrCategory::Material: return kMaterialTokens[static_cast<int>(material)];
    }
    throw std::logic_error("bad attribute category");
  }
};

struct SceneGraph {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<SceneObject> objects;

  bool operator==(const SceneGraph&) const = default;
};

// Spatial semantics on the occupancy grid: front/back compare rows
// (front = smaller row), left/right compare columns (left = smaller column).
inline bool related(const SceneObject& o, const SceneObject& ref, Relation rel) {
  switch (rel) {
    case Relation::Front: return o.row < ref.row;
    case Relation::Back: return o.row > ref.row;
    case Relation::Left: return o.col < ref.col;
    case Relation::Right: return o.col > ref.col;
  }
  return false;
}

inline std::vector<int> objects_related_to(const SceneGraph& scene, int ref_index, Relation rel) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(scene.objects.size()); ++i)
    if (i != ref_index && related(scene.objects[i], scene.objects[ref_index], rel)) out.push_back(i);
  return out;
}

inline std::vector<int> objects_with(const SceneGraph& scene, const Attribute& a) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(scene.objects.size()); ++i)
    if (scene.objects[i].has(a)) out.push_back(i);
  return out;
}

}  // namespace cammac
