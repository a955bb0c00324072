#include "cammac/dataset_io.hpp"

#include <fstream>
#include <json.hpp>

namespace cammac {

using nlohmann::json;

namespace {

json attr_to_json(const Attribute& a) {
  return json{{"category", kCategoryTokens[static_cast<int>(a.cat)]}, {"value", a.token()}};
}

AttrCategory category_from(const std::string& s, int line) {
  for (int i = 0; i < 4; ++i)
    if (kCategoryTokens[i] == s) return static_cast<AttrCategory>(i);
  throw ParseError("unknown attribute category '" + s + "'", line);
}

template <std::size_t N>
int value_from(const std::array<std::string, N>& table, const std::string& s, int line) {
  for (std::size_t i = 0; i < N; ++i)
    if (table[i] == s) return static_cast<int>(i);
  throw ParseError("unknown attribute value '" + s + "'", line);
}

Attribute attr_from_json(const json& j, int line) {
  const AttrCategory cat = category_from(j.at("category").get<std::string>(), line);
  const std::string v = j.at("value").get<std::string>();
  switch (cat) {
    case AttrCategory::Color: return {cat, value_from(kColorTokens, v, line)};
    case AttrCategory::Shape: return {cat, value_from(kShapeTokens, v, line)};
    case AttrCategory::Size: return {cat, value_from(kSizeTokens, v, line)};
    case AttrCategory::Material: return {cat, value_from(kMaterialTokens, v, line)};
  }
  throw ParseError("bad attribute", line);
}

json bindings_to_json(const Bindings& b) {
  json j = json::object();
  j["attr1"] = b.attr1 ? attr_to_json(*b.attr1) : json();
  j["attr2"] = b.attr2 ? attr_to_json(*b.attr2) : json();
  j["asked"] = b.asked ? json(kCategoryTokens[static_cast<int>(*b.asked)]) : json();
  j["relation"] = b.relation ? json(kRelationTokens[static_cast<int>(*b.relation)]) : json();
  j["referent"] = b.referent ? json(*b.referent) : json();
  j["mentioned"] = b.mentioned ? json(*b.mentioned) : json();
  return j;
}

Bindings bindings_from_json(const json& j, int line) {
  Bindings b;
  if (!j.at("attr1").is_null()) b.attr1 = attr_from_json(j.at("attr1"), line);
  if (!j.at("attr2").is_null()) b.attr2 = attr_from_json(j.at("attr2"), line);
  if (!j.at("asked").is_null()) b.asked = category_from(j.at("asked").get<std::string>(), line);
  if (!j.at("relation").is_null()) {
    const std::string r = j.at("relation").get<std::string>();
    b.relation = static_cast<Relation>(value_from(kRelationTokens, r, line));
  }
  if (!j.at("referent").is_null()) b.referent = j.at("referent").get<int>();
  if (!j.at("mentioned").is_null()) b.mentioned = j.at("mentioned").get<std::vector<int>>();
  return b;
}

json scene_to_json(const SceneGraph& s) {
  json objs = json::array();
  for (const auto& o : s.objects)
    objs.push_back(json{{"color", kColorTokens[static_cast<int>(o.color)]},
                        {"shape", kShapeTokens[static_cast<int>(o.shape)]},
                        {"size", kSizeTokens[static_cast<int>(o.size)]},
                        {"material", kMaterialTokens[static_cast<int>(o.material)]},
                        {"cell", json::array({o.row, o.col})}});
  return json{{"grid_size", json::array({s.grid_h, s.grid_w})}, {"objects", objs}};
}

SceneGraph scene_from_json(const json& j, int line) {
  SceneGraph s;
  s.grid_h = j.at("grid_size").at(0).get<int>();
  s.grid_w = j.at("grid_size").at(1).get<int>();
  for (const auto& oj : j.at("objects")) {
    SceneObject o;
    o.color = static_cast<Color>(value_from(kColorTokens, oj.at("color").get<std::string>(), line));
    o.shape = static_cast<Shape>(value_from(kShapeTokens, oj.at("shape").get<std::string>(), line));
    o.size = static_cast<ObjSize>(value_from(kSizeTokens, oj.at("size").get<std::string>(), line));
    o.material = static_cast<Material>(value_from(kMaterialTokens, oj.at("material").get<std::string>(), line));
    o.row = oj.at("cell").at(0).get<int>();
    o.col = oj.at("cell").at(1).get<int>();
    s.objects.push_back(o);
  }
  return s;
}

Family family_from(const std::string& s, int line) {
  if (s == "count") return Family::Count;
  if (s == "exist") return Family::Exist;
  if (s == "seek") return Family::Seek;
  throw ParseError("unknown question family '" + s + "'", line);
}

json record_to_json(const DialogRecord& r) {
  json turns = json::array();
  for (const auto& t : r.turns) {
    json tj = json::object();
    tj["text"] = t.text;
    tj["answer"] = t.answer;
    tj["template_id"] = t.template_id;
    tj["question_family"] = family_name(t.family);
    tj["coref_turn"] = t.coref_turn ? json(*t.coref_turn) : json();
    tj["coref_distance"] = t.coref_distance ? json(*t.coref_distance) : json();
    tj["referent_object"] = t.referent_object ? json(*t.referent_object) : json();
    tj["bindings"] = bindings_to_json(t.bindings);
    turns.push_back(tj);
  }
  return json{{"scene", scene_to_json(r.scene)}, {"caption", r.caption}, {"turns", turns}, {"seed", r.seed}};
}

DialogRecord record_from_json(const json& j, int line) {
  DialogRecord r;
  r.scene = scene_from_json(j.at("scene"), line);
  r.caption = j.at("caption").get<std::vector<std::string>>();
  r.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& tj : j.at("turns")) {
    DialogTurn t;
    t.text = tj.at("text").get<std::vector<std::string>>();
    t.answer = tj.at("answer").get<std::string>();
    t.template_id = tj.at("template_id").get<std::string>();
    t.family = family_from(tj.at("question_family").get<std::string>(), line);
    if (!tj.at("coref_turn").is_null()) t.coref_turn = tj.at("coref_turn").get<int>();
    if (!tj.at("coref_distance").is_null()) t.coref_distance = tj.at("coref_distance").get<int>();
    if (!tj.at("referent_object").is_null()) t.referent_object = tj.at("referent_object").get<int>();
    t.bindings = bindings_from_json(tj.at("bindings"), line);
    r.turns.push_back(std::move(t));
  }
  return r;
}

json cfg_to_json(const GenConfig& c) {
  return json{{"grid", json::array({c.grid_h, c.grid_w})},
              {"min_objects", c.min_objects},
              {"max_objects", c.max_objects},
              {"turns", c.turns},
              {"dialogs", c.dialogs},
              {"count_cap", c.count_cap},
              {"weights", json{{"seek", c.weight_seek}, {"count", c.weight_count}, {"exist", c.weight_exist}}},
              {"coref_share", json::array({c.coref_share_first, c.coref_share_last})},
              {"template_weights", c.template_weights},
              {"seed", c.seed}};
}

GenConfig cfg_from_json(const json& j, int line) {
  try {
    GenConfig c;
    c.grid_h = j.at("grid").at(0).get<int>();
    c.grid_w = j.at("grid").at(1).get<int>();
    c.min_objects = j.at("min_objects").get<int>();
    c.max_objects = j.at("max_objects").get<int>();
    c.turns = j.at("turns").get<int>();
    c.dialogs = j.at("dialogs").get<int>();
    c.count_cap = j.at("count_cap").get<int>();
    c.weight_seek = j.at("weights").at("seek").get<double>();
    c.weight_count = j.at("weights").at("count").get<double>();
    c.weight_exist = j.at("weights").at("exist").get<double>();
    c.coref_share_first = j.at("coref_share").at(0).get<double>();
    c.coref_share_last = j.at("coref_share").at(1).get<double>();
    c.template_weights = j.at("template_weights").get<std::map<std::string, double>>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad cfg: ") + e.what(), line);
  }
}

}  // namespace

Dataset make_dataset(const GenConfig& cfg, std::vector<DialogRecord> records) {
  Dataset ds;
  ds.cfg = cfg;
  ds.vocab = question_vocabulary(cfg);
  ds.answer_vocab = answer_vocabulary(cfg);
  ds.records = std::move(records);
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  json header{{"version", 1},
              {"cfg", cfg_to_json(ds.cfg)},
              {"vocab", ds.vocab},
              {"answer_vocab", ds.answer_vocab}};
  out << header.dump() << "\n";
  for (const auto& r : ds.records) out << record_to_json(r).dump() << "\n";
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::string line;
  int line_no = 0;
  Dataset ds;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
    try {
      if (line_no == 1) {
        if (j.at("version").get<int>() != 1) throw ParseError("unsupported dataset version", line_no);
        ds.cfg = cfg_from_json(j.at("cfg"), line_no);
        ds.vocab = j.at("vocab").get<std::vector<std::string>>();
        ds.answer_vocab = j.at("answer_vocab").get<std::vector<std::string>>();
      } else {
        ds.records.push_back(record_from_json(j, line_no));
      }
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  if (line_no == 0) throw ParseError("empty file, expected a header line", 1);
  return ds;
}

std::uint64_t vocab_hash(const std::vector<std::string>& vocab) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (const auto& tok : vocab) {
    for (char c : tok) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace cammac
