#include "cammac/scenegen.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <set>
#include <thread>

namespace cammac {

void GenConfig::validate() const {
  if (grid_h < 1 || grid_w < 1) throw GenError("grid must be at least 1x1");
  if (min_objects < 1 || min_objects > max_objects) throw GenError("bad object count range");
  if (max_objects > grid_h * grid_w)
    throw GenError("object count range exceeds grid capacity " + std::to_string(grid_h * grid_w));
  if (turns < 1) throw GenError("need at least one turn");
  if (count_cap < max_objects) throw GenError("count cap below max object count");
  if (weight_seek < 0 || weight_count < 0 || weight_exist < 0 ||
      weight_seek + weight_count + weight_exist <= 0)
    throw GenError("family weights must be nonnegative and not all zero");
}

const std::vector<QuestionTemplate>& template_inventory() {
  static const std::vector<QuestionTemplate> kTemplates = {
      {"count-attr", Family::Count, false},
      {"count-attr-rel", Family::Count, false},
      {"count-rel-prev", Family::Count, true},
      {"count-other", Family::Count, true},
      {"exist-attr", Family::Exist, false},
      {"exist-rel-prev", Family::Exist, true},
      {"exist-attr-it", Family::Exist, true},
      {"seek-attr", Family::Seek, false},
      {"seek-attr-rel", Family::Seek, false},
      {"seek-attr-prev", Family::Seek, true},
      {"seek-attr-it", Family::Seek, true},
      {"seek-attr-rel-it", Family::Seek, true},
  };
  return kTemplates;
}

std::vector<std::string> answer_vocabulary(const GenConfig& cfg) {
  std::vector<std::string> v;
  for (int i = 0; i <= cfg.count_cap; ++i) v.push_back(std::to_string(i));
  v.push_back("yes");
  v.push_back("no");
  v.push_back("none");
  for (auto& t : kColorTokens) v.push_back(t);
  for (auto& t : kShapeTokens) v.push_back(t);
  for (auto& t : kSizeTokens) v.push_back(t);
  for (auto& t : kMaterialTokens) v.push_back(t);
  return v;
}

std::vector<std::string> question_vocabulary(const GenConfig& cfg) {
  std::set<std::string> s;
  for (auto& w : {"there", "is", "a", "how", "many", "things", "thing", "are", "of",
                  "the", "previous", "other", "it", "its", "what"})
    s.insert(w);
  for (auto& t : kRelationTokens) s.insert(t);
  for (auto& t : kCategoryTokens) s.insert(t);
  for (auto& t : answer_vocabulary(cfg)) s.insert(t);
  s.insert(kSepToken);
  return {s.begin(), s.end()};
}

SceneGraph sample_scene(Rng& rng, const GenConfig& cfg) {
  cfg.validate();
  SceneGraph scene;
  scene.grid_h = cfg.grid_h;
  scene.grid_w = cfg.grid_w;
  const int cells = cfg.grid_h * cfg.grid_w;
  std::vector<int> cell_ids(cells);
  for (int i = 0; i < cells; ++i) cell_ids[i] = i;
  rng.shuffle(cell_ids.begin(), cell_ids.end());

  const int n = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  for (int i = 0; i < n; ++i) {
    SceneObject o;
    o.color = static_cast<Color>(rng.uniform_int(0, kNumColors - 1));
    o.shape = static_cast<Shape>(rng.uniform_int(0, kNumShapes - 1));
    o.size = static_cast<ObjSize>(rng.uniform_int(0, kNumSizes - 1));
    o.material = static_cast<Material>(rng.uniform_int(0, kNumMaterials - 1));
    o.row = cell_ids[i] / cfg.grid_w;
    o.col = cell_ids[i] % cfg.grid_w;
    scene.objects.push_back(o);
  }
  return scene;
}

namespace {

std::string count_token(int n, int cap) { return std::to_string(std::min(n, cap)); }

int require_unique(const std::vector<int>& matches, const std::string& what) {
  if (matches.size() != 1)
    throw OracleError(what + " expected exactly one match, found " + std::to_string(matches.size()));
  return matches[0];
}

const Attribute& req_attr(const std::optional<Attribute>& a, const char* tmpl) {
  if (!a) throw OracleError(std::string("template ") + tmpl + " missing attribute binding");
  return *a;
}

Relation req_rel(const std::optional<Relation>& r, const char* tmpl) {
  if (!r) throw OracleError(std::string("template ") + tmpl + " missing relation binding");
  return *r;
}

int req_ref(const std::optional<int>& r, const SceneGraph& scene, const char* tmpl) {
  if (!r) throw OracleError(std::string("template ") + tmpl + " missing referent binding");
  if (*r < 0 || *r >= static_cast<int>(scene.objects.size()))
    throw OracleError(std::string("template ") + tmpl + " referent index out of range");
  return *r;
}

AttrCategory req_asked(const std::optional<AttrCategory>& c, const char* tmpl) {
  if (!c) throw OracleError(std::string("template ") + tmpl + " missing asked category");
  return *c;
}

}  // namespace

std::string oracle_answer(const SceneGraph& scene, const std::string& id, const Bindings& b, int cap) {
  const auto& objs = scene.objects;
  if (id == "count-attr") {
    return count_token(static_cast<int>(objects_with(scene, req_attr(b.attr1, "count-attr")).size()), cap);
  }
  if (id == "count-attr-rel") {
    const int anchor = require_unique(objects_with(scene, req_attr(b.attr1, "count-attr-rel")), "count-attr-rel anchor");
    return count_token(static_cast<int>(objects_related_to(scene, anchor, req_rel(b.relation, "count-attr-rel")).size()), cap);
  }
  if (id == "count-rel-prev") {
    const int ref = req_ref(b.referent, scene, "count-rel-prev");
    return count_token(static_cast<int>(objects_related_to(scene, ref, req_rel(b.relation, "count-rel-prev")).size()), cap);
  }
  if (id == "count-other") {
    if (!b.mentioned) throw OracleError("count-other missing mentioned set");
    std::set<int> seen(b.mentioned->begin(), b.mentioned->end());
    int n = 0;
    for (int i = 0; i < static_cast<int>(objs.size()); ++i)
      if (!seen.count(i)) ++n;
    return count_token(n, cap);
  }
  if (id == "exist-attr") {
    const Attribute& a1 = req_attr(b.attr1, "exist-attr");
    const Attribute& a2 = req_attr(b.attr2, "exist-attr");
    for (const auto& o : objs)
      if (o.has(a1) && o.has(a2)) return "yes";
    return "no";
  }
  if (id == "exist-rel-prev") {
    const int ref = req_ref(b.referent, scene, "exist-rel-prev");
    return objects_related_to(scene, ref, req_rel(b.relation, "exist-rel-prev")).empty() ? "no" : "yes";
  }
  if (id == "exist-attr-it") {
    const int ref = req_ref(b.referent, scene, "exist-attr-it");
    return objs[ref].has(req_attr(b.attr1, "exist-attr-it")) ? "yes" : "no";
  }
  if (id == "seek-attr") {
    const int target = require_unique(objects_with(scene, req_attr(b.attr1, "seek-attr")), "seek-attr target");
    return objs[target].attribute_token(req_asked(b.asked, "seek-attr"));
  }
  if (id == "seek-attr-rel") {
    const int anchor = require_unique(objects_with(scene, req_attr(b.attr1, "seek-attr-rel")), "seek-attr-rel anchor");
    const auto cands = objects_related_to(scene, anchor, req_rel(b.relation, "seek-attr-rel"));
    if (cands.empty()) return "none";
    return objs[require_unique(cands, "seek-attr-rel target")].attribute_token(req_asked(b.asked, "seek-attr-rel"));
  }
  if (id == "seek-attr-prev" || id == "seek-attr-it") {
    const int ref = req_ref(b.referent, scene, id.c_str());
    return objs[ref].attribute_token(req_asked(b.asked, id.c_str()));
  }
  if (id == "seek-attr-rel-it") {
    const int ref = req_ref(b.referent, scene, "seek-attr-rel-it");
    const auto cands = objects_related_to(scene, ref, req_rel(b.relation, "seek-attr-rel-it"));
    if (cands.empty()) return "none";
    return objs[require_unique(cands, "seek-attr-rel-it target")].attribute_token(req_asked(b.asked, "seek-attr-rel-it"));
  }
  throw OracleError("unknown template id '" + id + "'");
}

namespace {

// Descriptor token sequences. Shapes read as nouns, everything else modifies
// "thing"/"things".
std::vector<std::string> singular(const Attribute& a) {
  if (a.cat == AttrCategory::Shape) return {a.token()};
  return {a.token(), "thing"};
}

std::vector<std::string> plural(const Attribute& a) { return {a.token(), "things"}; }

void append(std::vector<std::string>& out, const std::vector<std::string>& part) {
  out.insert(out.end(), part.begin(), part.end());
}

// Adjective order for two-attribute phrases: size, color, material, then shape.
int phrase_rank(AttrCategory c) {
  switch (c) {
    case AttrCategory::Size: return 0;
    case AttrCategory::Color: return 1;
    case AttrCategory::Material: return 2;
    case AttrCategory::Shape: return 3;
  }
  return 4;
}

std::vector<std::string> pair_phrase(Attribute a, Attribute b) {
  if (phrase_rank(a.cat) > phrase_rank(b.cat)) std::swap(a, b);
  std::vector<std::string> out = {a.token()};
  if (b.cat == AttrCategory::Shape) {
    out.push_back(b.token());
  } else {
    out.push_back(b.token());
    out.push_back("thing");
  }
  return out;
}

struct HistoryState {
  std::vector<std::optional<int>> focus;  // per turn, 0 = caption
  std::vector<int> mentioned;             // objects in first-reference order
  std::vector<int> first_ref;             // object -> turn of first reference, -1 = never

  explicit HistoryState(std::size_t num_objects) : first_ref(num_objects, -1) {}

  void mention(int obj, int turn) {
    if (first_ref[obj] < 0) {
      first_ref[obj] = turn;
      mentioned.push_back(obj);
    }
  }
  bool is_mentioned(int obj) const { return first_ref[obj] >= 0; }
};

struct TurnDraft {
  std::vector<std::string> text;
  Bindings bindings;
  std::optional<int> coref_turn;
  std::optional<int> referent;
  std::optional<int> focus;          // focus after this turn
  std::vector<int> new_mentions;     // objects first identified by this turn
};

Attribute random_attribute(Rng& rng) {
  const auto all = Attribute::all();
  return all[rng.uniform_index(all.size())];
}

Relation random_relation(Rng& rng) { return static_cast<Relation>(rng.uniform_int(0, kNumRelations - 1)); }

AttrCategory random_category(Rng& rng, std::optional<AttrCategory> exclude = std::nullopt) {
  std::vector<AttrCategory> cats = {AttrCategory::Color, AttrCategory::Shape, AttrCategory::Size,
                                    AttrCategory::Material};
  if (exclude) std::erase(cats, *exclude);
  return cats[rng.uniform_index(cats.size())];
}

// Seek questions ask for high-cardinality attributes more often (weights
// 3/2/1/1 for color/shape/size/material): a binary attribute is a coin flip
// for a guesser, which blunts the coreference diagnostics.
AttrCategory random_asked_category(Rng& rng, std::optional<AttrCategory> exclude = std::nullopt) {
  const std::pair<AttrCategory, int> weighted[] = {{AttrCategory::Color, 3},
                                                   {AttrCategory::Shape, 2},
                                                   {AttrCategory::Size, 1},
                                                   {AttrCategory::Material, 1}};
  int total = 0;
  for (const auto& [cat, w] : weighted)
    if (!exclude || cat != *exclude) total += w;
  int x = rng.uniform_int(1, total);
  for (const auto& [cat, w] : weighted) {
    if (exclude && cat == *exclude) continue;
    x -= w;
    if (x <= 0) return cat;
  }
  return AttrCategory::Color;
}

// Attribute values that pick out exactly one object of the scene.
std::vector<Attribute> unique_in_scene(const SceneGraph& scene) {
  std::vector<Attribute> out;
  for (const auto& a : Attribute::all())
    if (objects_with(scene, a).size() == 1) out.push_back(a);
  return out;
}

// (attribute, object) pairs where the attribute resolves uniquely over the
// objects referenced so far; this is what "the previous <attr> thing" may use.
// Pairs whose attribute is ambiguous in the full scene come first: those
// questions cannot be answered from the image alone, which is the point of
// the coreference diagnostics. Scene-unique pairs are kept as a fallback.
std::vector<std::pair<Attribute, int>> unique_in_history(const SceneGraph& scene, const HistoryState& h) {
  std::vector<std::pair<Attribute, int>> ambiguous, unique;
  for (const auto& a : Attribute::all()) {
    int match = -1, count = 0;
    for (int obj : h.mentioned)
      if (scene.objects[obj].has(a)) {
        match = obj;
        ++count;
      }
    if (count != 1) continue;
    (objects_with(scene, a).size() > 1 ? ambiguous : unique).push_back({a, match});
  }
  if (!ambiguous.empty()) return ambiguous;
  return unique;
}

std::optional<TurnDraft> instantiate(const std::string& id, const SceneGraph& scene, const HistoryState& h,
                                     int turn, Rng& rng, const GenConfig& cfg) {
  TurnDraft d;
  auto prev_focus = [&]() -> std::optional<int> {
    return h.focus.empty() ? std::nullopt : h.focus.back();
  };

  if (id == "count-attr") {
    const Attribute a = random_attribute(rng);
    d.bindings.attr1 = a;
    d.text = {"how", "many"};
    append(d.text, plural(a));
    d.text.insert(d.text.end(), {"are", "there"});
    const auto matches = objects_with(scene, a);
    if (matches.size() == 1) {
      d.focus = matches[0];
      d.new_mentions = {matches[0]};
    }
    return d;
  }
  if (id == "count-attr-rel") {
    const auto anchors = unique_in_scene(scene);
    if (anchors.empty()) return std::nullopt;
    const Attribute a = anchors[rng.uniform_index(anchors.size())];
    const Relation rel = random_relation(rng);
    const int anchor = objects_with(scene, a)[0];
    d.bindings.attr1 = a;
    d.bindings.relation = rel;
    d.text = {"how", "many", "things", "are", kRelationTokens[static_cast<int>(rel)], "of", "the"};
    append(d.text, singular(a));
    d.focus = anchor;
    d.new_mentions = {anchor};
    return d;
  }
  if (id == "count-rel-prev" || id == "exist-rel-prev" || id == "seek-attr-prev") {
    const auto cands = unique_in_history(scene, h);
    if (cands.empty()) return std::nullopt;
    const auto [a, ref] = cands[rng.uniform_index(cands.size())];
    d.bindings.attr1 = a;
    d.bindings.referent = ref;
    d.bindings.mentioned = h.mentioned;  // snapshot; uniqueness is checkable later
    std::sort(d.bindings.mentioned->begin(), d.bindings.mentioned->end());
    d.referent = ref;
    d.coref_turn = h.first_ref[ref];
    d.focus = ref;
    if (id == "count-rel-prev") {
      const Relation rel = random_relation(rng);
      d.bindings.relation = rel;
      d.text = {"how", "many", "things", "are", kRelationTokens[static_cast<int>(rel)], "of", "the", "previous"};
      append(d.text, singular(a));
    } else if (id == "exist-rel-prev") {
      const Relation rel = random_relation(rng);
      d.bindings.relation = rel;
      d.text = {"is", "there", "a", "thing", kRelationTokens[static_cast<int>(rel)], "of", "the", "previous"};
      append(d.text, singular(a));
    } else {
      const AttrCategory asked = random_asked_category(rng, a.cat);
      d.bindings.asked = asked;
      d.text = {"what", "is", "the", kCategoryTokens[static_cast<int>(asked)], "of", "the", "previous"};
      append(d.text, singular(a));
    }
    return d;
  }
  if (id == "count-other") {
    if (h.mentioned.empty()) return std::nullopt;
    d.bindings.mentioned = h.mentioned;
    std::sort(d.bindings.mentioned->begin(), d.bindings.mentioned->end());
    d.text = {"how", "many", "other", "things", "are", "there"};
    return d;
  }
  if (id == "exist-attr") {
    const AttrCategory c1 = random_category(rng);
    const AttrCategory c2 = random_category(rng, c1);
    const Attribute a1{c1, rng.uniform_int(0, Attribute::category_size(c1) - 1)};
    const Attribute a2{c2, rng.uniform_int(0, Attribute::category_size(c2) - 1)};
    d.bindings.attr1 = a1;
    d.bindings.attr2 = a2;
    d.text = {"is", "there", "a"};
    append(d.text, pair_phrase(a1, a2));
    std::vector<int> matches;
    for (int i = 0; i < static_cast<int>(scene.objects.size()); ++i)
      if (scene.objects[i].has(a1) && scene.objects[i].has(a2)) matches.push_back(i);
    if (matches.size() == 1) {
      d.focus = matches[0];
      d.new_mentions = {matches[0]};
    }
    return d;
  }
  if (id == "exist-attr-it" || id == "seek-attr-it" || id == "seek-attr-rel-it") {
    const auto ref = prev_focus();
    if (!ref) return std::nullopt;
    d.bindings.referent = *ref;
    d.referent = *ref;
    d.coref_turn = h.first_ref[*ref];
    d.focus = *ref;
    if (id == "exist-attr-it") {
      const Attribute a = random_attribute(rng);
      d.bindings.attr1 = a;
      d.text = {"is", "it", "a"};
      append(d.text, singular(a));
    } else if (id == "seek-attr-it") {
      const AttrCategory asked = random_asked_category(rng);
      d.bindings.asked = asked;
      d.text = {"what", "is", "its", kCategoryTokens[static_cast<int>(asked)]};
    } else {
      const Relation rel = random_relation(rng);
      const auto cands = objects_related_to(scene, *ref, rel);
      if (cands.size() > 1) return std::nullopt;
      const AttrCategory asked = random_asked_category(rng);
      d.bindings.relation = rel;
      d.bindings.asked = asked;
      d.text = {"what", "is", "the", kCategoryTokens[static_cast<int>(asked)], "of", "the", "thing",
                kRelationTokens[static_cast<int>(rel)], "of", "it"};
      if (!cands.empty()) {
        d.focus = cands[0];
        d.new_mentions = {cands[0]};
      }
    }
    return d;
  }
  if (id == "seek-attr") {
    const auto uniques = unique_in_scene(scene);
    if (uniques.empty()) return std::nullopt;
    const Attribute a = uniques[rng.uniform_index(uniques.size())];
    const AttrCategory asked = random_asked_category(rng, a.cat);
    const int target = objects_with(scene, a)[0];
    d.bindings.attr1 = a;
    d.bindings.asked = asked;
    d.text = {"what", "is", "the", kCategoryTokens[static_cast<int>(asked)], "of", "the"};
    append(d.text, singular(a));
    d.focus = target;
    d.new_mentions = {target};
    return d;
  }
  if (id == "seek-attr-rel") {
    const auto anchors = unique_in_scene(scene);
    if (anchors.empty()) return std::nullopt;
    const Attribute a = anchors[rng.uniform_index(anchors.size())];
    const Relation rel = random_relation(rng);
    const int anchor = objects_with(scene, a)[0];
    const auto cands = objects_related_to(scene, anchor, rel);
    if (cands.size() > 1) return std::nullopt;
    const AttrCategory asked = random_asked_category(rng);
    d.bindings.attr1 = a;
    d.bindings.relation = rel;
    d.bindings.asked = asked;
    d.text = {"what", "is", "the", kCategoryTokens[static_cast<int>(asked)], "of", "the", "thing",
              kRelationTokens[static_cast<int>(rel)], "of", "the"};
    append(d.text, singular(a));
    d.new_mentions = {anchor};
    if (!cands.empty()) {
      d.focus = cands[0];
      d.new_mentions.push_back(cands[0]);
    }
    return d;
  }
  (void)turn;
  (void)cfg;
  throw GenError("unknown template id '" + id + "'");
}

// Caption: "there is a <size> <color> <shape>", constrained so the stated
// triple identifies the object uniquely.
std::optional<std::pair<std::vector<std::string>, int>> make_caption(const SceneGraph& scene, Rng& rng) {
  std::vector<int> order(scene.objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order.begin(), order.end());
  for (int idx : order) {
    const auto& o = scene.objects[idx];
    bool unique = true;
    for (const auto& other : scene.objects)
      if (&other != &o && other.size == o.size && other.color == o.color && other.shape == o.shape) {
        unique = false;
        break;
      }
    if (!unique) continue;
    std::vector<std::string> text = {"there", "is", "a", kSizeTokens[static_cast<int>(o.size)],
                                     kColorTokens[static_cast<int>(o.color)],
                                     kShapeTokens[static_cast<int>(o.shape)]};
    return std::make_pair(text, idx);
  }
  return std::nullopt;
}

struct WeightedTemplate {
  const QuestionTemplate* tmpl;
  double weight;
};

// Enabled templates grouped per family, with the family sampling weights.
// The family is drawn first so the realized family mix tracks the configured
// weights; instantiation failures only shift mass within a family.
struct TemplateSampler {
  std::array<std::vector<WeightedTemplate>, 3> per_family;
  std::array<double, 3> family_weight{};

  explicit TemplateSampler(const GenConfig& cfg) {
    auto mult = [&](const std::string& id) {
      auto it = cfg.template_weights.find(id);
      return it == cfg.template_weights.end() ? 1.0 : it->second;
    };
    for (const auto& t : template_inventory()) {
      const double m = mult(t.id);
      if (m <= 0) continue;
      per_family[static_cast<int>(t.family)].push_back({&t, m});
    }
    family_weight = {cfg.weight_count, cfg.weight_exist, cfg.weight_seek};
    double total = 0;
    for (int f = 0; f < 3; ++f) {
      if (per_family[f].empty()) family_weight[f] = 0;
      total += family_weight[f];
    }
    if (total <= 0) throw GenError("all templates disabled by weights");
  }

  int sample_family(Rng& rng) const {
    const double total = family_weight[0] + family_weight[1] + family_weight[2];
    double x = rng.uniform_real() * total;
    for (int f = 0; f < 3; ++f) {
      x -= family_weight[f];
      if (x <= 0 && family_weight[f] > 0) return f;
    }
    for (int f = 2; f >= 0; --f)
      if (family_weight[f] > 0) return f;
    return 0;
  }

  static std::vector<const QuestionTemplate*> weighted_order(std::vector<WeightedTemplate> pool, Rng& rng) {
    std::vector<const QuestionTemplate*> order;
    while (!pool.empty()) {
      double total = 0;
      for (const auto& w : pool) total += w.weight;
      double x = rng.uniform_real() * total;
      std::size_t pick = pool.size() - 1;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        x -= pool[i].weight;
        if (x <= 0) {
          pick = i;
          break;
        }
      }
      order.push_back(pool[pick].tmpl);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    return order;
  }

  // Weighted order without replacement within the sampled family. The
  // history-dependent subset is tried first with probability coref_share
  // (the turn-interpolated follow-up share); the other subset serves as the
  // fallback so the family mix is preserved either way.
  std::vector<const QuestionTemplate*> family_order(int fam, double coref_share, Rng& rng) const {
    std::vector<WeightedTemplate> hist, plain;
    for (const auto& w : per_family[fam])
      (w.tmpl->history_dependent ? hist : plain).push_back(w);
    const bool hist_first = !hist.empty() && (plain.empty() || rng.uniform_real() < coref_share);
    std::vector<const QuestionTemplate*> order =
        weighted_order(hist_first ? hist : plain, rng);
    for (const QuestionTemplate* t : weighted_order(hist_first ? plain : hist, rng)) order.push_back(t);
    return order;
  }
};

}  // namespace

std::optional<DialogRecord> generate_dialog(const SceneGraph& scene, Rng& rng, const GenConfig& cfg) {
  cfg.validate();
  DialogRecord rec;
  rec.scene = scene;

  const auto caption = make_caption(scene, rng);
  if (!caption) return std::nullopt;
  rec.caption = caption->first;

  HistoryState hist(scene.objects.size());
  hist.focus.push_back(caption->second);  // caption = turn 0
  hist.mention(caption->second, 0);

  const TemplateSampler sampler(cfg);
  for (int q = 0; q < cfg.turns; ++q) {
    const int turn = q + 1;
    const double frac = cfg.turns > 1 ? static_cast<double>(q) / (cfg.turns - 1) : 0.0;
    const double coref_share = cfg.coref_share_first + frac * (cfg.coref_share_last - cfg.coref_share_first);
    std::optional<TurnDraft> draft;
    const QuestionTemplate* chosen = nullptr;
    for (int attempt = 0; attempt < 50 && !draft; ++attempt) {
      const int fam = sampler.sample_family(rng);
      for (const QuestionTemplate* t : sampler.family_order(fam, coref_share, rng)) {
        draft = instantiate(t->id, scene, hist, turn, rng, cfg);
        if (draft) {
          chosen = t;
          break;
        }
      }
    }
    if (!draft) return std::nullopt;  // caller regenerates the scene

    DialogTurn dt;
    dt.text = draft->text;
    dt.template_id = chosen->id;
    dt.family = chosen->family;
    dt.bindings = draft->bindings;
    dt.referent_object = draft->referent;
    dt.coref_turn = draft->coref_turn;
    if (draft->coref_turn) dt.coref_distance = turn - *draft->coref_turn;
    dt.answer = oracle_answer(scene, dt.template_id, dt.bindings, cfg.count_cap);

    hist.focus.push_back(draft->focus);
    for (int obj : draft->new_mentions) hist.mention(obj, turn);

    rec.turns.push_back(std::move(dt));
  }
  return rec;
}

DialogRecord generate_dialog_at(const GenConfig& cfg, std::uint64_t dialog_index) {
  Rng base(cfg.seed);
  for (int scene_attempt = 0; scene_attempt < 1000; ++scene_attempt) {
    Rng rng = base.derive(dialog_index * 1009 + static_cast<std::uint64_t>(scene_attempt));
    SceneGraph scene = sample_scene(rng, cfg);
    auto rec = generate_dialog(scene, rng, cfg);
    if (rec) {
      rec->seed = splitmix64(cfg.seed ^ splitmix64(dialog_index + 1));
      return *rec;
    }
  }
  throw GenError("failed to generate dialog " + std::to_string(dialog_index) + " after 1000 scene attempts");
}

std::vector<DialogRecord> generate_dataset(const GenConfig& cfg, int workers) {
  cfg.validate();
  std::vector<DialogRecord> out(cfg.dialogs);
  if (workers <= 1) {
    for (int i = 0; i < cfg.dialogs; ++i) out[i] = generate_dialog_at(cfg, i);
    return out;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < cfg.dialogs; i = next.fetch_add(1))
        out[i] = generate_dialog_at(cfg, i);
    });
  for (auto& t : pool) t.join();
  return out;
}

GenStats collect_stats(const std::vector<DialogRecord>& records) {
  GenStats s;
  for (const auto& r : records)
    for (const auto& t : r.turns) {
      s.per_template[t.template_id]++;
      s.per_family[family_name(t.family)]++;
      s.per_coref_distance[t.coref_distance ? *t.coref_distance : -1]++;
    }
  return s;
}

}  // namespace cammac
