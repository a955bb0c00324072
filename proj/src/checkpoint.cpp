#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "cammac/trainer.hpp"

// Checkpoint layout: magic "CAMMAC01", u32 tensor count, then per tensor
// {u32 name length, name, u32 rank, u32 dims..., f32 data}, then a JSON
// trailer and a trailing u64 with the trailer's byte length. All integers
// and floats little-endian.

namespace cammac {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'A', 'M', 'M', 'A', 'C', '0', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

struct Cursor {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

json flags_json(const ModelFlags& f) { return json{{"cq", f.cq}, {"caa", f.caa}, {"mtm", f.mtm}}; }

ModelFlags flags_from(const json& j) {
  ModelFlags f;
  f.cq = j.at("cq").get<bool>();
  f.caa = j.at("caa").get<bool>();
  f.mtm = j.at("mtm").get<bool>();
  return f;
}

json trailer_json(const Checkpoint& c) {
  json metrics = json::array();
  for (const auto& m : c.metrics) metrics.push_back(json::array({m.epoch, m.train_loss, m.val_accuracy}));
  const TrainConfig& t = c.train_config;
  const ModelConfig& mc = c.model_config;
  return json{
      {"train_config",
       {{"learning_rate", t.learning_rate},
        {"p", t.p},
        {"d", t.d},
        {"batch_dialogs", t.batch_dialogs},
        {"batch_turns", t.batch_turns},
        {"max_epochs", t.max_epochs},
        {"early_stop_patience", t.early_stop_patience},
        {"clip_norm", t.clip_norm},
        {"max_concat_tokens", t.max_concat_tokens},
        {"seed", t.seed},
        {"max_steps", t.max_steps},
        {"flags", flags_json(t.flags)}}},
      {"model_config",
       {{"d", mc.d},
        {"p", mc.p},
        {"grid", json::array({mc.grid_h, mc.grid_w})},
        {"max_concat_tokens", mc.max_concat_tokens},
        {"flags", flags_json(mc.flags)},
        {"vocab", mc.vocab},
        {"answer_vocab", mc.answer_vocab}}},
      {"epoch", c.epoch},
      {"val_accuracy", c.val_accuracy},
      {"metrics", metrics},
      {"rng", c.rng_state},
      {"adam_step", c.adam_step}};
}

void trailer_parse(const json& j, Checkpoint& c) {
  const json& t = j.at("train_config");
  c.train_config.learning_rate = t.at("learning_rate").get<double>();
  c.train_config.p = t.at("p").get<int>();
  c.train_config.d = t.at("d").get<int>();
  c.train_config.batch_dialogs = t.at("batch_dialogs").get<int>();
  c.train_config.batch_turns = t.at("batch_turns").get<int>();
  c.train_config.max_epochs = t.at("max_epochs").get<int>();
  c.train_config.early_stop_patience = t.at("early_stop_patience").get<int>();
  c.train_config.clip_norm = t.at("clip_norm").get<double>();
  c.train_config.max_concat_tokens = t.at("max_concat_tokens").get<int>();
  c.train_config.seed = t.at("seed").get<std::uint64_t>();
  c.train_config.max_steps = t.at("max_steps").get<long long>();
  c.train_config.flags = flags_from(t.at("flags"));

  const json& m = j.at("model_config");
  c.model_config.d = m.at("d").get<int>();
  c.model_config.p = m.at("p").get<int>();
  c.model_config.grid_h = m.at("grid").at(0).get<int>();
  c.model_config.grid_w = m.at("grid").at(1).get<int>();
  c.model_config.max_concat_tokens = m.at("max_concat_tokens").get<int>();
  c.model_config.flags = flags_from(m.at("flags"));
  c.model_config.vocab = m.at("vocab").get<std::vector<std::string>>();
  c.model_config.answer_vocab = m.at("answer_vocab").get<std::vector<std::string>>();
  c.model_config.finalize();

  c.epoch = j.at("epoch").get<int>();
  c.val_accuracy = j.at("val_accuracy").get<double>();
  for (const auto& e : j.at("metrics"))
    c.metrics.push_back({e.at(0).get<int>(), e.at(1).get<double>(), e.at(2).get<double>()});
  c.rng_state = j.at("rng").get<std::string>();
  c.adam_step = j.at("adam_step").get<long long>();
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data) put_f32(out, v);
  }
  const std::string trailer = trailer_json(ckpt).dump();
  out.append(trailer);
  put_u64(out, trailer.size());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < sizeof(kMagic) + 8 + 4) throw CheckpointError("truncated checkpoint: file too small");
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("bad magic bytes: not a CAMMAC01 checkpoint");

  std::uint64_t trailer_len = 0;
  for (int i = 0; i < 8; ++i)
    trailer_len |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[buf.size() - 8 + i])) << (8 * i);
  if (trailer_len + 8 > buf.size()) throw CheckpointError("trailer length exceeds file size");
  const std::size_t trailer_start = buf.size() - 8 - trailer_len;

  Cursor cur{buf, sizeof(kMagic)};
  const std::uint32_t count = cur.u32("tensor count");
  Checkpoint c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = cur.u32("tensor name length");
    if (name_len > 4096) throw CheckpointError("shape table inconsistent: absurd name length");
    const std::string name = cur.bytes(name_len, "tensor name");
    const std::uint32_t rank = cur.u32("tensor rank");
    if (rank > 8) throw CheckpointError("shape table inconsistent: rank " + std::to_string(rank));
    std::vector<int> shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<int>(cur.u32("tensor dim"));
      numel *= static_cast<std::size_t>(d);
    }
    if (cur.pos + numel * 4 > trailer_start)
      throw CheckpointError("shape table inconsistent: tensor '" + name + "' overruns trailer");
    std::vector<float> data(numel);
    for (auto& v : data) v = cur.f32("tensor data");
    c.tensors.emplace(name, TensorT<float>(std::move(shape), std::move(data)));
  }
  if (cur.pos != trailer_start)
    throw CheckpointError("shape table inconsistent: tensor section does not meet trailer");

  try {
    trailer_parse(json::parse(buf.substr(trailer_start, trailer_len)), c);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint trailer: ") + e.what());
  }
  return c;
}

}  // namespace cammac
