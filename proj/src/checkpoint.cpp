#include "wavegen/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace wavegen {

namespace {

const char kMagic[4] = {'W', 'G', 'A', 'N'};
constexpr uint32_t kVersion = 1;

void put_u32le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  os.write((const char*)b, 4);
}

uint32_t get_u32le(std::istream& is) {
  unsigned char b[4];
  is.read((char*)b, 4);
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  return (uint32_t)b[0] | ((uint32_t)b[1] << 8) | ((uint32_t)b[2] << 16) | ((uint32_t)b[3] << 24);
}

static_assert(sizeof(float) == 4, "float must be 32-bit IEEE-754");

bool is_little_endian() {
  uint32_t x = 1;
  unsigned char b;
  std::memcpy(&b, &x, 1);
  return b == 1;
}

void write_f32le(std::ostream& os, const std::vector<float>& v) {
  if (is_little_endian()) {
    os.write((const char*)v.data(), (std::streamsize)(v.size() * 4));
  } else {
    for (float f : v) {
      unsigned char b[4];
      std::memcpy(b, &f, 4);
      std::swap(b[0], b[3]);
      std::swap(b[1], b[2]);
      os.write((const char*)b, 4);
    }
  }
}

void read_f32le(std::istream& is, std::vector<float>& v) {
  is.read((char*)v.data(), (std::streamsize)(v.size() * 4));
  if (!is) throw std::runtime_error("checkpoint: truncated tensor payload");
  if (!is_little_endian()) {
    for (float& f : v) {
      unsigned char b[4];
      std::memcpy(b, &f, 4);
      std::swap(b[0], b[3]);
      std::swap(b[1], b[2]);
      std::memcpy(&f, b, 4);
    }
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::ordered_json meta = ck.meta;
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : ck.tensors) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["shape"] = t.shape;
    entry["byte_offset"] = offset;
    manifest.push_back(std::move(entry));
    offset += (uint64_t)t.data.size() * 4;
  }
  meta["tensors"] = std::move(manifest);
  const std::string meta_str = meta.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  os.write(kMagic, 4);
  put_u32le(os, kVersion);
  put_u32le(os, (uint32_t)meta_str.size());
  os.write(meta_str.data(), (std::streamsize)meta_str.size());
  for (const auto& [name, t] : ck.tensors) write_f32le(os, t.data);
  os.flush();
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = get_u32le(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  uint32_t meta_len = get_u32le(is);
  std::string meta_str(meta_len, '\0');
  is.read(meta_str.data(), meta_len);
  if (!is) throw std::runtime_error("checkpoint: truncated metadata");

  Checkpoint ck;
  ck.meta = nlohmann::ordered_json::parse(meta_str);
  if (!ck.meta.contains("tensors") || !ck.meta["tensors"].is_array())
    throw std::runtime_error("checkpoint: metadata missing tensor manifest");

  const std::streampos payload_start = is.tellg();
  uint64_t expected_offset = 0;
  for (const auto& entry : ck.meta["tensors"]) {
    std::string name = entry.at("name").get<std::string>();
    Shape shape = entry.at("shape").get<Shape>();
    uint64_t byte_offset = entry.at("byte_offset").get<uint64_t>();
    if (byte_offset != expected_offset)
      throw std::runtime_error("checkpoint: manifest offsets overlap or leave gaps");
    Tensor<float> t(shape);
    is.seekg(payload_start + (std::streamoff)byte_offset);
    read_f32le(is, t.data);
    expected_offset = byte_offset + (uint64_t)t.data.size() * 4;
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  ck.meta.erase("tensors");
  return ck;
}

nlohmann::ordered_json model_spec_to_json(const ModelSpec& spec) {
  nlohmann::ordered_json j;
  j["kind"] = model_kind_name(spec.kind);
  j["d"] = spec.d;
  j["c"] = spec.c;
  j["latent_dim"] = spec.latent_dim;
  j["phase_shuffle_n"] = spec.options.phase_shuffle_n;
  j["phase_shuffle_per_channel"] = spec.options.phase_shuffle_per_channel;
  j["upsample_mode"] = upsample_mode_name(spec.options.upsample_mode);
  j["post_filter"] = spec.options.post_filter;
  j["dropout"] = spec.options.dropout;
  j["dropout_rate"] = spec.options.dropout_rate;
  return j;
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.kind = parse_model_kind(j.at("kind").get<std::string>());
  spec.d = j.at("d").get<long>();
  spec.c = j.at("c").get<long>();
  spec.latent_dim = j.at("latent_dim").get<long>();
  spec.options.phase_shuffle_n = j.at("phase_shuffle_n").get<long>();
  spec.options.phase_shuffle_per_channel = j.at("phase_shuffle_per_channel").get<bool>();
  spec.options.upsample_mode = parse_upsample_mode(j.at("upsample_mode").get<std::string>());
  spec.options.post_filter = j.at("post_filter").get<bool>();
  spec.options.dropout = j.at("dropout").get<bool>();
  spec.options.dropout_rate = j.at("dropout_rate").get<double>();
  return spec;
}

void append_model_tensors(Checkpoint& ck, const Model<float>& m, const std::string& prefix) {
  for (const auto& p : m.params) ck.tensors.emplace_back(prefix + p.name, p.node->value);
}

void load_model_tensors(const Checkpoint& ck, Model<float>& m, const std::string& prefix) {
  for (auto& p : m.params) {
    const std::string want = prefix + p.name;
    auto it = std::find_if(ck.tensors.begin(), ck.tensors.end(),
                           [&](const auto& kv) { return kv.first == want; });
    if (it == ck.tensors.end())
      throw std::runtime_error("checkpoint: missing tensor " + want);
    if (it->second.shape != p.node->value.shape)
      throw std::runtime_error("checkpoint: shape mismatch for tensor " + want);
    p.node->value = it->second;
  }
}

}  // namespace wavegen
