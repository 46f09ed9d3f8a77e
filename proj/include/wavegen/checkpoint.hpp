#ifndef WAVEGEN_CHECKPOINT_HPP
#define WAVEGEN_CHECKPOINT_HPP

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wavegen/models.hpp"

namespace wavegen {

/// On-disk model snapshot.
///
/// File layout: magic "WGAN", u32 LE format version (1), u32 LE metadata
/// length, UTF-8 JSON metadata, then all tensors as 32-bit IEEE-754
/// little-endian floats, row-major (last axis fastest), concatenated at the
/// byte offsets declared in the metadata's tensor manifest (offsets are
/// relative to the start of the payload section).
///
/// `meta` holds everything except the manifest, which is derived from
/// `tensors` on save and stripped on load, so save(load(f)) == f byte for
/// byte.
struct Checkpoint {
  nlohmann::ordered_json meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

inline std::string upsample_mode_name(UpsampleMode m) {
  switch (m) {
    case UpsampleMode::ZeroInsertion: return "zero";
    case UpsampleMode::Nearest: return "nearest";
    case UpsampleMode::Linear: return "linear";
    case UpsampleMode::Cubic: return "cubic";
  }
  throw std::invalid_argument("unknown upsample mode");
}

nlohmann::ordered_json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

/// Append every parameter of `m` to `ck.tensors` as "<prefix><name>".
void append_model_tensors(Checkpoint& ck, const Model<float>& m, const std::string& prefix);

/// Copy checkpoint tensors named "<prefix><name>" back into `m`'s parameters.
/// Every parameter must be present with a matching shape.
void load_model_tensors(const Checkpoint& ck, Model<float>& m, const std::string& prefix);

}  // namespace wavegen

#endif
