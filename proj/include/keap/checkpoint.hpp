#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "keap/errors.hpp"
#include "keap/model.hpp"
#include "keap/train.hpp"

namespace keap {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{{"hidden_dim", cfg.hidden_dim},
                        {"encoder_layers", cfg.encoder_layers},
                        {"pik_blocks", cfg.pik_blocks},
                        {"heads", cfg.heads},
                        {"ffn_dim", cfg.ffn_dim},
                        {"knowledge_layers", cfg.knowledge_layers},
                        {"residue_vocab", cfg.residue_vocab},
                        {"text_vocab", cfg.text_vocab},
                        {"max_protein_len", cfg.max_protein_len},
                        {"max_relation_len", cfg.max_relation_len},
                        {"max_attribute_len", cfg.max_attribute_len},
                        {"variant", variant_name(cfg.variant)},
                        {"triplet_match", cfg.triplet_match},
                        {"mask_ratio", cfg.mask_ratio},
                        {"match_lambda", cfg.match_lambda},
                        {"match_swap_fraction", cfg.match_swap_fraction}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  cfg.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  cfg.pik_blocks = j.at("pik_blocks").get<std::size_t>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  cfg.knowledge_layers = j.at("knowledge_layers").get<std::size_t>();
  cfg.residue_vocab = j.at("residue_vocab").get<std::size_t>();
  cfg.text_vocab = j.at("text_vocab").get<std::size_t>();
  cfg.max_protein_len = j.at("max_protein_len").get<std::size_t>();
  cfg.max_relation_len = j.at("max_relation_len").get<std::size_t>();
  cfg.max_attribute_len = j.at("max_attribute_len").get<std::size_t>();
  cfg.variant = variant_from_name(j.at("variant").get<std::string>());
  cfg.triplet_match = j.at("triplet_match").get<bool>();
  cfg.mask_ratio = j.at("mask_ratio").get<double>();
  cfg.match_lambda = j.at("match_lambda").get<double>();
  cfg.match_swap_fraction = j.at("match_swap_fraction").get<double>();
  return cfg;
}

namespace detail {

inline void append_f32_le(std::string& blob, const std::vector<float>& values) {
  for (const float v : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    blob.push_back(static_cast<char>(bits & 0xff));
    blob.push_back(static_cast<char>((bits >> 8) & 0xff));
    blob.push_back(static_cast<char>((bits >> 16) & 0xff));
    blob.push_back(static_cast<char>((bits >> 24) & 0xff));
  }
}

inline std::vector<float> read_f32_le(const std::string& blob, std::size_t offset,
                                      std::size_t length) {
  if (length % 4 != 0 || offset + length > blob.size())
    throw CorruptionError("checkpoint: entry at offset " + std::to_string(offset) + " length " +
                          std::to_string(length) + " overruns blob of " +
                          std::to_string(blob.size()) + " bytes");
  std::vector<float> out(length / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(blob.data() + offset + i * 4);
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                               (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) |
                               (static_cast<std::uint32_t>(p[3]) << 24);
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    out[i] = v;
  }
  return out;
}

}  // namespace detail

// Single file: one line of manifest JSON, then the float32 little-endian
// blob. Entry offsets are byte positions into the blob and tile it exactly.
inline void save_checkpoint(const TrainState<float>& state, const std::string& path) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["model_config"] = model_config_to_json(state.model_config);
  manifest["step"] = state.step;
  manifest["rng_state"] = state.loop_rng.state();

  std::string blob;
  nlohmann::json entries = nlohmann::json::array();
  auto push_entry = [&](const std::string& name, const Shape& shape,
                        const std::vector<float>& values) {
    entries.push_back({{"name", name},
                       {"shape", shape},
                       {"offset", blob.size()},
                       {"length", values.size() * 4}});
    detail::append_f32_le(blob, values);
  };
  for (const auto& [name, tensor] : state.params.named)
    push_entry("param/" + name, tensor.shape(), tensor.data());
  for (const auto& [name, slots] : state.moments) {
    const Shape& shape = state.params.at(name).shape();
    push_entry("adam_m/" + name, shape, slots.m);
    push_entry("adam_v/" + name, shape, slots.v);
  }
  manifest["entries"] = std::move(entries);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open checkpoint for writing: " + path);
  out << manifest.dump() << '\n';
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

inline TrainState<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint: " + path);
  std::string manifest_line;
  if (!std::getline(in, manifest_line)) throw CorruptionError("checkpoint: missing manifest line");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_line);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  const int version = manifest.at("format_version").get<int>();
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint: unknown format version " + std::to_string(version));

  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  TrainState<float> state;
  state.model_config = model_config_from_json(manifest.at("model_config"));
  state.step = manifest.at("step").get<std::size_t>();
  state.loop_rng.restore(manifest.at("rng_state").get<std::string>());
  state.params = init_parameters<float>(state.model_config, 0);

  // Validate that entries tile the blob with no gaps or overlaps.
  std::size_t covered = 0;
  for (const auto& e : manifest.at("entries")) {
    const auto offset = e.at("offset").get<std::size_t>();
    const auto length = e.at("length").get<std::size_t>();
    if (offset != covered)
      throw CorruptionError("checkpoint: entry '" + e.at("name").get<std::string>() +
                            "' at offset " + std::to_string(offset) + ", expected " +
                            std::to_string(covered));
    covered += length;
  }
  if (covered != blob.size())
    throw CorruptionError("checkpoint: manifest covers " + std::to_string(covered) +
                          " bytes, blob has " + std::to_string(blob.size()));

  std::size_t params_seen = 0, moments_seen = 0;
  for (const auto& e : manifest.at("entries")) {
    const auto name = e.at("name").get<std::string>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto length = e.at("length").get<std::size_t>();
    std::vector<float> values = detail::read_f32_le(blob, offset, length);
    if (name.starts_with("param/")) {
      Tensor<float>& t = state.params.at(name.substr(6));
      if (t.numel() != values.size())
        throw CorruptionError("checkpoint: '" + name + "' has " + std::to_string(values.size()) +
                              " values, model expects " + std::to_string(t.numel()));
      t.data() = std::move(values);
      ++params_seen;
    } else if (name.starts_with("adam_m/") || name.starts_with("adam_v/")) {
      const bool is_m = name.starts_with("adam_m/");
      const std::string pname = name.substr(7);
      if (!state.params.at(pname).requires_grad())
        throw CorruptionError("checkpoint: moments for frozen tensor '" + pname + "'");
      AdamSlots<float>& slots = state.moments[pname];
      (is_m ? slots.m : slots.v) = std::move(values);
      ++moments_seen;
    } else {
      throw CorruptionError("checkpoint: unknown entry kind '" + name + "'");
    }
  }
  if (params_seen != state.params.named.size())
    throw CorruptionError("checkpoint: expected " + std::to_string(state.params.named.size()) +
                          " parameter entries, found " + std::to_string(params_seen));
  const std::size_t learnable = state.params.learnable_names().size();
  if (moments_seen != 2 * learnable)
    throw CorruptionError("checkpoint: expected " + std::to_string(2 * learnable) +
                          " moment entries, found " + std::to_string(moments_seen));
  return state;
}

}  // namespace keap
