#pragma once

#include <filesystem>
#include <string>

#include "natreg/transformer.hpp"

NATREG_NAMESPACE_BEGIN

inline constexpr char kCheckpointMagic[] = "NATREG01";

/// Little-endian archive: magic, u32 count, then per tensor u16 name length,
/// name bytes, u8 rank, u32 dims, f32 values.
std::string serialize_params(const ModelParams& params);
/// Throws FormatError on a bad magic, truncation, trailing bytes, or a
/// duplicate tensor name.
ModelParams deserialize_params(std::string_view bytes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

/// Checkpoint plus `<path>.cfg` describing the model kind and configuration.
void save_model(const Transformer& model, const std::filesystem::path& path);
Transformer load_model(const std::filesystem::path& path);

std::string_view model_kind_name(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

NATREG_NAMESPACE_END
