#ifndef CHARBENCH_PARAMS_IO_HPP
#define CHARBENCH_PARAMS_IO_HPP

#include <filesystem>
#include <utility>

#include "charbench/network.hpp"

namespace charbench {

// Parameter file ("CBPW"): magic, u16 version, u32 entry count, then per
// entry (u16 name length, utf-8 name, u8 dtype tag (0 = f32), u8 rank,
// u32 dims x rank, raw little-endian f32 data), closed by a CRC-32 (zlib)
// of every preceding byte. Entries are written sorted by name, so identical
// stores serialize to identical bytes.

/// Writes every entry (parameters and batchnorm buffers).
void save_params(const ParamStore& store, const std::filesystem::path& path);

/// Validates magic/version/CRC and the exact name/shape match against the
/// store before mutating it; on any error the store is left untouched.
void load_params(const std::filesystem::path& path, ParamStore& store);

/// Entry names and shapes (CRC-validated) without touching any store.
std::vector<std::pair<std::string, Shape>> inspect_params(const std::filesystem::path& path);

} // namespace charbench

#endif
