#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "psfed/model.hpp"

namespace psfed {

// On-disk model snapshot. Layout: the magic bytes "PSFP1", a little-endian
// u32 byte length, a UTF-8 JSON header (architecture, seed, round, component
// tag, adam step), the flat parameter array as little-endian IEEE-754
// doubles, then the Adam first- and second-moment arrays in the same
// encoding. save(load(f)) reproduces f byte for byte.
struct Checkpoint {
  ParamVector params;
  AdamState adam;
  std::uint64_t seed = 0;
  int round = 0;
  std::string component;  // "global", "anchor_s", "anchor_l", "client_<band>"
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace psfed
