#pragma once

#include <filesystem>
#include <string>

#include "adsy/layers.hpp"

namespace adsy {

// Parameter checkpoint: magic "ADSW", version u16, a section name telling
// which model the weights belong to, then a named tensor table (shapes +
// little-endian 32-bit values). Parameters first, buffers after, both in
// registration order. Loading validates the section, every name, and every
// shape against the given ParamSet.

inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const ParamSet<T>& ps, const std::string& section,
                     const std::filesystem::path& path);

template <typename T>
void load_checkpoint(ParamSet<T>& ps, const std::string& section,
                     const std::filesystem::path& path);

// Section name stored in a checkpoint file (for error messages / tooling).
std::string checkpoint_section(const std::filesystem::path& path);

extern template void save_checkpoint<float>(const ParamSet<float>&, const std::string&,
                                            const std::filesystem::path&);
extern template void load_checkpoint<float>(ParamSet<float>&, const std::string&,
                                            const std::filesystem::path&);
extern template void save_checkpoint<double>(const ParamSet<double>&, const std::string&,
                                             const std::filesystem::path&);
extern template void load_checkpoint<double>(ParamSet<double>&, const std::string&,
                                             const std::filesystem::path&);

}  // namespace adsy
