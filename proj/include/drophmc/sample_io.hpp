#pragma once

// Binary container for posterior draws.
//
//   offset  field
//   0       magic "DHMCSMP1" (8 bytes)
//   8       u32 format version (1)
//   12      u32 K, u32 D
//   20      u32 length + algorithm name (UTF-8)
//           u64 chain seed
//           u32 length + configuration echo (INI text)
//           u32 length + chain statistics (key=value lines)
//           u64 draw count
//           draw records: u64 iteration, (K*D + K) f64 (weights row-major, then biases)
//
// All integers and doubles are little-endian.

#include "drophmc/samplers.hpp"

#include <filesystem>
#include <string>

namespace drophmc {

inline constexpr char kSampleMagic[8] = {'D', 'H', 'M', 'C', 'S', 'M', 'P', '1'};
inline constexpr std::uint32_t kSampleFormatVersion = 1;

struct SampleFile {
  PosteriorSamples samples;
  std::string config_echo;
};

std::string encode_samples(const PosteriorSamples& samples, const std::string& config_echo);
SampleFile decode_samples(const std::string& bytes);

void write_samples(const std::filesystem::path& path, const PosteriorSamples& samples,
                   const std::string& config_echo);
SampleFile read_samples(const std::filesystem::path& path);

}  // namespace drophmc
