#pragma once

#include <cstdint>
#include <initializer_list>

namespace fedcam {

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent child seed for (base, tag0, tag1, ...). Streams derived from
/// different tag tuples do not overlap in practice.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = mix64(base);
  for (std::uint64_t t : tags) s = mix64(s ^ mix64(t + 0x632be59bd9b4e019ULL));
  return s;
}

// Stream tags used across the simulator.
enum SeedStream : std::uint64_t {
  kStreamData = 1,
  kStreamSplit = 2,
  kStreamPartition = 3,
  kStreamInit = 4,
  kStreamClient = 5,
  kStreamAttack = 6,
  kStreamAutoencoder = 7,
  kStreamProbe = 8,
};

}  // namespace fedcam
