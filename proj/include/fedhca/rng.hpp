#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedhca {

// Seed splitting: one master seed fans out into independent named streams.
// A stream is identified by a label such as "client/c3/round/17" or
// "scenario/task/seg". The derivation is FNV-1a over the label mixed into
// the master seed, finalized with SplitMix64. Because streams are addressed
// by label rather than by draw order, adding or removing clients never
// reshuffles the randomness of unrelated streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_stream(std::uint64_t master, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64-bit offset basis
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(master ^ h);
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view label) {
  return std::mt19937_64(derive_stream(master, label));
}

}  // namespace fedhca
