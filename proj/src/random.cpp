// SPDX-License-Identifier: Apache-2.0
#include "egfi/random.hpp"

namespace egfi {

std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  SplitMix64 mix(seed ^ h);
  return mix.next();
}

}  // namespace egfi
