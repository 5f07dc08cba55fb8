#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace oracle {

// Reference FNV-1a 64 over names joined with 0x1f.
inline std::uint64_t schema_id(const std::vector<std::string>& names) {
  std::uint64_t h = 14695981039346656037ull;
  bool first = true;
  for (const auto& n : names) {
    if (!first) {
      h ^= 0x1fu;
      h *= 1099511628211ull;
    }
    first = false;
    for (unsigned char c : n) {
      h ^= c;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace oracle
