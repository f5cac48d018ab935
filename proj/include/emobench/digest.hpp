#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

#include <openssl/evp.h>

#include "emobench/error.hpp"

namespace emobench {

inline std::array<unsigned char, 32> sha256(std::string_view data) {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size()) {
    throw Error(ErrorCode::kIoError, "SHA-256 computation failed");
  }
  return out;
}

inline std::string sha256_hex(std::string_view data) {
  static constexpr char kHex[] = "0123456789abcdef";
  auto bytes = sha256(data);
  std::string hex;
  hex.reserve(bytes.size() * 2);
  for (unsigned char b : bytes) {
    hex.push_back(kHex[b >> 4]);
    hex.push_back(kHex[b & 0x0f]);
  }
  return hex;
}

namespace detail {

// Length-prefixed so that ("ab", "c") and ("a", "bc") never collide.
inline std::string encode_fields(std::initializer_list<std::string_view> fields) {
  std::string buf;
  for (auto f : fields) {
    buf += std::to_string(f.size());
    buf += ':';
    buf += f;
    buf += ';';
  }
  return buf;
}

}  // namespace detail

inline std::string digest_fields(std::initializer_list<std::string_view> fields) {
  return sha256_hex(detail::encode_fields(fields));
}

/// 64-bit seed derived from the leading digest bytes.
inline std::uint64_t seed_from_fields(std::initializer_list<std::string_view> fields) {
  auto bytes = sha256(detail::encode_fields(fields));
  std::uint64_t seed = 0;
  for (int i = 0; i < 8; ++i) seed = (seed << 8) | bytes[i];
  return seed;
}

}  // namespace emobench
