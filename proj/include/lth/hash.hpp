#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace lth {

// FNV-1a, 64-bit. Good enough for cache keys and provenance checks.
class Fnv1a {
 public:
  Fnv1a& update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  Fnv1a& update(const std::string& s) { return update(s.data(), s.size()); }

  template <typename T>
  Fnv1a& update_pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    return update(&v, sizeof(T));
  }

  template <typename T>
  Fnv1a& update_vec(const std::vector<T>& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    update_pod<std::uint64_t>(v.size());
    return update(v.data(), v.size() * sizeof(T));
  }

  std::uint64_t digest() const { return state_; }

  std::string hex() const {
    static const char* k = "0123456789abcdef";
    std::string s(16, '0');
    std::uint64_t v = state_;
    for (int i = 15; i >= 0; --i, v >>= 4) s[std::size_t(i)] = k[v & 0xf];
    return s;
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t hash_bytes(const void* data, std::size_t len) {
  return Fnv1a().update(data, len).digest();
}

}  // namespace lth
