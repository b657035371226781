#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace panda {

using Digest = std::array<uint8_t, 32>;

// Incremental SHA-256 (OpenSSL EVP underneath).
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, size_t size);
  Digest finish();

 private:
  void* ctx_;
};

Digest sha256(const void* data, size_t size);
Digest sha256(const std::string& data);
std::string hex_digest(const Digest& d);

}  // namespace panda
