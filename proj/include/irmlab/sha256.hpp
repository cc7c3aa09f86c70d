#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "irmlab/tensor.hpp"

namespace irmlab {

/// Incremental SHA-256, hex-encoded. Backed by OpenSSL's EVP interface.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t len);
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::string hex_digest();  // finalizes; further updates are an error

 private:
  void* ctx_;
  bool finalized_ = false;
};

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);

/// Canonical hash of a parameter set: the raw 64-bit payloads of each tensor
/// in the given order, preceded by its dimensions.
std::string hash_tensors(const std::vector<const Tensor*>& tensors);

}  // namespace irmlab
