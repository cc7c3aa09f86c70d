#include "irmlab/sha256.hpp"

#include <openssl/evp.h>

#include <stdexcept>

namespace irmlab {

Sha256::Sha256() {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256: failed to initialize digest context");
  }
  ctx_ = ctx;
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(const void* data, std::size_t len) {
  if (finalized_) throw std::runtime_error("sha256: update after finalize");
  if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, len) != 1) {
    throw std::runtime_error("sha256: digest update failed");
  }
}

std::string Sha256::hex_digest() {
  if (finalized_) throw std::runtime_error("sha256: already finalized");
  finalized_ = true;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), digest, &len) != 1) {
    throw std::runtime_error("sha256: digest finalize failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_hex(const void* data, std::size_t len) {
  Sha256 h;
  h.update(data, len);
  return h.hex_digest();
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string hash_tensors(const std::vector<const Tensor*>& tensors) {
  Sha256 h;
  for (const Tensor* t : tensors) {
    const std::uint64_t rank = t->rank();
    h.update(&rank, sizeof(rank));
    for (std::size_t d : t->shape()) {
      const std::uint64_t dim = d;
      h.update(&dim, sizeof(dim));
    }
    h.update(t->data(), t->size() * sizeof(double));
  }
  return h.hex_digest();
}

}  // namespace irmlab
