#include "stratus/hash.h"

#include <openssl/evp.h>

#include <memory>
#include <stdexcept>

namespace stratus {

namespace {

std::string hex(const unsigned char* d, unsigned n) {
  static const char* k = "0123456789abcdef";
  std::string s;
  s.reserve(2 * n);
  for (unsigned i = 0; i < n; ++i) {
    s += k[d[i] >> 4];
    s += k[d[i] & 0xf];
  }
  return s;
}

struct CtxDel {
  void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};

}  // namespace

std::string sha256_hex(const void* data, std::size_t n) {
  unsigned char out[EVP_MAX_MD_SIZE];
  unsigned outn = 0;
  if (EVP_Digest(data, n, out, &outn, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  return hex(out, outn);
}

std::string sha256_hex(const std::string& s) {
  return sha256_hex(s.data(), s.size());
}

std::string params_hash(const ForecastModel& m, ParamFilter f) {
  std::unique_ptr<EVP_MD_CTX, CtxDel> ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 init failed");
  for (const auto& [path, t] : m.params()) {
    bool tr = m.is_trainable(path);
    if (f == ParamFilter::trainable && !tr) continue;
    if (f == ParamFilter::frozen && tr) continue;
    EVP_DigestUpdate(ctx.get(), path.data(), path.size());
    EVP_DigestUpdate(ctx.get(), t.data(),
                     static_cast<std::size_t>(t.numel()) * sizeof(double));
  }
  unsigned char out[EVP_MAX_MD_SIZE];
  unsigned outn = 0;
  if (EVP_DigestFinal_ex(ctx.get(), out, &outn) != 1)
    throw std::runtime_error("sha256 final failed");
  return hex(out, outn);
}

}  // namespace stratus
