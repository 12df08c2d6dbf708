#include "depthfake/version.hpp"

#include <openssl/evp.h>

#include <fmt/format.h>

#ifndef DEPTHFAKE_VERSION
#define DEPTHFAKE_VERSION "unknown"
#endif

namespace depthfake {

std::string_view code_version() { return DEPTHFAKE_VERSION; }

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

}  // namespace depthfake
