#include "workbench/digest.hpp"

#include <openssl/evp.h>

namespace wb {

Digest256 sha256(std::span<const std::uint8_t> bytes) {
  Digest256 out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size())
    throw Error("sha256 failed");
  return out;
}

}  // namespace wb
