#include "qda/digest.hpp"

#include "qda/error.hpp"

#include <openssl/evp.h>

#include <array>
#include <memory>

namespace qda {

std::string sha256_hex(std::string_view data) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), out.data(), &len) != 1) {
        throw Error(ErrorCode::internal, "sha256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string result;
    result.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        result.push_back(hex[out[i] >> 4]);
        result.push_back(hex[out[i] & 0xF]);
    }
    return result;
}

} // namespace qda
