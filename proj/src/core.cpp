#include "dssl/core.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <limits>
#include <memory>
#include <vector>

namespace dssl {

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw Error("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(engine_());
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t draw = engine_();
    while (draw >= limit) draw = engine_();
    return lo + static_cast<std::int64_t>(draw % span);
}

namespace {

using DigestCtx = std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)>;

std::string to_hex(const unsigned char* data, unsigned int len) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kDigits[data[i] >> 4]);
        out.push_back(kDigits[data[i] & 0xF]);
    }
    return out;
}

class Digest {
public:
    explicit Digest(const EVP_MD* md) : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), md, nullptr) != 1)
            throw Error("digest: initialisation failed");
    }
    void update(const void* data, std::size_t len) {
        if (EVP_DigestUpdate(ctx_.get(), data, len) != 1) throw Error("digest: update failed");
    }
    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> buf{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_.get(), buf.data(), &len) != 1)
            throw Error("digest: finalisation failed");
        return to_hex(buf.data(), len);
    }

private:
    DigestCtx ctx_;
};

std::string file_digest(const EVP_MD* md, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    Digest digest(md);
    std::vector<char> chunk(1 << 16);
    while (in) {
        in.read(chunk.data(), static_cast<std::streamsize>(chunk.size()));
        if (in.gcount() > 0) digest.update(chunk.data(), static_cast<std::size_t>(in.gcount()));
    }
    return digest.hex();
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    Digest digest(EVP_sha256());
    digest.update(bytes.data(), bytes.size());
    return digest.hex();
}

std::string sha256_hex(std::string_view text) {
    Digest digest(EVP_sha256());
    digest.update(text.data(), text.size());
    return digest.hex();
}

std::string md5_file_hex(const std::string& path) { return file_digest(EVP_md5(), path); }
std::string sha256_file_hex(const std::string& path) { return file_digest(EVP_sha256(), path); }

}  // namespace dssl
