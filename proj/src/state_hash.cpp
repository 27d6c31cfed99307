#include "psycode/state_hash.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace psycode {

struct StateHasher::Impl {
    EVP_MD_CTX* ctx = nullptr;
    bool finished = false;
    Impl() : ctx(EVP_MD_CTX_new()) {
        if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
            throw std::runtime_error("SHA-256 init failed");
        }
    }
    ~Impl() { EVP_MD_CTX_free(ctx); }
};

StateHasher::StateHasher() : impl_(std::make_unique<Impl>()) {}
StateHasher::~StateHasher() = default;
StateHasher::StateHasher(StateHasher&&) noexcept = default;
StateHasher& StateHasher::operator=(StateHasher&&) noexcept = default;

StateHasher& StateHasher::bytes(const void* data, std::size_t n) {
    if (impl_->finished) throw std::logic_error("StateHasher used after digest");
    EVP_DigestUpdate(impl_->ctx, data, n);
    return *this;
}

StateHasher& StateHasher::str(std::string_view s) {
    u64(s.size());
    return bytes(s.data(), s.size());
}

StateHasher& StateHasher::u64(std::uint64_t v) {
    std::array<unsigned char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    return bytes(b.data(), b.size());
}

StateHasher& StateHasher::f64(double v) { return u64(std::bit_cast<std::uint64_t>(v)); }

StateHasher& StateHasher::f64s(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
    return *this;
}

StateHasher& StateHasher::indices(std::span<const std::size_t> v) {
    u64(v.size());
    for (auto x : v) u64(x);
    return *this;
}

std::string StateHasher::hex_digest() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(impl_->ctx, md.data(), &len);
    impl_->finished = true;
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[md[i] >> 4]);
        out.push_back(kHex[md[i] & 0xf]);
    }
    return out;
}

std::string sha256_hex(std::string_view data) {
    StateHasher h;
    h.bytes(data.data(), data.size());
    return h.hex_digest();
}

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

}  // namespace psycode
