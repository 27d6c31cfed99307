#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace psycode {

/// Incremental SHA-256 over fitted model state. Every fitted component feeds
/// its parameters here so that two fits can be compared by digest.
class StateHasher {
public:
    StateHasher();
    ~StateHasher();
    StateHasher(StateHasher&&) noexcept;
    StateHasher& operator=(StateHasher&&) noexcept;

    StateHasher& bytes(const void* data, std::size_t n);
    StateHasher& str(std::string_view s);
    StateHasher& u64(std::uint64_t v);
    StateHasher& f64(double v);
    StateHasher& f64s(std::span<const double> v);
    StateHasher& indices(std::span<const std::size_t> v);

    /// Lower-case hex digest. The hasher cannot be fed after this.
    std::string hex_digest();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// SHA-256 of a whole file or buffer, hex encoded.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::string& path);

}  // namespace psycode
