#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace screenlab {

// Error with a stable machine-readable code, surfaced as-is through the C API.
class Error : public std::runtime_error {
public:
    enum class Code {
        invalid_argument,
        dimension_mismatch,
        infeasible,
        non_convergence,
        insufficient_support,
        singular_weighting,
        precondition_failed,
        io_error,
        schema_error,
    };

    Error(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

inline void require(bool cond, Error::Code code, const std::string& msg) {
    if (!cond) throw Error(code, msg);
}

// FNV-1a, used for config hashes and artifact checksums in manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

std::string format_hex64(std::uint64_t v);

// Fixed formatting for all persisted numbers: 17 significant digits survives a
// text round trip bit-exactly for doubles.
std::string format_full(double v);

struct Column {
    std::string name;
    std::vector<double> values;
};

// Columnar text files: '#'-prefixed comment header, one space-separated row
// per record. All downstream artifacts (menus, grids, plot data) use this.
void write_columns(const std::string& path, const std::vector<std::string>& comments,
                   const std::vector<Column>& cols);
std::vector<Column> read_columns(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace screenlab
