// Shared plumbing: error types, little-endian binary I/O, seed derivation.
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace luc {

inline constexpr const char* kToolVersion = "lucsim 1.0.0";

// Error categories map onto CLI exit codes (config=2, data=3, numeric=4).
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A cell coordinate. x is the column, y the row; (0,0) is the top-left cell.
struct Cell {
    int x = 0;
    int y = 0;
    friend bool operator==(const Cell& a, const Cell& b) { return a.x == b.x && a.y == b.y; }
    friend bool operator!=(const Cell& a, const Cell& b) { return !(a == b); }
};

namespace detail {

inline void put_bytes(std::string& out, const void* p, size_t n) {
    out.append(static_cast<const char*>(p), n);
}

}  // namespace detail

// Little-endian serializer building an in-memory buffer; callers write the
// buffer to disk in one shot so partially written files never appear valid.
class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(uint16_t v) {
        for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void raw(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
    void magic(const char m[4]) { buf_.append(m, 4); }

    const std::string& buffer() const { return buf_; }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw data_error("cannot open for writing: " + path);
        f.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!f) throw data_error("write failed: " + path);
    }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string bytes, std::string origin = "<memory>")
        : buf_(std::move(bytes)), origin_(std::move(origin)) {}

    static ByteReader from_file(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw data_error("cannot open file: " + path);
        std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        return ByteReader(std::move(bytes), path);
    }

    uint8_t u8() { return static_cast<uint8_t>(take(1)[0]); }
    uint16_t u16() {
        const char* p = take(2);
        uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<uint16_t>(static_cast<uint8_t>(p[i])) << (8 * i);
        return v;
    }
    uint32_t u32() {
        const char* p = take(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(p[i])) << (8 * i);
        return v;
    }
    uint64_t u64() {
        const char* p = take(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(p[i])) << (8 * i);
        return v;
    }
    int32_t i32() { return static_cast<int32_t>(u32()); }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    void raw(void* p, size_t n) { std::memcpy(p, take(n), n); }
    void expect_magic(const char m[4], const std::string& what) {
        const char* p = take(4);
        if (std::memcmp(p, m, 4) != 0) throw data_error(origin_ + ": bad magic, not a " + what + " file");
    }
    size_t remaining() const { return buf_.size() - pos_; }
    void expect_exhausted(const std::string& what) {
        if (remaining() != 0)
            throw data_error(origin_ + ": " + std::to_string(remaining()) + " trailing bytes after " + what);
    }
    const std::string& origin() const { return origin_; }

private:
    const char* take(size_t n) {
        if (pos_ + n > buf_.size())
            throw data_error(origin_ + ": truncated, wanted " + std::to_string(n) + " bytes at offset " +
                             std::to_string(pos_));
        const char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::string buf_;
    std::string origin_;
    size_t pos_ = 0;
};

// Shortest round-trippable decimal form of a double.
inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Ordered key=value text file; insertion order is preserved on save so
// manifests diff cleanly run to run.
class Manifest {
public:
    void set(const std::string& key, const std::string& value) {
        keys_.push_back(key);
        values_[key] = value;
    }
    void set_int(const std::string& key, long v) { set(key, std::to_string(v)); }
    void set_double(const std::string& key, double v) { set(key, fmt_double(v)); }

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw data_error("cannot write manifest: " + path);
        for (const std::string& k : keys_) f << k << "=" << values_.at(k) << "\n";
    }

    static Manifest load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw data_error("cannot open manifest: " + path);
        Manifest m;
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos) throw data_error(path + ": malformed manifest line '" + line + "'");
            m.set(line.substr(0, eq), line.substr(eq + 1));
        }
        return m;
    }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw data_error("manifest is missing key '" + key + "'");
        return it->second;
    }
    std::string get_or(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    long get_int(const std::string& key) const { return std::stol(get(key)); }
    double get_double(const std::string& key) const { return std::stod(get(key)); }
    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::vector<std::string>& keys() const { return keys_; }

private:
    std::vector<std::string> keys_;
    std::map<std::string, std::string> values_;
};

// splitmix64; used to derive independent per-module seeds from one root seed.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t root, const std::string& tag) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return mix64(root ^ h);
}

using Rng = std::mt19937_64;

}  // namespace luc
