#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vispflow/autograd.hpp"
#include "vispflow/errors.hpp"

namespace vispflow {

// Parameter checkpoint format:
//   magic "VPW1", then per parameter
//   [u16 path-length][path UTF-8][u8 ndim][u32 x ndim shape][f64 x count data]
// all little-endian.

namespace detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(reinterpret_cast<const char*>(p), n);
}

template <typename T>
inline void put_le(std::string& out, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
    put_bytes(out, buf, sizeof(T));
}

inline void put_f64_le(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_le<std::uint64_t>(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos{0};

    bool eof() const { return pos >= buf.size(); }
    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size()) throw format_error(std::string("truncated checkpoint: ") + what, pos);
    }
    template <typename T>
    T get_le(const char* what) {
        need(sizeof(T), what);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += sizeof(T);
        return static_cast<T>(v);
    }
    double get_f64(const char* what) {
        const std::uint64_t bits = get_le<std::uint64_t>(what);
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }
    std::string get_str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline std::string serialize_params(const ParamSet& params) {
    std::string out = "VPW1";
    for (const auto& [path, e] : params.entries) {
        detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(path.size()));
        detail::put_bytes(out, path.data(), path.size());
        detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.value.shape.size()));
        for (int d : e.value.shape) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (double v : e.value.data) detail::put_f64_le(out, v);
    }
    return out;
}

// Loads values into an existing ParamSet layout; trainable flags come from
// the receiving set, the file stores values only.
inline void deserialize_params(const std::string& bytes, ParamSet& params) {
    detail::Reader r{bytes};
    if (r.get_str(4, "magic") != "VPW1") throw format_error("bad checkpoint magic", 0);
    std::size_t loaded = 0;
    while (!r.eof()) {
        const auto plen = r.get_le<std::uint16_t>("path length");
        const std::string path = r.get_str(plen, "path");
        const auto ndim = r.get_le<std::uint8_t>("ndim");
        Shape shape;
        std::size_t count = 1;
        for (int i = 0; i < ndim; ++i) {
            const auto d = r.get_le<std::uint32_t>("shape dim");
            shape.push_back(static_cast<int>(d));
            count *= d;
        }
        Tensor t = Tensor::zeros(shape);
        for (std::size_t i = 0; i < count; ++i) t.data[i] = r.get_f64("tensor data");
        auto it = params.entries.find(path);
        if (it == params.entries.end())
            throw format_error("checkpoint parameter not in model: " + path, r.pos);
        if (it->second.value.shape != shape)
            throw format_error("checkpoint shape mismatch for " + path, r.pos);
        it->second.value = std::move(t);
        ++loaded;
    }
    if (loaded != params.size())
        throw format_error("checkpoint is missing parameters", r.pos);
}

inline void save_params(const ParamSet& params, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw format_error("cannot open checkpoint for writing: " + path, 0);
    const std::string bytes = serialize_params(params);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void load_params(const std::string& path, ParamSet& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw format_error("cannot open checkpoint: " + path, 0);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    deserialize_params(bytes, params);
}

}  // namespace vispflow
