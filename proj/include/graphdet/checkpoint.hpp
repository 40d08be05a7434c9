#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "graphdet/common.hpp"
#include "graphdet/nn.hpp"
#include "graphdet/tensor.hpp"

namespace graphdet {

// Parameter checkpoint container. Layout, all little-endian:
//   "PFCK" | version u32 | records...
// record: name_len u32 | name bytes | rank u32 | dims u64[rank] | values
// Values are the store's scalar type; round-trips are bit-exact.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
void put_scalar(std::string& out, T v) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    if constexpr (sizeof(T) == 4) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(out, bits);
    } else {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64(out, bits);
    }
}

class ByteReader {
public:
    ByteReader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += 8;
        return v;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    template <typename T>
    T scalar() {
        T v;
        if constexpr (sizeof(T) == 4) {
            std::uint32_t bits = u32();
            std::memcpy(&v, &bits, 4);
        } else {
            std::uint64_t bits = u64();
            std::memcpy(&v, &bits, 8);
        }
        return v;
    }

    bool eof() const { return pos_ >= buf_.size(); }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) {
        if (pos_ + n > buf_.size())
            throw DataError("checkpoint '" + path_ + "': truncated at byte offset " + std::to_string(pos_) +
                            " (need " + std::to_string(n) + " more)");
    }

    const std::string& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store) {
    std::string out;
    out += "PFCK";
    detail::put_u32(out, kCheckpointVersion);
    for (const auto& name : store.names()) {
        const Tensor<T>& t = store.get(name);
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) detail::put_u64(out, static_cast<std::uint64_t>(d));
        for (T v : t.data) detail::put_scalar(out, v);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("checkpoint: write to '" + path + "' failed");
}

template <typename T>
ParamStore<T> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    detail::ByteReader r(buf, path);
    if (r.bytes(4) != "PFCK") throw DataError("checkpoint '" + path + "': bad magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw DataError("checkpoint '" + path + "': unsupported version " + std::to_string(version));
    ParamStore<T> store;
    while (!r.eof()) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len);
        const std::uint32_t rank = r.u32();
        std::vector<std::size_t> shape;
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape.push_back(static_cast<std::size_t>(r.u64()));
            n *= shape.back();
        }
        std::vector<T> data(n);
        for (std::size_t i = 0; i < n; ++i) data[i] = r.scalar<T>();
        store.set(name, Tensor<T>(std::move(shape), std::move(data)));
    }
    return store;
}

}  // namespace graphdet
