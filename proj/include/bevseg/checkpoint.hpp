#pragma once

// Binary checkpoint container.
//
//   "BEVT"                      4 bytes magic
//   version                     u32
//   array count                 u64
//   per array:
//     name length               u32, followed by UTF-8 name bytes
//     dtype                     u8   (0 = f32, 1 = f64)
//     rank                      u32
//     dims                      rank x u64
//     values                    product(dims) x f32/f64
//
// All integers and floats little-endian. Optimizer state uses the "opt/" prefix.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevseg/tensor.hpp"

namespace bevseg {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct NamedArray {
    std::string name;
    DType dtype = DType::f32;
    Shape dims;
    std::vector<double> values;  // widened; f32 arrays round-trip exactly
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

class Checkpoint {
public:
    template <typename T>
    void put(const std::string& name, const Tensor<T>& t) {
        put_values(name, t.shape(), std::vector<double>(t.data().begin(), t.data().end()),
                   sizeof(T) == 4 ? DType::f32 : DType::f64);
    }

    void put_values(const std::string& name, Shape dims, std::vector<double> values, DType dtype) {
        if (shape_numel(dims) != values.size()) throw CheckpointError("checkpoint: size mismatch for " + name);
        for (auto& a : arrays_)
            if (a.name == name) {
                a = NamedArray{name, dtype, std::move(dims), std::move(values)};
                return;
            }
        arrays_.push_back(NamedArray{name, dtype, std::move(dims), std::move(values)});
    }

    const NamedArray* find(const std::string& name) const {
        for (const auto& a : arrays_)
            if (a.name == name) return &a;
        return nullptr;
    }

    // Copies a stored array into `t`, which must have identical dims.
    template <typename T>
    void load_into(const std::string& name, Tensor<T>& t) const {
        const NamedArray* a = find(name);
        if (!a) throw CheckpointError("checkpoint: missing array '" + name + "'");
        if (a->dims != t.shape())
            throw CheckpointError("checkpoint: '" + name + "' has dims " + shape_str(a->dims) + ", expected " +
                                  shape_str(t.shape()));
        for (std::size_t i = 0; i < a->values.size(); ++i) t[i] = static_cast<T>(a->values[i]);
    }

    const std::vector<NamedArray>& arrays() const { return arrays_; }

    std::vector<std::uint8_t> serialize() const {
        std::vector<std::uint8_t> out;
        out.insert(out.end(), {'B', 'E', 'V', 'T'});
        put_u32(out, kCheckpointVersion);
        put_u64(out, arrays_.size());
        for (const auto& a : arrays_) {
            put_u32(out, static_cast<std::uint32_t>(a.name.size()));
            out.insert(out.end(), a.name.begin(), a.name.end());
            out.push_back(static_cast<std::uint8_t>(a.dtype));
            put_u32(out, static_cast<std::uint32_t>(a.dims.size()));
            for (auto d : a.dims) put_u64(out, d);
            for (double v : a.values) {
                if (a.dtype == DType::f32)
                    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
                else
                    put_u64(out, std::bit_cast<std::uint64_t>(v));
            }
        }
        return out;
    }

    static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
        Reader r{bytes, 0};
        if (bytes.size() < 4 || std::memcmp(bytes.data(), "BEVT", 4) != 0)
            throw CheckpointError("checkpoint: bad magic");
        r.pos = 4;
        const std::uint32_t version = r.u32();
        if (version != kCheckpointVersion)
            throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
        const std::uint64_t count = r.u64();
        Checkpoint ck;
        for (std::uint64_t i = 0; i < count; ++i) {
            NamedArray a;
            const std::uint32_t len = r.u32();
            a.name = r.str(len);
            const std::uint8_t tag = r.u8();
            if (tag > 1) throw CheckpointError("checkpoint: unknown dtype tag " + std::to_string(tag));
            a.dtype = static_cast<DType>(tag);
            const std::uint32_t rank = r.u32();
            for (std::uint32_t d = 0; d < rank; ++d) a.dims.push_back(static_cast<std::size_t>(r.u64()));
            const std::size_t n = shape_numel(a.dims);
            const std::size_t width = a.dtype == DType::f32 ? 4 : 8;
            if (n > (bytes.size() - r.pos) / width) throw CheckpointError("checkpoint: truncated array " + a.name);
            a.values.resize(n);
            for (auto& v : a.values)
                v = a.dtype == DType::f32 ? static_cast<double>(std::bit_cast<float>(r.u32()))
                                          : std::bit_cast<double>(r.u64());
            ck.arrays_.push_back(std::move(a));
        }
        if (r.pos != bytes.size()) throw CheckpointError("checkpoint: trailing bytes");
        return ck;
    }

    void save(const std::string& path) const {
        auto bytes = serialize();
        std::ofstream f(path, std::ios::binary);
        if (!f) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw CheckpointError("checkpoint: write failed for '" + path + "'");
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw CheckpointError("checkpoint: cannot open '" + path + "'");
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        return deserialize(bytes);
    }

private:
    static void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    static void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    struct Reader {
        const std::vector<std::uint8_t>& b;
        std::size_t pos;
        void need(std::size_t n) const {
            if (b.size() - pos < n) throw CheckpointError("checkpoint: truncated");
        }
        std::uint8_t u8() {
            need(1);
            return b[pos++];
        }
        std::uint32_t u32() {
            need(4);
            std::uint32_t v = 0;
            for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos++]) << (8 * i);
            return v;
        }
        std::uint64_t u64() {
            need(8);
            std::uint64_t v = 0;
            for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[pos++]) << (8 * i);
            return v;
        }
        std::string str(std::size_t n) {
            need(n);
            std::string s(b.begin() + static_cast<long>(pos), b.begin() + static_cast<long>(pos + n));
            pos += n;
            return s;
        }
    };

    std::vector<NamedArray> arrays_;
};

}  // namespace bevseg
