// Copyright 2026 the avvad authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "avvad/error.hpp"
#include "avvad/tensor.hpp"

namespace avvad {

// On-disk tensor archive. Little-endian, bit-exact across platforms:
//
//   magic "AVTA" | u32 record count
//   per record: u16 name length | name bytes
//               u8 dtype (0 = u8, 1 = f32, 2 = f64) | u8 ndim | u16 zero pad
//               ndim x u64 dims | raw buffer (LE)
//
// Feature matrices, face-frame stacks and model parameters all use this one
// format; a single-tensor file is just a one-record archive.
namespace archive {

enum class Dtype : std::uint8_t { U8 = 0, F32 = 1, F64 = 2 };

struct Record {
    std::string name;
    Dtype dtype = Dtype::F64;
    std::vector<std::uint64_t> dims;
    std::vector<std::uint8_t> bytes;

    std::uint64_t numel() const {
        std::uint64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::size_t dtype_size(Dtype t) {
    switch (t) {
        case Dtype::U8: return 1;
        case Dtype::F32: return 4;
        case Dtype::F64: return 8;
    }
    throw DataError("tensor archive: unknown dtype tag");
}

struct Reader {
    const std::uint8_t* p;
    const std::uint8_t* end;
    std::string context;

    void need(std::size_t n) const {
        if (static_cast<std::size_t>(end - p) < n)
            throw DataError("tensor archive truncated: " + context);
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
        p += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        p += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        p += 8;
        return v;
    }
};

}  // namespace detail

inline std::string encode(const std::vector<Record>& records) {
    std::string out;
    out += "AVTA";
    detail::put_u32(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        if (r.bytes.size() != r.numel() * detail::dtype_size(r.dtype))
            throw DataError("tensor archive: buffer size mismatch for '" + r.name + "'");
        detail::put_u16(out, static_cast<std::uint16_t>(r.name.size()));
        out += r.name;
        out.push_back(static_cast<char>(r.dtype));
        out.push_back(static_cast<char>(r.dims.size()));
        detail::put_u16(out, 0);
        for (auto d : r.dims) detail::put_u64(out, d);
        out.append(reinterpret_cast<const char*>(r.bytes.data()),
                   static_cast<std::size_t>(r.bytes.size()));
    }
    return out;
}

inline std::vector<Record> decode(const std::uint8_t* data, std::size_t size,
                                  const std::string& context) {
    detail::Reader rd{data, data + size, context};
    rd.need(4);
    if (std::memcmp(rd.p, "AVTA", 4) != 0)
        throw DataError("tensor archive: bad magic in " + context);
    rd.p += 4;
    const std::uint32_t count = rd.u32();
    std::vector<Record> records;
    records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Record r;
        const std::uint16_t name_len = rd.u16();
        rd.need(name_len);
        r.name.assign(reinterpret_cast<const char*>(rd.p), name_len);
        rd.p += name_len;
        rd.need(4);
        r.dtype = static_cast<Dtype>(rd.p[0]);
        const int ndim = rd.p[1];
        rd.p += 4;
        for (int d = 0; d < ndim; ++d) r.dims.push_back(rd.u64());
        const std::size_t payload = r.numel() * detail::dtype_size(r.dtype);
        rd.need(payload);
        r.bytes.assign(rd.p, rd.p + payload);
        rd.p += payload;
        records.push_back(std::move(r));
    }
    return records;
}

inline void write_file(const std::string& path, const std::vector<Record>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    const std::string payload = encode(records);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw DataError("short write: " + path);
}

inline std::vector<Record> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode(bytes.data(), bytes.size(), path);
}

// Double payloads are stored as IEEE-754 LE; on the (universal) platforms we
// target a memcpy is the bit pattern.
inline Record from_tensor(const std::string& name, const Tensor& t) {
    Record r;
    r.name = name;
    r.dtype = Dtype::F64;
    for (long d : t.shape) r.dims.push_back(static_cast<std::uint64_t>(d));
    r.bytes.resize(t.data.size() * 8);
    std::memcpy(r.bytes.data(), t.data.data(), r.bytes.size());
    return r;
}

inline Tensor to_tensor(const Record& r) {
    Tensor t;
    for (auto d : r.dims) t.shape.push_back(static_cast<long>(d));
    t.data.resize(r.numel());
    if (r.dtype == Dtype::F64) {
        std::memcpy(t.data.data(), r.bytes.data(), r.bytes.size());
    } else if (r.dtype == Dtype::F32) {
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            float f;
            std::memcpy(&f, r.bytes.data() + i * 4, 4);
            t.data[i] = static_cast<double>(f);
        }
    } else {
        for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = r.bytes[i];
    }
    return t;
}

inline Record from_images(const std::string& name, const ImageSequence& seq) {
    Record r;
    r.name = name;
    r.dtype = Dtype::U8;
    r.dims = {static_cast<std::uint64_t>(seq.frames), static_cast<std::uint64_t>(seq.height),
              static_cast<std::uint64_t>(seq.width)};
    r.bytes = seq.pixels;
    return r;
}

inline ImageSequence to_images(const Record& r) {
    if (r.dtype != Dtype::U8 || r.dims.size() != 3)
        throw DataError("tensor archive: '" + r.name + "' is not an image stack");
    ImageSequence seq(static_cast<int>(r.dims[0]), static_cast<int>(r.dims[1]),
                      static_cast<int>(r.dims[2]));
    seq.pixels = r.bytes;
    return seq;
}

}  // namespace archive
}  // namespace avvad
