// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#include "gaia/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace gaia {

namespace {

constexpr char kMagic[4] = {'G', 'W', 'T', 'A'};
constexpr std::uint32_t kVersion = 1;

class Reader {
public:
    explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    std::span<const std::byte> take(std::size_t n, const char* what) {
        if (remaining() < n) {
            throw DataError(fmt::format("archive truncated at byte offset {}: need {} bytes for {}, {} left", pos_, n,
                                        what, remaining()));
        }
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    template <typename U>
    U uint(const char* what) {
        auto s = take(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(static_cast<U>(std::to_integer<unsigned>(s[i])) << (8 * i));
        }
        return v;
    }

private:
    std::span<const std::byte> bytes_;
    std::size_t pos_ = 0;
};

template <typename U>
void put_uint(std::vector<std::byte>& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
    }
}

} // namespace

std::string_view dtype_name(DType dtype) {
    switch (dtype) {
    case DType::f32: return "f32";
    case DType::i32: return "i32";
    }
    return "?";
}

void WeightArchive::insert(ArchiveEntry e) {
    if (index_.contains(e.name)) {
        throw DataError(fmt::format("archive already holds a tensor named '{}'", e.name));
    }
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
        throw DataError("tensor name longer than 65535 bytes");
    }
    index_.emplace(e.name, entries_.size());
    entries_.push_back(std::move(e));
}

void WeightArchive::add(std::string name, const Tensor& tensor) {
    ArchiveEntry e;
    e.name = std::move(name);
    e.dtype = DType::f32;
    e.dims = tensor.shape();
    e.f32 = tensor.values();
    insert(std::move(e));
}

void WeightArchive::add_ints(std::string name, Shape dims, std::vector<std::int32_t> values) {
    if (values.size() != gaia::element_count(dims)) {
        throw DataError(fmt::format("i32 tensor '{}' of shape {} given {} values", name, to_string(dims),
                                    values.size()));
    }
    ArchiveEntry e;
    e.name = std::move(name);
    e.dtype = DType::i32;
    e.dims = std::move(dims);
    e.i32 = std::move(values);
    insert(std::move(e));
}

const ArchiveEntry& WeightArchive::entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw DataError(fmt::format("archive has no tensor named '{}'", name));
    }
    return entries_[it->second];
}

Tensor WeightArchive::tensor(const std::string& name) const {
    const ArchiveEntry& e = entry(name);
    if (e.dtype != DType::f32) {
        throw DataError(fmt::format("tensor '{}' has dtype {}, expected f32", name, dtype_name(e.dtype)));
    }
    return Tensor(e.dims, e.f32);
}

WeightArchive decode_archive(std::span<const std::byte> bytes) {
    Reader r(bytes);
    auto magic = r.take(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw DataError("bad magic at byte offset 0: not a GWTA archive");
    }
    const std::size_t version_at = r.offset();
    const auto version = r.uint<std::uint32_t>("version");
    if (version != kVersion) {
        throw DataError(fmt::format("unsupported archive version {} at byte offset {}", version, version_at));
    }
    const auto count = r.uint<std::uint32_t>("tensor count");

    WeightArchive archive;
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = r.uint<std::uint16_t>("name length");
        auto name_bytes = r.take(name_len, "tensor name");
        ArchiveEntry e;
        e.name.assign(reinterpret_cast<const char*>(name_bytes.data()), name_bytes.size());

        const std::size_t dtype_at = r.offset();
        const auto dtype = r.uint<std::uint8_t>("dtype");
        if (dtype > 1) {
            throw DataError(fmt::format("tensor '{}': unknown dtype {} at byte offset {}", e.name, dtype, dtype_at));
        }
        e.dtype = static_cast<DType>(dtype);
        const auto rank = r.uint<std::uint8_t>("rank");
        for (std::uint8_t d = 0; d < rank; ++d) {
            const std::size_t dim_at = r.offset();
            const auto extent = r.uint<std::uint32_t>("dimension");
            if (extent == 0) {
                throw DataError(fmt::format("tensor '{}': zero extent at byte offset {}", e.name, dim_at));
            }
            e.dims.push_back(extent);
            if (e.element_count() > r.remaining() / 4) {
                throw DataError(fmt::format("archive truncated: tensor '{}' of shape {} needs more than the {} "
                                            "bytes left at byte offset {}",
                                            e.name, to_string(e.dims), r.remaining(), r.offset()));
            }
        }
        const std::size_t n = e.element_count();
        auto raw = r.take(n * 4, "tensor data");
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t word = 0;
            for (std::size_t b = 0; b < 4; ++b) {
                word |= static_cast<std::uint32_t>(std::to_integer<unsigned>(raw[i * 4 + b])) << (8 * b);
            }
            if (e.dtype == DType::f32) {
                e.f32.push_back(std::bit_cast<float>(word));
            } else {
                e.i32.push_back(std::bit_cast<std::int32_t>(word));
            }
        }
        const std::string name = e.name;
        if (archive.contains(name)) {
            throw DataError(fmt::format("duplicate tensor name '{}' before byte offset {}", name, r.offset()));
        }
        if (e.dtype == DType::f32) {
            archive.add(name, Tensor(e.dims, std::move(e.f32)));
        } else {
            archive.add_ints(name, e.dims, std::move(e.i32));
        }
    }
    if (r.remaining() != 0) {
        throw DataError(fmt::format("{} trailing bytes after last tensor at byte offset {}", r.remaining(),
                                    r.offset()));
    }
    return archive;
}

std::vector<std::byte> encode_archive(const WeightArchive& archive) {
    std::vector<std::byte> out;
    for (char c : kMagic) {
        out.push_back(static_cast<std::byte>(c));
    }
    put_uint<std::uint32_t>(out, kVersion);
    put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(archive.size()));
    for (const ArchiveEntry& e : archive.entries()) {
        put_uint<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
        for (char c : e.name) {
            out.push_back(static_cast<std::byte>(c));
        }
        put_uint<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
        put_uint<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
        for (std::size_t d : e.dims) {
            put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        }
        if (e.dtype == DType::f32) {
            for (float v : e.f32) {
                put_uint<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
            }
        } else {
            for (std::int32_t v : e.i32) {
                put_uint<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
            }
        }
    }
    return out;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(fmt::format("cannot open '{}'", path.string()));
    }
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<std::byte> bytes(size);
    if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
        throw DataError(fmt::format("failed reading '{}'", path.string()));
    }
    return bytes;
}

WeightArchive load_weights(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_archive(bytes);
    } catch (const DataError& e) {
        throw DataError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

void write_weights(const std::filesystem::path& path, const WeightArchive& archive) {
    const auto bytes = encode_archive(archive);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError(fmt::format("cannot write '{}'", path.string()));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw DataError(fmt::format("failed writing '{}'", path.string()));
    }
}

SampleBatch dataset_from_archive(const WeightArchive& archive, std::string source) {
    if (!archive.contains("images")) {
        throw DataError("dataset archive has no 'images' tensor");
    }
    SampleBatch batch;
    batch.images = archive.tensor("images");
    batch.source = std::move(source);
    if (batch.images.rank() != 4) {
        throw DataError(fmt::format("dataset images must be N×C×H×W, got {}", to_string(batch.images.shape())));
    }
    ensure_finite(batch.images, "dataset images");
    if (archive.contains("labels")) {
        const ArchiveEntry& e = archive.entry("labels");
        if (e.dtype != DType::i32) {
            throw DataError(fmt::format("dataset labels have dtype {}, expected i32", dtype_name(e.dtype)));
        }
        if (e.dims.size() != 1 || e.dims[0] != batch.images.dim(0)) {
            throw DataError(fmt::format("dataset labels shape {} does not match {} images", to_string(e.dims),
                                        batch.images.dim(0)));
        }
        batch.labels = e.i32;
    }
    return batch;
}

SampleBatch load_dataset(const std::filesystem::path& path) {
    return dataset_from_archive(load_weights(path), path.stem().string());
}

void write_dataset(const std::filesystem::path& path, const SampleBatch& batch) {
    WeightArchive archive;
    archive.add("images", batch.images);
    if (batch.labels) {
        archive.add_ints("labels", {batch.labels->size()}, *batch.labels);
    }
    write_weights(path, archive);
}

} // namespace gaia
