// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaia/tensor.hpp"

// Named tensor archive, little-endian:
//
//   "GWTA" | u32 version (=1) | u32 tensor_count |
//   per tensor: u16 name_len | name (UTF-8) | u8 dtype (0=f32, 1=i32) | u8 rank |
//               u32 dims[rank] | raw element data
//
// Weight files and dataset files share the format; datasets hold "images"
// (f32, N×C×H×W) and optionally "labels" (i32, N).

namespace gaia {

enum class DType : std::uint8_t { f32 = 0, i32 = 1 };

std::string_view dtype_name(DType dtype);

struct ArchiveEntry {
    std::string name;
    DType dtype = DType::f32;
    Shape dims;
    std::vector<float> f32;
    std::vector<std::int32_t> i32;

    std::size_t element_count() const { return gaia::element_count(dims); }
};

/// Ordered collection of named tensors. Insertion order is the on-disk order.
class WeightArchive {
public:
    void add(std::string name, const Tensor& tensor);
    void add_ints(std::string name, Shape dims, std::vector<std::int32_t> values);

    bool contains(const std::string& name) const { return index_.contains(name); }
    const ArchiveEntry& entry(const std::string& name) const;
    /// f32 entry as a tensor; DataError if absent or not f32.
    Tensor tensor(const std::string& name) const;
    const std::vector<ArchiveEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

private:
    void insert(ArchiveEntry e);

    std::vector<ArchiveEntry> entries_;
    std::map<std::string, std::size_t> index_;
};

WeightArchive decode_archive(std::span<const std::byte> bytes);
std::vector<std::byte> encode_archive(const WeightArchive& archive);

WeightArchive load_weights(const std::filesystem::path& path);
void write_weights(const std::filesystem::path& path, const WeightArchive& archive);

/// Images plus optional labels, tagged with where they came from.
struct SampleBatch {
    Tensor images;
    std::optional<std::vector<std::int32_t>> labels;
    std::string source;

    std::size_t size() const { return images.dim(0); }
};

SampleBatch dataset_from_archive(const WeightArchive& archive, std::string source);
/// Source tag defaults to the file stem.
SampleBatch load_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const SampleBatch& batch);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);

} // namespace gaia
