#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mea/grid.hpp"

namespace mea::io {

/// Field file: magic "MEAF", u32 version=1, u32 n, then n*n float32
/// little-endian values, row-major with row 0 at the bottom edge.
void write_meaf(const std::string& path, const Field& field);
Field read_meaf(const std::string& path);

struct DatasetEntry {
    Field32 k;
    bool has_T = false;
    Field32 T;
};

/// Dataset container: magic "MEAD", u32 version=1, u32 sample_count, u32 n,
/// per sample n*n float32 conductivities, a presence byte, and (when the byte
/// is 1) n*n float32 temperatures.
struct Dataset {
    int n = 101;
    std::vector<DatasetEntry> entries;

    std::size_t size() const { return entries.size(); }
    std::size_t labeled_count() const;
};

void write_mead(const std::string& path, const Dataset& dataset);
Dataset read_mead(const std::string& path);

/// Sidecar manifest: "key = value" lines, UTF-8, order preserved on write.
using Manifest = std::vector<std::pair<std::string, std::string>>;
void write_manifest(const std::string& path, const Manifest& manifest);
std::map<std::string, std::string> read_manifest(const std::string& path);

/// Checkpoint tensor: name, dims, float32 payload.
struct TensorBlob {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

/// Checkpoint file: magic "MEAC", u32 version=1, model-kind tag string,
/// u32 tensor count, tensors (name, rank, dims, float32 data), then a
/// key/value metadata block (epoch, lr, seed, dataset hash, ...).
struct Checkpoint {
    std::string model_kind;
    std::vector<TensorBlob> tensors;
    Manifest metadata;

    const TensorBlob* find(const std::string& name) const;
    std::string meta(const std::string& key, const std::string& fallback = {}) const;
};

void write_meac(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_meac(const std::string& path);

/// FNV-1a over the float32 little-endian encoding of the field (matches the
/// bytes a MEAF file would carry).
std::uint64_t field_hash(const Field& field);
std::uint64_t field_hash(const Field32& field);
std::uint64_t dataset_hash(const Dataset& dataset);

}  // namespace mea::io
