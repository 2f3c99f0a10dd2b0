#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "geosem/common.hpp"

namespace geosem {

// Frozen text embeddings, keyed by POI id or query key. Vectors are kept
// as the float32 payload of the file format so that write/load round-trips
// are bit-exact.
class EmbeddingStore {
public:
    EmbeddingStore() = default;
    EmbeddingStore(int dim, std::string source_tag);

    int dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    const std::string& source_tag() const { return source_tag_; }
    const std::vector<std::string>& ids() const { return ids_; }

    void add(const std::string& id, std::span<const float> vector);
    bool contains(const std::string& id) const { return index_.count(id) != 0; }
    std::span<const float> vector(const std::string& id) const;
    std::span<const float> row(std::size_t i) const;

    bool operator==(const EmbeddingStore& other) const;

private:
    int dim_ = 0;
    std::string source_tag_;
    std::vector<std::string> ids_;
    std::vector<float> data_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Binary vector file, little-endian: magic `GEMB`, version u32 = 1,
// count u32, dim u32, then count*dim float32 row-major. The sidecar id
// file holds one UTF-8 id per line in row order.
EmbeddingStore load_embeddings(const std::string& vector_path,
                               const std::string& id_path);
void write_embeddings(const EmbeddingStore& store, const std::string& vector_path,
                      const std::string& id_path);

// Keeps components [0, k) of every vector.
EmbeddingStore truncate_dims(const EmbeddingStore& store, int k);

EmbeddingStore l2_normalize_store(const EmbeddingStore& store);

// Deterministic signed feature hashing: lowercase alphanumeric tokens,
// each hashed to a bucket with a +-1 sign, then L2-normalized. A test
// stand-in for a real text encoder, never a model of one.
std::vector<float> fallback_encode(const std::string& text, int dim,
                                   std::uint64_t seed);

}  // namespace geosem
