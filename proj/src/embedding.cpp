#include "geosem/embedding.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace geosem {

namespace {

void write_u32(std::ostream& out, std::uint32_t value) {
    unsigned char bytes[4];
    bytes[0] = static_cast<unsigned char>(value & 0xFF);
    bytes[1] = static_cast<unsigned char>((value >> 8) & 0xFF);
    bytes[2] = static_cast<unsigned char>((value >> 16) & 0xFF);
    bytes[3] = static_cast<unsigned char>((value >> 24) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path,
                       const char* what) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (in.gcount() != 4) {
        throw ValidationError(path + ": truncated header (" + what + ")");
    }
    return static_cast<std::uint32_t>(bytes[0]) |
           (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) |
           (static_cast<std::uint32_t>(bytes[3]) << 24);
}

float load_f32_le(const unsigned char* bytes) {
    std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                         (static_cast<std::uint32_t>(bytes[1]) << 8) |
                         (static_cast<std::uint32_t>(bytes[2]) << 16) |
                         (static_cast<std::uint32_t>(bytes[3]) << 24);
    float value;
    std::memcpy(&value, &bits, 4);
    return value;
}

void store_f32_le(float value, unsigned char* bytes) {
    std::uint32_t bits;
    std::memcpy(&bits, &value, 4);
    bytes[0] = static_cast<unsigned char>(bits & 0xFF);
    bytes[1] = static_cast<unsigned char>((bits >> 8) & 0xFF);
    bytes[2] = static_cast<unsigned char>((bits >> 16) & 0xFF);
    bytes[3] = static_cast<unsigned char>((bits >> 24) & 0xFF);
}

constexpr std::uint32_t kFormatVersion = 1;
constexpr char kMagic[4] = {'G', 'E', 'M', 'B'};

}  // namespace

EmbeddingStore::EmbeddingStore(int dim, std::string source_tag)
    : dim_(dim), source_tag_(std::move(source_tag)) {
    if (dim <= 0) {
        throw ValidationError("embedding dim must be positive, got " +
                              std::to_string(dim));
    }
}

void EmbeddingStore::add(const std::string& id, std::span<const float> vector) {
    if (static_cast<int>(vector.size()) != dim_) {
        throw ValidationError("embedding for '" + id + "' has " +
                              std::to_string(vector.size()) + " components, expected " +
                              std::to_string(dim_));
    }
    if (index_.count(id) != 0) {
        throw ValidationError("duplicate embedding id '" + id + "'");
    }
    for (float v : vector) {
        if (!std::isfinite(v)) {
            throw ValidationError("embedding for '" + id + "' contains a non-finite value");
        }
    }
    index_.emplace(id, ids_.size());
    ids_.push_back(id);
    data_.insert(data_.end(), vector.begin(), vector.end());
}

std::span<const float> EmbeddingStore::vector(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
        throw ValidationError("no embedding for id '" + id + "'");
    }
    return row(it->second);
}

std::span<const float> EmbeddingStore::row(std::size_t i) const {
    return {data_.data() + i * static_cast<std::size_t>(dim_),
            static_cast<std::size_t>(dim_)};
}

bool EmbeddingStore::operator==(const EmbeddingStore& other) const {
    return dim_ == other.dim_ && ids_ == other.ids_ && data_ == other.data_;
}

EmbeddingStore load_embeddings(const std::string& vector_path,
                               const std::string& id_path) {
    std::ifstream in(vector_path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open '" + vector_path + "'");
    }
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
        throw ValidationError(vector_path + ": magic mismatch, not a GEMB file");
    }
    std::uint32_t version = read_u32(in, vector_path, "version");
    if (version != kFormatVersion) {
        throw ValidationError(vector_path + ": unsupported version " +
                              std::to_string(version));
    }
    std::uint32_t count = read_u32(in, vector_path, "count");
    std::uint32_t dim = read_u32(in, vector_path, "dim");
    if (dim == 0) {
        throw ValidationError(vector_path + ": dim is zero");
    }

    std::size_t payload = static_cast<std::size_t>(count) * dim * 4;
    std::vector<unsigned char> raw(payload);
    in.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(payload));
    if (static_cast<std::size_t>(in.gcount()) != payload) {
        throw ValidationError(vector_path + ": truncated payload, expected " +
                              std::to_string(payload) + " bytes");
    }

    std::ifstream ids_in(id_path);
    if (!ids_in) {
        throw ValidationError("cannot open '" + id_path + "'");
    }
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(ids_in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() && ids_in.peek() == EOF) break;
        ids.push_back(line);
    }
    if (ids.size() != count) {
        throw ValidationError(id_path + ": has " + std::to_string(ids.size()) +
                              " ids but vector file declares " + std::to_string(count));
    }

    EmbeddingStore store(static_cast<int>(dim), vector_path);
    std::vector<float> vec(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        const unsigned char* base = raw.data() + static_cast<std::size_t>(i) * dim * 4;
        for (std::uint32_t j = 0; j < dim; ++j) {
            vec[j] = load_f32_le(base + static_cast<std::size_t>(j) * 4);
        }
        store.add(ids[i], vec);
    }
    return store;
}

void write_embeddings(const EmbeddingStore& store, const std::string& vector_path,
                      const std::string& id_path) {
    std::ofstream out(vector_path, std::ios::binary);
    if (!out) {
        throw ValidationError("cannot open '" + vector_path + "' for writing");
    }
    out.write(kMagic, 4);
    write_u32(out, kFormatVersion);
    write_u32(out, static_cast<std::uint32_t>(store.size()));
    write_u32(out, static_cast<std::uint32_t>(store.dim()));
    std::vector<unsigned char> buf(static_cast<std::size_t>(store.dim()) * 4);
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto r = store.row(i);
        for (int j = 0; j < store.dim(); ++j) {
            store_f32_le(r[static_cast<std::size_t>(j)],
                         buf.data() + static_cast<std::size_t>(j) * 4);
        }
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
    }
    if (!out) {
        throw std::runtime_error("write failed for '" + vector_path + "'");
    }

    std::ostringstream ids;
    for (const auto& id : store.ids()) ids << id << '\n';
    write_text_file(id_path, ids.str());
}

EmbeddingStore truncate_dims(const EmbeddingStore& store, int k) {
    if (k <= 0 || k > store.dim()) {
        throw ValidationError("truncation dim " + std::to_string(k) +
                              " out of range [1, " + std::to_string(store.dim()) + "]");
    }
    EmbeddingStore result(k, store.source_tag());
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto r = store.row(i);
        result.add(store.ids()[i], r.subspan(0, static_cast<std::size_t>(k)));
    }
    return result;
}

EmbeddingStore l2_normalize_store(const EmbeddingStore& store) {
    EmbeddingStore result(store.dim(), store.source_tag());
    std::vector<float> vec(static_cast<std::size_t>(store.dim()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto r = store.row(i);
        double sq = 0.0;
        for (float v : r) sq += static_cast<double>(v) * v;
        double norm = std::sqrt(sq);
        if (norm <= 1e-12) {
            throw ValidationError("cannot normalize zero vector for id '" +
                                  store.ids()[i] + "'");
        }
        for (std::size_t j = 0; j < r.size(); ++j) {
            vec[j] = static_cast<float>(r[j] / norm);
        }
        result.add(store.ids()[i], vec);
    }
    return result;
}

std::vector<float> fallback_encode(const std::string& text, int dim,
                                   std::uint64_t seed) {
    if (dim < 8) {
        throw ValidationError("fallback encoder dim must be at least 8, got " +
                              std::to_string(dim));
    }
    std::vector<double> acc(static_cast<std::size_t>(dim), 0.0);

    // Seed folds into the hash state so different seeds give unrelated spaces.
    std::uint64_t seed_state = fnv1a64_bytes(&seed, sizeof(seed));

    std::size_t token_count = 0;
    std::string token;
    auto flush = [&]() {
        if (token.empty()) return;
        std::uint64_t h = fnv1a64_bytes(token.data(), token.size(), seed_state);
        std::size_t bucket = static_cast<std::size_t>(
            (h & 0xFFFFFFFFull) % static_cast<std::uint64_t>(dim));
        double sign = ((h >> 32) & 1ull) ? 1.0 : -1.0;
        acc[bucket] += sign;
        ++token_count;
        token.clear();
    };
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            token.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();
    if (token_count == 0) {
        throw ValidationError("fallback encoder: empty text after tokenization");
    }

    double sq = 0.0;
    for (double v : acc) sq += v * v;
    double norm = std::sqrt(sq);
    if (norm <= 0.0) {
        // Opposite-sign bucket collisions cancelled every token.
        throw ValidationError("fallback encoder: tokens cancelled to a zero vector");
    }
    std::vector<float> out(static_cast<std::size_t>(dim), 0.0f);
    for (std::size_t i = 0; i < acc.size(); ++i) {
        out[i] = static_cast<float>(acc[i] / norm);
    }
    return out;
}

}  // namespace geosem
