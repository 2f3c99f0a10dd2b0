#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geosem/embedding.hpp"
#include "geosem/trainer.hpp"

namespace geosem {

// Candidate locations for retrieval. Grid-shaped when width/height are
// set (row-major, south-to-north rows); a custom list otherwise.
struct CandidateGrid {
    int width = 0;
    int height = 0;
    std::vector<LonLat> coords;
    Matrix embeddings;
    bool has_embeddings = false;

    bool rectangular() const { return width > 0 && height > 0; }
};

// Cell centers of a width x height grid over the bounding box.
CandidateGrid make_grid(double lon_min, double lon_max, double lat_min,
                        double lat_max, int width, int height);
CandidateGrid make_candidate_list(std::vector<LonLat> coords);

// Embeds candidates once; later calls are no-ops.
void ensure_embeddings(CandidateGrid& grid, const Checkpoint& checkpoint);

struct QuerySource {
    const EmbeddingStore* store = nullptr;  // precomputed query vectors
    bool allow_fallback = true;
    std::uint64_t fallback_seed = 0;
};

// Raw query vector (from the store by key, else the fallback encoder)
// pushed through the checkpoint's text path; unit-norm result.
Vector embed_query(const std::string& query, const QuerySource& source,
                   const Checkpoint& checkpoint);

struct RankedCandidate {
    std::size_t index = 0;
    LonLat coord;
    double score = 0.0;
};

struct RetrievalResult {
    std::string query;
    std::vector<RankedCandidate> ranked;  // descending score, ties by index
};

// Exact brute-force top-k by dot product of unit vectors.
RetrievalResult topk(const Vector& query_embedding, const CandidateGrid& grid,
                     int k);

// height x width score matrix; row 0 is the southernmost grid row.
Matrix similarity_field(const Vector& query_embedding, const CandidateGrid& grid);

// FeatureCollection of Points carrying `similarity`, plus `rank` on the
// top-k features when a result is given. One feature per candidate.
std::string similarity_geojson(const CandidateGrid& grid, const Matrix& field,
                               const RetrievalResult* ranked = nullptr);
void write_similarity_geojson(const std::string& path, const CandidateGrid& grid,
                              const Matrix& field,
                              const RetrievalResult* ranked = nullptr);
void write_similarity_csv(const std::string& path, const CandidateGrid& grid,
                          const Matrix& field);
// Self-contained heatmap, linear color ramp over [min, max] score.
void write_similarity_svg(const std::string& path, const CandidateGrid& grid,
                          const Matrix& field);

}  // namespace geosem
