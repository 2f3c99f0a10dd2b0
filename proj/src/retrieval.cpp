#include "geosem/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace geosem {

namespace {

using nlohmann::json;

void check_field_shape(const CandidateGrid& grid, const Matrix& field) {
    if (!grid.rectangular()) {
        throw ValidationError("similarity field requires a rectangular grid");
    }
    if (field.rows() != grid.height || field.cols() != grid.width) {
        throw ValidationError("similarity field shape mismatch");
    }
}

std::string ramp_color(double t) {
    // Dark violet to yellow, linear in RGB.
    const int low[3] = {68, 1, 84};
    const int high[3] = {253, 231, 37};
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x",
                  static_cast<int>(std::lround(low[0] + t * (high[0] - low[0]))),
                  static_cast<int>(std::lround(low[1] + t * (high[1] - low[1]))),
                  static_cast<int>(std::lround(low[2] + t * (high[2] - low[2]))));
    return buf;
}

}  // namespace

CandidateGrid make_grid(double lon_min, double lon_max, double lat_min,
                        double lat_max, int width, int height) {
    if (width < 1 || height < 1) {
        throw ValidationError("grid dimensions must be positive");
    }
    if (!(lon_min < lon_max) || !(lat_min < lat_max)) {
        throw ValidationError("degenerate grid bounding box");
    }
    CandidateGrid grid;
    grid.width = width;
    grid.height = height;
    grid.coords.reserve(static_cast<std::size_t>(width) * height);
    double lon_step = (lon_max - lon_min) / width;
    double lat_step = (lat_max - lat_min) / height;
    for (int row = 0; row < height; ++row) {
        double lat = lat_min + (row + 0.5) * lat_step;
        for (int col = 0; col < width; ++col) {
            double lon = lon_min + (col + 0.5) * lon_step;
            grid.coords.push_back({lon, lat});
        }
    }
    return grid;
}

CandidateGrid make_candidate_list(std::vector<LonLat> coords) {
    if (coords.empty()) {
        throw ValidationError("candidate list is empty");
    }
    CandidateGrid grid;
    grid.coords = std::move(coords);
    return grid;
}

void ensure_embeddings(CandidateGrid& grid, const Checkpoint& checkpoint) {
    if (grid.has_embeddings) return;
    if (grid.coords.empty()) {
        throw ValidationError("candidate grid is empty");
    }
    grid.embeddings = encode_locations(checkpoint, grid.coords);
    grid.has_embeddings = true;
}

Vector embed_query(const std::string& query, const QuerySource& source,
                   const Checkpoint& checkpoint) {
    const int text_dim = checkpoint.text_projection.in_dim();
    Matrix raw(1, text_dim);
    if (source.store != nullptr && source.store->contains(query)) {
        if (source.store->dim() != text_dim) {
            throw ValidationError("query store dim " +
                                  std::to_string(source.store->dim()) +
                                  " does not match checkpoint text dim " +
                                  std::to_string(text_dim));
        }
        auto vec = source.store->vector(query);
        for (int j = 0; j < text_dim; ++j) {
            raw(0, j) = static_cast<double>(vec[static_cast<std::size_t>(j)]);
        }
    } else if (source.allow_fallback) {
        auto vec = fallback_encode(query, text_dim, source.fallback_seed);
        for (int j = 0; j < text_dim; ++j) {
            raw(0, j) = static_cast<double>(vec[static_cast<std::size_t>(j)]);
        }
    } else {
        throw ValidationError("query '" + query +
                              "' not found in the store and fallback is disabled");
    }

    if (checkpoint.config.normalize_text_before_projection) {
        raw = l2_normalize_rows(raw, nullptr, "query embedding");
    }
    Matrix projected = project_rows(checkpoint.text_projection, raw);
    return projected.row(0).transpose();
}

RetrievalResult topk(const Vector& query_embedding, const CandidateGrid& grid,
                     int k) {
    if (grid.coords.empty()) {
        throw ValidationError("candidate grid is empty");
    }
    if (!grid.has_embeddings) {
        throw ValidationError("candidate embeddings not computed");
    }
    if (k < 1 || static_cast<std::size_t>(k) > grid.coords.size()) {
        throw ValidationError("k = " + std::to_string(k) +
                              " out of range for " +
                              std::to_string(grid.coords.size()) + " candidates");
    }
    if (query_embedding.size() != grid.embeddings.cols()) {
        throw ValidationError("query embedding dim mismatch");
    }

    Vector scores = grid.embeddings * query_embedding;
    std::vector<std::size_t> order(grid.coords.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](std::size_t a, std::size_t b) {
                          double sa = scores[static_cast<Eigen::Index>(a)];
                          double sb = scores[static_cast<Eigen::Index>(b)];
                          if (sa != sb) return sa > sb;
                          return a < b;
                      });

    RetrievalResult result;
    result.ranked.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        std::size_t idx = order[static_cast<std::size_t>(i)];
        result.ranked.push_back(
            {idx, grid.coords[idx], scores[static_cast<Eigen::Index>(idx)]});
    }
    return result;
}

Matrix similarity_field(const Vector& query_embedding, const CandidateGrid& grid) {
    if (!grid.rectangular()) {
        throw ValidationError("similarity field requires a rectangular grid");
    }
    if (!grid.has_embeddings) {
        throw ValidationError("candidate embeddings not computed");
    }
    Vector scores = grid.embeddings * query_embedding;
    Matrix field(grid.height, grid.width);
    for (int row = 0; row < grid.height; ++row) {
        for (int col = 0; col < grid.width; ++col) {
            field(row, col) = scores[static_cast<Eigen::Index>(row) * grid.width + col];
        }
    }
    return field;
}

std::string similarity_geojson(const CandidateGrid& grid, const Matrix& field,
                               const RetrievalResult* ranked) {
    check_field_shape(grid, field);
    std::vector<int> rank_of(grid.coords.size(), 0);  // 1-based, 0 = unranked
    if (ranked != nullptr) {
        for (std::size_t i = 0; i < ranked->ranked.size(); ++i) {
            rank_of[ranked->ranked[i].index] = static_cast<int>(i + 1);
        }
    }

    json features = json::array();
    for (int row = 0; row < grid.height; ++row) {
        for (int col = 0; col < grid.width; ++col) {
            std::size_t idx = static_cast<std::size_t>(row) * grid.width + col;
            json properties{{"similarity", field(row, col)}};
            if (rank_of[idx] > 0) properties["rank"] = rank_of[idx];
            features.push_back(
                {{"type", "Feature"},
                 {"geometry",
                  {{"type", "Point"},
                   {"coordinates",
                    {grid.coords[idx].lon, grid.coords[idx].lat}}}},
                 {"properties", properties}});
        }
    }
    json collection{{"type", "FeatureCollection"}, {"features", features}};
    return collection.dump() + "\n";
}

void write_similarity_geojson(const std::string& path, const CandidateGrid& grid,
                              const Matrix& field, const RetrievalResult* ranked) {
    write_text_file(path, similarity_geojson(grid, field, ranked));
}

void write_similarity_csv(const std::string& path, const CandidateGrid& grid,
                          const Matrix& field) {
    check_field_shape(grid, field);
    std::ostringstream out;
    out << "lon,lat,similarity\n";
    for (int row = 0; row < grid.height; ++row) {
        for (int col = 0; col < grid.width; ++col) {
            std::size_t idx = static_cast<std::size_t>(row) * grid.width + col;
            out << format_double(grid.coords[idx].lon) << ','
                << format_double(grid.coords[idx].lat) << ','
                << format_double(field(row, col)) << '\n';
        }
    }
    write_text_file(path, out.str());
}

void write_similarity_svg(const std::string& path, const CandidateGrid& grid,
                          const Matrix& field) {
    check_field_shape(grid, field);
    double lo = field.minCoeff();
    double hi = field.maxCoeff();
    double span = hi - lo;

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 "
        << grid.width << ' ' << grid.height << "\" width=\"" << grid.width * 8
        << "\" height=\"" << grid.height * 8 << "\" shape-rendering=\"crispEdges\">\n";
    for (int row = 0; row < grid.height; ++row) {
        for (int col = 0; col < grid.width; ++col) {
            double t = span > 0.0 ? (field(row, col) - lo) / span : 0.5;
            // North at the top of the image.
            out << "<rect x=\"" << col << "\" y=\"" << (grid.height - 1 - row)
                << "\" width=\"1\" height=\"1\" fill=\"" << ramp_color(t)
                << "\"/>\n";
        }
    }
    out << "</svg>\n";
    write_text_file(path, out.str());
}

}  // namespace geosem
