#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geosem/common.hpp"

namespace geosem {

struct LonLat {
    double lon = 0.0;
    double lat = 0.0;
};

struct PoiRecord {
    std::string id;
    double lon = 0.0;
    double lat = 0.0;
    std::string name;
    std::string category_l1;  // first-level category
    std::string category_l2;  // second-level class
};

// Model-space coordinate in [-1, 1] x [-1, 1].
struct NormalizedCoord {
    double x = 0.0;
    double y = 0.0;
};

enum class DescriptionVariant { NameAndType, NameOnly, TypeOnly };

const char* variant_name(DescriptionVariant variant);
DescriptionVariant parse_variant(const std::string& name);

struct Description {
    std::string poi_id;
    std::string text;
    DescriptionVariant variant = DescriptionVariant::NameAndType;
};

// Affine map between a lon/lat bounding box (expanded by a 1% margin per
// side at fit time) and [-1, 1]^2.
struct CoordNormalizer {
    double lon_min = 0.0, lon_max = 0.0;
    double lat_min = 0.0, lat_max = 0.0;

    NormalizedCoord normalize(double lon, double lat) const;
    LonLat denormalize(double x, double y) const;
};

struct DatasetSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::uint64_t seed = 0;
};

// Expects header `id,lon,lat,name,category_l1,category_l2`. Every field
// error names the offending 1-based line.
std::vector<PoiRecord> load_poi_csv(const std::string& path);
void write_poi_csv(const std::string& path, const std::vector<PoiRecord>& records);

CoordNormalizer fit_normalizer(const std::vector<PoiRecord>& records);

Description render_description(const PoiRecord& record, DescriptionVariant variant);

// |val| = round(val_fraction * N); dataset order is preserved inside each
// side of the split.
DatasetSplit split_dataset(const std::vector<PoiRecord>& records,
                           double val_fraction, std::uint64_t seed);

void save_split_json(const std::string& path, const DatasetSplit& split);
DatasetSplit load_split_json(const std::string& path);

}  // namespace geosem
