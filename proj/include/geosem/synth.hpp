#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "geosem/poi.hpp"

namespace geosem {

struct LucSample {
    double lon = 0.0;
    double lat = 0.0;
    int label = 0;
};

struct SdmRegion {
    std::string region_id;
    double lon = 0.0;
    double lat = 0.0;
    std::vector<double> target;  // probability vector, sums to 1
};

struct SynthZone {
    std::string name;
    // lon_min, lat_min, lon_max, lat_max
    std::array<double, 4> rect{};
    // (category_l1, category_l2) pairs
    std::vector<std::pair<std::string, std::string>> categories;
    std::vector<std::string> name_tokens;
    std::vector<double> sdm;  // fixed per-zone distribution
    // Class for LUC samples; -1 means the zone index. Several zones may
    // share a label, giving spatially disconnected districts.
    int luc_label = -1;
};

struct SynthSpec {
    std::string name = "synthetic";
    int pois_per_zone = 500;
    int luc_samples_per_zone = 150;
    int sdm_regions_per_zone = 40;
    std::vector<SynthZone> zones;

    void validate() const;
};

struct SynthCity {
    std::vector<PoiRecord> records;
    std::vector<LucSample> luc_samples;
    std::vector<SdmRegion> sdm_regions;
};

// Fully deterministic in (spec, seed): POIs uniform in their zone rect,
// names composed of two zone tokens plus a city-wide serial, sample-point
// labels from the zone, region targets copied from the zone.
SynthCity generate_synthetic_city(const SynthSpec& spec, std::uint64_t seed);

SynthSpec load_synth_spec(const std::string& path);
void save_synth_spec(const std::string& path, const SynthSpec& spec);

// Four quadrants with disjoint categories and disjoint name vocabularies.
SynthSpec quadrant_preset(int pois_per_zone = 500);
// Every patch shares one category list and only name vocabularies carry
// the district signal. The four districts are interleaved over a 4x4
// patch grid (a Latin square), so district membership is not a simple
// function of position and coordinates alone cannot reveal it.
SynthSpec shared_category_preset(int pois_per_zone = 500);

void write_luc_csv(const std::string& path, const std::vector<LucSample>& samples);
std::vector<LucSample> load_luc_csv(const std::string& path);
void write_sdm_csv(const std::string& path, const std::vector<SdmRegion>& regions);
std::vector<SdmRegion> load_sdm_csv(const std::string& path);

}  // namespace geosem
