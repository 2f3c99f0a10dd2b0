#include "geosem/synth.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace geosem {

using nlohmann::json;

void SynthSpec::validate() const {
    if (zones.size() < 2) throw ValidationError("synth spec: need at least 2 zones");
    if (pois_per_zone < 1) throw ValidationError("synth spec: pois_per_zone must be >= 1");
    const std::size_t k = zones.front().sdm.size();
    for (const auto& z : zones) {
        if (z.categories.empty()) {
            throw ValidationError("synth spec: zone '" + z.name + "' has no categories");
        }
        if (z.name_tokens.empty()) {
            throw ValidationError("synth spec: zone '" + z.name + "' has no name tokens");
        }
        if (z.rect[2] <= z.rect[0] || z.rect[3] <= z.rect[1]) {
            throw ValidationError("synth spec: zone '" + z.name + "' has an empty rect");
        }
        if (z.sdm.size() != k) {
            throw ValidationError("synth spec: zones disagree on SDM class count");
        }
        double sum = 0.0;
        for (double p : z.sdm) {
            if (p < 0.0) throw ValidationError("synth spec: negative SDM proportion");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            throw ValidationError("synth spec: zone '" + z.name +
                                  "' SDM distribution does not sum to 1");
        }
    }
}

SynthCity generate_synthetic_city(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    SynthCity city;
    std::size_t serial = 0;

    for (std::size_t zi = 0; zi < spec.zones.size(); ++zi) {
        const auto& zone = spec.zones[zi];
        const auto& r = zone.rect;
        const int label = zone.luc_label >= 0 ? zone.luc_label : static_cast<int>(zi);
        for (int i = 0; i < spec.pois_per_zone; ++i) {
            PoiRecord rec;
            ++serial;
            rec.id = "p" + std::to_string(serial);
            rec.lon = rng.uniform(r[0], r[2]);
            rec.lat = rng.uniform(r[1], r[3]);
            const auto& cat = zone.categories[rng.index(zone.categories.size())];
            rec.category_l1 = cat.first;
            rec.category_l2 = cat.second;
            rec.name = zone.name_tokens[rng.index(zone.name_tokens.size())] + " " +
                       zone.name_tokens[rng.index(zone.name_tokens.size())] + " " +
                       std::to_string(serial);
            city.records.push_back(std::move(rec));
        }
        for (int i = 0; i < spec.luc_samples_per_zone; ++i) {
            LucSample s;
            s.lon = rng.uniform(r[0], r[2]);
            s.lat = rng.uniform(r[1], r[3]);
            s.label = label;
            city.luc_samples.push_back(s);
        }
        for (int i = 0; i < spec.sdm_regions_per_zone; ++i) {
            SdmRegion region;
            region.region_id = "z" + std::to_string(zi) + "_r" + std::to_string(i);
            region.lon = rng.uniform(r[0], r[2]);
            region.lat = rng.uniform(r[1], r[3]);
            region.target = zone.sdm;
            city.sdm_regions.push_back(std::move(region));
        }
    }
    return city;
}

namespace {

SynthZone zone_from_json(const json& j) {
    SynthZone z;
    z.name = j.at("name").get<std::string>();
    const auto rect = j.at("rect");
    if (!rect.is_array() || rect.size() != 4) {
        throw ValidationError("synth spec: zone rect must be [lon_min, lat_min, lon_max, lat_max]");
    }
    for (int i = 0; i < 4; ++i) z.rect[static_cast<std::size_t>(i)] = rect[static_cast<std::size_t>(i)].get<double>();
    for (const auto& c : j.at("categories")) {
        if (!c.is_array() || c.size() != 2) {
            throw ValidationError("synth spec: each category must be a [l1, l2] pair");
        }
        z.categories.emplace_back(c[0].get<std::string>(), c[1].get<std::string>());
    }
    z.name_tokens = j.at("name_tokens").get<std::vector<std::string>>();
    z.sdm = j.at("sdm").get<std::vector<double>>();
    z.luc_label = j.value("luc_label", -1);
    return z;
}

json zone_to_json(const SynthZone& z) {
    json j;
    j["name"] = z.name;
    j["rect"] = z.rect;
    json cats = json::array();
    for (const auto& [l1, l2] : z.categories) cats.push_back({l1, l2});
    j["categories"] = cats;
    j["name_tokens"] = z.name_tokens;
    j["sdm"] = z.sdm;
    if (z.luc_label >= 0) j["luc_label"] = z.luc_label;
    return j;
}

}  // namespace

SynthSpec load_synth_spec(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ValidationError("bad synth spec JSON " + path + ": " + e.what());
    }
    SynthSpec spec;
    spec.name = doc.value("name", std::string("synthetic"));
    spec.pois_per_zone = doc.value("pois_per_zone", 500);
    spec.luc_samples_per_zone = doc.value("luc_samples_per_zone", 150);
    spec.sdm_regions_per_zone = doc.value("sdm_regions_per_zone", 40);
    for (const auto& z : doc.at("zones")) spec.zones.push_back(zone_from_json(z));
    spec.validate();
    return spec;
}

void save_synth_spec(const std::string& path, const SynthSpec& spec) {
    json doc;
    doc["name"] = spec.name;
    doc["pois_per_zone"] = spec.pois_per_zone;
    doc["luc_samples_per_zone"] = spec.luc_samples_per_zone;
    doc["sdm_regions_per_zone"] = spec.sdm_regions_per_zone;
    json zones = json::array();
    for (const auto& z : spec.zones) zones.push_back(zone_to_json(z));
    doc["zones"] = zones;
    write_text_file(path, doc.dump(2) + "\n");
}

namespace {

// London-ish extent; the exact numbers only fix the coordinate scale.
constexpr double kLon0 = -0.40, kLat0 = 51.30, kLon1 = 0.40, kLat1 = 51.70;

std::array<std::array<double, 4>, 4> quadrant_rects() {
    const double lon_mid = 0.5 * (kLon0 + kLon1);
    const double lat_mid = 0.5 * (kLat0 + kLat1);
    return {{{kLon0, lat_mid, lon_mid, kLat1},    // NW
             {lon_mid, lat_mid, kLon1, kLat1},    // NE
             {kLon0, kLat0, lon_mid, lat_mid},    // SW
             {lon_mid, kLat0, kLon1, lat_mid}}};  // SE
}

const std::vector<std::vector<std::string>>& zone_token_sets() {
    static const std::vector<std::vector<std::string>> sets = {
        {"Abbey", "Crown", "Regent", "Portland", "Cavendish", "Marble"},
        {"Harbour", "Anchor", "Wharf", "Dockside", "Mariner", "Quay"},
        {"Fern", "Willow", "Meadow", "Orchard", "Bramble", "Heath"},
        {"Forge", "Kiln", "Foundry", "Mill", "Anvil", "Furnace"}};
    return sets;
}

const std::vector<std::vector<double>>& zone_sdm_targets() {
    static const std::vector<std::vector<double>> targets = {
        {0.50, 0.25, 0.10, 0.10, 0.05},
        {0.10, 0.45, 0.25, 0.10, 0.10},
        {0.05, 0.10, 0.55, 0.20, 0.10},
        {0.15, 0.10, 0.10, 0.25, 0.40}};
    return targets;
}

}  // namespace

SynthSpec quadrant_preset(int pois_per_zone) {
    const std::vector<std::vector<std::pair<std::string, std::string>>> cats = {
        {{"Attractions", "Museums"},
         {"Attractions", "Galleries"},
         {"Attractions", "Theatres"}},
        {{"Retail", "Clothes Shops"}, {"Retail", "Bars"}, {"Retail", "Markets"}},
        {{"Recreation", "Parks"},
         {"Recreation", "Sports Grounds"},
         {"Recreation", "Playgrounds"}},
        {{"Manufacturing", "Workshops"},
         {"Manufacturing", "Depots"},
         {"Manufacturing", "Warehouses"}}};

    SynthSpec spec;
    spec.name = "quadrants";
    spec.pois_per_zone = pois_per_zone;
    const auto rects = quadrant_rects();
    static const char* names[] = {"nw", "ne", "sw", "se"};
    for (std::size_t zi = 0; zi < 4; ++zi) {
        SynthZone z;
        z.name = names[zi];
        z.rect = rects[zi];
        z.categories = cats[zi];
        z.name_tokens = zone_token_sets()[zi];
        z.sdm = zone_sdm_targets()[zi];
        spec.zones.push_back(std::move(z));
    }
    return spec;
}

SynthSpec shared_category_preset(int pois_per_zone) {
    const std::vector<std::pair<std::string, std::string>> shared = {
        {"Amenities", "Cafes"},
        {"Amenities", "Libraries"},
        {"Amenities", "Pharmacies"},
        {"Amenities", "Post Offices"}};

    // District of each 4x4 patch, row by row from the south. A Latin
    // square: every district appears once per row and column, so no
    // axis-aligned boundary separates the districts.
    static const int kDistrict[4][4] = {
        {0, 1, 2, 3}, {2, 3, 0, 1}, {3, 2, 1, 0}, {1, 0, 3, 2}};

    SynthSpec spec;
    spec.name = "shared_categories";
    spec.pois_per_zone = pois_per_zone;
    const double lon_step = (kLon1 - kLon0) / 4.0;
    const double lat_step = (kLat1 - kLat0) / 4.0;
    for (int row = 0; row < 4; ++row) {
        for (int col = 0; col < 4; ++col) {
            const int district = kDistrict[row][col];
            SynthZone z;
            z.name = "d" + std::to_string(district) + "_r" + std::to_string(row) +
                     "c" + std::to_string(col);
            z.rect = {kLon0 + col * lon_step, kLat0 + row * lat_step,
                      kLon0 + (col + 1) * lon_step, kLat0 + (row + 1) * lat_step};
            z.categories = shared;
            z.name_tokens = zone_token_sets()[static_cast<std::size_t>(district)];
            z.sdm = zone_sdm_targets()[static_cast<std::size_t>(district)];
            z.luc_label = district;
            spec.zones.push_back(std::move(z));
        }
    }
    return spec;
}

void write_luc_csv(const std::string& path, const std::vector<LucSample>& samples) {
    std::string out = "lon,lat,label\n";
    for (const auto& s : samples) {
        out += format_double(s.lon);
        out += ',';
        out += format_double(s.lat);
        out += ',';
        out += std::to_string(s.label);
        out += '\n';
    }
    write_text_file(path, out);
}

namespace {

double parse_double_field(const std::string& field, const std::string& what,
                          std::size_t line_no) {
    const std::string text = trim(field);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
        throw ValidationError("non-numeric " + what + ", line " + std::to_string(line_no));
    }
    return value;
}

}  // namespace

std::vector<LucSample> load_luc_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open LUC CSV: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("LUC CSV is empty: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (split_csv_line(line) != std::vector<std::string>{"lon", "lat", "label"}) {
        throw ValidationError("LUC CSV header mismatch in " + path +
                              ": expected 'lon,lat,label'");
    }
    std::vector<LucSample> samples;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 3) {
            throw ValidationError("missing column 'label', line " + std::to_string(line_no));
        }
        LucSample s;
        s.lon = parse_double_field(fields[0], "lon", line_no);
        s.lat = parse_double_field(fields[1], "lat", line_no);
        const double label = parse_double_field(fields[2], "label", line_no);
        s.label = static_cast<int>(label);
        if (s.label < 0 || static_cast<double>(s.label) != label) {
            throw ValidationError("label must be a non-negative integer, line " +
                                  std::to_string(line_no));
        }
        samples.push_back(s);
    }
    return samples;
}

void write_sdm_csv(const std::string& path, const std::vector<SdmRegion>& regions) {
    if (regions.empty()) throw ValidationError("write_sdm_csv: no regions");
    const std::size_t k = regions.front().target.size();
    std::string out = "region_id,lon,lat";
    for (std::size_t i = 1; i <= k; ++i) out += ",p_" + std::to_string(i);
    out += '\n';
    for (const auto& r : regions) {
        out += csv_field(r.region_id);
        out += ',';
        out += format_double(r.lon);
        out += ',';
        out += format_double(r.lat);
        for (double p : r.target) {
            out += ',';
            out += format_double(p);
        }
        out += '\n';
    }
    write_text_file(path, out);
}

std::vector<SdmRegion> load_sdm_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open SDM CSV: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("SDM CSV is empty: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    if (header.size() < 5 || header[0] != "region_id" || header[1] != "lon" ||
        header[2] != "lat") {
        throw ValidationError("SDM CSV header mismatch in " + path +
                              ": expected 'region_id,lon,lat,p_1..p_K' with K >= 2");
    }
    for (std::size_t i = 3; i < header.size(); ++i) {
        if (header[i] != "p_" + std::to_string(i - 2)) {
            throw ValidationError("SDM CSV header mismatch in " + path +
                                  ": bad column '" + header[i] + "'");
        }
    }
    const std::size_t k = header.size() - 3;

    std::vector<SdmRegion> regions;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw ValidationError("wrong field count, line " + std::to_string(line_no));
        }
        SdmRegion r;
        r.region_id = trim(fields[0]);
        r.lon = parse_double_field(fields[1], "lon", line_no);
        r.lat = parse_double_field(fields[2], "lat", line_no);
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            const double p = parse_double_field(fields[3 + i], header[3 + i], line_no);
            if (p < 0.0) {
                throw ValidationError("negative proportion, line " + std::to_string(line_no));
            }
            r.target.push_back(p);
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            throw ValidationError("proportions do not sum to 1, line " +
                                  std::to_string(line_no));
        }
        regions.push_back(std::move(r));
    }
    return regions;
}

}  // namespace geosem
