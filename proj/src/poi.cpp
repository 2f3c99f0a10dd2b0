#include "geosem/poi.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace geosem {

using nlohmann::json;

const char* variant_name(DescriptionVariant variant) {
    switch (variant) {
        case DescriptionVariant::NameAndType: return "name_and_type";
        case DescriptionVariant::NameOnly: return "name_only";
        case DescriptionVariant::TypeOnly: return "type_only";
    }
    throw std::logic_error("variant_name: bad enum value");
}

DescriptionVariant parse_variant(const std::string& name) {
    if (name == "name_and_type") return DescriptionVariant::NameAndType;
    if (name == "name_only") return DescriptionVariant::NameOnly;
    if (name == "type_only") return DescriptionVariant::TypeOnly;
    throw ValidationError("unknown description variant: '" + name +
                          "' (expected name_and_type, name_only or type_only)");
}

namespace {

double parse_coord(const std::string& field, const char* what, std::size_t line_no) {
    const std::string text = trim(field);
    double value = 0.0;
    const auto* begin = text.data();
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || text.empty()) {
        throw ValidationError(std::string("non-numeric ") + what + ", line " +
                              std::to_string(line_no));
    }
    return value;
}

}  // namespace

std::vector<PoiRecord> load_poi_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open POI CSV: " + path);

    static const std::vector<std::string> expected = {
        "id", "lon", "lat", "name", "category_l1", "category_l2"};

    std::string line;
    if (!std::getline(in, line)) {
        throw ValidationError("POI CSV is empty (missing header): " + path);
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    if (header != expected) {
        std::string want;
        for (const auto& h : expected) want += (want.empty() ? "" : ",") + h;
        throw ValidationError("POI CSV header mismatch in " + path + ": expected '" +
                              want + "', got '" + line + "'");
    }

    std::vector<PoiRecord> records;
    std::unordered_set<std::string> seen_ids;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != expected.size()) {
            throw ValidationError("missing column, line " + std::to_string(line_no) +
                                  " (expected " + std::to_string(expected.size()) +
                                  " fields, got " + std::to_string(fields.size()) + ")");
        }
        PoiRecord rec;
        rec.id = trim(fields[0]);
        rec.lon = parse_coord(fields[1], "lon", line_no);
        rec.lat = parse_coord(fields[2], "lat", line_no);
        rec.name = trim(fields[3]);
        rec.category_l1 = trim(fields[4]);
        rec.category_l2 = trim(fields[5]);

        if (rec.id.empty()) {
            throw ValidationError("empty id, line " + std::to_string(line_no));
        }
        if (rec.lon < -180.0 || rec.lon > 180.0 || rec.lat < -90.0 || rec.lat > 90.0) {
            throw ValidationError("coordinate out of range, line " + std::to_string(line_no));
        }
        if (rec.name.empty() || rec.category_l1.empty() || rec.category_l2.empty()) {
            throw ValidationError("empty name or category, line " + std::to_string(line_no));
        }
        if (!seen_ids.insert(rec.id).second) {
            throw ValidationError("duplicate id '" + rec.id + "', line " +
                                  std::to_string(line_no));
        }
        records.push_back(std::move(rec));
    }
    return records;
}

void write_poi_csv(const std::string& path, const std::vector<PoiRecord>& records) {
    std::string out = "id,lon,lat,name,category_l1,category_l2\n";
    for (const auto& r : records) {
        out += csv_field(r.id);
        out += ',';
        out += format_double(r.lon);
        out += ',';
        out += format_double(r.lat);
        out += ',';
        out += csv_field(r.name);
        out += ',';
        out += csv_field(r.category_l1);
        out += ',';
        out += csv_field(r.category_l2);
        out += '\n';
    }
    write_text_file(path, out);
}

NormalizedCoord CoordNormalizer::normalize(double lon, double lat) const {
    return {2.0 * (lon - lon_min) / (lon_max - lon_min) - 1.0,
            2.0 * (lat - lat_min) / (lat_max - lat_min) - 1.0};
}

LonLat CoordNormalizer::denormalize(double x, double y) const {
    return {lon_min + (x + 1.0) * 0.5 * (lon_max - lon_min),
            lat_min + (y + 1.0) * 0.5 * (lat_max - lat_min)};
}

CoordNormalizer fit_normalizer(const std::vector<PoiRecord>& records) {
    if (records.size() < 2) {
        throw ValidationError("fit_normalizer: need at least 2 records");
    }
    double lon_min = records[0].lon, lon_max = records[0].lon;
    double lat_min = records[0].lat, lat_max = records[0].lat;
    for (const auto& r : records) {
        lon_min = std::min(lon_min, r.lon);
        lon_max = std::max(lon_max, r.lon);
        lat_min = std::min(lat_min, r.lat);
        lat_max = std::max(lat_max, r.lat);
    }
    const double width = lon_max - lon_min;
    const double height = lat_max - lat_min;
    if (width <= 0.0 || height <= 0.0) {
        throw ValidationError("fit_normalizer: degenerate bounding box (zero " +
                              std::string(width <= 0.0 ? "width" : "height") + ")");
    }
    CoordNormalizer norm;
    norm.lon_min = lon_min - 0.01 * width;
    norm.lon_max = lon_max + 0.01 * width;
    norm.lat_min = lat_min - 0.01 * height;
    norm.lat_max = lat_max + 0.01 * height;
    return norm;
}

Description render_description(const PoiRecord& record, DescriptionVariant variant) {
    Description d;
    d.poi_id = record.id;
    d.variant = variant;
    switch (variant) {
        case DescriptionVariant::NameAndType:
            d.text = "A place of " + record.category_l2 + ", a type of " +
                     record.category_l1 + ", named " + record.name + ".";
            break;
        case DescriptionVariant::TypeOnly:
            d.text = "A place of " + record.category_l2 + ", a type of " +
                     record.category_l1 + ".";
            break;
        case DescriptionVariant::NameOnly:
            d.text = "A place named " + record.name + ".";
            break;
    }
    return d;
}

DatasetSplit split_dataset(const std::vector<PoiRecord>& records,
                           double val_fraction, std::uint64_t seed) {
    if (records.size() < 2) {
        throw ValidationError("split_dataset: need at least 2 records");
    }
    if (!(val_fraction > 0.0) || !(val_fraction < 1.0)) {
        throw ValidationError("split_dataset: val_fraction must be in (0, 1)");
    }
    const std::size_t n = records.size();
    const std::size_t n_val = static_cast<std::size_t>(
        std::llround(val_fraction * static_cast<double>(n)));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<bool> is_val(n, false);
    for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;

    DatasetSplit split;
    split.seed = seed;
    for (std::size_t i = 0; i < n; ++i) {
        (is_val[i] ? split.val_ids : split.train_ids).push_back(records[i].id);
    }
    return split;
}

void save_split_json(const std::string& path, const DatasetSplit& split) {
    json doc;
    doc["seed"] = split.seed;
    doc["train_ids"] = split.train_ids;
    doc["val_ids"] = split.val_ids;
    write_text_file(path, doc.dump(2) + "\n");
}

DatasetSplit load_split_json(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ValidationError("bad split JSON " + path + ": " + e.what());
    }
    DatasetSplit split;
    split.seed = doc.at("seed").get<std::uint64_t>();
    split.train_ids = doc.at("train_ids").get<std::vector<std::string>>();
    split.val_ids = doc.at("val_ids").get<std::vector<std::string>>();
    return split;
}

}  // namespace geosem
