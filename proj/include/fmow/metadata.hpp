#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fmow {

inline constexpr std::size_t kNumClasses = 63;
inline constexpr int kFalseDetectionClass = 62;

struct BoundingBox {
    int x = 0;  // left
    int y = 0;  // top
    int w = 1;
    int h = 1;

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Timestamp {
    int year = 2000;
    int month = 1;  // 1..12
    int day = 1;    // 1..31
    int hour = 0;
    int minute = 0;
    int second = 0;
    int millisecond = 0;

    friend bool operator==(const Timestamp&, const Timestamp&) = default;
};

/// Parses "YYYY-MM-DDTHH:MM:SS[.fff]Z". Throws ValidationError on a bad calendar date.
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(const Timestamp& ts);

/// UTM grid zone designator: zone number plus MGRS latitude band letter.
struct UtmZone {
    int zone = 31;
    char band = 'N';

    friend bool operator==(const UtmZone&, const UtmZone&) = default;
};

/// Accepts "31U" or "01C". Bands C..X without I and O.
UtmZone parse_utm(std::string_view text);
std::string format_utm(const UtmZone& utm);

/// Central meridian of the zone in degrees (6n - 183).
double utm_central_meridian_deg(const UtmZone& utm);
/// Center latitude of the band in degrees. Band X spans 72..84.
double utm_band_center_lat_deg(const UtmZone& utm);

struct ImageMetadata {
    std::string image_id;
    std::string sequence_id;
    double gsd_m = 0.0;
    double cloud_cover_pct = 0.0;
    double off_nadir_deg = 0.0;
    UtmZone utm;
    Timestamp timestamp_utc;
    double sun_azimuth_deg = 0.0;
    double sun_elevation_deg = 0.0;
    double target_azimuth_deg = 0.0;
    int img_width_px = 1;
    int img_height_px = 1;
    std::vector<BoundingBox> boxes;
    std::size_t box_index = 0;

    // Set when the field was absent from the source record and the default was used.
    bool cloud_cover_defaulted = false;
    bool target_azimuth_defaulted = false;

    const BoundingBox& box() const { return boxes.at(box_index); }

    friend bool operator==(const ImageMetadata&, const ImageMetadata&) = default;
};

/// Parse one flat JSON object. Boxes are clamped to the image and every
/// invariant is checked.
///
/// Throws ParseError (with byte offset) for malformed JSON, SchemaError for a
/// missing required field and ValidationError for out-of-range values.
ImageMetadata parse_metadata(std::string_view json_text);

/// Single-line JSON. Defaulted fields are omitted so the record parses back identically.
std::string serialize_metadata(const ImageMetadata& meta);

/// Checks every ImageMetadata invariant; throws ValidationError naming the field.
void validate_metadata(const ImageMetadata& meta);

struct ClassRegistry {
    std::vector<std::string> labels;
    std::vector<double> weights;  // one per label; uniform 1.0 by default

    std::size_t size() const noexcept { return labels.size(); }
    int index_of(std::string_view label) const;  // -1 when absent
};

/// One label per line (blank trailing lines ignored), or a JSON array of strings.
ClassRegistry load_class_registry(const std::filesystem::path& path);
ClassRegistry make_class_registry(std::vector<std::string> labels);

/// Built-in label set: the named classes, placeholders class_24..class_61, then false_detection.
ClassRegistry default_class_registry();

/// JSON object mapping label -> positive weight. Labels not listed keep weight 1.
void load_class_weights(ClassRegistry& registry, const std::filesystem::path& path);

}  // namespace fmow
