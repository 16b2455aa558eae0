#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <tuple>

#include "fmow/metadata.hpp"

namespace fmow {

inline constexpr std::size_t kNumFeatures = 27;

/// Feature order used by every vector, CSV header and normalization file.
inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames = {
    "gsd",          "cloud_cover",    "off_nadir",      "lon_x",          "lon_y",
    "lat_z",        "year",           "month",          "day",            "hour_minute",
    "sun_az_x",     "sun_az_y",       "sun_elev",       "tgt_az_x",       "tgt_az_y",
    "local_hour",   "week_day",       "n_boxes",        "log_orig_box_w", "log_orig_box_h",
    "log_adj_box_w", "log_adj_box_h", "log_aspect",     "aspect_minmax",  "box_img_w_ratio",
    "box_img_h_ratio", "box_img_minmax_ratio",
};

enum class Feature : std::size_t {
    gsd, cloud_cover, off_nadir, lon_x, lon_y, lat_z, year, month, day, hour_minute,
    sun_az_x, sun_az_y, sun_elev, tgt_az_x, tgt_az_y, local_hour, week_day, n_boxes,
    log_orig_box_w, log_orig_box_h, log_adj_box_w, log_adj_box_h, log_aspect, aspect_minmax,
    box_img_w_ratio, box_img_h_ratio, box_img_minmax_ratio,
};

/// Index of a feature name, or -1.
int feature_index(std::string_view name);

/// Feature values before normalization.
struct RawFeatureVector {
    std::array<double, kNumFeatures> values{};

    double& operator[](Feature f) { return values[static_cast<std::size_t>(f)]; }
    double operator[](Feature f) const { return values[static_cast<std::size_t>(f)]; }
};

/// Normalized features, each in [-1, 1].
struct FeatureVector {
    std::array<double, kNumFeatures> values{};

    double operator[](Feature f) const { return values[static_cast<std::size_t>(f)]; }
};

struct FeatureRange {
    double lo = -1.0;
    double hi = 1.0;
};

/// Per-feature affine map v -> 2(v - lo)/(hi - lo) - 1, clamped to [-1, 1].
/// A range of exactly [-1, 1] passes the value through untouched apart from clamping.
struct NormalizationSpec {
    std::array<FeatureRange, kNumFeatures> ranges{};

    static NormalizationSpec defaults();
};

NormalizationSpec load_normalization_spec(const std::filesystem::path& path);
NormalizationSpec parse_normalization_spec(std::string_view json_text);
std::string serialize_normalization_spec(const NormalizationSpec& spec);

struct DirectionComponents {
    double lon_x;  // cos(lon)
    double lon_y;  // sin(lon)
    double lat_z;  // sin(lat)
};

/// Approximate location from the UTM zone: lon from the central meridian,
/// lat from the band center.
DirectionComponents utm_to_direction_components(const UtmZone& utm);
DirectionComponents utm_to_direction_components(std::string_view utm);

/// Solar local hour from UTC time and a longitude: (h + m/60 + lon/15) mod 24.
double local_hour_at_longitude(int utc_hour, int utc_minute, double lon_deg);
double local_hour(const Timestamp& ts, const UtmZone& utm);

/// 0 = Monday ... 6 = Sunday.
int week_day(const Timestamp& ts);

/// All 27 features. `adjusted_box` is the box after enlargement or squaring.
/// Throws ValidationError when either box has a zero dimension.
RawFeatureVector extract_raw_features(const ImageMetadata& meta, const BoundingBox& adjusted_box);

double normalize_value(double v, const FeatureRange& range);
FeatureVector normalize(const RawFeatureVector& raw, const NormalizationSpec& spec);

}  // namespace fmow
