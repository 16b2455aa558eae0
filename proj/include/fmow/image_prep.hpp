#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fmow/kernels.hpp"
#include "fmow/metadata.hpp"

namespace fmow {

/// Multi-band image, samples interleaved by pixel: index = (y * width + x) * bands + band.
struct Raster {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t bands = 0;
    std::vector<float> samples;

    Raster() = default;
    Raster(std::size_t w, std::size_t h, std::size_t b, float fill = 0.0f);

    float& at(std::size_t x, std::size_t y, std::size_t band) { return samples[(y * width + x) * bands + band]; }
    float at(std::size_t x, std::size_t y, std::size_t band) const { return samples[(y * width + x) * bands + band]; }

    friend bool operator==(const Raster&, const Raster&) = default;
};

/// Throws ValidationError when dimensions are zero or the sample count disagrees.
void validate_raster(const Raster& r);

enum class PrepMode { enlarge, square };

std::string_view to_string(PrepMode mode);
PrepMode parse_prep_mode(std::string_view text);

inline constexpr double kDefaultContextFactor = 0.5;

struct PrepPlan {
    BoundingBox source_box;
    BoundingBox adjusted_box;
    PrepMode mode = PrepMode::enlarge;
    double context_factor = kDefaultContextFactor;
    int target_size = 224;
    int img_width_px = 0;
    int img_height_px = 0;

    friend bool operator==(const PrepPlan&, const PrepPlan&) = default;
};

/// Grows each dimension by a factor (1 + 2c) about the box center, clips to the
/// image and rounds to whole pixels (minimum 1).
BoundingBox enlarge_box(const BoundingBox& box, double context_factor, int img_w, int img_h);

/// Grows the smaller dimension about the center to match the larger one. The
/// result is shifted back inside the image; it only shrinks when the image is
/// too small to hold the square.
BoundingBox square_box(const BoundingBox& box, int img_w, int img_h);

/// Throws ValidationError when the box leaves the raster.
Raster crop(const Raster& raster, const BoundingBox& box);

/// Bilinear resize to target x target with half-pixel centers.
Raster resize(const Raster& raster, int target, kernels::Backend backend = kernels::Backend::parallel);

inline constexpr int kNumAugmentations = 8;

/// Dihedral transforms of a square raster. Ids 0-3 rotate by 0/90/180/270
/// degrees clockwise; ids 4-7 flip horizontally and then rotate the same way.
Raster augment(const Raster& raster, int transform_id);

/// Id of the transform equal to applying `first` and then `second`.
int compose_transforms(int second, int first);
int inverse_transform(int id);

/// Where a box on a side x side grid lands after the transform.
BoundingBox transform_box(const BoundingBox& box, int transform_id, int side);

PrepPlan plan_prep(const BoundingBox& box, PrepMode mode, double context_factor, int target_size, int img_w,
                   int img_h);

/// crop to the adjusted box, then resize to the target size
Raster apply_plan(const Raster& raster, const PrepPlan& plan);

std::string serialize_plan(const PrepPlan& plan);
PrepPlan parse_plan(std::string_view json_text);

// Container: one JSON header line {"width","height","bands","dtype":"f32le"}
// then width*height*bands little-endian float32 samples.
void write_raster(const Raster& raster, const std::filesystem::path& path);
Raster read_raster(const std::filesystem::path& path);
std::string encode_raster(const Raster& raster);
Raster decode_raster(std::string_view bytes);

}  // namespace fmow
