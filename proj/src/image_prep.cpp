#include "fmow/image_prep.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fmow/error.hpp"

namespace fmow {

namespace {

struct Interval {
    int start;
    int length;
};

// Round a continuous interval [lo, hi) clipped to [0, limit] onto whole pixels.
Interval round_interval(double lo, double hi, int limit) {
    lo = std::max(lo, 0.0);
    hi = std::min(hi, static_cast<double>(limit));
    long a = std::lround(lo);
    long b = std::lround(hi);
    if (b - a < 1) {
        b = a + 1;
        if (b > limit) {
            b = limit;
            a = limit - 1;
        }
    }
    return {static_cast<int>(a), static_cast<int>(b - a)};
}

int place_square(double center, int side, int limit) {
    const long start = std::lround(center - side / 2.0);
    return static_cast<int>(std::clamp<long>(start, 0, limit - side));
}

struct Point {
    std::size_t x;
    std::size_t y;
};

Point map_point(int transform_id, std::size_t x, std::size_t y, std::size_t n) {
    if (transform_id >= 4) x = n - 1 - x;
    for (int r = 0; r < transform_id % 4; ++r) {
        // clockwise quarter turn: (x, y) -> (n - 1 - y, x)
        const std::size_t nx = n - 1 - y;
        y = x;
        x = nx;
    }
    return {x, y};
}

void check_transform_id(int id) {
    if (id < 0 || id >= kNumAugmentations) {
        throw ValidationError("transform_id", "= " + std::to_string(id) + " outside [0, 7]");
    }
}

nlohmann::ordered_json box_json(const BoundingBox& b) {
    nlohmann::ordered_json j;
    j["x"] = b.x;
    j["y"] = b.y;
    j["w"] = b.w;
    j["h"] = b.h;
    return j;
}

BoundingBox box_from_json(const nlohmann::json& j, const char* field) {
    if (!j.is_object()) throw SchemaError(field);
    BoundingBox b;
    try {
        b.x = j.at("x").get<int>();
        b.y = j.at("y").get<int>();
        b.w = j.at("w").get<int>();
        b.h = j.at("h").get<int>();
    } catch (const nlohmann::json::exception&) {
        throw SchemaError(field, "expected integer x, y, w, h");
    }
    return b;
}

}  // namespace

Raster::Raster(std::size_t w, std::size_t h, std::size_t b, float fill)
    : width(w), height(h), bands(b), samples(w * h * b, fill) {}

void validate_raster(const Raster& r) {
    if (r.width < 1 || r.height < 1) throw ValidationError("raster", "width and height must be >= 1");
    if (r.bands < 1) throw ValidationError("raster", "bands must be >= 1");
    if (r.samples.size() != r.width * r.height * r.bands) {
        throw ValidationError("raster", "sample count does not equal width * height * bands");
    }
}

std::string_view to_string(PrepMode mode) { return mode == PrepMode::enlarge ? "enlarge" : "square"; }

PrepMode parse_prep_mode(std::string_view text) {
    if (text == "enlarge") return PrepMode::enlarge;
    if (text == "square") return PrepMode::square;
    throw ValidationError("mode", "must be 'enlarge' or 'square', got '" + std::string(text) + "'");
}

BoundingBox enlarge_box(const BoundingBox& box, double c, int img_w, int img_h) {
    if (!(c >= 0.0)) throw ValidationError("context_factor", "must be >= 0");
    const double grow = 1.0 + 2.0 * c;
    const double cx = box.x + box.w / 2.0;
    const double cy = box.y + box.h / 2.0;
    const double fw = box.w * grow;
    const double fh = box.h * grow;
    const Interval ix = round_interval(cx - fw / 2.0, cx + fw / 2.0, img_w);
    const Interval iy = round_interval(cy - fh / 2.0, cy + fh / 2.0, img_h);
    return {ix.start, iy.start, ix.length, iy.length};
}

BoundingBox square_box(const BoundingBox& box, int img_w, int img_h) {
    const int side = std::min({std::max(box.w, box.h), img_w, img_h});
    const double cx = box.x + box.w / 2.0;
    const double cy = box.y + box.h / 2.0;
    return {place_square(cx, side, img_w), place_square(cy, side, img_h), side, side};
}

Raster crop(const Raster& raster, const BoundingBox& box) {
    validate_raster(raster);
    if (box.x < 0 || box.y < 0 || box.w < 1 || box.h < 1 ||
        static_cast<std::size_t>(box.x) + static_cast<std::size_t>(box.w) > raster.width ||
        static_cast<std::size_t>(box.y) + static_cast<std::size_t>(box.h) > raster.height) {
        throw ValidationError("box", "lies outside the raster");
    }
    Raster out(static_cast<std::size_t>(box.w), static_cast<std::size_t>(box.h), raster.bands);
    const std::size_t row = out.width * raster.bands;
    for (std::size_t y = 0; y < out.height; ++y) {
        const float* src = raster.samples.data() +
                           ((y + static_cast<std::size_t>(box.y)) * raster.width + static_cast<std::size_t>(box.x)) *
                               raster.bands;
        std::copy(src, src + row, out.samples.data() + y * row);
    }
    return out;
}

Raster resize(const Raster& raster, int target, kernels::Backend backend) {
    validate_raster(raster);
    if (target < 1) throw ValidationError("target_size", "must be >= 1");
    const auto t = static_cast<std::size_t>(target);
    Raster out(t, t, raster.bands);
    const kernels::ResizeShape shape{raster.width, raster.height, t, t, raster.bands};
    if (backend == kernels::Backend::serial) {
        kernels::serial::resize_bilinear(shape, raster.samples, out.samples);
    } else {
        kernels::parallel::resize_bilinear(shape, raster.samples, out.samples);
    }
    return out;
}

Raster augment(const Raster& raster, int transform_id) {
    validate_raster(raster);
    check_transform_id(transform_id);
    if (raster.width != raster.height) throw ValidationError("raster", "augmentation requires a square raster");
    const std::size_t n = raster.width;
    Raster out(n, n, raster.bands);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            const Point p = map_point(transform_id, x, y, n);
            for (std::size_t b = 0; b < raster.bands; ++b) out.at(p.x, p.y, b) = raster.at(x, y, b);
        }
    }
    return out;
}

int compose_transforms(int second, int first) {
    check_transform_id(second);
    check_transform_id(first);
    const int f1 = first / 4, r1 = first % 4;
    const int f2 = second / 4, r2 = second % 4;
    // a flip conjugates a rotation into its inverse
    const int r = ((r2 + (f2 ? -r1 : r1)) % 4 + 4) % 4;
    return 4 * (f1 ^ f2) + r;
}

int inverse_transform(int id) {
    check_transform_id(id);
    if (id >= 4) return id;  // reflections are involutions
    return (4 - id) % 4;
}

BoundingBox transform_box(const BoundingBox& box, int transform_id, int side) {
    check_transform_id(transform_id);
    // map the two corners of the half-open box in continuous coordinates
    auto map = [&](double u, double v) {
        if (transform_id >= 4) u = side - u;
        for (int r = 0; r < transform_id % 4; ++r) {
            const double nu = side - v;
            v = u;
            u = nu;
        }
        return std::pair{u, v};
    };
    const auto [ax, ay] = map(box.x, box.y);
    const auto [bx, by] = map(box.x + box.w, box.y + box.h);
    return {static_cast<int>(std::min(ax, bx)), static_cast<int>(std::min(ay, by)),
            static_cast<int>(std::abs(bx - ax)), static_cast<int>(std::abs(by - ay))};
}

PrepPlan plan_prep(const BoundingBox& box, PrepMode mode, double context_factor, int target_size, int img_w,
                   int img_h) {
    if (img_w < 1 || img_h < 1) throw ValidationError("image", "dimensions must be >= 1");
    if (target_size < 1) throw ValidationError("target_size", "must be >= 1");
    if (box.x < 0 || box.y < 0 || box.w < 1 || box.h < 1 || box.x + box.w > img_w || box.y + box.h > img_h) {
        throw ValidationError("box", "must lie within the image");
    }
    PrepPlan plan;
    plan.source_box = box;
    plan.mode = mode;
    plan.context_factor = context_factor;
    plan.target_size = target_size;
    plan.img_width_px = img_w;
    plan.img_height_px = img_h;
    plan.adjusted_box =
        mode == PrepMode::enlarge ? enlarge_box(box, context_factor, img_w, img_h) : square_box(box, img_w, img_h);
    return plan;
}

Raster apply_plan(const Raster& raster, const PrepPlan& plan) {
    if (raster.width != static_cast<std::size_t>(plan.img_width_px) ||
        raster.height != static_cast<std::size_t>(plan.img_height_px)) {
        throw ValidationError("raster", "dimensions differ from the metadata image size");
    }
    return resize(crop(raster, plan.adjusted_box), plan.target_size);
}

std::string serialize_plan(const PrepPlan& p) {
    nlohmann::ordered_json j;
    j["source_box"] = box_json(p.source_box);
    j["adjusted_box"] = box_json(p.adjusted_box);
    j["mode"] = std::string(to_string(p.mode));
    j["context_factor"] = p.context_factor;
    j["target_size"] = p.target_size;
    j["img_width_px"] = p.img_width_px;
    j["img_height_px"] = p.img_height_px;
    return j.dump();
}

PrepPlan parse_plan(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("prep plan: ") + e.what(), e.byte);
    }
    PrepPlan p;
    p.source_box = box_from_json(j.value("source_box", nlohmann::json()), "source_box");
    p.adjusted_box = box_from_json(j.value("adjusted_box", nlohmann::json()), "adjusted_box");
    if (!j.contains("mode") || !j["mode"].is_string()) throw SchemaError("mode");
    p.mode = parse_prep_mode(j["mode"].get<std::string>());
    if (!j.contains("context_factor") || !j["context_factor"].is_number()) throw SchemaError("context_factor");
    p.context_factor = j["context_factor"].get<double>();
    for (const char* key : {"target_size", "img_width_px", "img_height_px"}) {
        if (!j.contains(key) || !j[key].is_number_integer()) throw SchemaError(key);
    }
    p.target_size = j["target_size"].get<int>();
    p.img_width_px = j["img_width_px"].get<int>();
    p.img_height_px = j["img_height_px"].get<int>();
    return p;
}

std::string encode_raster(const Raster& r) {
    validate_raster(r);
    nlohmann::ordered_json header;
    header["width"] = r.width;
    header["height"] = r.height;
    header["bands"] = r.bands;
    header["dtype"] = "f32le";
    std::string out = header.dump();
    out.push_back('\n');
    const std::size_t offset = out.size();
    out.resize(offset + r.samples.size() * 4);
    char* dst = out.data() + offset;
    for (float v : r.samples) {
        auto bits = std::bit_cast<std::uint32_t>(v);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        std::memcpy(dst, &bits, 4);
        dst += 4;
    }
    return out;
}

Raster decode_raster(std::string_view bytes) {
    const auto nl = bytes.find('\n');
    if (nl == std::string_view::npos) throw ParseError("raster: missing header line");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(0, nl));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("raster header: ") + e.what(), e.byte);
    }
    for (const char* key : {"width", "height", "bands"}) {
        if (!header.contains(key) || !header[key].is_number_unsigned()) throw SchemaError(key);
    }
    if (header.value("dtype", std::string()) != "f32le") throw SchemaError("dtype", "only f32le is supported");
    Raster r(header["width"].get<std::size_t>(), header["height"].get<std::size_t>(),
             header["bands"].get<std::size_t>());
    validate_raster(r);
    const std::string_view payload = bytes.substr(nl + 1);
    if (payload.size() != r.samples.size() * 4) {
        throw TruncatedFileError("raster: expected " + std::to_string(r.samples.size() * 4) + " payload bytes, found " +
                                 std::to_string(payload.size()));
    }
    const char* src = payload.data();
    for (float& v : r.samples) {
        std::uint32_t bits;
        std::memcpy(&bits, src, 4);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        v = std::bit_cast<float>(bits);
        src += 4;
    }
    return r;
}

void write_raster(const Raster& raster, const std::filesystem::path& path) {
    const std::string bytes = encode_raster(raster);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write raster " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Raster read_raster(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open raster " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return decode_raster(ss.str());
}

}  // namespace fmow
