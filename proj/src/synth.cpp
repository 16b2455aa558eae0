#include "fmow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "fmow/ensemble.hpp"
#include "fmow/error.hpp"
#include "fmow/evaluation.hpp"
#include "fmow/rng.hpp"
#include "fmow/text.hpp"

namespace fmow {

namespace {

constexpr std::string_view kBands = "CDEFGHJKLMNPQRSTUVWX";

struct FieldRange {
    std::string_view name;
    double lo;
    double hi;
};

constexpr std::array<FieldRange, 4> kSignalFields = {{
    {"off_nadir_deg", 0.0, 60.0},
    {"gsd_m", 0.3, 2.0},
    {"sun_elevation_deg", 10.0, 80.0},
    {"cloud_cover_pct", 0.0, 50.0},
}};

const FieldRange* find_field(std::string_view name) {
    for (const FieldRange& f : kSignalFields) {
        if (f.name == name) return &f;
    }
    return nullptr;
}

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

std::string numbered(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%06zu", prefix, i);
    return buf;
}

double sample_field(const FieldRange& f, SplitMix64& rng, int true_class, const std::optional<MetadataSignal>& sig) {
    double lo = f.lo;
    double hi = f.hi;
    if (sig && sig->field == f.name) {
        const double third = (f.hi - f.lo) / 3.0;
        if (true_class == sig->class_a) hi = f.lo + third;
        if (true_class == sig->class_b) lo = f.hi - third;
    }
    return round3(rng.uniform(lo, hi));
}

ImageMetadata sample_metadata(std::size_t index, std::size_t seq, int true_class, const SynthConfig& cfg,
                              SplitMix64& rng) {
    ImageMetadata m;
    m.image_id = numbered("img_", index);
    m.sequence_id = numbered("seq_", seq);
    m.gsd_m = sample_field(*find_field("gsd_m"), rng, true_class, cfg.metadata_signal);
    m.cloud_cover_pct = sample_field(*find_field("cloud_cover_pct"), rng, true_class, cfg.metadata_signal);
    m.off_nadir_deg = sample_field(*find_field("off_nadir_deg"), rng, true_class, cfg.metadata_signal);
    m.utm.zone = static_cast<int>(rng.between(1, 60));
    m.utm.band = kBands[static_cast<std::size_t>(rng.below(kBands.size()))];
    m.timestamp_utc.year = static_cast<int>(rng.between(2002, 2017));
    m.timestamp_utc.month = static_cast<int>(rng.between(1, 12));
    m.timestamp_utc.day = static_cast<int>(rng.between(1, 28));
    m.timestamp_utc.hour = static_cast<int>(rng.between(0, 23));
    m.timestamp_utc.minute = static_cast<int>(rng.between(0, 59));
    m.timestamp_utc.second = static_cast<int>(rng.between(0, 59));
    m.sun_azimuth_deg = round3(rng.uniform(0.0, 360.0));
    m.sun_elevation_deg = sample_field(*find_field("sun_elevation_deg"), rng, true_class, cfg.metadata_signal);
    m.target_azimuth_deg = round3(rng.uniform(0.0, 360.0));
    m.img_width_px = static_cast<int>(rng.between(400, 4000));
    m.img_height_px = static_cast<int>(rng.between(400, 4000));
    const auto n_boxes = static_cast<std::size_t>(rng.between(1, 5));
    for (std::size_t b = 0; b < n_boxes; ++b) {
        BoundingBox box;
        box.w = static_cast<int>(rng.between(3, std::min(600, m.img_width_px / 2)));
        box.h = static_cast<int>(rng.between(3, std::min(600, m.img_height_px / 2)));
        box.x = static_cast<int>(rng.between(0, m.img_width_px - box.w));
        box.y = static_cast<int>(rng.between(0, m.img_height_px - box.h));
        m.boxes.push_back(box);
    }
    m.box_index = static_cast<std::size_t>(rng.below(n_boxes));
    return m;
}

Probs simulate_prediction(int true_class, double noise, const SynthConfig& cfg, SplitMix64& rng) {
    int shown = true_class;
    if (rng.bernoulli(noise)) {
        auto other = static_cast<int>(rng.below(cfg.n_classes - 1));
        if (other >= true_class) ++other;
        shown = other;
    }
    for (const ConfusionPair& p : cfg.confusion_pairs) {
        if (p.from == shown) {
            if (rng.bernoulli(p.probability)) shown = p.to;
            break;
        }
    }
    std::array<double, kNumClasses> logits{};
    for (double& z : logits) z = rng.uniform();
    logits[static_cast<std::size_t>(shown)] += 1.0;
    for (double& z : logits) z /= cfg.temperature;
    return softmax(logits);
}

void check_class(const char* field, int c) {
    if (c < 0 || c >= static_cast<int>(kNumClasses)) throw ValidationError(field, "class index outside [0, 62]");
}

void check_prob(const char* field, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(field, "must lie in [0, 1]");
}

}  // namespace

void validate_synth_config(const SynthConfig& c) {
    if (c.n_records < 1) throw ValidationError("n_records", "must be >= 1");
    if (c.n_models < 1) throw ValidationError("n_models", "must be >= 1");
    if (c.n_classes != kNumClasses) throw ValidationError("n_classes", "must be 63");
    if (c.label_noise_rate.size() != 1 && c.label_noise_rate.size() != c.n_models) {
        throw ValidationError("label_noise_rate", "needs one value or one per model");
    }
    for (double r : c.label_noise_rate) check_prob("label_noise_rate", r);
    for (const ConfusionPair& p : c.confusion_pairs) {
        check_class("confusion_pairs.from", p.from);
        check_class("confusion_pairs.to", p.to);
        check_prob("confusion_pairs.probability", p.probability);
    }
    if (!(c.temperature > 0.0) || !std::isfinite(c.temperature)) throw ValidationError("temperature", "must be > 0");
    if (c.metadata_signal) {
        check_class("metadata_signal.class_a", c.metadata_signal->class_a);
        check_class("metadata_signal.class_b", c.metadata_signal->class_b);
        if (c.metadata_signal->class_a == c.metadata_signal->class_b) {
            throw ValidationError("metadata_signal", "class_a and class_b must differ");
        }
        if (find_field(c.metadata_signal->field) == nullptr) {
            throw ValidationError("metadata_signal.field",
                                  "must be one of off_nadir_deg, gsd_m, sun_elevation_deg, cloud_cover_pct");
        }
    }
    for (int f : c.focus_classes) check_class("focus_classes", f);
    check_prob("focus_fraction", c.focus_fraction);
    if (c.focus_fraction > 0.0 && c.focus_classes.empty()) {
        throw ValidationError("focus_classes", "must be nonempty when focus_fraction > 0");
    }
    check_prob("sequence_fraction", c.sequence_fraction);
    check_prob("false_detection_fraction", c.false_detection_fraction);
    check_prob("val_fraction", c.val_fraction);
}

SynthConfig parse_synth_config(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("synth config: ") + e.what(), e.byte);
    }
    if (!j.is_object()) throw SchemaError("config", "expected a JSON object");
    SynthConfig c;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "n_records") c.n_records = v.get<std::size_t>();
            else if (key == "n_models") c.n_models = v.get<std::size_t>();
            else if (key == "n_classes") c.n_classes = v.get<std::size_t>();
            else if (key == "label_noise_rate") {
                c.label_noise_rate = v.is_array() ? v.get<std::vector<double>>() : std::vector<double>{v.get<double>()};
            } else if (key == "confusion_pairs") {
                c.confusion_pairs.clear();
                for (const auto& p : v) c.confusion_pairs.push_back({p.at("from").get<int>(), p.at("to").get<int>(),
                                                                     p.at("probability").get<double>()});
            } else if (key == "temperature") c.temperature = v.get<double>();
            else if (key == "metadata_signal") {
                if (!v.is_null()) {
                    MetadataSignal s;
                    s.class_a = v.at("class_a").get<int>();
                    s.class_b = v.at("class_b").get<int>();
                    s.field = v.value("field", s.field);
                    c.metadata_signal = s;
                }
            } else if (key == "focus_classes") c.focus_classes = v.get<std::vector<int>>();
            else if (key == "focus_fraction") c.focus_fraction = v.get<double>();
            else if (key == "sequence_fraction") c.sequence_fraction = v.get<double>();
            else if (key == "false_detection_fraction") c.false_detection_fraction = v.get<double>();
            else if (key == "val_fraction") c.val_fraction = v.get<double>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else throw ValidationError(key, "is not a synth config field");
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("config", e.what());
    }
    validate_synth_config(c);
    return c;
}

std::string serialize_synth_config(const SynthConfig& c) {
    nlohmann::ordered_json j;
    j["n_records"] = c.n_records;
    j["n_models"] = c.n_models;
    j["n_classes"] = c.n_classes;
    j["label_noise_rate"] = c.label_noise_rate;
    auto pairs = nlohmann::ordered_json::array();
    for (const ConfusionPair& p : c.confusion_pairs) {
        nlohmann::ordered_json jp;
        jp["from"] = p.from;
        jp["to"] = p.to;
        jp["probability"] = p.probability;
        pairs.push_back(std::move(jp));
    }
    j["confusion_pairs"] = std::move(pairs);
    j["temperature"] = c.temperature;
    if (c.metadata_signal) {
        nlohmann::ordered_json s;
        s["class_a"] = c.metadata_signal->class_a;
        s["class_b"] = c.metadata_signal->class_b;
        s["field"] = c.metadata_signal->field;
        j["metadata_signal"] = std::move(s);
    } else {
        j["metadata_signal"] = nullptr;
    }
    j["focus_classes"] = c.focus_classes;
    j["focus_fraction"] = c.focus_fraction;
    j["sequence_fraction"] = c.sequence_fraction;
    j["false_detection_fraction"] = c.false_detection_fraction;
    j["val_fraction"] = c.val_fraction;
    j["seed"] = c.seed;
    return j.dump(2) + "\n";
}

SynthDataset generate_dataset(const SynthConfig& cfg) {
    validate_synth_config(cfg);
    SplitMix64 rng(cfg.seed);
    SynthDataset ds;
    ds.config = cfg;
    for (std::size_t m = 0; m < cfg.n_models; ++m) ds.model_ids.push_back("model_" + std::to_string(m));
    ds.predictions.assign(cfg.n_models, {});

    std::vector<std::size_t> seq_start;
    std::vector<int> seq_class;
    std::size_t index = 0;
    while (index < cfg.n_records) {
        std::size_t len = rng.bernoulli(cfg.sequence_fraction) ? static_cast<std::size_t>(rng.between(2, 6)) : 1;
        len = std::min(len, cfg.n_records - index);

        int cls;
        if (rng.bernoulli(cfg.false_detection_fraction)) {
            cls = kFalseDetectionClass;
        } else if (!cfg.focus_classes.empty() && rng.bernoulli(cfg.focus_fraction)) {
            cls = cfg.focus_classes[static_cast<std::size_t>(rng.below(cfg.focus_classes.size()))];
        } else {
            cls = static_cast<int>(rng.below(kNumClasses - 1));
        }
        const std::size_t seq = seq_start.size();
        seq_start.push_back(index);
        seq_class.push_back(cls);

        for (std::size_t k = 0; k < len; ++k, ++index) {
            ds.metadata.push_back(sample_metadata(index, seq, cls, cfg, rng));
            ds.labels.push_back(cls);
            for (std::size_t m = 0; m < cfg.n_models; ++m) {
                ds.predictions[m].push_back(simulate_prediction(cls, cfg.noise_for_model(m), cfg, rng));
            }
        }
    }

    // splits are assigned per sequence so every image of a site lands on the same side
    std::vector<std::string> seq_split(seq_start.size(), "train");
    std::vector<std::size_t> fd_seqs, other_seqs;
    for (std::size_t s = 0; s < seq_start.size(); ++s) {
        (seq_class[s] == kFalseDetectionClass ? fd_seqs : other_seqs).push_back(s);
    }
    const SplitResult fd_split = split_false_detections(fd_seqs.size(), derive_seed(cfg.seed, 0x66645f73706c6974ULL));
    for (std::size_t i : fd_split.val) seq_split[fd_seqs[i]] = "val";

    SplitMix64 split_rng(derive_seed(cfg.seed, 0x73706c6974ULL));
    shuffle(std::span<std::size_t>(other_seqs), split_rng);
    const auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(other_seqs.size())));
    for (std::size_t i = 0; i < n_val; ++i) seq_split[other_seqs[i]] = "val";

    ds.splits.resize(ds.metadata.size());
    for (std::size_t s = 0; s < seq_start.size(); ++s) {
        const std::size_t end = s + 1 < seq_start.size() ? seq_start[s + 1] : ds.metadata.size();
        for (std::size_t i = seq_start[s]; i < end; ++i) ds.splits[i] = seq_split[s];
    }
    return ds;
}

std::string labels_csv(const SynthDataset& ds) {
    std::string out = "image_id,sequence_id,label,split\n";
    for (std::size_t i = 0; i < ds.metadata.size(); ++i) {
        out += ds.metadata[i].image_id + "," + ds.metadata[i].sequence_id + "," + std::to_string(ds.labels[i]) + "," +
               ds.splits[i] + "\n";
    }
    return out;
}

void write_dataset(const SynthDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::string meta;
    for (const ImageMetadata& m : ds.metadata) {
        meta += serialize_metadata(m);
        meta.push_back('\n');
    }
    write_file(dir / "metadata.jsonl", meta);

    nlohmann::ordered_json files;
    files["metadata"] = "metadata.jsonl";
    files["labels"] = "labels.csv";
    auto pred_files = nlohmann::ordered_json::array();
    for (std::size_t m = 0; m < ds.model_ids.size(); ++m) {
        std::string lines;
        for (std::size_t i = 0; i < ds.metadata.size(); ++i) {
            lines += serialize_prediction({ds.metadata[i].image_id, ds.model_ids[m], ds.predictions[m][i]});
            lines.push_back('\n');
        }
        const std::string name = "predictions_" + ds.model_ids[m] + ".jsonl";
        write_file(dir / name, lines);
        pred_files.push_back(name);
    }
    files["predictions"] = std::move(pred_files);
    write_file(dir / "labels.csv", labels_csv(ds));

    nlohmann::ordered_json manifest;
    manifest["rng"] = SplitMix64::kAlgorithm;
    manifest["seed"] = ds.config.seed;
    manifest["n_records"] = ds.metadata.size();
    manifest["config"] = nlohmann::ordered_json::parse(serialize_synth_config(ds.config));
    manifest["files"] = std::move(files);
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace fmow
