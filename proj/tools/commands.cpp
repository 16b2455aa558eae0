#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include <CLI11.hpp>
#include <json.hpp>

#include "fmow/ensemble.hpp"
#include "fmow/error.hpp"
#include "fmow/evaluation.hpp"
#include "fmow/features.hpp"
#include "fmow/fusion_net.hpp"
#include "fmow/image_prep.hpp"
#include "fmow/metadata.hpp"
#include "fmow/rng.hpp"
#include "fmow/synth.hpp"
#include "fmow/text.hpp"

namespace fmow::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr std::size_t kChunk = 4096;
constexpr std::size_t kMaxListed = 20;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Everything the run manifest records.
struct Run {
    std::string subcommand;
    std::vector<std::string> argv;
    ojson config = ojson::object();
    ojson inputs = ojson::array();
    ojson outputs = ojson::array();
    ojson stats = ojson::object();
    std::optional<std::uint64_t> seed;
    std::string manifest_path;
};

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    return in;
}

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    return out;
}

// Reads the next nonblank line, stripping a trailing CR. Counts every physical line.
bool next_line(std::istream& in, std::string& line, std::size_t& line_no) {
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) return true;
    }
    return false;
}

void list_ids(std::ostream& err, const std::string& what, const std::vector<std::string>& ids) {
    err << what << " (" << ids.size() << "):";
    for (std::size_t i = 0; i < ids.size() && i < kMaxListed; ++i) err << ' ' << ids[i];
    if (ids.size() > kMaxListed) err << " ... and " << ids.size() - kMaxListed << " more";
    err << '\n';
}

// Ids become file names for per-record outputs.
const std::string& file_stem(const std::string& id) {
    if (id.empty() || id == "." || id == ".." || id.find_first_of("/\\") != std::string::npos) {
        throw ValidationError("id", "'" + id + "' cannot be used as a file name");
    }
    return id;
}

kernels::Backend parse_backend(const std::string& name) {
    return name == "serial" ? kernels::Backend::serial : kernels::Backend::parallel;
}

ClassRegistry resolve_registry(const std::string& registry_path, const std::string& weights_path, Run& run) {
    ClassRegistry reg = registry_path.empty() ? default_class_registry() : load_class_registry(registry_path);
    if (reg.size() != kNumClasses) {
        throw ValidationError("registry", "expected " + std::to_string(kNumClasses) + " classes, found " +
                                              std::to_string(reg.size()));
    }
    if (!registry_path.empty()) run.inputs.push_back(registry_path);
    if (!weights_path.empty()) {
        load_class_weights(reg, weights_path);
        run.inputs.push_back(weights_path);
    }
    return reg;
}

// ---- shared table readers -------------------------------------------------

struct LabelRow {
    std::string sequence_id;
    int label = 0;
    std::string split;
};

using LabelTable = std::unordered_map<std::string, LabelRow>;

constexpr std::string_view kLabelsHeader = "image_id,sequence_id,label,split";

LabelTable read_labels(const fs::path& path, const ClassRegistry& registry) {
    std::ifstream in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    if (!next_line(in, line, line_no) || line != kLabelsHeader) {
        throw ParseError(path.string() + ": expected header '" + std::string(kLabelsHeader) + "'");
    }
    LabelTable table;
    while (next_line(in, line, line_no)) {
        const auto where = path.string() + " line " + std::to_string(line_no);
        const auto cols = split_csv(line);
        if (cols.size() != 4) throw ParseError(where + ": expected 4 columns");
        LabelRow row{std::string(cols[1]), 0, std::string(cols[3])};
        const std::string_view lab = cols[2];
        if (!lab.empty() && std::all_of(lab.begin(), lab.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            const long long v = parse_int(lab, "label");
            if (v < 0 || v >= static_cast<long long>(kNumClasses)) throw ValidationError("label", where + ": out of range");
            row.label = static_cast<int>(v);
        } else {
            row.label = registry.index_of(lab);
            if (row.label < 0) throw ValidationError("label", where + ": unknown label '" + std::string(lab) + "'");
        }
        if (row.sequence_id.empty()) row.sequence_id = std::string(cols[0]);
        if (!table.emplace(std::string(cols[0]), std::move(row)).second) {
            throw ValidationError("image_id", where + ": duplicate '" + std::string(cols[0]) + "'");
        }
    }
    return table;
}

std::string feature_header() {
    std::string h = "image_id";
    for (std::string_view name : kFeatureNames) {
        h += ',';
        h += name;
    }
    return h;
}

std::unordered_map<std::string, FeatureVector> read_features(const fs::path& path) {
    std::ifstream in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    if (!next_line(in, line, line_no) || line != feature_header()) {
        throw ParseError(path.string() + ": header does not list the " + std::to_string(kNumFeatures) +
                         " features in order");
    }
    std::unordered_map<std::string, FeatureVector> table;
    while (next_line(in, line, line_no)) {
        const auto cols = split_csv(line);
        const auto where = path.string() + " line " + std::to_string(line_no);
        if (cols.size() != kNumFeatures + 1) throw ParseError(where + ": expected " + std::to_string(kNumFeatures + 1) + " columns");
        FeatureVector f;
        for (std::size_t k = 0; k < kNumFeatures; ++k) f.values[k] = parse_double(cols[k + 1], kFeatureNames[k]);
        if (!table.emplace(std::string(cols[0]), f).second) {
            throw ValidationError("image_id", where + ": duplicate '" + std::string(cols[0]) + "'");
        }
    }
    return table;
}

std::unordered_map<std::string, std::string> read_sequence_map(const fs::path& metadata_path) {
    std::unordered_map<std::string, std::string> map;
    std::ifstream in = open_input(metadata_path);
    std::string line;
    std::size_t line_no = 0;
    while (next_line(in, line, line_no)) {
        try {
            const ImageMetadata m = parse_metadata(line);
            map[m.image_id] = m.sequence_id;
        } catch (const Error& e) {
            throw ParseError(metadata_path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return map;
}

// ---- extract ----------------------------------------------------------------

struct ExtractArgs {
    std::string metadata, norm, out;
    std::string mode = "enlarge";
    double context_factor = kDefaultContextFactor;
    bool strict = false;
};

int cmd_extract(const ExtractArgs& a, Run& run, std::ostream& err) {
    const NormalizationSpec spec = load_normalization_spec(a.norm);
    const PrepMode mode = parse_prep_mode(a.mode);
    if (!(a.context_factor >= 0.0)) throw ValidationError("context_factor", "must be >= 0");
    run.config["mode"] = a.mode;
    run.config["context_factor"] = a.context_factor;
    run.config["strict"] = a.strict;
    run.config["normalization"] = ojson::parse(serialize_normalization_spec(spec));
    run.inputs = {a.metadata, a.norm};
    run.outputs = {a.out};

    std::ifstream in = open_input(a.metadata);
    std::ofstream out = open_output(a.out);
    out << feature_header() << '\n';

    std::vector<std::string> lines;
    std::vector<std::size_t> numbers;
    std::size_t n_written = 0, n_rejected = 0, cloud_defaulted = 0, azimuth_defaulted = 0;
    bool stop = false;

    auto flush = [&] {
        const auto n = static_cast<std::ptrdiff_t>(lines.size());
        std::vector<std::string> rows(lines.size()), errors(lines.size());
        std::vector<char> cloud(lines.size(), 0), azimuth(lines.size(), 0), internal(lines.size(), 0);
#pragma omp parallel for schedule(dynamic, 64)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            try {
                const ImageMetadata m = parse_metadata(lines[i]);
                const PrepPlan plan = plan_prep(m.box(), mode, a.context_factor, 1, m.img_width_px, m.img_height_px);
                const FeatureVector f = normalize(extract_raw_features(m, plan.adjusted_box), spec);
                std::string row = m.image_id;
                for (double v : f.values) {
                    row += ',';
                    row += format_double(v);
                }
                rows[i] = std::move(row);
                cloud[i] = m.cloud_cover_defaulted;
                azimuth[i] = m.target_azimuth_defaulted;
            } catch (const Error& e) {
                errors[i] = e.what();
            } catch (const std::exception& e) {
                errors[i] = e.what();
                internal[i] = 1;
            }
        }
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (internal[i]) throw std::runtime_error(errors[i]);
            if (!errors[i].empty()) {
                err << a.metadata << " line " << numbers[i] << ": " << errors[i] << '\n';
                ++n_rejected;
                if (a.strict) {
                    stop = true;
                    break;
                }
                continue;
            }
            out << rows[i] << '\n';
            ++n_written;
            cloud_defaulted += cloud[i];
            azimuth_defaulted += azimuth[i];
        }
        lines.clear();
        numbers.clear();
    };

    std::string line;
    std::size_t line_no = 0;
    while (!stop && next_line(in, line, line_no)) {
        lines.push_back(line);
        numbers.push_back(line_no);
        if (lines.size() == kChunk) flush();
    }
    if (!stop) flush();

    run.stats["records_written"] = n_written;
    run.stats["records_rejected"] = n_rejected;
    run.stats["cloud_cover_defaulted"] = cloud_defaulted;
    run.stats["target_azimuth_defaulted"] = azimuth_defaulted;
    if (n_rejected > 0) {
        err << n_rejected << " record(s) rejected" << (stop ? " (stopped at the first under --strict)" : "") << '\n';
        return kExitData;
    }
    return kExitOk;
}

// ---- prep -------------------------------------------------------------------

struct PrepArgs {
    std::string metadata, rasters_dir, out_dir;
    std::string mode = "enlarge";
    double context_factor = kDefaultContextFactor;
    int target_size = 224;
    std::string backend = "parallel";
};

int cmd_prep(const PrepArgs& a, Run& run, std::ostream& err) {
    const PrepMode mode = parse_prep_mode(a.mode);
    const auto backend = parse_backend(a.backend);
    run.config["mode"] = a.mode;
    run.config["context_factor"] = a.context_factor;
    run.config["target_size"] = a.target_size;
    run.config["backend"] = a.backend;
    run.inputs = {a.metadata, a.rasters_dir};
    run.outputs = {a.out_dir};

    fs::create_directories(a.out_dir);
    std::ifstream in = open_input(a.metadata);
    std::ofstream failures = open_output(fs::path(a.out_dir) / "failures.csv");
    failures << "line,image_id,reason\n";

    std::string line;
    std::size_t line_no = 0, n_ok = 0, n_failed = 0;
    while (next_line(in, line, line_no)) {
        std::string id;
        try {
            const ImageMetadata m = parse_metadata(line);
            id = m.image_id;
            const fs::path src = fs::path(a.rasters_dir) / (file_stem(id) + ".raster");
            if (!fs::exists(src)) throw IoError("missing raster file " + src.string());
            const Raster raster = read_raster(src);
            if (raster.width != static_cast<std::size_t>(m.img_width_px) ||
                raster.height != static_cast<std::size_t>(m.img_height_px)) {
                throw ValidationError("raster", "size " + std::to_string(raster.width) + "x" +
                                                    std::to_string(raster.height) + " disagrees with the metadata");
            }
            const PrepPlan plan = plan_prep(m.box(), mode, a.context_factor, a.target_size, m.img_width_px,
                                            m.img_height_px);
            const Raster prepared = resize(crop(raster, plan.adjusted_box), plan.target_size, backend);
            write_raster(prepared, fs::path(a.out_dir) / (id + ".raster"));
            write_file(fs::path(a.out_dir) / (id + ".plan.json"), serialize_plan(plan) + "\n");
            ++n_ok;
        } catch (const Error& e) {
            std::string reason = e.what();
            std::replace(reason.begin(), reason.end(), ',', ';');
            failures << line_no << ',' << id << ',' << reason << '\n';
            err << a.metadata << " line " << line_no << ": " << e.what() << '\n';
            ++n_failed;
        }
    }
    run.stats["prepared"] = n_ok;
    run.stats["failed"] = n_failed;
    if (n_failed > 0) {
        err << n_failed << " record(s) failed; see failures.csv\n";
        return kExitData;
    }
    return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    std::string features, labels, config, metadata, out_dir, registry;
    std::vector<std::string> predictions;
    std::optional<std::uint64_t> seed;
};

TrainConfig parse_train_config(const std::string& text, double& dropout_rate) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("train config: ") + e.what(), e.byte);
    }
    if (!j.is_object()) throw SchemaError("config", "expected an object");
    TrainConfig c;
    for (const auto& [key, v] : j.items()) {
        auto number = [&] {
            if (!v.is_number()) throw SchemaError(key, "expected a number");
            return v.get<double>();
        };
        auto integer = [&] {
            if (!v.is_number_integer()) throw SchemaError(key, "expected an integer");
            return v.get<long long>();
        };
        if (key == "max_epochs") c.max_epochs = static_cast<int>(integer());
        else if (key == "early_stop_patience") c.early_stop_patience = static_cast<int>(integer());
        else if (key == "min_improvement") c.min_improvement = number();
        else if (key == "learning_rate") c.learning_rate = number();
        else if (key == "beta1") c.beta1 = number();
        else if (key == "beta2") c.beta2 = number();
        else if (key == "epsilon") c.epsilon = number();
        else if (key == "batch_size") {
            const long long b = integer();
            if (b < 1) throw ValidationError("batch_size", "must be >= 1");
            c.batch_size = static_cast<std::size_t>(b);
        } else if (key == "seed") {
            if (!v.is_number_unsigned()) throw SchemaError(key, "expected a non-negative integer");
            c.seed = v.get<std::uint64_t>();
        } else if (key == "dropout_rate") {
            dropout_rate = number();
            if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ValidationError("dropout_rate", "must lie in [0, 1)");
        } else if (key == "backend") {
            if (!v.is_string() || (v != "serial" && v != "parallel")) {
                throw ValidationError("backend", "must be \"serial\" or \"parallel\"");
            }
            c.backend = parse_backend(v.get<std::string>());
        } else {
            throw ValidationError(key, "is not a training option");
        }
    }
    validate_config(c);
    return c;
}

ojson train_config_json(const TrainConfig& c, double dropout_rate) {
    ojson j;
    j["max_epochs"] = c.max_epochs;
    j["early_stop_patience"] = c.early_stop_patience;
    j["min_improvement"] = c.min_improvement;
    j["learning_rate"] = c.learning_rate;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["epsilon"] = c.epsilon;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["dropout_rate"] = dropout_rate;
    j["backend"] = c.backend == kernels::Backend::serial ? "serial" : "parallel";
    return j;
}

int cmd_train(const TrainArgs& a, Run& run, std::ostream& out, std::ostream& err) {
    double dropout_rate = kDefaultDropoutRate;
    TrainConfig cfg = a.config.empty() ? TrainConfig{} : parse_train_config(read_file(a.config), dropout_rate);
    if (a.seed) cfg.seed = *a.seed;
    run.seed = cfg.seed;
    run.config = train_config_json(cfg, dropout_rate);
    run.config["filter_metadata"] = !a.metadata.empty();

    const ClassRegistry registry = resolve_registry(a.registry, "", run);
    run.inputs.push_back(a.features);
    run.inputs.push_back(a.labels);
    for (const auto& p : a.predictions) run.inputs.push_back(p);
    if (!a.config.empty()) run.inputs.push_back(a.config);

    const auto features = read_features(a.features);
    const LabelTable labels = read_labels(a.labels, registry);

    std::unordered_set<std::string> dropped;
    std::map<std::string, std::size_t> drop_counts;
    if (!a.metadata.empty()) {
        run.inputs.push_back(a.metadata);
        std::ifstream in = open_input(a.metadata);
        std::string line;
        std::size_t line_no = 0;
        while (next_line(in, line, line_no)) {
            ImageMetadata m;
            try {
                m = parse_metadata(line);
            } catch (const Error& e) {
                throw ParseError(a.metadata + " line " + std::to_string(line_no) + ": " + e.what());
            }
            if (const auto reason = drop_reason(m)) {
                dropped.insert(m.image_id);
                ++drop_counts[to_string(*reason)];
            }
        }
    }

    // model id -> its records, models in first-seen order
    std::vector<std::string> model_order;
    std::unordered_map<std::string, std::vector<PredictionRecord>> by_model;
    std::vector<std::string> misses;
    for (const auto& path : a.predictions) {
        for_each_prediction(path, [&](PredictionRecord&& rec) {
            if (!features.count(rec.image_id) || !labels.count(rec.image_id)) {
                misses.push_back(rec.image_id);
                return;
            }
            auto [it, inserted] = by_model.try_emplace(rec.model_id);
            if (inserted) model_order.push_back(file_stem(rec.model_id));
            it->second.push_back(std::move(rec));
        });
    }
    if (!misses.empty()) {
        list_ids(err, "image_ids in the predictions without features or labels", misses);
        run.stats["join_misses"] = misses.size();
        return kExitData;
    }
    if (model_order.empty()) throw ValidationError("predictions", "no prediction records");

    fs::create_directories(a.out_dir);
    ojson per_model = ojson::object();
    for (std::size_t mi = 0; mi < model_order.size(); ++mi) {
        const std::string& model = model_order[mi];
        FusionDataset train_set, val_set;
        std::size_t n_filtered = 0;
        for (const PredictionRecord& rec : by_model[model]) {
            const LabelRow& lab = labels.at(rec.image_id);
            const FusionInput input{rec.probs, features.at(rec.image_id)};
            if (lab.split == "val") {
                val_set.add(input, lab.label);
            } else if (lab.split == "train") {
                if (dropped.count(rec.image_id)) {
                    ++n_filtered;
                    continue;
                }
                train_set.add(input, lab.label);
            }
        }
        if (train_set.empty() || val_set.empty()) {
            throw ValidationError("split", "model " + model + " needs both train and val records");
        }
        TrainConfig model_cfg = cfg;
        model_cfg.seed = derive_seed(cfg.seed, mi);
        FusionNet init = init_network(model_cfg.seed);
        init.dropout_rate = dropout_rate;
        const TrainResult result = train(std::move(init), train_set, val_set, model_cfg);

        const fs::path weights = fs::path(a.out_dir) / (model + ".weights");
        const fs::path history = fs::path(a.out_dir) / (model + ".history.csv");
        save_weights(result.net, weights);
        write_file(history, history_csv(result.history));
        run.outputs.push_back(weights.string());
        run.outputs.push_back(history.string());

        const EpochRecord& best = result.history.at(static_cast<std::size_t>(result.best_epoch - 1));
        out << model << ": " << result.history.size() << " epochs, best epoch " << result.best_epoch
            << ", val_loss " << best.val_loss << ", val_acc " << best.val_acc
            << (result.stopped_early ? " (stopped early)" : "") << '\n';
        ojson s;
        s["train_records"] = train_set.size();
        s["val_records"] = val_set.size();
        s["filtered"] = n_filtered;
        s["epochs"] = result.history.size();
        s["best_epoch"] = result.best_epoch;
        s["stopped_early"] = result.stopped_early;
        per_model[model] = std::move(s);
    }
    ojson drops = ojson::object();
    for (const auto& [reason, n] : drop_counts) drops[reason] = n;
    run.stats["dropped_by_filter"] = std::move(drops);
    run.stats["models"] = std::move(per_model);
    return kExitOk;
}

// ---- predict ----------------------------------------------------------------

struct PredictArgs {
    std::string features, weights_dir, out, labels, split, registry;
    std::vector<std::string> predictions;
    std::string backend = "parallel";
};

int cmd_predict(const PredictArgs& a, Run& run, std::ostream& err) {
    if (!a.split.empty() && a.labels.empty()) throw UsageError("--split needs --labels");
    const auto backend = parse_backend(a.backend);
    run.config["split"] = a.split;
    run.config["backend"] = a.backend;
    run.inputs.push_back(a.features);
    run.inputs.push_back(a.weights_dir);
    for (const auto& p : a.predictions) run.inputs.push_back(p);
    run.outputs = {a.out};

    const auto features = read_features(a.features);
    LabelTable labels;
    if (!a.labels.empty()) {
        labels = read_labels(a.labels, resolve_registry(a.registry, "", run));
        run.inputs.push_back(a.labels);
    }

    std::map<std::string, FusionNet> nets;
    auto net_for = [&](const std::string& model) -> const FusionNet& {
        auto it = nets.find(model);
        if (it == nets.end()) {
            it = nets.emplace(model, load_weights(fs::path(a.weights_dir) / (file_stem(model) + ".weights"))).first;
        }
        return it->second;
    };

    std::ofstream out = open_output(a.out);
    std::vector<std::string> misses;
    std::size_t n_written = 0;
    std::vector<PredictionRecord> chunk;

    auto flush = [&] {
        std::map<std::string, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < chunk.size(); ++i) groups[chunk[i].model_id].push_back(i);
        std::vector<Probs> fused(chunk.size());
        for (const auto& [model, rows] : groups) {
            FusionDataset ds;
            for (std::size_t i : rows) ds.add({chunk[i].probs, features.at(chunk[i].image_id)}, 0);
            const std::vector<Probs> probs = predict(net_for(model), ds, backend);
            for (std::size_t k = 0; k < rows.size(); ++k) fused[rows[k]] = probs[k];
        }
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            out << serialize_prediction({chunk[i].image_id, chunk[i].model_id, fused[i]}) << '\n';
        }
        n_written += chunk.size();
        chunk.clear();
    };

    for (const auto& path : a.predictions) {
        for_each_prediction(path, [&](PredictionRecord&& rec) {
            if (!a.split.empty()) {
                const auto it = labels.find(rec.image_id);
                if (it == labels.end()) {
                    misses.push_back(rec.image_id);
                    return;
                }
                if (it->second.split != a.split) return;
            }
            if (!features.count(rec.image_id)) {
                misses.push_back(rec.image_id);
                return;
            }
            chunk.push_back(std::move(rec));
            if (chunk.size() == kChunk) flush();
        });
    }
    flush();
    run.stats["records_written"] = n_written;
    run.stats["join_misses"] = misses.size();
    if (!misses.empty()) {
        list_ids(err, "image_ids without features or labels", misses);
        return kExitData;
    }
    return kExitOk;
}

// ---- ensemble ---------------------------------------------------------------

struct EnsembleArgs {
    std::vector<std::string> predictions;
    std::string out, labels, metadata, split, registry;
    std::optional<double> threshold;
    bool sequences = false;
};

int cmd_ensemble(const EnsembleArgs& a, Run& run, std::ostream& err) {
    if (a.sequences && a.labels.empty() && a.metadata.empty()) {
        throw UsageError("--sequences needs --labels or --metadata to group images");
    }
    if (!a.split.empty() && a.labels.empty()) throw UsageError("--split needs --labels");
    run.config["threshold"] = a.threshold ? ojson(*a.threshold) : ojson(nullptr);
    run.config["sequences"] = a.sequences;
    run.config["split"] = a.split;
    for (const auto& p : a.predictions) run.inputs.push_back(p);
    run.outputs = {a.out};

    const ClassRegistry registry = resolve_registry(a.registry, "", run);
    LabelTable labels;
    if (!a.labels.empty()) {
        labels = read_labels(a.labels, registry);
        run.inputs.push_back(a.labels);
    }
    std::unordered_map<std::string, std::string> seq_map;
    if (a.sequences) {
        if (!a.metadata.empty()) {
            seq_map = read_sequence_map(a.metadata);
            run.inputs.push_back(a.metadata);
        } else {
            for (const auto& [id, row] : labels) seq_map[id] = row.sequence_id;
        }
    }

    PredictionTable table;
    std::vector<std::string> unknown;
    for (const auto& path : a.predictions) {
        for_each_prediction(path, [&](PredictionRecord&& rec) {
            if (!a.split.empty()) {
                const auto it = labels.find(rec.image_id);
                if (it == labels.end()) {
                    unknown.push_back(rec.image_id);
                    return;
                }
                if (it->second.split != a.split) return;
            }
            if (a.sequences && !seq_map.count(rec.image_id)) {
                unknown.push_back(rec.image_id);
                return;
            }
            table.add(rec);
        });
    }
    if (!unknown.empty()) {
        list_ids(err, "image_ids missing from the label or metadata table", unknown);
        run.stats["unknown_images"] = unknown.size();
        return kExitData;
    }
    if (table.image_count() == 0) throw ValidationError("predictions", "no prediction records");

    EnsembleOptions opts;
    opts.threshold = a.threshold;
    opts.sequences = a.sequences;
    const EnsembleOutcome result = table.classify_all(opts, a.sequences ? &seq_map : nullptr);
    write_file(a.out, classification_csv(result.rows, registry));
    run.stats["images"] = table.image_count();
    run.stats["models"] = table.model_count();
    run.stats["classified"] = result.rows.size();
    run.stats["rejected"] = result.rejected.size();
    if (!result.rejected.empty()) {
        list_ids(err, "rejected: not scored by every model", result.rejected);
        return kExitData;
    }
    return kExitOk;
}

// ---- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
    std::string classifications, labels, out_dir, split, registry, class_weights;
    bool sequences = false;
};

int cmd_evaluate(const EvaluateArgs& a, Run& run, std::ostream& out, std::ostream& err) {
    run.config["sequences"] = a.sequences;
    run.config["split"] = a.split;
    run.inputs.push_back(a.classifications);
    run.inputs.push_back(a.labels);
    const ClassRegistry registry = resolve_registry(a.registry, a.class_weights, run);
    const LabelTable labels = read_labels(a.labels, registry);

    // truth keyed by the classified id: images, or sequences with a consistent label
    std::unordered_map<std::string, LabelRow> truth;
    if (a.sequences) {
        for (const auto& [id, row] : labels) {
            const auto [it, inserted] = truth.try_emplace(row.sequence_id, row);
            if (!inserted && (it->second.label != row.label || it->second.split != row.split)) {
                throw ValidationError("labels", "sequence '" + row.sequence_id + "' mixes labels or splits");
            }
        }
    } else {
        truth.insert(labels.begin(), labels.end());
    }

    std::ifstream in = open_input(a.classifications);
    std::string line;
    std::size_t line_no = 0;
    if (!next_line(in, line, line_no) || line != "id,class_index,label,max_prob") {
        throw ParseError(a.classifications + ": expected header 'id,class_index,label,max_prob'");
    }
    std::vector<int> t, p;
    std::vector<std::string> misses;
    while (next_line(in, line, line_no)) {
        const auto cols = split_csv(line);
        if (cols.size() != 4) throw ParseError(a.classifications + " line " + std::to_string(line_no) + ": expected 4 columns");
        const long long cls = parse_int(cols[1], "class_index");
        if (cls < 0 || cls >= static_cast<long long>(registry.size())) {
            throw ValidationError("class_index", "line " + std::to_string(line_no) + ": out of range");
        }
        const auto it = truth.find(std::string(cols[0]));
        if (it == truth.end()) {
            misses.push_back(std::string(cols[0]));
            continue;
        }
        if (!a.split.empty() && it->second.split != a.split) continue;
        t.push_back(it->second.label);
        p.push_back(static_cast<int>(cls));
    }
    if (!misses.empty()) {
        list_ids(err, "classified ids without labels", misses);
        run.stats["join_misses"] = misses.size();
        return kExitData;
    }

    const EvalReport report = make_report(confusion_matrix(t, p, registry.size()), registry.weights);
    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    write_file(dir / "eval_report.json", report_json(report, registry));
    write_file(dir / "eval_report.txt", report_text(report, registry));
    write_file(dir / "confusion.csv", confusion_csv(report.confusion, registry));
    for (const char* name : {"eval_report.json", "eval_report.txt", "confusion.csv"}) {
        run.outputs.push_back((dir / name).string());
    }
    out << "records " << report.n_records << ", accuracy " << format_double(report.accuracy) << ", weighted F1 "
        << format_double(report.weighted_f1) << ", score " << report.score << '\n';
    run.stats["records"] = report.n_records;
    run.stats["score"] = report.score;
    return kExitOk;
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
    std::string config, out_dir;
    std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a, Run& run, std::ostream& out) {
    SynthConfig cfg = parse_synth_config(read_file(a.config));
    if (a.seed) cfg.seed = *a.seed;
    validate_synth_config(cfg);
    run.seed = cfg.seed;
    run.config = ojson::parse(serialize_synth_config(cfg));
    run.inputs = {a.config};
    run.outputs = {a.out_dir};
    const SynthDataset ds = generate_dataset(cfg);
    write_dataset(ds, a.out_dir);
    out << "wrote " << ds.metadata.size() << " records for " << ds.model_ids.size() << " model(s) to " << a.out_dir
        << '\n';
    run.stats["records"] = ds.metadata.size();
    return kExitOk;
}

// ---- manifest ---------------------------------------------------------------

void write_manifest(const Run& run, int exit_code, double seconds) {
    ojson m;
    m["subcommand"] = run.subcommand;
    m["argv"] = run.argv;
    m["cwd"] = fs::current_path().string();
    m["tool_version"] = kToolVersion;
    m["rng"] = SplitMix64::kAlgorithm;
    m["seed"] = run.seed ? ojson(*run.seed) : ojson(nullptr);
    m["config"] = run.config;
    m["inputs"] = run.inputs;
    m["outputs"] = run.outputs;
    m["stats"] = run.stats;
    m["exit_code"] = exit_code;
    m["duration_s"] = seconds;
    std::ofstream f = open_output(run.manifest_path);
    f << m.dump(2) << '\n';
}

std::string default_manifest_for_file(const std::string& out) { return out + ".manifest.json"; }
std::string default_manifest_for_dir(const std::string& dir) { return (fs::path(dir) / "run_manifest.json").string(); }

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Satellite scene classification pipeline: features, fusion network, ensembles and scoring", "fmow"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    Run run;
    run.argv = args;
    std::string manifest;
    auto add_manifest = [&](CLI::App* sub) {
        sub->add_option("--manifest", manifest, "Where to write the run manifest");
    };
    const std::vector<std::string> modes = {"enlarge", "square"};
    const std::vector<std::string> backends = {"serial", "parallel"};

    ExtractArgs ex;
    auto* extract = app.add_subcommand("extract", "Metadata JSONL to the normalized 27-feature CSV");
    extract->add_option("metadata", ex.metadata, "Metadata JSONL")->required();
    extract->add_option("norm_spec", ex.norm, "Normalization ranges JSON")->required();
    extract->add_option("out", ex.out, "Output CSV")->required();
    extract->add_option("--mode", ex.mode, "Box adjustment for the adjusted-box features")->check(CLI::IsMember(modes));
    extract->add_option("--context-factor", ex.context_factor, "Context factor for enlarge mode");
    extract->add_flag("--strict", ex.strict, "Stop at the first rejected record");
    add_manifest(extract);

    PrepArgs pr;
    auto* prep = app.add_subcommand("prep", "Crop and resize rasters around their boxes");
    prep->add_option("metadata", pr.metadata, "Metadata JSONL")->required();
    prep->add_option("rasters_dir", pr.rasters_dir, "Directory of <image_id>.raster files")->required();
    prep->add_option("out_dir", pr.out_dir, "Output directory")->required();
    prep->add_option("--mode", pr.mode)->check(CLI::IsMember(modes));
    prep->add_option("--context-factor", pr.context_factor);
    prep->add_option("--target-size", pr.target_size)->check(CLI::PositiveNumber);
    prep->add_option("--backend", pr.backend)->check(CLI::IsMember(backends));
    add_manifest(prep);

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train one fusion network per CNN model");
    train_cmd->add_option("--features", tr.features, "Feature CSV")->required();
    train_cmd->add_option("--predictions", tr.predictions, "CNN prediction JSONL files")->required();
    train_cmd->add_option("--labels", tr.labels, "Labels CSV")->required();
    train_cmd->add_option("--config", tr.config, "Training options JSON");
    train_cmd->add_option("--metadata", tr.metadata, "Metadata JSONL; enables the cloud and box-size filter");
    train_cmd->add_option("--registry", tr.registry, "Class list");
    train_cmd->add_option("--seed", tr.seed, "Overrides the config seed");
    train_cmd->add_option("--out", tr.out_dir, "Output directory for weights and histories")->required();
    add_manifest(train_cmd);

    PredictArgs pd;
    auto* predict_cmd = app.add_subcommand("predict", "Fused probabilities from trained networks");
    predict_cmd->add_option("--features", pd.features, "Feature CSV")->required();
    predict_cmd->add_option("--predictions", pd.predictions, "CNN prediction JSONL files")->required();
    predict_cmd->add_option("--weights", pd.weights_dir, "Directory of <model_id>.weights")->required();
    predict_cmd->add_option("--labels", pd.labels, "Labels CSV, needed for --split");
    predict_cmd->add_option("--split", pd.split, "Only records of this split");
    predict_cmd->add_option("--registry", pd.registry, "Class list");
    predict_cmd->add_option("--backend", pd.backend)->check(CLI::IsMember(backends));
    predict_cmd->add_option("--out", pd.out, "Output JSONL")->required();
    add_manifest(predict_cmd);

    EnsembleArgs en;
    auto* ensemble_cmd = app.add_subcommand("ensemble", "Average models per image and classify");
    ensemble_cmd->add_option("--predictions", en.predictions, "Prediction JSONL files")->required();
    ensemble_cmd->add_option("--threshold", en.threshold, "Assign false_detection unless max > tau")
        ->check(CLI::Range(0.0, 1.0));
    ensemble_cmd->add_flag("--sequences", en.sequences, "Classify whole sequences");
    ensemble_cmd->add_option("--labels", en.labels, "Labels CSV (sequence ids, split)");
    ensemble_cmd->add_option("--metadata", en.metadata, "Metadata JSONL (sequence ids)");
    ensemble_cmd->add_option("--split", en.split, "Only records of this split");
    ensemble_cmd->add_option("--registry", en.registry, "Class list");
    ensemble_cmd->add_option("--out", en.out, "Classification CSV")->required();
    add_manifest(ensemble_cmd);

    EvaluateArgs ev;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a classification CSV");
    evaluate_cmd->add_option("--classifications", ev.classifications, "Classification CSV")->required();
    evaluate_cmd->add_option("--labels", ev.labels, "Labels CSV")->required();
    evaluate_cmd->add_flag("--sequences", ev.sequences, "Ids are sequence ids");
    evaluate_cmd->add_option("--split", ev.split, "Only records of this split");
    evaluate_cmd->add_option("--registry", ev.registry, "Class list");
    evaluate_cmd->add_option("--class-weights", ev.class_weights, "Per-class weights JSON");
    evaluate_cmd->add_option("--out", ev.out_dir, "Report directory")->required();
    add_manifest(evaluate_cmd);

    SynthArgs sy;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("config", sy.config, "Synth config JSON")->required();
    synth->add_option("out_dir", sy.out_dir, "Output directory")->required();
    synth->add_option("--seed", sy.seed, "Overrides the config seed");
    add_manifest(synth);

    std::string rerun_path;
    auto* rerun = app.add_subcommand("rerun", "Repeat the run recorded in a manifest");
    rerun->add_option("manifest", rerun_path, "Run manifest JSON")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
    }

    if (rerun->parsed()) {
        try {
            const ojson m = ojson::parse(read_file(rerun_path));
            const auto argv = m.at("argv").get<std::vector<std::string>>();
            if (argv.empty() || argv.front() == "rerun") throw ValidationError("argv", "does not name a rerunnable command");
            if (m.contains("cwd")) fs::current_path(m["cwd"].get<std::string>());
            return fmow::cli::run(argv, out, err);
        } catch (const std::exception& e) {
            err << "error: " << e.what() << '\n';
            return kExitData;
        }
    }

    const auto t0 = std::chrono::steady_clock::now();
    int code = kExitOk;
    try {
        if (extract->parsed()) {
            run.subcommand = "extract";
            run.manifest_path = manifest.empty() ? default_manifest_for_file(ex.out) : manifest;
            code = cmd_extract(ex, run, err);
        } else if (prep->parsed()) {
            run.subcommand = "prep";
            run.manifest_path = manifest.empty() ? default_manifest_for_dir(pr.out_dir) : manifest;
            code = cmd_prep(pr, run, err);
        } else if (train_cmd->parsed()) {
            run.subcommand = "train";
            run.manifest_path = manifest.empty() ? default_manifest_for_dir(tr.out_dir) : manifest;
            code = cmd_train(tr, run, out, err);
        } else if (predict_cmd->parsed()) {
            run.subcommand = "predict";
            run.manifest_path = manifest.empty() ? default_manifest_for_file(pd.out) : manifest;
            code = cmd_predict(pd, run, err);
        } else if (ensemble_cmd->parsed()) {
            run.subcommand = "ensemble";
            run.manifest_path = manifest.empty() ? default_manifest_for_file(en.out) : manifest;
            code = cmd_ensemble(en, run, err);
        } else if (evaluate_cmd->parsed()) {
            run.subcommand = "evaluate";
            run.manifest_path = manifest.empty() ? default_manifest_for_dir(ev.out_dir) : manifest;
            code = cmd_evaluate(ev, run, out, err);
        } else if (synth->parsed()) {
            run.subcommand = "synth";
            run.manifest_path = manifest.empty() ? default_manifest_for_dir(sy.out_dir) : manifest;
            code = cmd_synth(sy, run, out);
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        code = kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        code = kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        code = kExitData;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << '\n';
        code = kExitData;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        code = kExitInternal;
    }

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    try {
        write_manifest(run, code, seconds);
    } catch (const std::exception& e) {
        err << "error: could not write the run manifest: " << e.what() << '\n';
        if (code == kExitOk) code = kExitData;
    }
    return code;
}

}  // namespace fmow::cli
