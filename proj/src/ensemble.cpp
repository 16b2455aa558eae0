#include "fmow/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "fmow/error.hpp"
#include "fmow/text.hpp"

namespace fmow {

void validate_prediction(const Probs& p, double tolerance) {
    double sum = 0.0;
    for (double v : p) {
        if (!std::isfinite(v)) throw ValidationError("probs", "contains a non-finite value");
        if (v < 0.0) throw ValidationError("probs", "contains a negative value");
        sum += v;
    }
    if (std::abs(sum - 1.0) > tolerance) {
        throw ValidationError("probs", "sums to " + format_double(sum) + ", not 1 within " + format_double(tolerance));
    }
}

Probs average_predictions(std::span<const Probs> vectors) {
    if (vectors.empty()) throw ValidationError("predictions", "cannot average an empty list");
    Probs out{};
    for (const Probs& v : vectors) {
        for (std::size_t c = 0; c < kNumClasses; ++c) out[c] += v[c];
    }
    const auto k = static_cast<double>(vectors.size());
    for (double& v : out) v /= k;
    return out;
}

int classify(const Probs& v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < v.size(); ++c) {
        if (v[c] > v[best]) best = c;
    }
    return static_cast<int>(best);
}

int aggregate_sequence(const SequenceRecord& seq) {
    if (seq.images.empty()) throw ValidationError("sequence " + seq.sequence_id, "has no images");
    return classify(average_predictions(seq.images));
}

int classify_with_threshold(const Probs& v, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("threshold", "must lie in [0, 1]");
    const int c = classify(v);
    return v[static_cast<std::size_t>(c)] > tau ? c : kFalseDetectionClass;
}

PredictionRecord parse_prediction(std::string_view line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line.begin(), line.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("prediction: ") + e.what(), e.byte);
    }
    if (!j.is_object()) throw ParseError("prediction record must be a JSON object");
    PredictionRecord rec;
    for (const char* key : {"image_id", "model_id"}) {
        if (!j.contains(key) || !j[key].is_string()) throw SchemaError(key);
    }
    rec.image_id = j["image_id"].get<std::string>();
    rec.model_id = j["model_id"].get<std::string>();
    if (!j.contains("probs") || !j["probs"].is_array()) throw SchemaError("probs");
    const auto& arr = j["probs"];
    if (arr.size() != kNumClasses) {
        throw ValidationError("probs", "has " + std::to_string(arr.size()) + " entries, expected 63");
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (!arr[c].is_number()) throw SchemaError("probs", "expected numbers");
        rec.probs[c] = arr[c].get<double>();
    }
    validate_prediction(rec.probs);
    return rec;
}

std::string serialize_prediction(const PredictionRecord& rec) {
    std::string out = "{\"image_id\":" + nlohmann::json(rec.image_id).dump() +
                      ",\"model_id\":" + nlohmann::json(rec.model_id).dump() + ",\"probs\":[";
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (c) out.push_back(',');
        out += format_double(rec.probs[c]);
    }
    out += "]}";
    return out;
}

void for_each_prediction(const std::filesystem::path& path, const std::function<void(PredictionRecord&&)>& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open predictions " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        try {
            fn(parse_prediction(line));
        } catch (const Error& e) {
            throw ParseError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void PredictionTable::add(const PredictionRecord& rec) {
    auto [it, inserted] = entries_.try_emplace(rec.image_id);
    if (inserted) order_.push_back(rec.image_id);
    Entry& e = it->second;
    if (std::find(e.models.begin(), e.models.end(), rec.model_id) != e.models.end()) {
        throw ValidationError("predictions", "duplicate prediction for image '" + rec.image_id + "' from model '" +
                                                 rec.model_id + "'");
    }
    e.models.push_back(rec.model_id);
    for (std::size_t c = 0; c < kNumClasses; ++c) e.sum[c] += rec.probs[c];
    if (std::find(models_.begin(), models_.end(), rec.model_id) == models_.end()) models_.push_back(rec.model_id);
}

EnsembleOutcome PredictionTable::classify_all(
    const EnsembleOptions& options, const std::unordered_map<std::string, std::string>* image_to_sequence) const {
    auto complete = [&](const Entry& e) { return e.models.size() == models_.size(); };
    auto mean = [](const Entry& e) {
        Probs p = e.sum;
        for (double& v : p) v /= static_cast<double>(e.models.size());
        return p;
    };
    auto decide = [&](const Probs& p) {
        return options.threshold ? classify_with_threshold(p, *options.threshold) : classify(p);
    };

    EnsembleOutcome out;
    if (!options.sequences) {
        for (const std::string& id : order_) {
            const Entry& e = entries_.at(id);
            if (!complete(e)) {
                out.rejected.push_back(id);
                continue;
            }
            const Probs p = mean(e);
            out.rows.push_back({id, decide(p), p[static_cast<std::size_t>(classify(p))]});
        }
        return out;
    }

    if (image_to_sequence == nullptr) throw ValidationError("sequences", "sequence mode needs an image -> sequence map");
    std::vector<std::string> seq_order;
    std::unordered_map<std::string, SequenceRecord> seqs;
    std::unordered_map<std::string, bool> seq_bad;
    for (const std::string& id : order_) {
        const auto m = image_to_sequence->find(id);
        if (m == image_to_sequence->end()) throw ValidationError("sequences", "image '" + id + "' has no sequence id");
        auto [it, inserted] = seqs.try_emplace(m->second);
        if (inserted) {
            seq_order.push_back(m->second);
            it->second.sequence_id = m->second;
        }
        const Entry& e = entries_.at(id);
        if (!complete(e)) {
            seq_bad[m->second] = true;
            continue;
        }
        it->second.images.push_back(mean(e));
    }
    for (const std::string& sid : seq_order) {
        if (seq_bad.count(sid)) {
            out.rejected.push_back(sid);
            continue;
        }
        const Probs p = average_predictions(seqs.at(sid).images);
        out.rows.push_back({sid, decide(p), p[static_cast<std::size_t>(classify(p))]});
    }
    return out;
}

std::string classification_csv(const std::vector<Classification>& rows, const ClassRegistry& registry) {
    std::string out = "id,class_index,label,max_prob\n";
    for (const Classification& r : rows) {
        out += r.id + "," + std::to_string(r.class_index) + "," + registry.labels.at(static_cast<std::size_t>(r.class_index)) +
               "," + format_double(r.max_prob) + "\n";
    }
    return out;
}

}  // namespace fmow
