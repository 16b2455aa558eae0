#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fmow/fusion_net.hpp"

namespace fmow {

inline constexpr double kPredictionSumTolerance = 1e-6;

/// Components >= 0, finite, summing to 1 within `tolerance`.
void validate_prediction(const Probs& p, double tolerance = kPredictionSumTolerance);

/// Componentwise arithmetic mean. Inputs are summed in order, then divided.
Probs average_predictions(std::span<const Probs> vectors);

/// Argmax; the lowest index wins ties.
int classify(const Probs& v);

struct SequenceRecord {
    std::string sequence_id;
    std::vector<Probs> images;  // one ensembled vector per image
};

/// classify(average_predictions(images))
int aggregate_sequence(const SequenceRecord& seq);

/// Argmax when the maximum strictly exceeds tau, otherwise the false-detection class.
int classify_with_threshold(const Probs& v, double tau);

struct PredictionRecord {
    std::string image_id;
    std::string model_id;
    Probs probs{};
};

/// {"image_id", "model_id", "probs": [63 numbers]}; validated on parse.
PredictionRecord parse_prediction(std::string_view json_line);
std::string serialize_prediction(const PredictionRecord& rec);

/// Streams a JSONL prediction file; parse errors carry the line number.
void for_each_prediction(const std::filesystem::path& path, const std::function<void(PredictionRecord&&)>& fn);

struct Classification {
    std::string id;  // image_id, or sequence_id when aggregating sequences
    int class_index = 0;
    double max_prob = 0.0;
};

struct EnsembleOptions {
    std::optional<double> threshold;
    bool sequences = false;
};

struct EnsembleOutcome {
    std::vector<Classification> rows;
    std::vector<std::string> rejected;  // ids dropped because models disagree on support
};

/// Running per-image sums of model predictions, in first-seen image order.
class PredictionTable {
public:
    /// Throws ValidationError on a duplicate (image, model) pair.
    void add(const PredictionRecord& rec);

    /// Averages each image over its models and classifies it. Images scored by
    /// fewer than all models are rejected. In sequence mode `image_to_sequence`
    /// groups images, and a sequence with any rejected image is rejected whole.
    EnsembleOutcome classify_all(const EnsembleOptions& options,
                                 const std::unordered_map<std::string, std::string>* image_to_sequence = nullptr) const;

    std::size_t image_count() const noexcept { return order_.size(); }
    std::size_t model_count() const noexcept { return models_.size(); }

private:
    struct Entry {
        Probs sum{};
        std::vector<std::string> models;
    };
    std::unordered_map<std::string, Entry> entries_;
    std::vector<std::string> order_;
    std::vector<std::string> models_;
};

/// id,class_index,label,max_prob
std::string classification_csv(const std::vector<Classification>& rows, const ClassRegistry& registry);

}  // namespace fmow
