#pragma once

// Synthetic datasets: metadata records plus simulated per-model CNN
// probability vectors with controlled label noise and class confusions.
//
// Generation order (one SplitMix64 stream seeded with `seed`):
//   1. group records into sequences (length 2-6 with probability
//      sequence_fraction, otherwise 1);
//   2. per sequence draw the true class: false detection with probability
//      false_detection_fraction, else a focus class with probability
//      focus_fraction, else uniform over the 62 real classes;
//   3. per image draw metadata, then per model the shown class: flip to a
//      uniformly chosen other class with the model's noise rate, then apply
//      the first matching confusion pair;
//   4. logits are u_c ~ U[0, 1) plus 1 at the shown class, divided by the
//      temperature and passed through softmax.
// Splits are drawn from derived streams: false-detection sequences 90/10,
// the rest by val_fraction.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fmow/fusion_net.hpp"
#include "fmow/metadata.hpp"

namespace fmow {

struct ConfusionPair {
    int from = 0;
    int to = 0;
    double probability = 0.0;
};

/// Makes one metadata field separate two classes: `class_a` draws from the
/// lower third of the field's range, `class_b` from the upper third.
struct MetadataSignal {
    int class_a = 0;
    int class_b = 1;
    std::string field = "off_nadir_deg";
};

struct SynthConfig {
    std::size_t n_records = 1000;
    std::size_t n_models = 4;
    std::size_t n_classes = kNumClasses;
    std::vector<double> label_noise_rate = {0.0};  // one per model, or one shared value
    std::vector<ConfusionPair> confusion_pairs;
    double temperature = 0.1;
    std::optional<MetadataSignal> metadata_signal;
    std::vector<int> focus_classes;
    double focus_fraction = 0.0;
    double sequence_fraction = 0.0;
    double false_detection_fraction = 0.0;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;

    double noise_for_model(std::size_t m) const {
        return label_noise_rate.size() == 1 ? label_noise_rate[0] : label_noise_rate.at(m);
    }
};

/// Throws ValidationError naming the first invalid field.
void validate_synth_config(const SynthConfig& config);
SynthConfig parse_synth_config(std::string_view json_text);
std::string serialize_synth_config(const SynthConfig& config);

struct SynthDataset {
    SynthConfig config;
    std::vector<ImageMetadata> metadata;
    std::vector<int> labels;
    std::vector<std::string> splits;  // "train" or "val"
    std::vector<std::string> model_ids;
    std::vector<std::vector<Probs>> predictions;  // [model][record]
};

SynthDataset generate_dataset(const SynthConfig& config);

/// Writes metadata.jsonl, predictions_<model>.jsonl, labels.csv and manifest.json.
void write_dataset(const SynthDataset& dataset, const std::filesystem::path& out_dir);

/// image_id,sequence_id,label,split
std::string labels_csv(const SynthDataset& dataset);

}  // namespace fmow
