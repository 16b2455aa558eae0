#pragma once

// Brute-force recomputation of the ensemble, sequence and metric paths. Shares
// no code with ensemble.cpp or evaluation.cpp; tests compare the two.

#include <cstdint>
#include <span>
#include <vector>

#include "fmow/synth.hpp"

namespace fmow::oracle {

/// Per record: argmax of the model-average, lowest index on ties.
std::vector<int> ensemble_classes(const SynthDataset& dataset);

/// Per sequence, in first-seen order: argmax of the mean over every
/// (image, model) vector of the sequence.
std::vector<int> sequence_classes(const SynthDataset& dataset);

/// One sequence given as [image][model] vectors, averaged as a flat set.
int flattened_sequence_class(const std::vector<std::vector<Probs>>& image_model_vectors);

struct Metrics {
    std::vector<std::vector<std::int64_t>> confusion;
    std::vector<double> precision, recall, f1;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double weighted_f1 = 0.0;
};

/// Direct counting over the raw pairs. Throws ValidationError on empty input.
Metrics metrics(std::span<const int> truth, std::span<const int> predicted, std::size_t n_classes,
                std::span<const double> weights);

}  // namespace fmow::oracle
