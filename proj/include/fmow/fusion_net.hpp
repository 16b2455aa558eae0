#pragma once

// Metadata fusion network: 63 CNN class probabilities and 27 metadata
// features feed a 1024-unit rectifier layer with dropout 0.6, followed by a
// 63-way softmax.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmow/features.hpp"
#include "fmow/kernels.hpp"
#include "fmow/metadata.hpp"

namespace fmow {

/// Class probability vector (one per CNN model, or the output of a fusion net).
using Probs = std::array<double, kNumClasses>;

inline constexpr std::size_t kFusionInputs = kNumClasses + kNumFeatures;  // 90
inline constexpr std::size_t kHiddenUnits = 1024;
inline constexpr double kDefaultDropoutRate = 0.60;
inline constexpr int kWeightsFormatVersion = 1;

struct FusionInput {
    Probs cnn_probs{};
    FeatureVector meta;
};

/// Throws ValidationError for non-finite components, a probability vector
/// that does not sum to 1 within 1e-6, or metadata outside [-1, 1].
void validate_input(const FusionInput& input);

struct FusionNet {
    std::vector<double> w1;  // kHiddenUnits x kFusionInputs, row-major
    std::vector<double> b1;  // kHiddenUnits
    std::vector<double> w2;  // kNumClasses x kHiddenUnits, row-major
    std::vector<double> b2;  // kNumClasses
    double dropout_rate = kDefaultDropoutRate;
    std::uint64_t seed = 0;

    friend bool operator==(const FusionNet&, const FusionNet&) = default;
};

/// All weights and biases zero.
FusionNet zero_network();

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)) per matrix, biases zero.
FusionNet init_network(std::uint64_t seed);

Probs softmax(std::span<const double> logits);

/// Inference: no dropout, no rescaling.
Probs infer(const FusionNet& net, const FusionInput& input);

/// Training-mode pass with inverted dropout; the mask is drawn from `mask_seed`.
Probs forward_train(const FusionNet& net, const FusionInput& input, std::uint64_t mask_seed);

struct ForwardTrace {
    std::vector<double> hidden_pre;  // before the rectifier
    std::vector<double> hidden;      // after rectifier and dropout
    std::array<double, kNumClasses> logits{};
    Probs probs{};
};

/// Intermediate values of one pass; dropout applies when `mask_seed` is set.
ForwardTrace trace_forward(const FusionNet& net, const FusionInput& input,
                           std::optional<std::uint64_t> mask_seed = std::nullopt);

/// Inverted dropout multipliers for one sample: 0 for dropped units, 1/(1 - rate) for kept ones.
void dropout_mask(std::uint64_t mask_seed, double rate, std::span<double> out);

inline constexpr double kProbabilityFloor = 1e-12;

/// Cross-entropy, -log(max(probs[label], 1e-12)).
double loss(const Probs& probs, int label);

/// Fusion samples packed row-wise for batched kernels.
class FusionDataset {
public:
    void add(const FusionInput& input, int label);
    void add_row(std::span<const double> row, int label);

    std::size_t size() const noexcept { return labels_.size(); }
    bool empty() const noexcept { return labels_.empty(); }
    std::span<const double> row(std::size_t i) const {
        return {x_.data() + i * kFusionInputs, kFusionInputs};
    }
    int label(std::size_t i) const { return labels_[i]; }
    std::span<const int> labels() const noexcept { return labels_; }

private:
    std::vector<double> x_;
    std::vector<int> labels_;
};

struct TrainConfig {
    int max_epochs = 20;
    int early_stop_patience = 3;
    double min_improvement = 1e-5;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 256;
    std::uint64_t seed = 0;
    kernels::Backend backend = kernels::Backend::parallel;
};

/// Throws ValidationError naming the offending field.
void validate_config(const TrainConfig& config);

struct Gradients {
    std::vector<double> w1, b1, w2, b2;
};

/// Analytic gradient of the mean cross-entropy over `batch` rows of `data`.
/// Dropout applies when `dropout_seed` is set: sample k of the batch uses the
/// mask seeded by derive_seed(*dropout_seed, k).
struct GradientResult {
    Gradients grads;
    double mean_loss = 0.0;
    std::size_t correct = 0;
};

GradientResult compute_gradients(const FusionNet& net, const FusionDataset& data, std::span<const std::size_t> batch,
                                 std::optional<std::uint64_t> dropout_seed,
                                 kernels::Backend backend = kernels::Backend::parallel);

/// Adaptive-moment optimizer state plus the step counter used to seed dropout.
struct TrainState {
    FusionNet net;
    Gradients m;  // first moments
    Gradients v;  // second moments
    std::uint64_t step = 0;

    explicit TrainState(FusionNet initial);
};

struct StepResult {
    double loss = 0.0;
    std::size_t correct = 0;
};

/// One optimizer update on the given rows. Throws NumericError naming the
/// parameter block when a gradient is not finite.
StepResult train_step(TrainState& state, const FusionDataset& data, std::span<const std::size_t> batch,
                      const TrainConfig& config);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

/// Early stopping on validation loss. The best weights follow the strict
/// minimum; the patience counter only resets on an improvement larger than
/// `min_improvement`.
class EarlyStopping {
public:
    EarlyStopping(int patience, double min_improvement);

    /// Returns true when `val_loss` is a new strict minimum.
    bool record(double val_loss);
    bool should_stop() const noexcept { return stale_epochs_ >= patience_; }
    double best() const noexcept { return best_; }

private:
    int patience_;
    double min_improvement_;
    double best_;
    double reference_;
    int stale_epochs_ = 0;
};

struct TrainResult {
    FusionNet net;  // weights from the best validation epoch
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    bool stopped_early = false;
};

TrainResult train(FusionNet initial, const FusionDataset& train_set, const FusionDataset& val_set,
                  const TrainConfig& config);

struct EvalResult {
    double mean_loss = 0.0;
    double accuracy = 0.0;
};

EvalResult evaluate(const FusionNet& net, const FusionDataset& data,
                    kernels::Backend backend = kernels::Backend::parallel);

/// Inference-mode probabilities for every row.
std::vector<Probs> predict(const FusionNet& net, const FusionDataset& data,
                           kernels::Backend backend = kernels::Backend::parallel);

/// Symmetric relative difference |a - b| / max(|a|, |b|), 0 when both are 0.
double relative_error(double a, double b);

struct GradientCheckReport {
    double max_relative_error = 0.0;
    std::array<double, 4> block_max{};  // w1, b1, w2, b2
    std::size_t parameters_checked = 0;
    std::size_t kinks_skipped = 0;
};

/// Compares analytic gradients against central differences computed by an
/// independent extended-precision forward pass, over up to `per_block`
/// randomly chosen parameters of each block. Dropout is off. Parameters whose
/// perturbation would cross a rectifier kink are skipped and replaced.
GradientCheckReport gradient_check(const FusionNet& net, const FusionInput& input, int label, double eps,
                                   std::uint64_t sample_seed, std::size_t per_block = 200);

/// Weights container: a single-line JSON manifest, then raw little-endian
/// float64 values for w1, b1, w2 and b2.
void save_weights(const FusionNet& net, const std::filesystem::path& path);
FusionNet load_weights(const std::filesystem::path& path);
std::string encode_weights(const FusionNet& net);
FusionNet decode_weights(std::string_view bytes);

/// epoch,train_loss,val_loss,train_acc,val_acc
std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace fmow
