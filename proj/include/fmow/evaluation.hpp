#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmow/kernels.hpp"
#include "fmow/metadata.hpp"

namespace fmow {

/// Square count matrix; rows are true classes, columns predicted classes.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t n_classes = kNumClasses);
    /// Row-major counts; throws ValidationError on a size mismatch or negative entry.
    ConfusionMatrix(std::size_t n_classes, std::vector<std::int64_t> counts);

    std::size_t size() const noexcept { return n_; }
    std::int64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_ + predicted]; }
    std::int64_t& at(std::size_t truth, std::size_t predicted) { return counts_[truth * n_ + predicted]; }
    std::int64_t row_sum(std::size_t c) const;
    std::int64_t col_sum(std::size_t c) const;
    std::int64_t total() const;
    std::int64_t trace() const;
    std::span<const std::int64_t> counts() const noexcept { return counts_; }
    std::span<std::int64_t> counts() noexcept { return counts_; }

    /// Merge counts from a shard of the same size.
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t n_;
    std::vector<std::int64_t> counts_;
};

/// Throws ValidationError naming the first out-of-range record position.
ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted,
                                 std::size_t n_classes = kNumClasses,
                                 kernels::Backend backend = kernels::Backend::parallel);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Undefined ratios (empty row or column) are reported as 0.
std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& m);

/// trace / total; throws ValidationError on an empty matrix.
double accuracy(const ConfusionMatrix& m);

double macro_f1(std::span<const ClassMetrics> metrics);

/// sum(w_c * F1_c) / sum(w_c). Throws ValidationError on a count mismatch or a non-positive weight.
double weighted_f1(std::span<const ClassMetrics> metrics, std::span<const double> weights);

/// round(10^6 * weighted F1)
std::int64_t competition_score(double weighted_f1_value);

struct EvalReport {
    std::int64_t n_records = 0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double weighted_f1 = 0.0;
    std::int64_t score = 0;
    std::vector<ClassMetrics> per_class;
    std::vector<std::int64_t> support;  // row sums
    ConfusionMatrix confusion;
};

EvalReport make_report(const ConfusionMatrix& m, std::span<const double> weights);

std::string report_json(const EvalReport& report, const ClassRegistry& registry);
std::string report_text(const EvalReport& report, const ClassRegistry& registry);
/// Header of class labels, then one row of counts per true class.
std::string confusion_csv(const ConfusionMatrix& m, const ClassRegistry& registry);

inline constexpr double kMaxCloudCoverPct = 40.0;
inline constexpr int kMinBoxSizePx = 5;

enum class DropReason { cloud_cover, box_size };

const char* to_string(DropReason reason);

/// Cloud cover above 40% or a classified box with min(w, h) < 5 px.
std::optional<DropReason> drop_reason(const ImageMetadata& meta);

struct FilterResult {
    std::vector<std::size_t> kept;
    struct Dropped {
        std::size_t index;
        DropReason reason;
    };
    std::vector<Dropped> dropped;
};

FilterResult filter_training_records(std::span<const ImageMetadata> records);

struct SplitResult {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

/// Seeded shuffle of 0..n-1; the first ceil(0.9 n) go to training.
SplitResult split_false_detections(std::size_t n, std::uint64_t seed);

/// As above; throws ValidationError unless every label is the false-detection class.
SplitResult split_false_detections(std::span<const int> labels, std::uint64_t seed);

}  // namespace fmow
