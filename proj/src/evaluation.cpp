#include "fmow/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "fmow/error.hpp"
#include "fmow/rng.hpp"
#include "fmow/text.hpp"

namespace fmow {

ConfusionMatrix::ConfusionMatrix(std::size_t n) : n_(n), counts_(n * n, 0) {}

ConfusionMatrix::ConfusionMatrix(std::size_t n, std::vector<std::int64_t> counts) : n_(n), counts_(std::move(counts)) {
    if (counts_.size() != n * n) throw ValidationError("counts", "expected n * n entries");
    for (std::int64_t c : counts_) {
        if (c < 0) throw ValidationError("counts", "entries must be >= 0");
    }
}

std::int64_t ConfusionMatrix::row_sum(std::size_t c) const {
    std::int64_t s = 0;
    for (std::size_t p = 0; p < n_; ++p) s += at(c, p);
    return s;
}

std::int64_t ConfusionMatrix::col_sum(std::size_t c) const {
    std::int64_t s = 0;
    for (std::size_t t = 0; t < n_; ++t) s += at(t, c);
    return s;
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

std::int64_t ConfusionMatrix::trace() const {
    std::int64_t s = 0;
    for (std::size_t c = 0; c < n_; ++c) s += at(c, c);
    return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.n_ != n_) throw ValidationError("confusion", "cannot merge matrices of different sizes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, std::size_t n,
                                 kernels::Backend backend) {
    if (truth.size() != predicted.size()) throw ValidationError("pairs", "truth and prediction counts differ");
    const auto limit = static_cast<int>(n);
    for (std::size_t k = 0; k < truth.size(); ++k) {
        if (truth[k] < 0 || truth[k] >= limit || predicted[k] < 0 || predicted[k] >= limit) {
            throw ValidationError("pairs[" + std::to_string(k) + "]",
                                  "has class index outside [0, " + std::to_string(n - 1) + "]");
        }
    }
    ConfusionMatrix m(n);
    if (backend == kernels::Backend::serial) {
        kernels::serial::confusion_accumulate(n, truth, predicted, m.counts());
    } else {
        kernels::parallel::confusion_accumulate(n, truth, predicted, m.counts());
    }
    return m;
}

std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& m) {
    std::vector<ClassMetrics> out(m.size());
    for (std::size_t c = 0; c < m.size(); ++c) {
        const auto tp = static_cast<double>(m.at(c, c));
        const std::int64_t col = m.col_sum(c);
        const std::int64_t row = m.row_sum(c);
        ClassMetrics& r = out[c];
        r.precision = col > 0 ? tp / static_cast<double>(col) : 0.0;
        r.recall = row > 0 ? tp / static_cast<double>(row) : 0.0;
        const double denom = r.precision + r.recall;
        r.f1 = denom > 0.0 ? 2.0 * r.precision * r.recall / denom : 0.0;
    }
    return out;
}

double accuracy(const ConfusionMatrix& m) {
    const std::int64_t total = m.total();
    if (total == 0) throw ValidationError("confusion", "accuracy of an empty matrix is undefined");
    return static_cast<double>(m.trace()) / static_cast<double>(total);
}

double macro_f1(std::span<const ClassMetrics> metrics) {
    if (metrics.empty()) return 0.0;
    double s = 0.0;
    for (const ClassMetrics& c : metrics) s += c.f1;
    return s / static_cast<double>(metrics.size());
}

double weighted_f1(std::span<const ClassMetrics> metrics, std::span<const double> weights) {
    if (metrics.size() != weights.size()) {
        throw ValidationError("weights", "has " + std::to_string(weights.size()) + " entries for " +
                                             std::to_string(metrics.size()) + " classes");
    }
    double num = 0.0;
    double den = 0.0;
    for (std::size_t c = 0; c < metrics.size(); ++c) {
        if (!(weights[c] > 0.0)) throw ValidationError("weights", "must be positive");
        num += weights[c] * metrics[c].f1;
        den += weights[c];
    }
    return num / den;
}

std::int64_t competition_score(double wf1) { return std::llround(1e6 * wf1); }

EvalReport make_report(const ConfusionMatrix& m, std::span<const double> weights) {
    EvalReport r;
    r.confusion = m;
    r.n_records = m.total();
    r.accuracy = accuracy(m);
    r.per_class = per_class_metrics(m);
    r.macro_f1 = macro_f1(r.per_class);
    r.weighted_f1 = weighted_f1(r.per_class, weights);
    r.score = competition_score(r.weighted_f1);
    for (std::size_t c = 0; c < m.size(); ++c) r.support.push_back(m.row_sum(c));
    return r;
}

std::string report_json(const EvalReport& r, const ClassRegistry& registry) {
    nlohmann::ordered_json j;
    j["n_records"] = r.n_records;
    j["accuracy"] = r.accuracy;
    j["macro_f1"] = r.macro_f1;
    j["weighted_f1"] = r.weighted_f1;
    j["score"] = r.score;
    j["score_formula"] = "round(1e6 * weighted_f1)";
    auto classes = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        nlohmann::ordered_json e;
        e["index"] = c;
        e["label"] = c < registry.labels.size() ? registry.labels[c] : std::to_string(c);
        e["support"] = r.support[c];
        e["precision"] = r.per_class[c].precision;
        e["recall"] = r.per_class[c].recall;
        e["f1"] = r.per_class[c].f1;
        e["weight"] = c < registry.weights.size() ? registry.weights[c] : 1.0;
        classes.push_back(std::move(e));
    }
    j["classes"] = std::move(classes);
    auto rows = nlohmann::ordered_json::array();
    const std::size_t n = r.confusion.size();
    for (std::size_t t = 0; t < n; ++t) {
        auto row = nlohmann::ordered_json::array();
        for (std::size_t p = 0; p < n; ++p) row.push_back(r.confusion.at(t, p));
        rows.push_back(std::move(row));
    }
    j["confusion"] = std::move(rows);
    return j.dump(2) + "\n";
}

std::string report_text(const EvalReport& r, const ClassRegistry& registry) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "records      %lld\naccuracy     %.6f\nmacro F1     %.6f\nweighted F1  %.6f\nscore        %lld\n\n",
                  static_cast<long long>(r.n_records), r.accuracy, r.macro_f1, r.weighted_f1,
                  static_cast<long long>(r.score));
    out += line;
    std::snprintf(line, sizeof line, "%-4s %-32s %8s %9s %8s %8s\n", "idx", "label", "support", "precision", "recall",
                  "f1");
    out += line;
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const std::string label = c < registry.labels.size() ? registry.labels[c] : std::to_string(c);
        std::snprintf(line, sizeof line, "%-4zu %-32s %8lld %9.4f %8.4f %8.4f\n", c, label.c_str(),
                      static_cast<long long>(r.support[c]), r.per_class[c].precision, r.per_class[c].recall,
                      r.per_class[c].f1);
        out += line;
    }
    return out;
}

std::string confusion_csv(const ConfusionMatrix& m, const ClassRegistry& registry) {
    std::string out;
    for (std::size_t c = 0; c < m.size(); ++c) {
        if (c) out.push_back(',');
        out += c < registry.labels.size() ? registry.labels[c] : std::to_string(c);
    }
    out.push_back('\n');
    for (std::size_t t = 0; t < m.size(); ++t) {
        for (std::size_t p = 0; p < m.size(); ++p) {
            if (p) out.push_back(',');
            out += std::to_string(m.at(t, p));
        }
        out.push_back('\n');
    }
    return out;
}

const char* to_string(DropReason reason) { return reason == DropReason::cloud_cover ? "cloud_cover" : "box_size"; }

std::optional<DropReason> drop_reason(const ImageMetadata& meta) {
    if (meta.cloud_cover_pct > kMaxCloudCoverPct) return DropReason::cloud_cover;
    const BoundingBox& b = meta.box();
    if (std::min(b.w, b.h) < kMinBoxSizePx) return DropReason::box_size;
    return std::nullopt;
}

FilterResult filter_training_records(std::span<const ImageMetadata> records) {
    FilterResult r;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (const auto why = drop_reason(records[i])) {
            r.dropped.push_back({i, *why});
        } else {
            r.kept.push_back(i);
        }
    }
    return r;
}

SplitResult split_false_detections(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(seed);
    shuffle(std::span<std::size_t>(order), rng);
    const std::size_t n_train = (9 * n + 9) / 10;  // ceil(0.9 n)
    SplitResult r;
    r.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    r.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    return r;
}

SplitResult split_false_detections(std::span<const int> labels, std::uint64_t seed) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != kFalseDetectionClass) {
            throw ValidationError("records[" + std::to_string(i) + "]", "is not labeled as a false detection");
        }
    }
    return split_false_detections(labels.size(), seed);
}

}  // namespace fmow
