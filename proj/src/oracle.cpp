#include "fmow/oracle.hpp"

#include <map>
#include <string>

#include "fmow/error.hpp"

namespace fmow::oracle {

namespace {

int first_max(const std::vector<double>& v) {
    int best = 0;
    double best_v = v[0];
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > best_v) {
            best_v = v[i];
            best = static_cast<int>(i);
        }
    }
    return best;
}

}  // namespace

std::vector<int> ensemble_classes(const SynthDataset& ds) {
    if (ds.metadata.empty()) throw ValidationError("dataset", "has no records");
    std::vector<int> out;
    const std::size_t n_models = ds.predictions.size();
    for (std::size_t i = 0; i < ds.metadata.size(); ++i) {
        std::vector<double> mean(kNumClasses, 0.0);
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            double s = 0.0;
            for (std::size_t m = 0; m < n_models; ++m) s += ds.predictions[m][i][c];
            mean[c] = s / static_cast<double>(n_models);
        }
        out.push_back(first_max(mean));
    }
    return out;
}

int flattened_sequence_class(const std::vector<std::vector<Probs>>& image_model_vectors) {
    if (image_model_vectors.empty()) throw ValidationError("sequence", "has no images");
    std::vector<double> mean(kNumClasses, 0.0);
    std::size_t count = 0;
    for (const auto& image : image_model_vectors) {
        for (const Probs& p : image) {
            for (std::size_t c = 0; c < kNumClasses; ++c) mean[c] += p[c];
            ++count;
        }
    }
    for (double& v : mean) v /= static_cast<double>(count);
    return first_max(mean);
}

std::vector<int> sequence_classes(const SynthDataset& ds) {
    if (ds.metadata.empty()) throw ValidationError("dataset", "has no records");
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::vector<Probs>>> groups;
    for (std::size_t i = 0; i < ds.metadata.size(); ++i) {
        const std::string& sid = ds.metadata[i].sequence_id;
        auto [it, inserted] = groups.try_emplace(sid);
        if (inserted) order.push_back(sid);
        std::vector<Probs> per_model;
        for (const auto& model : ds.predictions) per_model.push_back(model[i]);
        it->second.push_back(std::move(per_model));
    }
    std::vector<int> out;
    for (const std::string& sid : order) out.push_back(flattened_sequence_class(groups[sid]));
    return out;
}

Metrics metrics(std::span<const int> truth, std::span<const int> predicted, std::size_t n,
                std::span<const double> weights) {
    if (truth.empty()) throw ValidationError("pairs", "no records to evaluate");
    Metrics r;
    r.confusion.assign(n, std::vector<std::int64_t>(n, 0));
    std::size_t hits = 0;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        r.confusion[static_cast<std::size_t>(truth[k])][static_cast<std::size_t>(predicted[k])]++;
        if (truth[k] == predicted[k]) ++hits;
    }
    r.accuracy = static_cast<double>(hits) / static_cast<double>(truth.size());

    double wsum = 0.0, wf = 0.0, fsum = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::int64_t tp = 0, n_pred = 0, n_true = 0;
        for (std::size_t k = 0; k < truth.size(); ++k) {
            const bool t = truth[k] == static_cast<int>(c);
            const bool p = predicted[k] == static_cast<int>(c);
            tp += (t && p) ? 1 : 0;
            n_pred += p ? 1 : 0;
            n_true += t ? 1 : 0;
        }
        const double prec = n_pred ? static_cast<double>(tp) / static_cast<double>(n_pred) : 0.0;
        const double rec = n_true ? static_cast<double>(tp) / static_cast<double>(n_true) : 0.0;
        // F1 = 2 tp / (predicted + actual), equivalent to the harmonic mean
        const double f1 = (n_pred + n_true) ? 2.0 * static_cast<double>(tp) / static_cast<double>(n_pred + n_true) : 0.0;
        r.precision.push_back(prec);
        r.recall.push_back(rec);
        r.f1.push_back(f1);
        fsum += f1;
        wf += weights[c] * f1;
        wsum += weights[c];
    }
    r.macro_f1 = fsum / static_cast<double>(n);
    r.weighted_f1 = wf / wsum;
    return r;
}

}  // namespace fmow::oracle
