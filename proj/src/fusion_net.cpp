#include "fmow/fusion_net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "fmow/error.hpp"
#include "fmow/rng.hpp"
#include "fmow/text.hpp"

namespace fmow {

namespace {

constexpr std::size_t kW1Size = kHiddenUnits * kFusionInputs;
constexpr std::size_t kW2Size = kNumClasses * kHiddenUnits;
constexpr std::size_t kEvalBatch = 512;

struct KernelSet {
    decltype(&kernels::serial::dense_forward) forward;
    decltype(&kernels::serial::dense_weight_grad) weight_grad;
    decltype(&kernels::serial::dense_input_grad) input_grad;
};

KernelSet kernel_set(kernels::Backend backend) {
    if (backend == kernels::Backend::serial) {
        return {kernels::serial::dense_forward, kernels::serial::dense_weight_grad, kernels::serial::dense_input_grad};
    }
    return {kernels::parallel::dense_forward, kernels::parallel::dense_weight_grad,
            kernels::parallel::dense_input_grad};
}

std::vector<double> transpose(const std::vector<double>& m, std::size_t rows, std::size_t cols) {
    std::vector<double> t(m.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = m[r * cols + c];
    }
    return t;
}

std::array<double, kFusionInputs> concat(const FusionInput& in) {
    std::array<double, kFusionInputs> x{};
    std::copy(in.cnn_probs.begin(), in.cnn_probs.end(), x.begin());
    std::copy(in.meta.values.begin(), in.meta.values.end(), x.begin() + kNumClasses);
    return x;
}

int argmax_row(const double* p) {
    int best = 0;
    for (std::size_t c = 1; c < kNumClasses; ++c) {
        if (p[c] > p[best]) best = static_cast<int>(c);
    }
    return best;
}

void softmax_row(const double* z, double* p) {
    double m = z[0];
    for (std::size_t c = 1; c < kNumClasses; ++c) m = std::max(m, z[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        p[c] = std::exp(z[c] - m);
        sum += p[c];
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) p[c] /= sum;
}

// Activations of one batched forward pass, kept for backpropagation.
struct BatchPass {
    std::size_t n = 0;
    std::vector<double> x;       // n x inputs
    std::vector<double> pre;     // n x hidden
    std::vector<double> mask;    // n x hidden, empty without dropout
    std::vector<double> hidden;  // n x hidden
    std::vector<double> logits;  // n x classes
    std::vector<double> probs;   // n x classes
};

struct TransposedWeights {
    std::vector<double> w1t;  // inputs x hidden
    std::vector<double> w2t;  // hidden x classes

    explicit TransposedWeights(const FusionNet& net)
        : w1t(transpose(net.w1, kHiddenUnits, kFusionInputs)), w2t(transpose(net.w2, kNumClasses, kHiddenUnits)) {}
};

void gather_rows(const FusionDataset& data, std::span<const std::size_t> batch, BatchPass& pass) {
    pass.n = batch.size();
    pass.x.resize(pass.n * kFusionInputs);
    for (std::size_t s = 0; s < pass.n; ++s) {
        const auto row = data.row(batch[s]);
        std::copy(row.begin(), row.end(), pass.x.begin() + static_cast<std::ptrdiff_t>(s * kFusionInputs));
    }
}

void run_forward(const FusionNet& net, const TransposedWeights& tw, BatchPass& pass, const KernelSet& k,
                 std::optional<std::uint64_t> dropout_seed) {
    const std::size_t n = pass.n;
    pass.pre.resize(n * kHiddenUnits);
    pass.hidden.resize(n * kHiddenUnits);
    pass.logits.resize(n * kNumClasses);
    pass.probs.resize(n * kNumClasses);

    k.forward({n, kFusionInputs, kHiddenUnits}, tw.w1t, net.b1, pass.x, pass.pre);

    if (dropout_seed) {
        pass.mask.resize(n * kHiddenUnits);
        for (std::size_t s = 0; s < n; ++s) {
            dropout_mask(derive_seed(*dropout_seed, s), net.dropout_rate,
                         std::span<double>(pass.mask).subspan(s * kHiddenUnits, kHiddenUnits));
        }
    } else {
        pass.mask.clear();
    }
    for (std::size_t i = 0; i < n * kHiddenUnits; ++i) {
        const double h = pass.pre[i] > 0.0 ? pass.pre[i] : 0.0;
        pass.hidden[i] = pass.mask.empty() ? h : h * pass.mask[i];
    }

    k.forward({n, kHiddenUnits, kNumClasses}, tw.w2t, net.b2, pass.hidden, pass.logits);
    for (std::size_t s = 0; s < n; ++s) softmax_row(&pass.logits[s * kNumClasses], &pass.probs[s * kNumClasses]);
}

void check_finite(const std::vector<double>& g, const char* block) {
    for (double v : g) {
        if (!std::isfinite(v)) throw NumericError(block, "non-finite gradient");
    }
}

void adam_update(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                 std::vector<double>& v, const TrainConfig& cfg, double bias1, double bias2) {
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = m[i] / bias1;
        const double vhat = v[i] / bias2;
        p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
}

Gradients zeros_like_net() {
    return {std::vector<double>(kW1Size, 0.0), std::vector<double>(kHiddenUnits, 0.0),
            std::vector<double>(kW2Size, 0.0), std::vector<double>(kNumClasses, 0.0)};
}

// Extended-precision forward used only by the gradient check. Written
// independently of the batched kernels so it can serve as their oracle.
long double reference_loss(const FusionNet& net, const std::array<double, kFusionInputs>& x, int label) {
    std::vector<long double> h(kHiddenUnits);
    for (std::size_t j = 0; j < kHiddenUnits; ++j) {
        long double a = net.b1[j];
        for (std::size_t k = 0; k < kFusionInputs; ++k) {
            a += static_cast<long double>(net.w1[j * kFusionInputs + k]) * x[k];
        }
        h[j] = a > 0 ? a : 0;
    }
    std::array<long double, kNumClasses> z{};
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        long double a = net.b2[c];
        for (std::size_t j = 0; j < kHiddenUnits; ++j) a += static_cast<long double>(net.w2[c * kHiddenUnits + j]) * h[j];
        z[c] = a;
    }
    const long double m = *std::max_element(z.begin(), z.end());
    long double sum = 0;
    for (long double zc : z) sum += std::exp(zc - m);
    return m + std::log(sum) - z[static_cast<std::size_t>(label)];
}

long double reference_pre_activation(const FusionNet& net, const std::array<double, kFusionInputs>& x,
                                     std::size_t j) {
    long double a = net.b1[j];
    for (std::size_t k = 0; k < kFusionInputs; ++k) a += static_cast<long double>(net.w1[j * kFusionInputs + k]) * x[k];
    return a;
}

}  // namespace

void validate_input(const FusionInput& in) {
    double sum = 0.0;
    for (double p : in.cnn_probs) {
        if (!std::isfinite(p)) throw ValidationError("cnn_probs", "contains a non-finite value");
        if (p < 0.0) throw ValidationError("cnn_probs", "contains a negative probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ValidationError("cnn_probs", "does not sum to 1 within 1e-6");
    for (double m : in.meta.values) {
        if (!std::isfinite(m)) throw ValidationError("meta", "contains a non-finite value");
        if (m < -1.0 || m > 1.0) throw ValidationError("meta", "component outside [-1, 1]");
    }
}

FusionNet zero_network() {
    FusionNet net;
    net.w1.assign(kW1Size, 0.0);
    net.b1.assign(kHiddenUnits, 0.0);
    net.w2.assign(kW2Size, 0.0);
    net.b2.assign(kNumClasses, 0.0);
    return net;
}

FusionNet init_network(std::uint64_t seed) {
    FusionNet net = zero_network();
    net.seed = seed;
    const double limit1 = std::sqrt(6.0 / static_cast<double>(kFusionInputs + kHiddenUnits));
    SplitMix64 g1(derive_seed(seed, 1));
    for (double& w : net.w1) w = g1.uniform(-limit1, limit1);
    const double limit2 = std::sqrt(6.0 / static_cast<double>(kHiddenUnits + kNumClasses));
    SplitMix64 g2(derive_seed(seed, 2));
    for (double& w : net.w2) w = g2.uniform(-limit2, limit2);
    return net;
}

Probs softmax(std::span<const double> logits) {
    if (logits.size() != kNumClasses) throw ValidationError("logits", "expected 63 values");
    Probs p{};
    softmax_row(logits.data(), p.data());
    return p;
}

void dropout_mask(std::uint64_t mask_seed, double rate, std::span<double> out) {
    SplitMix64 rng(mask_seed);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (double& m : out) m = rng.uniform() < rate ? 0.0 : keep_scale;
}

ForwardTrace trace_forward(const FusionNet& net, const FusionInput& input, std::optional<std::uint64_t> mask_seed) {
    validate_input(input);
    const auto x = concat(input);
    ForwardTrace t;
    t.hidden_pre.resize(kHiddenUnits);
    t.hidden.resize(kHiddenUnits);
    std::vector<double> mask;
    if (mask_seed) {
        mask.resize(kHiddenUnits);
        dropout_mask(*mask_seed, net.dropout_rate, mask);
    }
    for (std::size_t j = 0; j < kHiddenUnits; ++j) {
        double a = net.b1[j];
        for (std::size_t k = 0; k < kFusionInputs; ++k) a += net.w1[j * kFusionInputs + k] * x[k];
        t.hidden_pre[j] = a;
        const double h = a > 0.0 ? a : 0.0;
        t.hidden[j] = mask.empty() ? h : h * mask[j];
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        double a = net.b2[c];
        for (std::size_t j = 0; j < kHiddenUnits; ++j) a += net.w2[c * kHiddenUnits + j] * t.hidden[j];
        t.logits[c] = a;
    }
    softmax_row(t.logits.data(), t.probs.data());
    return t;
}

Probs infer(const FusionNet& net, const FusionInput& input) { return trace_forward(net, input).probs; }

Probs forward_train(const FusionNet& net, const FusionInput& input, std::uint64_t mask_seed) {
    return trace_forward(net, input, mask_seed).probs;
}

double loss(const Probs& probs, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= kNumClasses) {
        throw ValidationError("label", "= " + std::to_string(label) + " outside [0, 62]");
    }
    return -std::log(std::max(probs[static_cast<std::size_t>(label)], kProbabilityFloor));
}

void FusionDataset::add(const FusionInput& input, int label) {
    validate_input(input);
    const auto x = concat(input);
    add_row(x, label);
}

void FusionDataset::add_row(std::span<const double> row, int label) {
    if (row.size() != kFusionInputs) throw ValidationError("row", "expected 90 inputs");
    if (label < 0 || static_cast<std::size_t>(label) >= kNumClasses) {
        throw ValidationError("label", "= " + std::to_string(label) + " outside [0, 62]");
    }
    for (double v : row) {
        if (!std::isfinite(v)) throw ValidationError("row", "contains a non-finite value");
    }
    x_.insert(x_.end(), row.begin(), row.end());
    labels_.push_back(label);
}

void validate_config(const TrainConfig& c) {
    if (c.max_epochs < 1) throw ValidationError("max_epochs", "must be >= 1");
    if (c.early_stop_patience < 1) throw ValidationError("early_stop_patience", "must be >= 1");
    if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
        throw ValidationError("learning_rate", "must be finite and >= 0");
    }
    if (c.batch_size < 1) throw ValidationError("batch_size", "must be >= 1");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) throw ValidationError("beta1", "must lie in [0, 1)");
    if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) throw ValidationError("beta2", "must lie in [0, 1)");
    if (!(c.epsilon > 0.0)) throw ValidationError("epsilon", "must be > 0");
    if (!(c.min_improvement >= 0.0)) throw ValidationError("min_improvement", "must be >= 0");
}

GradientResult compute_gradients(const FusionNet& net, const FusionDataset& data, std::span<const std::size_t> batch,
                                 std::optional<std::uint64_t> dropout_seed, kernels::Backend backend) {
    if (batch.empty()) throw ValidationError("batch", "must be nonempty");
    const KernelSet k = kernel_set(backend);
    const TransposedWeights tw(net);
    BatchPass pass;
    gather_rows(data, batch, pass);
    run_forward(net, tw, pass, k, dropout_seed);

    const std::size_t n = pass.n;
    const double inv_n = 1.0 / static_cast<double>(n);
    GradientResult r;
    r.grads = zeros_like_net();

    std::vector<double> dlogits(n * kNumClasses);
    double total = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        const int y = data.label(batch[s]);
        const double* p = &pass.probs[s * kNumClasses];
        total += -std::log(std::max(p[y], kProbabilityFloor));
        if (argmax_row(p) == y) ++r.correct;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            dlogits[s * kNumClasses + c] = (p[c] - (static_cast<int>(c) == y ? 1.0 : 0.0)) * inv_n;
        }
    }
    r.mean_loss = total * inv_n;

    k.weight_grad({n, kHiddenUnits, kNumClasses}, dlogits, pass.hidden, r.grads.w2, r.grads.b2);
    std::vector<double> dhidden(n * kHiddenUnits);
    k.input_grad({n, kHiddenUnits, kNumClasses}, net.w2, dlogits, dhidden);
    for (std::size_t i = 0; i < n * kHiddenUnits; ++i) {
        double d = pass.pre[i] > 0.0 ? dhidden[i] : 0.0;
        if (!pass.mask.empty()) d *= pass.mask[i];
        dhidden[i] = d;
    }
    k.weight_grad({n, kFusionInputs, kHiddenUnits}, dhidden, pass.x, r.grads.w1, r.grads.b1);
    return r;
}

TrainState::TrainState(FusionNet initial) : net(std::move(initial)), m(zeros_like_net()), v(zeros_like_net()) {}

StepResult train_step(TrainState& st, const FusionDataset& data, std::span<const std::size_t> batch,
                      const TrainConfig& cfg) {
    validate_config(cfg);
    GradientResult gr = compute_gradients(st.net, data, batch, derive_seed(cfg.seed, 0x64726f70ULL, st.step),
                                          cfg.backend);
    check_finite(gr.grads.w1, "w1");
    check_finite(gr.grads.b1, "b1");
    check_finite(gr.grads.w2, "w2");
    check_finite(gr.grads.b2, "b2");

    ++st.step;
    const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    adam_update(st.net.w1, gr.grads.w1, st.m.w1, st.v.w1, cfg, bias1, bias2);
    adam_update(st.net.b1, gr.grads.b1, st.m.b1, st.v.b1, cfg, bias1, bias2);
    adam_update(st.net.w2, gr.grads.w2, st.m.w2, st.v.w2, cfg, bias1, bias2);
    adam_update(st.net.b2, gr.grads.b2, st.m.b2, st.v.b2, cfg, bias1, bias2);
    return {gr.mean_loss, gr.correct};
}

EarlyStopping::EarlyStopping(int patience, double min_improvement)
    : patience_(patience),
      min_improvement_(min_improvement),
      best_(std::numeric_limits<double>::infinity()),
      reference_(std::numeric_limits<double>::infinity()) {}

bool EarlyStopping::record(double val_loss) {
    if (val_loss < reference_ - min_improvement_) {
        reference_ = val_loss;
        stale_epochs_ = 0;
    } else {
        ++stale_epochs_;
    }
    if (val_loss < best_) {
        best_ = val_loss;
        return true;
    }
    return false;
}

EvalResult evaluate(const FusionNet& net, const FusionDataset& data, kernels::Backend backend) {
    if (data.empty()) throw ValidationError("dataset", "must be nonempty");
    const KernelSet k = kernel_set(backend);
    const TransposedWeights tw(net);
    BatchPass pass;
    std::vector<std::size_t> idx;
    double total = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
        const std::size_t end = std::min(data.size(), start + kEvalBatch);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        gather_rows(data, idx, pass);
        run_forward(net, tw, pass, k, std::nullopt);
        for (std::size_t s = 0; s < pass.n; ++s) {
            const int y = data.label(idx[s]);
            const double* p = &pass.probs[s * kNumClasses];
            total += -std::log(std::max(p[y], kProbabilityFloor));
            if (argmax_row(p) == y) ++correct;
        }
    }
    const auto n = static_cast<double>(data.size());
    return {total / n, static_cast<double>(correct) / n};
}

std::vector<Probs> predict(const FusionNet& net, const FusionDataset& data, kernels::Backend backend) {
    const KernelSet k = kernel_set(backend);
    const TransposedWeights tw(net);
    BatchPass pass;
    std::vector<std::size_t> idx;
    std::vector<Probs> out(data.size());
    for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
        const std::size_t end = std::min(data.size(), start + kEvalBatch);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        gather_rows(data, idx, pass);
        run_forward(net, tw, pass, k, std::nullopt);
        for (std::size_t s = 0; s < pass.n; ++s) {
            std::copy_n(&pass.probs[s * kNumClasses], kNumClasses, out[start + s].begin());
        }
    }
    return out;
}

TrainResult train(FusionNet initial, const FusionDataset& train_set, const FusionDataset& val_set,
                  const TrainConfig& cfg) {
    validate_config(cfg);
    if (train_set.empty()) throw ValidationError("train_set", "must be nonempty");
    if (val_set.empty()) throw ValidationError("val_set", "must be nonempty");

    TrainResult result;
    result.net = initial;
    TrainState st(std::move(initial));
    EarlyStopping stopper(cfg.early_stop_patience, cfg.min_improvement);

    std::vector<std::size_t> order(train_set.size());
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        SplitMix64 rng(derive_seed(cfg.seed, 0x73687566ULL, static_cast<std::uint64_t>(epoch)));
        shuffle(std::span<std::size_t>(order), rng);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::span<const std::size_t> batch(order.data() + start, end - start);
            const StepResult sr = train_step(st, train_set, batch, cfg);
            loss_sum += sr.loss * static_cast<double>(batch.size());
            correct += sr.correct;
        }
        const EvalResult val = evaluate(st.net, val_set, cfg.backend);
        const auto n = static_cast<double>(train_set.size());
        result.history.push_back({epoch, loss_sum / n, val.mean_loss, static_cast<double>(correct) / n, val.accuracy});

        if (stopper.record(val.mean_loss)) {
            result.net = st.net;
            result.best_epoch = epoch;
        }
        if (stopper.should_stop() && epoch < cfg.max_epochs) {
            result.stopped_early = true;
            break;
        }
    }
    return result;
}

double relative_error(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    if (scale == 0.0) return 0.0;
    return std::abs(a - b) / scale;
}

GradientCheckReport gradient_check(const FusionNet& net, const FusionInput& input, int label, double eps,
                                   std::uint64_t sample_seed, std::size_t per_block) {
    if (!(eps > 0.0)) throw ValidationError("eps", "must be > 0");
    validate_input(input);
    FusionDataset one;
    one.add(input, label);
    const std::size_t idx0 = 0;
    const GradientResult analytic =
        compute_gradients(net, one, std::span<const std::size_t>(&idx0, 1), std::nullopt, kernels::Backend::serial);

    const auto x = concat(input);
    FusionNet probe = net;
    GradientCheckReport report;
    SplitMix64 rng(sample_seed);

    struct Block {
        std::vector<double>* params;
        const std::vector<double>* grads;
        bool first_layer;
        bool is_bias;
    };
    const std::array<Block, 4> blocks = {{{&probe.w1, &analytic.grads.w1, true, false},
                                          {&probe.b1, &analytic.grads.b1, true, true},
                                          {&probe.w2, &analytic.grads.w2, false, false},
                                          {&probe.b2, &analytic.grads.b2, false, true}}};

    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const Block& blk = blocks[b];
        std::vector<std::size_t> candidates(blk.params->size());
        std::iota(candidates.begin(), candidates.end(), std::size_t{0});
        shuffle(std::span<std::size_t>(candidates), rng);
        std::size_t checked = 0;
        for (std::size_t c = 0; c < candidates.size() && checked < per_block; ++c) {
            const std::size_t i = candidates[c];
            if (blk.first_layer) {
                // skip parameters whose perturbation could move a pre-activation across zero
                const std::size_t unit = blk.is_bias ? i : i / kFusionInputs;
                const double reach = blk.is_bias ? eps : eps * std::abs(x[i % kFusionInputs]);
                if (std::abs(reference_pre_activation(net, x, unit)) <= 2.0 * reach) {
                    ++report.kinks_skipped;
                    continue;
                }
            }
            double& p = (*blk.params)[i];
            const double original = p;
            p = original + eps;
            const double up = p - original;
            const long double loss_up = reference_loss(probe, x, label);
            p = original - eps;
            const double down = original - p;
            const long double loss_down = reference_loss(probe, x, label);
            p = original;
            const double numeric = static_cast<double>((loss_up - loss_down) / (static_cast<long double>(up) + down));
            const double err = relative_error((*blk.grads)[i], numeric);
            report.block_max[b] = std::max(report.block_max[b], err);
            ++checked;
        }
        report.parameters_checked += checked;
        report.max_relative_error = std::max(report.max_relative_error, report.block_max[b]);
    }
    return report;
}

std::string encode_weights(const FusionNet& net) {
    if (net.w1.size() != kW1Size || net.b1.size() != kHiddenUnits || net.w2.size() != kW2Size ||
        net.b2.size() != kNumClasses) {
        throw DimensionMismatchError("network blocks do not have the fusion-net shape");
    }
    nlohmann::ordered_json manifest;
    manifest["version"] = kWeightsFormatVersion;
    manifest["dims"] = {{"w1", {kHiddenUnits, kFusionInputs}},
                        {"b1", {kHiddenUnits}},
                        {"w2", {kNumClasses, kHiddenUnits}},
                        {"b2", {kNumClasses}}};
    manifest["dropout_rate"] = net.dropout_rate;
    manifest["seed"] = net.seed;
    manifest["activation"] = "relu";
    std::string out = manifest.dump();
    out.push_back('\n');
    const std::size_t total = kW1Size + kHiddenUnits + kW2Size + kNumClasses;
    const std::size_t offset = out.size();
    out.resize(offset + total * 8);
    char* dst = out.data() + offset;
    for (const auto* block : {&net.w1, &net.b1, &net.w2, &net.b2}) {
        for (double v : *block) {
            auto bits = std::bit_cast<std::uint64_t>(v);
            if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
            std::memcpy(dst, &bits, 8);
            dst += 8;
        }
    }
    return out;
}

FusionNet decode_weights(std::string_view bytes) {
    const auto nl = bytes.find('\n');
    if (nl == std::string_view::npos) throw ParseError("weights: missing manifest line");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(0, nl));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("weights manifest: ") + e.what(), e.byte);
    }
    if (!manifest.is_object()) throw ParseError("weights manifest is not a JSON object");
    if (!manifest.contains("version") || !manifest["version"].is_number_integer()) {
        throw ParseError("weights manifest has no integer version");
    }
    if (manifest["version"].get<int>() != kWeightsFormatVersion) {
        throw VersionMismatchError("weights version " + manifest["version"].dump() + ", expected " +
                                   std::to_string(kWeightsFormatVersion));
    }
    const nlohmann::json expected = {{"w1", {kHiddenUnits, kFusionInputs}},
                                     {"b1", {kHiddenUnits}},
                                     {"w2", {kNumClasses, kHiddenUnits}},
                                     {"b2", {kNumClasses}}};
    if (!manifest.contains("dims") || !manifest["dims"].is_object()) throw ParseError("weights manifest has no dims");
    for (const auto& [name, dims] : expected.items()) {
        if (!manifest["dims"].contains(name) || manifest["dims"][name] != dims) {
            throw DimensionMismatchError("weights block " + name + " has dims " +
                                         manifest["dims"].value(name, nlohmann::json()).dump() + ", expected " +
                                         dims.dump());
        }
    }
    if (manifest.value("activation", std::string()) != "relu") {
        throw ValidationError("activation", "only 'relu' is supported");
    }
    FusionNet net = zero_network();
    if (!manifest.contains("dropout_rate") || !manifest["dropout_rate"].is_number()) {
        throw ParseError("weights manifest has no dropout_rate");
    }
    net.dropout_rate = manifest["dropout_rate"].get<double>();
    if (!(net.dropout_rate >= 0.0 && net.dropout_rate < 1.0)) {
        throw ValidationError("dropout_rate", "must lie in [0, 1)");
    }
    net.seed = manifest.value("seed", std::uint64_t{0});

    const std::string_view payload = bytes.substr(nl + 1);
    const std::size_t total = kW1Size + kHiddenUnits + kW2Size + kNumClasses;
    if (payload.size() < total * 8) {
        throw TruncatedFileError("weights payload has " + std::to_string(payload.size()) + " bytes, expected " +
                                 std::to_string(total * 8));
    }
    if (payload.size() > total * 8) throw ParseError("weights payload has trailing bytes");
    const char* src = payload.data();
    for (auto* block : {&net.w1, &net.b1, &net.w2, &net.b2}) {
        for (double& v : *block) {
            std::uint64_t bits;
            std::memcpy(&bits, src, 8);
            if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
            v = std::bit_cast<double>(bits);
            if (!std::isfinite(v)) throw ValidationError("weights", "contain a non-finite value");
            src += 8;
        }
    }
    return net;
}

void save_weights(const FusionNet& net, const std::filesystem::path& path) { write_file(path, encode_weights(net)); }

FusionNet load_weights(const std::filesystem::path& path) { return decode_weights(read_file(path)); }

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,train_loss,val_loss,train_acc,val_acc\n";
    for (const EpochRecord& e : history) {
        out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.val_loss) + "," +
               format_double(e.train_acc) + "," + format_double(e.val_acc) + "\n";
    }
    return out;
}

}  // namespace fmow
