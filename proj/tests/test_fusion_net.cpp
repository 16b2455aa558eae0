#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include <json.hpp>

#include "fmow/error.hpp"
#include "fmow/fusion_net.hpp"
#include "fmow/rng.hpp"
#include "fmow/text.hpp"

using namespace fmow;

namespace {

FusionInput random_input(SplitMix64& rng) {
    FusionInput in;
    double sum = 0.0;
    for (double& p : in.cnn_probs) {
        p = rng.uniform() + 1e-3;
        sum += p;
    }
    for (double& p : in.cnn_probs) p /= sum;
    for (double& v : in.meta.values) v = rng.uniform(-1.0, 1.0);
    return in;
}

FusionDataset random_dataset(std::size_t n, std::uint64_t seed) {
    SplitMix64 rng(seed);
    FusionDataset ds;
    for (std::size_t i = 0; i < n; ++i) {
        const FusionInput in = random_input(rng);
        // label correlated with the input so training has something to learn
        int label = 0;
        for (std::size_t c = 1; c < kNumClasses; ++c)
            if (in.cnn_probs[c] > in.cnn_probs[static_cast<std::size_t>(label)]) label = static_cast<int>(c);
        ds.add(in, label);
    }
    return ds;
}

bool same_bits(const FusionNet& a, const FusionNet& b) {
    auto eq = [](const std::vector<double>& x, const std::vector<double>& y) {
        return x.size() == y.size() && std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
    };
    return eq(a.w1, b.w1) && eq(a.b1, b.b1) && eq(a.w2, b.w2) && eq(a.b2, b.b2);
}

std::vector<std::size_t> all_rows(const FusionDataset& ds) {
    std::vector<std::size_t> rows(ds.size());
    std::iota(rows.begin(), rows.end(), 0);
    return rows;
}

}  // namespace

TEST_CASE("zero network gives the uniform vector") {
    SplitMix64 rng(1);
    const Probs p = infer(zero_network(), random_input(rng));
    for (double v : p) CHECK(v == doctest::Approx(1.0 / 63.0).epsilon(1e-15));
    CHECK(1.0 / 63.0 == doctest::Approx(0.015873).epsilon(1e-5));
}

TEST_CASE("initialization") {
    const FusionNet a = init_network(42), b = init_network(42), c = init_network(43);
    CHECK(same_bits(a, b));
    CHECK(a.w1 != c.w1);
    CHECK(a.w1.size() == kHiddenUnits * kFusionInputs);
    CHECK(a.w2.size() == kNumClasses * kHiddenUnits);
    CHECK(std::all_of(a.b1.begin(), a.b1.end(), [](double v) { return v == 0.0; }));
    CHECK(std::all_of(a.b2.begin(), a.b2.end(), [](double v) { return v == 0.0; }));
    const double l1 = std::sqrt(6.0 / (90.0 + 1024.0)), l2 = std::sqrt(6.0 / (1024.0 + 63.0));
    CHECK(std::all_of(a.w1.begin(), a.w1.end(), [&](double v) { return std::abs(v) <= l1; }));
    CHECK(std::all_of(a.w2.begin(), a.w2.end(), [&](double v) { return std::abs(v) <= l2; }));
    // roughly uniform: variance of U(-l, l) is l^2 / 3
    double ss = 0.0;
    for (double v : a.w1) ss += v * v;
    CHECK(ss / static_cast<double>(a.w1.size()) == doctest::Approx(l1 * l1 / 3.0).epsilon(0.02));
    CHECK(a.dropout_rate == 0.6);
}

TEST_CASE("forward passes produce probability vectors") {
    const FusionNet net = init_network(7);
    SplitMix64 rng(2);
    for (int i = 0; i < 50; ++i) {
        const FusionInput in = random_input(rng);
        const Probs p = infer(net, in);
        const Probs q = forward_train(net, in, static_cast<std::uint64_t>(i));
        double sp = 0.0, sq = 0.0;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            CHECK(p[c] >= 0.0);
            sp += p[c];
            sq += q[c];
        }
        CHECK(std::abs(sp - 1.0) <= 1e-9);
        CHECK(std::abs(sq - 1.0) <= 1e-9);
        const Probs again = infer(net, in);
        CHECK(std::memcmp(p.data(), again.data(), sizeof p) == 0);
    }
    FusionInput bad = random_input(rng);
    bad.meta.values[3] = std::nan("");
    CHECK_THROWS_AS(infer(net, bad), ValidationError);
    bad = random_input(rng);
    bad.cnn_probs[0] += 0.01;
    CHECK_THROWS_AS(validate_input(bad), ValidationError);
}

TEST_CASE("softmax sums to one and ignores a constant shift") {
    SplitMix64 rng(3);
    for (int i = 0; i < 200; ++i) {
        std::array<double, kNumClasses> z{};
        for (double& v : z) v = rng.uniform(-30.0, 30.0);
        const Probs p = softmax(z);
        CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-9);
        const double shift = rng.uniform(-500.0, 500.0);
        auto z2 = z;
        for (double& v : z2) v += shift;
        const Probs q = softmax(z2);
        CHECK(std::max_element(p.begin(), p.end()) - p.begin() == std::max_element(q.begin(), q.end()) - q.begin());
        for (std::size_t c = 0; c < kNumClasses; ++c) CHECK(q[c] == doctest::Approx(p[c]).epsilon(1e-9));
    }
    std::array<double, kNumClasses> huge{};
    huge[5] = 1e300;
    CHECK(softmax(huge)[5] == 1.0);
}

TEST_CASE("inverted dropout keeps the expectation") {
    const std::size_t n_masks = 100000;
    std::vector<double> mask(kHiddenUnits), mean(kHiddenUnits, 0.0);
    std::size_t bad_values = 0;
    for (std::size_t s = 0; s < n_masks; ++s) {
        dropout_mask(derive_seed(78, s), 0.6, mask);
        for (std::size_t j = 0; j < kHiddenUnits; ++j) {
            bad_values += (mask[j] != 0.0 && mask[j] != 1.0 / 0.4);
            mean[j] += mask[j];
        }
    }
    CHECK(bad_values == 0);
    // E[mask] = 1, so mean(dropout(h)) -> h for any fixed h
    for (std::size_t j = 0; j < kHiddenUnits; ++j) CHECK(std::abs(mean[j] / n_masks - 1.0) <= 0.02);
}

TEST_CASE("train-mode logits average to the inference logits") {
    // Positive output weights keep the expected logits well away from zero.
    FusionNet net = init_network(5);
    for (double& w : net.w2) w = std::abs(w);
    SplitMix64 rng(4);
    const FusionInput in = random_input(rng);
    const ForwardTrace exact = trace_forward(net, in);
    std::array<double, kNumClasses> mean{};
    const int n = 20000;
    for (int s = 0; s < n; ++s) {
        const ForwardTrace t = trace_forward(net, in, static_cast<std::uint64_t>(s));
        for (std::size_t c = 0; c < kNumClasses; ++c) mean[c] += t.logits[c];
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        CHECK(mean[c] / n == doctest::Approx(exact.logits[c]).epsilon(0.02));
    }
}

TEST_CASE("loss") {
    Probs p{};
    p[3] = 1.0;
    CHECK(loss(p, 3) == 0.0);
    Probs u;
    u.fill(1.0 / 63.0);
    CHECK(loss(u, 10) == doctest::Approx(std::log(63.0)).epsilon(1e-14));
    CHECK(loss(u, 10) == doctest::Approx(4.1431).epsilon(1e-4));
    CHECK(loss(p, 0) == doctest::Approx(-std::log(1e-12)).epsilon(1e-14));
    CHECK(loss(p, 0) == doctest::Approx(27.631).epsilon(1e-4));
}

TEST_CASE("a zero learning rate leaves the network unchanged") {
    const FusionDataset ds = random_dataset(20, 9);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    TrainState st(init_network(3));
    const FusionNet before = st.net;
    const auto rows = all_rows(ds);
    train_step(st, ds, rows, cfg);
    CHECK(same_bits(st.net, before));
    CHECK(st.step == 1);
}

TEST_CASE("a small step on one sample lowers its loss") {
    FusionDataset ds = random_dataset(1, 10);
    FusionNet net = init_network(4);
    net.dropout_rate = 0.0;  // fixed mask: every unit kept
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    TrainState st(net);
    const std::size_t row = 0;
    const double before = evaluate(st.net, ds).mean_loss;
    const StepResult r = train_step(st, ds, std::span<const std::size_t>(&row, 1), cfg);
    CHECK(r.loss == doctest::Approx(before).epsilon(1e-12));
    CHECK(evaluate(st.net, ds).mean_loss < before);
}

TEST_CASE("gradients match finite differences") {
    SplitMix64 rng(12);
    for (int trial = 0; trial < 2; ++trial) {
        FusionNet net = init_network(100 + static_cast<std::uint64_t>(trial));
        for (double& b : net.b1) b = rng.uniform(-0.1, 0.1);
        for (double& b : net.b2) b = rng.uniform(-0.1, 0.1);
        const FusionInput in = random_input(rng);
        const GradientCheckReport rep =
            gradient_check(net, in, static_cast<int>(rng.below(63)), 1e-5, static_cast<std::uint64_t>(trial));
        CHECK(rep.max_relative_error < 1e-6);
        CHECK(rep.parameters_checked >= 3 * 200 + 63);
    }
}

TEST_CASE("gradient check helpers") {
    CHECK(relative_error(1.0, 2.0) == relative_error(2.0, 1.0));
    CHECK(relative_error(0.0, 0.0) == 0.0);
    CHECK(relative_error(-1.0, 1.0) == 2.0);

    // Zero loss by construction: a huge output bias on the label.
    FusionNet net = init_network(1);
    net.b2[17] = 1000.0;
    FusionDataset ds;
    SplitMix64 rng(13);
    ds.add(random_input(rng), 17);
    const std::size_t row = 0;
    const GradientResult g = compute_gradients(net, ds, std::span<const std::size_t>(&row, 1), std::nullopt);
    CHECK(g.mean_loss < 1e-12);
    double norm = 0.0;
    for (const auto* block : {&g.grads.w1, &g.grads.b1, &g.grads.w2, &g.grads.b2})
        for (double v : *block) norm += v * v;
    CHECK(std::sqrt(norm) < 1e-9);
}

TEST_CASE("serial and parallel training are bit-identical and reproducible") {
    const FusionDataset train_set = random_dataset(300, 20), val_set = random_dataset(80, 21);
    TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.batch_size = 64;
    cfg.seed = 5;
    cfg.backend = kernels::Backend::serial;
    const TrainResult a = train(init_network(8), train_set, val_set, cfg);
    cfg.backend = kernels::Backend::parallel;
    const TrainResult b = train(init_network(8), train_set, val_set, cfg);
    const TrainResult c = train(init_network(8), train_set, val_set, cfg);
    CHECK(same_bits(a.net, b.net));
    CHECK(same_bits(b.net, c.net));
    CHECK(history_csv(a.history) == history_csv(b.history));
}

TEST_CASE("early stopping rule") {
    EarlyStopping es(3, 1e-5);
    CHECK(es.record(1.0));
    CHECK(es.record(0.999999));  // new best, but too small to reset patience
    CHECK_FALSE(es.should_stop());
    CHECK_FALSE(es.record(1.0));
    CHECK(es.record(0.99999));  // 1e-5 below the reference is not more than 1e-5
    CHECK(es.should_stop());
    CHECK(es.best() == 0.99999);

    EarlyStopping fresh(2, 1e-5);
    fresh.record(1.0);
    fresh.record(0.5);
    fresh.record(0.6);
    CHECK_FALSE(fresh.should_stop());
    fresh.record(0.5);
    CHECK(fresh.should_stop());
}

TEST_CASE("training stops when validation loss only rises") {
    // Train on class 0, validate on class 1 for the same inputs: every epoch makes validation worse.
    SplitMix64 rng(30);
    FusionDataset tr, va;
    for (int i = 0; i < 64; ++i) {
        const FusionInput in = random_input(rng);
        tr.add(in, 0);
        va.add(in, 1);
    }
    TrainConfig cfg;
    cfg.early_stop_patience = 1;
    cfg.batch_size = 16;
    cfg.learning_rate = 1e-2;
    const TrainResult r = train(init_network(2), tr, va, cfg);
    REQUIRE(r.history.size() == 2);
    CHECK(r.history[1].val_loss > r.history[0].val_loss);
    CHECK(r.best_epoch == 1);
    CHECK(r.stopped_early);
    CHECK(evaluate(r.net, va).mean_loss == r.history[0].val_loss);

    cfg.max_epochs = 1;
    cfg.early_stop_patience = 5;
    CHECK(train(init_network(2), tr, va, cfg).history.size() == 1);
}

TEST_CASE("train returns the best validation weights") {
    const FusionDataset train_set = random_dataset(400, 40), val_set = random_dataset(100, 41);
    TrainConfig cfg;
    cfg.max_epochs = 6;
    cfg.batch_size = 32;
    cfg.learning_rate = 3e-3;
    const TrainResult r = train(init_network(9), train_set, val_set, cfg);
    double best = 1e300;
    for (const EpochRecord& e : r.history) best = std::min(best, e.val_loss);
    CHECK(r.history.at(static_cast<std::size_t>(r.best_epoch - 1)).val_loss == best);
    CHECK(evaluate(r.net, val_set).mean_loss == best);
    CHECK(r.history.size() <= 6);

    FusionDataset empty;
    CHECK_THROWS_AS(train(init_network(9), empty, val_set, cfg), ValidationError);
    TrainConfig bad = cfg;
    bad.max_epochs = 0;
    CHECK_THROWS_AS(train(init_network(9), train_set, val_set, bad), ValidationError);
}

TEST_CASE("weights container") {
    FusionNet net = init_network(11);
    net.seed = 11;
    const std::string bytes = encode_weights(net);
    CHECK(same_bits(decode_weights(bytes), net));
    CHECK(decode_weights(bytes) == net);
    const auto path = std::filesystem::temp_directory_path() / "fmow_test.weights";
    save_weights(net, path);
    CHECK(same_bits(load_weights(path), net));

    const std::size_t nl = bytes.find('\n');
    nlohmann::ordered_json manifest = nlohmann::ordered_json::parse(bytes.substr(0, nl));
    const std::string payload = bytes.substr(nl);

    CHECK_THROWS_AS(decode_weights(bytes.substr(0, bytes.size() - 8)), TruncatedFileError);

    auto m = manifest;
    m["dims"]["w1"] = {1024, 89};
    CHECK_THROWS_AS(decode_weights(m.dump() + payload), DimensionMismatchError);

    m = manifest;
    m["version"] = 2;
    CHECK_THROWS_AS(decode_weights(m.dump() + payload), VersionMismatchError);

    CHECK_THROWS_AS(decode_weights("{\"version\": 1, \"dims\"" + payload), ParseError);
    CHECK_THROWS_AS(decode_weights(bytes + "extra"), ParseError);
}

TEST_CASE("history csv") {
    const std::vector<EpochRecord> h = {{1, 2.5, 2.0, 0.25, 0.5}};
    CHECK(history_csv(h) == "epoch,train_loss,val_loss,train_acc,val_acc\n1,2.5,2,0.25,0.5\n");
}
