#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "nkscreen/errors.hpp"
#include "nkscreen/powerflow.hpp"
#include "nkscreen/surrogate.hpp"
#include "test_support.hpp"

using namespace nkscreen;
using namespace nkscreen::testing;

namespace {

// Base case plus every single outage per state; islanding singletons get the sentinel.
std::vector<LabeledExample> n1_examples(const NetworkCase& net, int n_states, std::uint64_t seed) {
    const SeverityConfig cfg;
    std::vector<LabeledExample> out;
    const int nb = net.branch_count();
    for (int s = 0; s < n_states; ++s) {
        const auto state = perturb_state(net, derive_seed(seed, {std::uint64_t(s)}), {0.9, 1.1}, {0.9, 1.1}, {});
        const PreparedNetwork prep(net, state);
        const auto base = solve_acpf(prep, ContingencyVector(nb));
        out.push_back({state.feature_vector, std::vector<double>(nb, 0.0), severity(base, base, cfg)});
        for (int e = 0; e < nb; ++e) {
            const auto c = ContingencyVector::single(nb, e);
            const double sev = is_connected(net, c) ? severity(base, solve_acpf(prep, c), cfg) : cfg.s_fail;
            out.push_back({state.feature_vector, c.relaxed(), sev});
        }
    }
    return out;
}

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<int> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        for (std::size_t t = i; t <= j; ++t) r[idx[t]] = 0.5 * static_cast<double>(i + j);
        i = j + 1;
    }
    return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5}); }

EvgnnModel randomized_model(const NetworkCase& net, std::uint64_t seed) {
    EvgnnHyper h;
    auto m = make_evgnn(net, h, seed);
    Rng rng = make_rng(seed, {1});
    for (auto& l : m.layers) {
        for (int e = 0; e < l.gain.size(); ++e) l.gain(e) = uniform(rng, -1.5, 2.0);
        for (int i = 0; i < l.bias.size(); ++i) l.bias(i) = uniform(rng, -0.3, 0.3);
    }
    m.b_out = 0.4;
    return m;
}

}  // namespace

TEST_CASE("forward pass contract") {
    const auto& net = ieee(14);
    const auto m = randomized_model(net, 3);
    const auto x = nominal_state(net).feature_vector;
    const std::vector<double> zero(20, 0.0);
    CHECK(score(m, net, x, zero) == score(m, net, x, zero));
    CHECK(score(m, x, zero) > 0.0);

    auto flat = m;
    flat.w_out.setZero();
    flat.b_out = -0.7;
    Rng rng = make_rng(8);
    for (int i = 0; i < 5; ++i) {
        std::vector<double> c(20);
        for (auto& v : c) v = uniform01(rng);
        CHECK(score(flat, x, c) == doctest::Approx(std::log1p(std::exp(-0.7))).epsilon(1e-15));
    }

    const auto c = ContingencyVector::from_indices(20, {2, 7});
    const auto relaxed = c.relaxed();
    CHECK(score(m, x, relaxed) == score(m, x, std::vector<double>(relaxed.begin(), relaxed.end())));

    CHECK_THROWS_AS(score(m, x, std::vector<double>(19, 0.0)), ValidationError);
    CHECK_THROWS_AS(score(m, x, std::vector<double>(20, 1.5)), ValidationError);
    CHECK_THROWS_AS(score(m, ieee(39), nominal_state(ieee(39)).feature_vector, std::vector<double>(46, 0.0)),
                    ValidationError);

    const auto batch = score_batch(m, x, {zero, relaxed});
    CHECK(batch[0] == doctest::Approx(score(m, x, zero)).epsilon(1e-13));
    CHECK(batch[1] == doctest::Approx(score(m, x, relaxed)).epsilon(1e-13));
}

TEST_CASE("outaging a branch equals zeroing its gains") {
    const auto& net = ieee(14);
    auto m = randomized_model(net, 5);
    const auto x = nominal_state(net).feature_vector;
    auto c = std::vector<double>(20, 0.0);
    c[4] = 1.0;
    const double outaged = score(m, x, c);
    for (auto& l : m.layers) l.gain(4) = 0.0;
    CHECK(score(m, x, std::vector<double>(20, 0.0)) == doctest::Approx(outaged).epsilon(1e-14));
}

TEST_CASE("score gradient matches central differences") {
    const double h = 1e-5;
    int checked = 0;
    for (int n : {14, 39}) {
        const auto& net = ieee(n);
        const int nb = net.branch_count();
        const auto m = randomized_model(net, 17 + n);
        Rng rng = make_rng(n);
        for (int point = 0; point < 50; ++point) {
            const auto state = make_state(net, "p", std::vector<std::pair<double, double>>(net.bus_count(), {uniform(rng, 0.8, 1.2), 1.0}),
                                          std::vector<double>(net.gen_count(), uniform(rng, 0.8, 1.2)));
            std::vector<double> c(nb);
            for (auto& v : c) v = uniform(rng, 2 * h, 1.0 - 2 * h);
            const auto g = score_gradient(m, net, state.feature_vector, c);
            REQUIRE(g.size() == static_cast<std::size_t>(nb));
            double worst = 0.0;
            for (int e = 0; e < nb; ++e) {
                auto cp = c, cm = c;
                cp[e] += h;
                cm[e] -= h;
                const double fd = (score(m, state.feature_vector, cp) - score(m, state.feature_vector, cm)) / (2 * h);
                worst = std::max(worst, rel_err(g[e], fd));
            }
            CHECK(worst < 1e-4);
            ++checked;
        }
    }
    CHECK(checked == 100);
}

TEST_CASE("gradient structure") {
    SUBCASE("dead edge has zero gradient") {
        const auto& net = ieee(14);
        auto m = randomized_model(net, 2);
        for (auto& l : m.layers) l.gain(6) = 0.0;
        const auto g = score_gradient(m, nominal_state(net).feature_vector, std::vector<double>(20, 0.3));
        CHECK(g[6] == 0.0);
        CHECK(g[5] != 0.0);
    }
    SUBCASE("parallel branches with equal gains swap gradients") {
        const auto net = synthetic_case(3, {{1, 2, 0.1}, {1, 2, 0.1}, {2, 3, 0.2}}, 40.0, 10.0);
        const auto m = make_evgnn(net, EvgnnHyper{}, 4);
        const auto x = nominal_state(net).feature_vector;
        const auto g = score_gradient(m, x, std::vector<double>{0.2, 0.7, 0.1});
        const auto gs = score_gradient(m, x, std::vector<double>{0.7, 0.2, 0.1});
        CHECK(gs[0] == doctest::Approx(g[1]).epsilon(1e-12));
        CHECK(gs[1] == doctest::Approx(g[0]).epsilon(1e-12));
    }
}

TEST_CASE("parameter gradient matches central differences") {
    const auto& net = ieee(14);
    auto examples = n1_examples(net, 2, 9);
    auto m = randomized_model(net, 11);
    m.target_cap = 50.0;
    std::vector<const LabeledExample*> batch;
    for (std::size_t i = 0; i < examples.size(); i += 3) batch.push_back(&examples[i]);
    std::vector<double> grad;
    evgnn_loss_gradient(m, batch, &grad);
    auto theta = m.flatten();
    REQUIRE(grad.size() == theta.size());
    Rng rng = make_rng(12);
    const double h = 1e-6;
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const auto p = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(theta.size()) - 1));
        auto probe = m;
        auto tp = theta;
        tp[p] = theta[p] + h;
        probe.unflatten(tp);
        const double up = evgnn_loss_gradient(probe, batch, nullptr);
        tp[p] = theta[p] - h;
        probe.unflatten(tp);
        const double dn = evgnn_loss_gradient(probe, batch, nullptr);
        worst = std::max(worst, rel_err(grad[p], (up - dn) / (2 * h)));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("training") {
    const auto& net = ieee(14);
    SUBCASE("single example is memorized") {
        auto examples = n1_examples(net, 1, 4);
        std::vector<LabeledExample> one = {examples[5]};
        EvgnnHyper h;
        h.epochs = 300;
        const auto m = train_evgnn(net, one, h, 1);
        CHECK(m.final_loss < 1e-4);
    }
    SUBCASE("zero epochs keeps the initialization") {
        auto examples = n1_examples(net, 1, 4);
        EvgnnHyper h;
        h.epochs = 0;
        const auto m = train_evgnn(net, examples, h, 6);
        const auto init = make_evgnn(net, h, 6);
        CHECK(m.layers[1].w_nbr == init.layers[1].w_nbr);
    }
    SUBCASE("duplicated data gives the same full-batch model") {
        auto examples = n1_examples(net, 2, 5);
        auto doubled = examples;
        doubled.insert(doubled.end(), examples.begin(), examples.end());
        EvgnnHyper h;
        h.epochs = 40;
        h.batch_size = 0;
        const auto a = train_evgnn(net, examples, h, 3).flatten();
        const auto b = train_evgnn(net, doubled, h, 3).flatten();
        double worst = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
        CHECK(worst < 1e-8);
    }
    SUBCASE("same seed, same parameters") {
        auto examples = n1_examples(net, 2, 5);
        EvgnnHyper h;
        h.epochs = 5;
        h.batch_size = 8;
        CHECK(train_evgnn(net, examples, h, 3) == train_evgnn(net, examples, h, 3));
    }
    SUBCASE("divergence is reported") {
        auto examples = n1_examples(net, 1, 5);
        EvgnnHyper h;
        h.epochs = 200;
        h.learning_rate = 1e300;
        h.momentum = 0.0;
        CHECK_THROWS_AS(train_evgnn(net, examples, h, 3), TrainingError);
    }
}

TEST_CASE("held-out single-outage ranking on IEEE-14") {
    const auto& net = ieee(14);
    const auto t0 = std::chrono::steady_clock::now();
    const auto data = n1_examples(net, 200, 2024);
    CHECK(data.size() == 200u * 21u);
    // split by state: the last 40 states are held out
    const std::vector<LabeledExample> train(data.begin(), data.begin() + 160 * 21);
    const std::vector<LabeledExample> test(data.begin() + 160 * 21, data.end());
    EvgnnHyper h;
    h.epochs = 60;
    const auto m = train_evgnn(net, train, h, 7);
    CHECK(m.loss_history.back() < m.loss_history.front());

    std::vector<double> truth, pred, target;
    double mse = 0.0, mean = 0.0;
    for (const auto& ex : test) {
        truth.push_back(ex.s);
        pred.push_back(score(m, ex.x, ex.c));
        target.push_back(evgnn_target(m, ex.s));
        mean += target.back() / static_cast<double>(test.size());
    }
    double var = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        mse += (pred[i] - target[i]) * (pred[i] - target[i]);
        var += (target[i] - mean) * (target[i] - mean);
    }
    const double spearman = pearson(ranks(truth), ranks(pred));
    MESSAGE("spearman " << spearman << ", R2 " << 1.0 - mse / var << ", seconds "
                        << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    CHECK(spearman >= 0.6);
    CHECK(mse < var);
}

TEST_CASE("high-risk set selection") {
    const auto& net = ieee(14);
    const auto m = randomized_model(net, 21);
    const FeasibleSetSpec spec(net, 2);
    const std::vector<std::vector<double>> states = {nominal_state(net).feature_vector};

    const auto all = build_high_risk_set(m, spec, states, {2, 4}, 30, 30, 5);
    CHECK(all.size() == 30);
    const auto top = build_high_risk_set(m, spec, states, {2, 4}, 30, 5, 5);
    std::vector<double> pool_scores;
    for (const auto& e : all) pool_scores.push_back(e.score);
    std::sort(pool_scores.rbegin(), pool_scores.rend());
    for (int i = 0; i < 5; ++i) CHECK(top[i].score == pool_scores[i]);
    for (const auto& e : all) {
        CHECK(e.c.k() >= 2);
        CHECK(e.c.k() <= 4);
        CHECK(is_connected(net, e.c));
    }

    const auto big = build_high_risk_set(m, spec, states, {2, 4}, 500, 50, 9);
    CHECK(big.size() == 50);
    CHECK(std::is_sorted(big.begin(), big.end(), [](const auto& a, const auto& b) { return a.score > b.score; }));
    CHECK(build_high_risk_set(m, spec, states, {2, 4}, 10, 0, 9).empty());
    CHECK_THROWS_AS(build_high_risk_set(m, spec, states, {2, 4}, 10, 11, 9), ValidationError);
}
