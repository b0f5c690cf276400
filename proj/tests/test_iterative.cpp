#include "ndfilter/error.hpp"
#include "ndfilter/iterative.hpp"
#include "ndfilter/random.hpp"
#include "ndfilter/scoring.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>
#include <utility>

using namespace ndf;

namespace {

ModelConfig small() {
    ModelConfig c;
    c.m_vocab = 8;
    c.embed_dim = 4;
    c.hidden_dim = 6;
    c.batch_size = 16;
    c.learning_rate = 0.02;
    c.seed = 2;
    return c;
}

TokenizedSequence seq(TokenId tok, int len, std::optional<Label> label = std::nullopt) {
    TokenizedSequence s;
    s.tokens.assign(static_cast<std::size_t>(len), tok);
    s.true_len = len;
    s.label = label;
    return s;
}

// Separable toy data: normal flows repeat token 1 or 2, attacks token 5 or 6.
std::vector<TokenizedSequence> toy(int n, bool attack, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TokenizedSequence> out;
    for (int i = 0; i < n; ++i) {
        const TokenId base = attack ? 5 : 1;
        out.push_back(seq(base + static_cast<TokenId>(rng.below(2)), 3 + static_cast<int>(rng.below(4)),
                          attack ? Label::attack : Label::normal));
    }
    return out;
}

// Straight evaluation of the three-term loss with an explicit sort.
double loss_oracle(std::vector<double> pn, std::vector<double> pm, double alpha) {
    auto c = [](double p) { return std::min(std::max(p, 1e-12), 1 - 1e-12); };
    double a = 0;
    for (double p : pn) a += -std::log(1 - c(p));
    a /= static_cast<double>(pn.size());
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t i = 0; i < pm.size(); ++i) order.push_back({-pm[i], i});
    std::sort(order.begin(), order.end());
    const auto k = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(pm.size()) - 1e-9));
    double b = 0, d = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        const double p = pm[order[r].second];
        if (r < k) b += -std::log(c(p));
        else d += -std::log(1 - c(p));
    }
    const double m = static_cast<double>(pm.size());
    return a + b / (alpha * m) + (k < pm.size() ? d / ((1 - alpha) * m) : 0.0);
}

bool same_params(const BinaryClassifier& a, const BinaryClassifier& b) {
    const auto pa = param_blocks(a), pb = param_blocks(b);
    for (std::size_t k = 0; k < pa.size(); ++k)
        if (std::memcmp(pa[k].second->data(), pb[k].second->data(),
                        sizeof(double) * static_cast<std::size_t>(pa[k].second->size())) != 0)
            return false;
    return true;
}

}  // namespace

TEST_CASE("initial pseudo-labels") {
    const auto n = toy(3, false, 1);
    auto m = toy(2, false, 2);  // true labels are normal; pseudo-labels ignore them
    CHECK(init_pseudo_labels(n, m) == std::vector<double>{0, 0, 0, 1, 1});
    CHECK(init_pseudo_labels(n, {}) == std::vector<double>{0, 0, 0});
}

TEST_CASE("select_top examples") {
    const std::vector<double> p{.9, .1, .5, .7};
    CHECK(select_top(p, 0.5) == std::vector<std::size_t>{0, 3});
    CHECK(select_top(p, 1.0).size() == 4);
    CHECK(select_top(p, 1e-9) == std::vector<std::size_t>{0});
    const std::vector<double> ties{.5, .5, .5};
    CHECK(select_top(ties, 0.5) == std::vector<std::size_t>{0, 1});
    for (std::size_t n = 1; n < 30; ++n)
        for (double f : {0.1, 0.25, 0.4, 0.6, 0.999})
            CHECK(top_count(f, n) == static_cast<std::size_t>(std::ceil(f * static_cast<double>(n) - 1e-9)));
}

TEST_CASE("loss at p = 0.5 is 3 log 2") {
    const std::vector<double> pn(7, 0.5), pm(10, 0.5);
    CHECK(compute_loss(pn, pm, 0.6) == 3 * std::log(2.0));
    const std::vector<double> pn2(2000, 0.5), pm2(2000, 0.5);
    CHECK(compute_loss(pn2, pm2, 0.6) == 3 * std::log(2.0));
    CHECK(compute_loss(pn, pm, 1.0) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("perfect predictions drive the loss to the clamp") {
    const std::vector<double> pn(5, 0.0);
    std::vector<double> pm(10, 0.0);
    for (int i = 0; i < 6; ++i) pm[static_cast<std::size_t>(i)] = 1.0;
    const double l = compute_loss(pn, pm, 0.6);
    CHECK(l >= 0.0);
    CHECK(l < 1e-11);
}

TEST_CASE("loss matches the sorted oracle and is permutation invariant") {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> pn(1 + rng.below(20)), pm(1 + rng.below(30));
        for (auto& p : pn) p = rng.uniform();
        for (auto& p : pm) p = rng.uniform();
        const double alpha = rng.uniform(0.05, 1.0);
        const double l = compute_loss(pn, pm, alpha);
        CHECK(l >= 0.0);
        CHECK(l == doctest::Approx(loss_oracle(pn, pm, alpha)).epsilon(1e-12));
        rng.shuffle(std::span(pn));
        rng.shuffle(std::span(pm));
        CHECK(compute_loss(pn, pm, alpha) == doctest::Approx(l).epsilon(1e-12));
    }
}

TEST_CASE("shifting alpha by 1/|M| moves at most one element") {
    Rng rng(9);
    std::vector<double> pm(50);
    for (auto& p : pm) p = rng.uniform();
    for (double alpha : {0.2, 0.5, 0.6, 0.9}) {
        const auto a = select_top(pm, alpha);
        const auto b = select_top(pm, alpha + 1.0 / 50);
        const std::set<std::size_t> sa(a.begin(), a.end()), sb(b.begin(), b.end());
        std::vector<std::size_t> diff;
        std::set_symmetric_difference(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(diff));
        CHECK(diff.size() <= 1);
    }
}

TEST_CASE("empty sets are domain errors") {
    const std::vector<double> one{0.5}, none;
    CHECK_THROWS_AS(compute_loss(none, one, 0.6), DomainError);
    CHECK_THROWS_AS(compute_loss(one, none, 0.6), DomainError);
}

TEST_CASE("classify uses a strict threshold") {
    CHECK(classify(0.5) == Label::normal);
    CHECK(classify(0.9) == Label::attack);
    CHECK(classify(0.5000001) == Label::attack);
}

TEST_CASE("rank thresholding on -p selects the top probabilities") {
    Rng rng(4);
    std::vector<double> p(20);
    for (auto& x : p) x = rng.uniform();
    std::vector<ScoredSequence> s(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        s[i].flow_key = {"ip" + std::to_string(i), "d"};
        s[i].ratio = -p[i];
    }
    rank_and_threshold(s, 0.4);
    const auto top = select_top(p, 0.4);
    const std::set<std::size_t> want(top.begin(), top.end());
    for (std::size_t i = 0; i < p.size(); ++i) CHECK((s[i].decision == Decision::reject) == (want.count(i) == 1));
}

TEST_CASE("zero iterations leave the model unchanged") {
    const auto m0 = BinaryClassifier::random(small());
    IterativeConfig cfg;
    cfg.max_iterations = 0;
    const auto r = iterate(m0, toy(10, false, 1), toy(10, true, 2), cfg);
    CHECK(r.history.empty());
    CHECK(r.best_iteration == 0);
    CHECK(same_params(r.model, m0));
}

TEST_CASE("retain fraction 1 keeps every mixture sequence on the attack side") {
    IterativeConfig cfg;
    cfg.retain_fraction = 1.0;
    cfg.max_iterations = 3;
    cfg.inner_epochs = 1;
    cfg.tolerance = -1;  // never stop early
    const auto r = iterate(BinaryClassifier::random(small()), toy(20, false, 1), toy(20, true, 2), cfg);
    REQUIRE(r.history.size() == 3);
    for (const auto& h : r.history) {
        CHECK(h.retained == 20);
        CHECK(h.selected == 12);
    }
}

TEST_CASE("retained mode shrinks geometrically, mixture mode stays fixed") {
    IterativeConfig cfg;
    cfg.max_iterations = 3;
    cfg.inner_epochs = 1;
    cfg.tolerance = -1;
    const auto n = toy(20, false, 1), m = toy(50, true, 2);
    auto r = iterate(BinaryClassifier::random(small()), n, m, cfg);
    CHECK(r.history[0].retained == 20);
    CHECK(r.history[1].retained == 8);
    CHECK(r.history[2].retained == 4);
    cfg.retain_base = RetainBase::mixture;
    r = iterate(BinaryClassifier::random(small()), n, m, cfg);
    for (const auto& h : r.history) CHECK(h.retained == 20);
}

TEST_CASE("self-training on a separable mixture lowers the loss and keeps the best model") {
    auto n = toy(60, false, 1);
    auto m = toy(36, true, 2);
    const auto extra = toy(24, false, 3);
    m.insert(m.end(), extra.begin(), extra.end());
    IterativeConfig cfg;
    cfg.inner_epochs = 3;
    cfg.max_iterations = 4;
    const auto r = iterate(BinaryClassifier::random(small()), n, m, cfg);
    REQUIRE(!r.history.empty());
    double best = 1e300;
    for (const auto& h : r.history) best = std::min(best, h.loss);
    const double init = compute_loss(BinaryClassifier::random(small()), n, m, cfg.alpha);
    CHECK(best < init);
    CHECK(compute_loss(r.model, n, m, cfg.alpha) == doctest::Approx(best).epsilon(1e-12));
    CHECK(r.history[static_cast<std::size_t>(r.best_iteration - 1)].loss == best);
    REQUIRE(r.history[0].acc.has_value());
}

TEST_CASE("full classifier") {
    const auto m0 = BinaryClassifier::random(small());
    const auto n = toy(40, false, 1);
    auto m = toy(40, true, 2);
    const auto mn = toy(20, false, 3);
    m.insert(m.end(), mn.begin(), mn.end());

    CHECK(same_params(train_full_classifier(m0, n, m, 0, 1), m0));

    const auto model = train_full_classifier(m0, n, m, 15, 1);
    auto test = toy(50, true, 7);
    const auto tn = toy(50, false, 8);
    test.insert(test.end(), tn.begin(), tn.end());
    const auto p = predict_proba(model, std::span<const TokenizedSequence>(test));
    int correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) correct += classify(p[i]) == *test[i].label;
    MESSAGE("separable test ACC " << correct / 100.0);
    CHECK(correct >= 98);

    // All labels flipped to attack.
    std::vector<TokenizedSequence> flipped(m);
    for (auto& s : flipped) s.label = Label::attack;
    const auto all_one = train_full_classifier(m0, {}, flipped, 15, 1);
    const auto q = predict_proba(all_one, std::span<const TokenizedSequence>(test));
    double mean = 0;
    for (double x : q) mean += x / static_cast<double>(q.size());
    CHECK(mean > 0.9);

    auto unlabeled = m;
    unlabeled[0].label.reset();
    CHECK_THROWS_AS(train_full_classifier(m0, n, unlabeled, 1, 1), DomainError);
}

TEST_CASE("history CSV") {
    IterationRecord r;
    r.iteration = 1;
    r.loss = 0.5;
    r.selected = 6;
    r.retained = 4;
    r.acc = 0.75;
    std::ostringstream out;
    write_history_csv(out, std::vector<IterationRecord>{r});
    CHECK(out.str() == "iteration,loss,selected,retained,acc,fpr\n1,0.5,6,4,0.75,\n");
}

TEST_CASE("bce gradient matches finite differences") {
    auto cfg = small();
    const auto m = BinaryClassifier::random(cfg);
    const auto data = toy(4, true, 5);
    std::vector<const TokenizedSequence*> ptrs;
    for (const auto& s : data) ptrs.push_back(&s);
    const auto b = make_cls_batch(ptrs, cfg.m_vocab);
    const std::vector<double> y{1, 0, 1, 0};
    const std::vector<long double> yl(y.begin(), y.end());
    auto g = m.zeros_like();
    bce_loss(m, b, std::span<const double>(y), &g);
    auto probe = cast_model<long double>(m);
    auto params = param_blocks(probe);
    const auto grads = param_blocks(std::as_const(g));
    using Wide = BinaryClassifierT<long double>;
    const long double h = 1e-6L;
    double worst = 0;
    for (std::size_t k = 0; k < params.size(); ++k)
        for (Eigen::Index i = 0; i < params[k].second->size(); ++i) {
            auto& p = (*params[k].second)(i);
            const long double saved = p;
            p = saved + h;
            const long double up = bce_loss(probe, b, std::span<const long double>(yl), static_cast<Wide*>(nullptr));
            p = saved - h;
            const long double down = bce_loss(probe, b, std::span<const long double>(yl), static_cast<Wide*>(nullptr));
            p = saved;
            const double fd = static_cast<double>((up - down) / (2 * h));
            const double ga = (*grads[k].second)(i);
            worst = std::max(worst, std::abs(fd - ga) / std::max({std::abs(fd), std::abs(ga), 1e-8}));
        }
    MESSAGE("max relative error " << worst);
    CHECK(worst < 1e-5);
}
