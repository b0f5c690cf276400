#include "ndfilter/iterative.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace ndf {

RetainBase parse_retain_base(const std::string& text) {
    if (text == "mixture") return RetainBase::mixture;
    if (text == "retained") return RetainBase::retained;
    throw DomainError("unknown retain base: " + text);
}

void IterativeConfig::validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in (0,1]");
    if (!(retain_fraction > 0.0 && retain_fraction <= 1.0))
        throw DomainError("retain_fraction must lie in (0,1]");
    if (max_iterations < 0 || inner_epochs < 0) throw DomainError("iteration counts must be >= 0");
}

std::vector<double> init_pseudo_labels(std::span<const TokenizedSequence> normal,
                                       std::span<const TokenizedSequence> mixture) {
    std::vector<double> labels(normal.size(), 0.0);
    labels.resize(normal.size() + mixture.size(), 1.0);
    return labels;
}

std::size_t top_count(double fraction, std::size_t n) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw DomainError("fraction must lie in [0,1]");
    if (n == 0 || fraction == 0.0) return 0;
    const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    return std::clamp<std::size_t>(k, 1, n);
}

std::vector<std::size_t> select_top(std::span<const double> probs, double fraction) {
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    order.resize(top_count(fraction, probs.size()));
    return order;
}

std::vector<std::size_t> select_top(const BinaryClassifier& model,
                                    std::span<const TokenizedSequence> mixture, double fraction) {
    const auto p = predict_proba(model, mixture);
    return select_top(std::span<const double>(p), fraction);
}

double compute_loss(std::span<const double> p_normal, std::span<const double> p_mixture,
                    double alpha) {
    if (p_normal.empty() || p_mixture.empty()) throw DomainError("compute_loss: empty N or M");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in (0,1]");
    static constexpr double kClamp = 1e-12;
    const auto clamp = [](double p) { return std::clamp(p, kClamp, 1.0 - kClamp); };

    // Long-double sums keep the mean of identical terms exact.
    long double normal_term = 0;
    for (double p : p_normal) normal_term -= std::log(1.0 - clamp(p));
    normal_term /= static_cast<long double>(p_normal.size());

    const auto sel = select_top(p_mixture, alpha);
    std::vector<char> in_sel(p_mixture.size(), 0);
    for (auto i : sel) in_sel[i] = 1;
    const double m = static_cast<double>(p_mixture.size());
    long double sel_sum = 0, rest_sum = 0;
    for (std::size_t i = 0; i < p_mixture.size(); ++i) {
        if (in_sel[i])
            sel_sum -= std::log(clamp(p_mixture[i]));
        else
            rest_sum -= std::log(1.0 - clamp(p_mixture[i]));
    }
    const long double sel_term = sel_sum / (alpha * m);
    const long double rest_term = sel.size() == p_mixture.size() ? 0.0L : rest_sum / ((1.0 - alpha) * m);
    return static_cast<double>(normal_term + sel_term + rest_term);
}

double compute_loss(const BinaryClassifier& model, std::span<const TokenizedSequence> normal,
                    std::span<const TokenizedSequence> mixture, double alpha) {
    const auto pn = predict_proba(model, normal);
    const auto pm = predict_proba(model, mixture);
    return compute_loss(std::span<const double>(pn), std::span<const double>(pm), alpha);
}

namespace {

void label_metrics(std::span<const TokenizedSequence> mixture, std::span<const double> p,
                   IterationRecord& rec) {
    long tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < mixture.size(); ++i) {
        if (!mixture[i].label) return;
        const bool attack = *mixture[i].label == Label::attack;
        const bool flagged = classify(p[i]) == Label::attack;
        (attack ? (flagged ? tp : fn) : (flagged ? fp : tn))++;
    }
    const long total = tp + tn + fp + fn;
    if (total > 0) rec.acc = static_cast<double>(tp + tn) / static_cast<double>(total);
    if (fp + tn > 0) rec.fpr = static_cast<double>(fp) / static_cast<double>(fp + tn);
}

}  // namespace

IterativeResult iterate(BinaryClassifier model, std::span<const TokenizedSequence> normal,
                        std::span<const TokenizedSequence> mixture, const IterativeConfig& cfg) {
    cfg.validate();
    if (normal.empty() || mixture.empty()) throw DomainError("iterate: empty N or M");

    std::vector<TokenizedSequence> data(normal.begin(), normal.end());
    data.insert(data.end(), mixture.begin(), mixture.end());
    std::vector<double> labels = init_pseudo_labels(normal, mixture);
    std::vector<std::size_t> retained(mixture.size());
    std::iota(retained.begin(), retained.end(), std::size_t{0});

    const BinaryClassifier initial = model;
    IterativeResult result{std::move(model), {}, 0};
    std::optional<BinaryClassifier> best;
    double best_loss = std::numeric_limits<double>::infinity();
    Rng rng(cfg.seed);
    auto opt = ClassifierOptimizer::for_model(result.model);

    for (int it = 1; it <= cfg.max_iterations; ++it) {
        if (cfg.restart_each_iteration && it > 1) {
            result.model = initial;
            opt = ClassifierOptimizer::for_model(result.model);
        }
        for (int e = 0; e < cfg.inner_epochs; ++e) train_epoch(result.model, data, labels, opt, rng);

        const auto pn = predict_proba(result.model, normal);
        const auto pm = predict_proba(result.model, mixture);
        IterationRecord rec;
        rec.iteration = it;
        rec.loss = compute_loss(std::span<const double>(pn), std::span<const double>(pm), cfg.alpha);
        rec.selected = top_count(cfg.alpha, mixture.size());
        label_metrics(mixture, pm, rec);

        // Reduce the attack side for the next round.
        std::vector<double> base_p;
        const std::vector<std::size_t> base = [&] {
            if (cfg.retain_base == RetainBase::retained) return retained;
            std::vector<std::size_t> all(mixture.size());
            std::iota(all.begin(), all.end(), std::size_t{0});
            return all;
        }();
        for (auto i : base) base_p.push_back(pm[i]);
        std::vector<std::size_t> next;
        for (auto k : select_top(std::span<const double>(base_p), cfg.retain_fraction))
            next.push_back(base[k]);
        std::sort(next.begin(), next.end());
        retained = std::move(next);
        std::fill(labels.begin() + static_cast<std::ptrdiff_t>(normal.size()), labels.end(), 0.0);
        for (auto i : retained) labels[normal.size() + i] = 1.0;
        rec.retained = retained.size();

        const bool converged = !result.history.empty() &&
                               (result.history.back().loss - rec.loss) <
                                   cfg.tolerance * std::abs(result.history.back().loss);
        result.history.push_back(rec);
        if (rec.loss < best_loss) {
            best_loss = rec.loss;
            result.best_iteration = it;
            if (cfg.keep_best) best = result.model;
        }
        if (converged) break;
    }
    if (cfg.keep_best && best) result.model = std::move(*best);
    else if (!result.history.empty()) result.best_iteration = result.history.back().iteration;
    return result;
}

BinaryClassifier train_full_classifier(BinaryClassifier model,
                                       std::span<const TokenizedSequence> normal,
                                       std::span<const TokenizedSequence> mixture, int epochs,
                                       std::uint64_t seed) {
    std::vector<TokenizedSequence> data(normal.begin(), normal.end());
    std::vector<double> labels(normal.size(), 0.0);
    for (const auto& s : mixture) {
        if (!s.label) throw DomainError("full classifier needs a true label on every mixture sequence");
        data.push_back(s);
        labels.push_back(*s.label == Label::attack ? 1.0 : 0.0);
    }
    Rng rng(seed);
    auto opt = ClassifierOptimizer::for_model(model);
    for (int e = 0; e < epochs; ++e) train_epoch(model, data, labels, opt, rng);
    return model;
}

void write_history_csv(std::ostream& out, std::span<const IterationRecord> history) {
    out << "iteration,loss,selected,retained,acc,fpr\n";
    for (const auto& r : history) {
        out << r.iteration << ',' << r.loss << ',' << r.selected << ',' << r.retained << ',';
        if (r.acc) out << *r.acc;
        out << ',';
        if (r.fpr) out << *r.fpr;
        out << '\n';
    }
}

}  // namespace ndf
