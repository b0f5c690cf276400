#include "ndfilter/metrics.hpp"

#include "ndfilter/error.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

namespace ndf {

namespace {

std::optional<double> ratio(long num, long den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

EvalReport EvalReport::from_counts(long tp, long tn, long fp, long fn) {
    EvalReport r;
    r.tp = tp;
    r.tn = tn;
    r.fp = fp;
    r.fn = fn;
    r.acc = ratio(tp + tn, tp + tn + fp + fn);
    r.fpr = ratio(fp, fp + tn);
    r.precision = ratio(tp, tp + fp);
    r.recall = ratio(tp, tp + fn);
    if (r.precision && r.recall && *r.precision + *r.recall > 0)
        r.f1 = 2 * *r.precision * *r.recall / (*r.precision + *r.recall);
    return r;
}

EvalReport evaluate(std::span<const ScoredSequence> decided) {
    long tp = 0, tn = 0, fp = 0, fn = 0;
    for (const auto& s : decided) {
        if (!s.label) continue;
        const bool attack = *s.label == Label::attack;
        const bool rejected = s.decision == Decision::reject;
        if (attack && rejected) ++tp;
        else if (attack) ++fn;
        else if (rejected) ++fp;
        else ++tn;
    }
    return EvalReport::from_counts(tp, tn, fp, fn);
}

std::vector<CurvePoint> rejection_curve(std::span<const ScoredSequence> scored, int steps) {
    if (steps < 1) throw DomainError("rejection_curve: steps must be >= 1");
    const auto order = rank_order(scored);
    const std::size_t n = order.size();

    // normals_rejected[k]: true normals among the k lowest-ranked items.
    std::vector<long> normals_rejected(n + 1, 0);
    long total_normal = 0;
    for (std::size_t k = 1; k <= n; ++k) {
        const auto& s = scored[order[n - k]];
        const bool normal = s.label && *s.label == Label::normal;
        normals_rejected[k] = normals_rejected[k - 1] + (normal ? 1 : 0);
    }
    total_normal = normals_rejected[n];

    std::vector<CurvePoint> out;
    out.reserve(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) {
        const double r = static_cast<double>(k) / steps;
        const std::size_t rejected = rejection_count(r, n);
        const double frr = total_normal == 0 ? 0.0
                                             : static_cast<double>(normals_rejected[rejected]) /
                                                   static_cast<double>(total_normal);
        out.push_back({r, frr});
    }
    return out;
}

double auc(std::span<const double> scores, std::span<const char> positive) {
    if (scores.size() != positive.size()) throw ShapeError("auc: size mismatch");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Mann-Whitney U with midranks for ties.
    double rank_sum = 0;
    long n_pos = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (positive[idx[k]]) {
                rank_sum += midrank;
                ++n_pos;
            }
        i = j;
    }
    const long n_neg = static_cast<long>(scores.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DomainError("auc: need both classes");
    const double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double ratio_auc(std::span<const ScoredSequence> scored) {
    std::vector<double> s;
    std::vector<char> pos;
    for (const auto& x : scored) {
        if (!x.label) continue;
        s.push_back(x.ratio);
        pos.push_back(*x.label == Label::normal ? 1 : 0);
    }
    return auc(s, pos);
}

void write_metrics_header(std::ostream& out) { out << "interval,acc,fpr,precision,recall,f1\n"; }

void write_metrics_row(std::ostream& out, const std::string& interval, const EvalReport& r) {
    const auto cell = [&](const std::optional<double>& v) {
        out << ',';
        if (v) out << *v;
    };
    out << interval;
    cell(r.acc);
    cell(r.fpr);
    cell(r.precision);
    cell(r.recall);
    cell(r.f1);
    out << '\n';
}

void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve) {
    out << "rejection_ratio,false_rejection_rate\n";
    for (const auto& p : curve) out << p.rejection_ratio << ',' << p.false_rejection_rate << '\n';
}

void print_report(std::ostream& out, const EvalReport& r) {
    const auto show = [&](const char* name, const std::optional<double>& v) {
        out << name << ' ';
        if (v)
            out << *v;
        else
            out << "n/a";
        out << '\n';
    };
    out << "tp " << r.tp << "\ntn " << r.tn << "\nfp " << r.fp << "\nfn " << r.fn << '\n';
    show("acc", r.acc);
    show("fpr", r.fpr);
    show("precision", r.precision);
    show("recall", r.recall);
    show("f1", r.f1);
}

}  // namespace ndf
