#ifndef NDFILTER_METRICS_HPP
#define NDFILTER_METRICS_HPP

#include "ndfilter/scoring.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace ndf {

/// Confusion counts with "attack" as the positive class. Ratios whose
/// denominator is zero are left empty.
struct EvalReport {
    long tp = 0, tn = 0, fp = 0, fn = 0;
    std::optional<double> acc, fpr, precision, recall, f1;

    static EvalReport from_counts(long tp, long tn, long fp, long fn);
};

/// Rejected = predicted attack. Sequences without a label are ignored.
EvalReport evaluate(std::span<const ScoredSequence> decided);

struct CurvePoint {
    double rejection_ratio;
    double false_rejection_rate;  // share of true-normal sequences rejected
};

/// Threshold sweep at ratios k/steps, k = 0..steps, from one ranking.
std::vector<CurvePoint> rejection_curve(std::span<const ScoredSequence> scored, int steps = 100);

/// Probability that a random positive scores above a random negative
/// (ties count one half).
double auc(std::span<const double> scores, std::span<const char> positive);

/// AUC of the ratio for telling normal (high) from attack (low).
double ratio_auc(std::span<const ScoredSequence> scored);

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const std::string& interval, const EvalReport& r);
void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve);
void print_report(std::ostream& out, const EvalReport& r);

}  // namespace ndf

#endif
