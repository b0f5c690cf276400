#include "ndfilter/histogram.hpp"

#include "ndfilter/error.hpp"

#include <cmath>

namespace ndf {

HistogramModel::HistogramModel(double lambda) : lambda_(lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw DomainError("histogram smoothing must be finite and >= 0");
}

HistogramModel HistogramModel::fit(std::span<const StaticPair> pairs, double lambda) {
    HistogramModel h(lambda);
    for (const auto& p : pairs) h.update(p);
    return h;
}

void HistogramModel::update(const StaticPair& pair) {
    ++counts_[pair];
    ++total_;
}

double HistogramModel::predict(const StaticPair& pair) const {
    const double denom = static_cast<double>(total_) + lambda_ * static_cast<double>(k_known() + 1);
    if (denom == 0.0) return 0.0;
    return (static_cast<double>(count(pair)) + lambda_) / denom;
}

double HistogramModel::unseen_mass() const {
    const double denom = static_cast<double>(total_) + lambda_ * static_cast<double>(k_known() + 1);
    return denom == 0.0 ? 0.0 : lambda_ / denom;
}

std::uint64_t HistogramModel::count(const StaticPair& pair) const {
    auto it = counts_.find(pair);
    return it == counts_.end() ? 0 : it->second;
}

HistogramModel HistogramModel::from_counts(std::map<StaticPair, std::uint64_t> counts,
                                           double lambda) {
    HistogramModel h(lambda);
    for (const auto& [pair, c] : counts) {
        if (c == 0) continue;
        h.counts_[pair] = c;
        h.total_ += c;
    }
    return h;
}

}  // namespace ndf
