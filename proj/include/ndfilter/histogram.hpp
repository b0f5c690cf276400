#ifndef NDFILTER_HISTOGRAM_HPP
#define NDFILTER_HISTOGRAM_HPP

#include "ndfilter/ingest.hpp"

#include <cstdint>
#include <map>
#include <span>

namespace ndf {

/// Frequency model over (extra_info, protocols) pairs with additive smoothing
/// and one pooled pseudo-bucket for every unseen pair:
///
///     p(pair) = (count(pair) + lambda) / (total + lambda * (k + 1))
///
/// where k is the number of distinct observed pairs. With lambda = 0 this is
/// the plain relative frequency.
class HistogramModel {
public:
    explicit HistogramModel(double lambda = 1.0);

    static HistogramModel fit(std::span<const StaticPair> pairs, double lambda);

    void update(const StaticPair& pair);
    double predict(const StaticPair& pair) const;

    /// Probability assigned to each individual unseen pair.
    double unseen_mass() const;

    std::uint64_t count(const StaticPair& pair) const;
    std::uint64_t total() const { return total_; }
    std::size_t k_known() const { return counts_.size(); }
    double lambda() const { return lambda_; }
    const std::map<StaticPair, std::uint64_t>& counts() const { return counts_; }

    /// Rebuild from serialized counts.
    static HistogramModel from_counts(std::map<StaticPair, std::uint64_t> counts, double lambda);

    bool operator==(const HistogramModel&) const = default;

private:
    std::map<StaticPair, std::uint64_t> counts_;
    std::uint64_t total_ = 0;
    double lambda_;
};

}  // namespace ndf

#endif
