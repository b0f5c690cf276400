#ifndef NDFILTER_SCORING_HPP
#define NDFILTER_SCORING_HPP

#include "ndfilter/histogram.hpp"
#include "ndfilter/sequence_model.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ndf {

enum class Decision { accept, reject };
enum class Aggregation { mean, min, median };

std::string_view to_string(Decision d);
Aggregation parse_aggregation(const std::string& text);

struct ScoringConfig {
    double alpha = 0.6;
    double rejection_ratio = 0.5;
    double prob_floor = 1e-12;
    Aggregation aggregation = Aggregation::mean;

    void validate() const;
};

struct ScoredSequence {
    FlowKey flow_key;
    int interval_index = 0;
    double log_pn = 0;
    double log_pd = 0;
    double ratio = 0;      // log_pn - log_pd; higher is more likely normal
    double posterior = 0;  // attack posterior
    Decision decision = Decision::accept;
    std::optional<Label> label;
};

/// Normal-side log-likelihood: sequence model log-probability plus the
/// floored log histogram probability of the static pair.
double score_n(const SequenceModel& n_model, const HistogramModel& n_hist,
               const TokenizedSequence& seq, double prob_floor = 1e-12);

/// Mixture-side counterpart of score_n.
double score_d(const SequenceModel& d_model, const HistogramModel& d_hist,
               const TokenizedSequence& seq, double prob_floor = 1e-12);

/// Batched score_n/score_d (identical values, one forward pass per batch).
std::vector<double> score_all(const SequenceModel& model, const HistogramModel& hist,
                              std::span<const TokenizedSequence> seqs, double prob_floor = 1e-12);

inline double nd_ratio(double log_pn, double log_pd) { return log_pn - log_pd; }

/// P(attack | observed in mixture) = 1 / (1 + (1-alpha)/alpha * Pn/Pd),
/// evaluated in log space.
double attack_posterior(double log_pn, double log_pd, double alpha);

/// Builds scored records for every sequence from both models.
std::vector<ScoredSequence> score_sequences(const SequenceModel& n_model,
                                            const HistogramModel& n_hist,
                                            const SequenceModel& d_model,
                                            const HistogramModel& d_hist,
                                            std::span<const TokenizedSequence> seqs,
                                            const ScoringConfig& cfg);

/// Number of items rejected at a given ratio: floor(ratio * n), robust to
/// representation error in `ratio`.
std::size_t rejection_count(double rejection_ratio, std::size_t n);

/// Order from highest to lowest ratio; ties by flow key then input position.
std::vector<std::size_t> rank_order(std::span<const ScoredSequence> scored);

/// Marks the lowest floor(rejection_ratio * n) items as rejected.
void rank_and_threshold(std::span<ScoredSequence> scored, double rejection_ratio);

/// Alternative rule: reject when the posterior exceeds 0.5.
void threshold_posterior(std::span<ScoredSequence> scored, double threshold = 0.5);

/// Source IPs whose aggregated ratio falls below the lowest accepted ratio.
/// Sorted and deduplicated.
std::vector<std::string> build_blacklist(std::span<const ScoredSequence> decided,
                                         Aggregation aggregation = Aggregation::mean);

void write_scored_csv(std::ostream& out, std::span<const ScoredSequence> scored, bool header = true);
std::vector<ScoredSequence> read_scored_csv(std::istream& in);

}  // namespace ndf

#endif
