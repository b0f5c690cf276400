#ifndef NDFILTER_ITERATIVE_HPP
#define NDFILTER_ITERATIVE_HPP

#include "ndfilter/sequence_model.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace ndf {

/// Which mixture subset the retain fraction is taken from at each round.
enum class RetainBase {
    mixture,   // top fraction of all of M every round (fixed size)
    retained,  // top fraction of the previous round's retained set (shrinking)
};

RetainBase parse_retain_base(const std::string& text);

struct IterativeConfig {
    double alpha = 0.6;
    double retain_fraction = 0.40;
    int max_iterations = 10;
    int inner_epochs = 2;
    double tolerance = 1e-4;  // stop when the loss improves by less than this, relatively
    std::uint64_t seed = 1;
    RetainBase retain_base = RetainBase::retained;
    bool restart_each_iteration = false;
    bool keep_best = true;  // return the lowest-loss model rather than the last one

    void validate() const;
};

struct IterationRecord {
    int iteration = 0;
    double loss = 0;
    std::size_t selected = 0;  // |Sel_alpha|
    std::size_t retained = 0;  // attack-side size for the next round
    std::optional<double> acc, fpr;  // on true mixture labels when present
};

struct IterativeResult {
    BinaryClassifier model;
    std::vector<IterationRecord> history;
    int best_iteration = 0;  // iteration whose model was returned, 0 if none ran
};

/// Normal-day sequences labeled 0, mixture sequences labeled 1, in that order.
std::vector<double> init_pseudo_labels(std::span<const TokenizedSequence> normal,
                                       std::span<const TokenizedSequence> mixture);

/// ceil(fraction * n) items, at least one when fraction > 0 and n > 0.
std::size_t top_count(double fraction, std::size_t n);

/// Indices of the ceil(fraction*|M|) highest probabilities; ties keep input order.
std::vector<std::size_t> select_top(std::span<const double> probs, double fraction);
std::vector<std::size_t> select_top(const BinaryClassifier& model,
                                    std::span<const TokenizedSequence> mixture, double fraction);

/// The mixed pseudo-label loss on precomputed attack probabilities:
///   -1/|N| sum_N log(1-p) - 1/(a|M|) sum_{Sel_a} log p - 1/((1-a)|M|) sum_{M\Sel_a} log(1-p)
/// with probabilities clamped to [1e-12, 1-1e-12]. An empty sum contributes 0.
double compute_loss(std::span<const double> p_normal, std::span<const double> p_mixture,
                    double alpha);
double compute_loss(const BinaryClassifier& model, std::span<const TokenizedSequence> normal,
                    std::span<const TokenizedSequence> mixture, double alpha);

/// Pseudo-label self-training: train, re-predict the mixture, keep the top
/// retain_fraction as the attack side (the rest join the normal side), repeat.
/// Stops when the loss fails to improve by `tolerance` (relative).
IterativeResult iterate(BinaryClassifier model, std::span<const TokenizedSequence> normal,
                        std::span<const TokenizedSequence> mixture, const IterativeConfig& cfg);

/// Supervised upper bound on true labels (normal-day sequences count as normal).
BinaryClassifier train_full_classifier(BinaryClassifier model,
                                       std::span<const TokenizedSequence> normal,
                                       std::span<const TokenizedSequence> mixture, int epochs,
                                       std::uint64_t seed);

/// Strict threshold: p == threshold is normal.
inline Label classify(double p, double threshold = 0.5) {
    return p > threshold ? Label::attack : Label::normal;
}

void write_history_csv(std::ostream& out, std::span<const IterationRecord> history);

}  // namespace ndf

#endif
