#ifndef NDFILTER_SEQUENCE_MODEL_HPP
#define NDFILTER_SEQUENCE_MODEL_HPP

#include "ndfilter/lstm.hpp"

#include <span>
#include <vector>

namespace ndf {

using SequenceModel = SequenceModelT<double>;
using BinaryClassifier = BinaryClassifierT<double>;
using SequenceOptimizer = OptimizerState<SequenceModel>;
using ClassifierOptimizer = OptimizerState<BinaryClassifier>;

/// One optimizer step on a batch. Returns the mean loss before the update.
/// Throws NumericError if the loss or any gradient block is non-finite.
double train_step(SequenceModel& model, std::span<const TokenizedSequence* const> batch,
                  SequenceOptimizer& opt);

/// One pass over `data` in batches of model.config.batch_size, order shuffled
/// by `rng`. Returns the step-weighted mean training loss.
double train_epoch(SequenceModel& model, std::span<const TokenizedSequence> data,
                   SequenceOptimizer& opt, Rng& rng);

/// Mean per-step cross-entropy over all non-padding steps of `data`.
double validation_loss(const SequenceModel& model, std::span<const TokenizedSequence> data);

/// Largest relative deviation between the analytic gradient of the mean
/// next-token loss and central finite differences, over every parameter.
double grad_check(const SequenceModel& model, std::span<const TokenizedSequence> batch,
                  double eps = 1e-5);

/// Analytic gradient of the mean next-token loss (no clipping).
SequenceModel loss_gradient(const SequenceModel& model, std::span<const TokenizedSequence> batch);

/// Copies the source embedding into `target` and tags it as the mixture model.
void transfer_embedding(const SequenceModel& source, SequenceModel& target);

// Classifier counterparts.
double train_step(BinaryClassifier& model, std::span<const TokenizedSequence* const> batch,
                  std::span<const double> targets, ClassifierOptimizer& opt);

double train_epoch(BinaryClassifier& model, std::span<const TokenizedSequence> data,
                   std::span<const double> targets, ClassifierOptimizer& opt, Rng& rng);

}  // namespace ndf

#endif
