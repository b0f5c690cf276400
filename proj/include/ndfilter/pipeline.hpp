#ifndef NDFILTER_PIPELINE_HPP
#define NDFILTER_PIPELINE_HPP

#include "ndfilter/checkpoint.hpp"
#include "ndfilter/metrics.hpp"
#include "ndfilter/scoring.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ndf {

struct RunConfig {
    IngestConfig ingest;  // interval_minutes lives here; infinity = one offline interval
    ModelConfig n_model;
    ModelConfig d_model;
    ScoringConfig scoring;
    double n_train_fraction = 0.8;
    double n_val_fraction = 0.2;
    double d_train_fraction = 0.9;
    double d_val_fraction = 0.1;
    int d_epochs_per_interval = 5;
    int d_epoch_cap = 0;  // total D epochs across intervals, 0 = no cap
    double hist_lambda = 1.0;
    bool transfer_embedding = true;
    bool restart_d_each_interval = false;
    bool lagged_scoring = false;  // score each interval before D trains on it
    bool realtime = false;  // pace intervals against the wall clock
    std::uint64_t seed = 1;

    void validate() const;
};

/// Epoch presets: "cicids" (5 epochs per interval, 10 in total) and
/// "caida" (1 per interval, 10 in total).
void apply_preset(RunConfig& cfg, const std::string& name);

/// Deterministic train/validation split of `n` items.
struct Split {
    std::vector<std::size_t> train, val;
};
Split split_indices(std::size_t n, double train_fraction, double val_fraction, std::uint64_t seed);

struct PretrainResult {
    ModelCheckpoint checkpoint;  // N model, histogram and optimizer state
    std::vector<double> train_loss, val_loss;  // one per epoch; val empty when no validation data
};

/// Trains the normal-day model and histogram on the training split.
PretrainResult pretrain_n(std::span<const TokenizedSequence> normal, const RunConfig& cfg,
                          const HasherConfig& hasher);
PretrainResult pretrain_n(const std::vector<PacketRecord>& normal_records, const RunConfig& cfg,
                          const HasherConfig& hasher);

struct IntervalResult {
    int index = 0;
    std::vector<ScoredSequence> scored;
    std::vector<std::string> blacklist;
    std::optional<EvalReport> report;  // present when every sequence is labeled
    std::vector<double> d_val_loss;
    int d_epochs = 0;
    double train_seconds = 0;
    bool over_budget = false;  // training took longer than the interval itself
};

struct OnlineResult {
    std::vector<IntervalResult> intervals;
    ModelCheckpoint d;
    Mat<double> d_embedding_at_start;
};

/// Online protocol: for each interval, continue training D on that interval's
/// sequences, then score them against N, decide by rank-and-threshold and
/// recompute the blacklist. Interval i is scored by D trained through i, or
/// through i-1 with `lagged_scoring`.
OnlineResult online_run(const std::vector<PacketRecord>& mixture, const ModelCheckpoint& n,
                        const RunConfig& cfg);

/// Same protocol on already tokenized intervals.
OnlineResult online_run(const std::vector<std::vector<TokenizedSequence>>& intervals,
                        const ModelCheckpoint& n, const RunConfig& cfg);

/// Writes interval_<i>.csv, blacklist_<i>.txt, metrics.csv and all_scored.csv.
void write_online_outputs(const OnlineResult& result, const std::string& out_dir);

/// Anomaly baseline: ratio = log P_n alone.
std::vector<ScoredSequence> score_n_only(const ModelCheckpoint& n,
                                         std::span<const TokenizedSequence> seqs, double prob_floor);

/// Classifier baseline: ratio = -P(attack), posterior = P(attack).
std::vector<ScoredSequence> score_classifier(const BinaryClassifier& model,
                                             std::span<const TokenizedSequence> seqs);

/// Ingest plus hashing for a whole file's records as one batch (interval 0).
std::vector<TokenizedSequence> tokenize_records(const std::vector<PacketRecord>& records,
                                                const IngestConfig& ingest,
                                                const HasherConfig& hasher);

}  // namespace ndf

#endif
