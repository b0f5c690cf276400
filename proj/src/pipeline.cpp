#include "ndfilter/pipeline.hpp"

#include "ndfilter/error.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

namespace ndf {

namespace {

enum Stream : std::uint64_t { kNSplit = 11, kNEpochs = 12, kDSplit = 21, kDEpochs = 22 };

void check_fractions(double train, double val, const char* what) {
    if (!(train > 0.0 && train < 1.0) || !(val > 0.0 && val < 1.0) || train + val > 1.0 + 1e-12)
        throw DomainError(std::string(what) + " split fractions must lie in (0,1) and sum to <= 1");
}

template <typename T>
std::vector<T> pick(std::span<const T> items, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(items[i]);
    return out;
}

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    return out;
}

}  // namespace

void RunConfig::validate() const {
    ingest.validate();
    n_model.validate();
    d_model.validate();
    scoring.validate();
    check_fractions(n_train_fraction, n_val_fraction, "N");
    check_fractions(d_train_fraction, d_val_fraction, "D");
    if (d_epochs_per_interval < 0 || d_epoch_cap < 0) throw DomainError("epoch counts must be >= 0");
    if (!(hist_lambda >= 0.0)) throw DomainError("hist_lambda must be >= 0");
}

void apply_preset(RunConfig& cfg, const std::string& name) {
    if (name == "cicids") {
        cfg.d_epochs_per_interval = 5;
        cfg.d_epoch_cap = 10;
    } else if (name == "caida") {
        cfg.d_epochs_per_interval = 1;
        cfg.d_epoch_cap = 10;
    } else {
        throw DomainError("unknown preset: " + name);
    }
}

Split split_indices(std::size_t n, double train_fraction, double val_fraction, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(idx));
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
    if (n > 0 && n_train == 0) n_train = 1;
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);
    Split s;
    s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                 idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    return s;
}

std::vector<TokenizedSequence> tokenize_records(const std::vector<PacketRecord>& records,
                                                const IngestConfig& ingest,
                                                const HasherConfig& hasher) {
    return encode_all(build_sequences(records, ingest, 0), hasher);
}

PretrainResult pretrain_n(std::span<const TokenizedSequence> normal, const RunConfig& cfg,
                          const HasherConfig& hasher) {
    cfg.validate();
    hasher.validate();
    if (cfg.n_model.m_vocab != hasher.m_vocab)
        throw DataError("vocabulary-config mismatch: model m_vocab " + std::to_string(cfg.n_model.m_vocab) +
                        " vs hasher m_vocab " + std::to_string(hasher.m_vocab));
    if (normal.empty()) throw DataError("pretrain_n: no normal sequences");

    const auto split = split_indices(normal.size(), cfg.n_train_fraction, cfg.n_val_fraction,
                                     Rng::mix(cfg.seed, kNSplit));
    const auto train = pick(normal, split.train);
    const auto val = pick(normal, split.val);

    PretrainResult res;
    auto model = SequenceModel::random(cfg.n_model, Role::N);
    auto opt = SequenceOptimizer::for_model(model);
    Rng rng(Rng::mix(cfg.seed, kNEpochs));
    for (int e = 0; e < cfg.n_model.epochs; ++e) {
        res.train_loss.push_back(train_epoch(model, train, opt, rng));
        if (!val.empty()) res.val_loss.push_back(validation_loss(model, val));
    }

    std::vector<StaticPair> pairs;
    for (const auto& s : train) pairs.push_back(s.static_pair);
    res.checkpoint = ModelCheckpoint{std::move(model), hasher, HistogramModel::fit(pairs, cfg.hist_lambda),
                                     std::move(opt)};
    return res;
}

PretrainResult pretrain_n(const std::vector<PacketRecord>& normal_records, const RunConfig& cfg,
                          const HasherConfig& hasher) {
    const auto seqs = tokenize_records(normal_records, cfg.ingest, hasher);
    return pretrain_n(std::span<const TokenizedSequence>(seqs), cfg, hasher);
}

OnlineResult online_run(const std::vector<std::vector<TokenizedSequence>>& intervals,
                        const ModelCheckpoint& n, const RunConfig& cfg) {
    cfg.validate();
    if (!n.histogram) throw DataError("N checkpoint carries no histogram");
    if (cfg.d_model.m_vocab != n.hasher.m_vocab || n.model.config.m_vocab != n.hasher.m_vocab)
        throw DataError("vocabulary-config mismatch between the N checkpoint and the D model");

    const auto fresh_d = [&] {
        auto d = SequenceModel::random(cfg.d_model, Role::D);
        if (cfg.transfer_embedding) transfer_embedding(n.model, d);
        return d;
    };

    OnlineResult res;
    res.d = ModelCheckpoint{fresh_d(), n.hasher, HistogramModel(cfg.hist_lambda), std::nullopt};
    res.d_embedding_at_start = res.d.model.backbone.embedding;
    auto opt = SequenceOptimizer::for_model(res.d.model);
    Rng rng(Rng::mix(cfg.seed, kDEpochs));
    const double interval_seconds = cfg.ingest.interval_minutes * 60.0;
    const auto wall_start = std::chrono::steady_clock::now();
    int epochs_used = 0;

    for (std::size_t i = 0; i < intervals.size(); ++i) {
        if (cfg.realtime && std::isfinite(interval_seconds))
            std::this_thread::sleep_until(wall_start + std::chrono::duration<double>(interval_seconds * static_cast<double>(i)));

        const auto& seqs = intervals[i];
        IntervalResult ir;
        ir.index = static_cast<int>(i);
        if (cfg.restart_d_each_interval && i > 0) {
            res.d.model = fresh_d();
            res.d.histogram = HistogramModel(cfg.hist_lambda);
            opt = SequenceOptimizer::for_model(res.d.model);
        }
        if (seqs.empty()) {
            res.intervals.push_back(std::move(ir));
            continue;
        }

        const auto score = [&] {
            ir.scored = score_sequences(n.model, *n.histogram, res.d.model, *res.d.histogram, seqs, cfg.scoring);
            rank_and_threshold(ir.scored, cfg.scoring.rejection_ratio);
            ir.blacklist = build_blacklist(ir.scored, cfg.scoring.aggregation);
            const bool labeled = std::all_of(seqs.begin(), seqs.end(), [](const auto& s) { return s.label.has_value(); });
            if (labeled) ir.report = evaluate(ir.scored);
        };
        if (cfg.lagged_scoring) score();

        const auto split = split_indices(seqs.size(), cfg.d_train_fraction, cfg.d_val_fraction,
                                         Rng::mix(cfg.seed, kDSplit + 1000 * (i + 1)));
        const auto train = pick(std::span<const TokenizedSequence>(seqs), split.train);
        const auto val = pick(std::span<const TokenizedSequence>(seqs), split.val);

        int epochs = cfg.d_epochs_per_interval;
        if (cfg.d_epoch_cap > 0) epochs = std::min(epochs, cfg.d_epoch_cap - epochs_used);
        const auto t0 = std::chrono::steady_clock::now();
        for (int e = 0; e < epochs; ++e) {
            train_epoch(res.d.model, train, opt, rng);
            if (!val.empty()) ir.d_val_loss.push_back(validation_loss(res.d.model, val));
        }
        for (const auto& s : train) res.d.histogram->update(s.static_pair);
        ir.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        ir.over_budget = ir.train_seconds > interval_seconds;
        ir.d_epochs = epochs;
        epochs_used += epochs;

        if (!cfg.lagged_scoring) score();
        res.intervals.push_back(std::move(ir));
    }
    res.d.optimizer = std::move(opt);
    return res;
}

OnlineResult online_run(const std::vector<PacketRecord>& mixture, const ModelCheckpoint& n,
                        const RunConfig& cfg) {
    cfg.validate();
    const auto stream = split_intervals(mixture, cfg.ingest);
    std::vector<std::vector<TokenizedSequence>> intervals;
    for (std::size_t i = 0; i < stream.intervals.size(); ++i)
        intervals.push_back(
            encode_all(build_sequences(stream.intervals[i], cfg.ingest, static_cast<int>(i)), n.hasher));
    return online_run(intervals, n, cfg);
}

void write_online_outputs(const OnlineResult& result, const std::string& out_dir) {
    namespace fs = std::filesystem;
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    std::vector<ScoredSequence> all;
    auto metrics = open_out(dir / "metrics.csv");
    write_metrics_header(metrics);
    for (const auto& ir : result.intervals) {
        const auto tag = std::to_string(ir.index);
        auto scored = open_out(dir / ("interval_" + tag + ".csv"));
        write_scored_csv(scored, ir.scored);
        auto bl = open_out(dir / ("blacklist_" + tag + ".txt"));
        for (const auto& ip : ir.blacklist) bl << ip << '\n';
        if (ir.report) write_metrics_row(metrics, tag, *ir.report);
        all.insert(all.end(), ir.scored.begin(), ir.scored.end());
    }
    const bool labeled = !all.empty() &&
                         std::all_of(all.begin(), all.end(), [](const auto& s) { return s.label.has_value(); });
    if (labeled) write_metrics_row(metrics, "all", evaluate(all));
    auto all_out = open_out(dir / "all_scored.csv");
    write_scored_csv(all_out, all);
}

std::vector<ScoredSequence> score_n_only(const ModelCheckpoint& n,
                                         std::span<const TokenizedSequence> seqs, double prob_floor) {
    if (!n.histogram) throw DataError("N checkpoint carries no histogram");
    const auto pn = score_all(n.model, *n.histogram, seqs, prob_floor);
    std::vector<ScoredSequence> out(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        out[i].flow_key = seqs[i].flow_key;
        out[i].interval_index = seqs[i].interval_index;
        out[i].log_pn = pn[i];
        out[i].ratio = pn[i];
        out[i].label = seqs[i].label;
    }
    return out;
}

std::vector<ScoredSequence> score_classifier(const BinaryClassifier& model,
                                             std::span<const TokenizedSequence> seqs) {
    const auto p = predict_proba(model, seqs);
    std::vector<ScoredSequence> out(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        out[i].flow_key = seqs[i].flow_key;
        out[i].interval_index = seqs[i].interval_index;
        out[i].ratio = -p[i];
        out[i].posterior = p[i];
        out[i].label = seqs[i].label;
    }
    return out;
}

}  // namespace ndf
