// Command-line front end: synthetic data, ingest, training, online filtering
// and evaluation. Exit status 0 on success, 1 on usage errors, 2 on data or
// model errors.

#include "ndfilter/checkpoint.hpp"
#include "ndfilter/error.hpp"
#include "ndfilter/iterative.hpp"
#include "ndfilter/metrics.hpp"
#include "ndfilter/pipeline.hpp"
#include "ndfilter/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

namespace fs = std::filesystem;
using namespace ndf;

namespace {

enum Salt : std::uint64_t { kNModel = 101, kDModel = 102, kClassifier = 103 };

struct Params {
    std::uint64_t seed = 1;
    std::string out_dir = ".";
    HasherConfig hasher;
    IngestConfig ingest;
    std::string interval = "1";
    ModelConfig model;
    std::string optimizer = "adam";
    RunConfig run;
    std::string aggregation = "mean";
    std::string preset;
    IterativeConfig iter;
    std::string retain_base = "retained";
    int classifier_epochs = 4;
    SynthConfig synth;
};

// Long option spelled both with dashes and with the underscore field name,
// so config files can use the field names directly.
std::string names(const std::string& field) {
    std::string dashed = field;
    std::replace(dashed.begin(), dashed.end(), '_', '-');
    return dashed == field ? "--" + field : "--" + dashed + ",--" + field;
}

void add_options(CLI::App& app, Params& p) {
    app.add_option("--seed", p.seed, "Master seed")->capture_default_str();
    app.add_option("--out-dir,--out_dir", p.out_dir, "Output directory")->capture_default_str();

    auto g = [&](const std::string& field, auto& target, const std::string& help) {
        app.add_option(names(field), target, help)->capture_default_str();
    };
    auto flag = [&](const std::string& field, bool& target, const std::string& help) {
        app.add_flag(names(field) + "{true}", target, help)->capture_default_str();
    };

    g("m_vocab", p.hasher.m_vocab, "Hash buckets including PAD");
    g("hash_seed", p.hasher.hash_seed, "Token hash seed");
    g("time_bin_ms", p.hasher.time_bin_ms, "Inter-arrival bin width (ms)");
    g("len_bin", p.hasher.len_bin, "Length and window bin width");

    g("seq_len", p.ingest.seq_len, "Sequence length T");
    g("epsilon", p.ingest.epsilon, "Minimum packets per source IP per interval");
    g("interval_minutes", p.interval, "Interval length in minutes, or inf");

    g("embed_dim", p.model.embed_dim, "Embedding width");
    g("hidden_dim", p.model.hidden_dim, "LSTM hidden width");
    g("layers", p.model.layers, "LSTM layers");
    g("learning_rate", p.model.learning_rate, "Learning rate");
    g("batch_size", p.model.batch_size, "Mini-batch size");
    g("epochs", p.model.epochs, "Epochs for the normal-day model");
    g("optimizer", p.optimizer, "adam or sgd");
    g("clip_norm", p.model.clip_norm, "Global gradient-norm clip, 0 disables");

    g("n_train_fraction", p.run.n_train_fraction, "Normal-day training share");
    g("n_val_fraction", p.run.n_val_fraction, "Normal-day validation share");
    g("d_train_fraction", p.run.d_train_fraction, "Per-interval training share for D");
    g("d_val_fraction", p.run.d_val_fraction, "Per-interval validation share for D");
    g("d_epochs_per_interval", p.run.d_epochs_per_interval, "D epochs per interval");
    g("d_epoch_cap", p.run.d_epoch_cap, "Total D epochs across intervals, 0 = no cap");
    g("hist_lambda", p.run.hist_lambda, "Histogram smoothing");
    flag("transfer_embedding", p.run.transfer_embedding, "Start D from N's embedding");
    flag("restart_d_each_interval", p.run.restart_d_each_interval, "Fresh D every interval");
    flag("lagged_scoring", p.run.lagged_scoring, "Score each interval before D trains on it");
    flag("realtime", p.run.realtime, "Pace intervals against the wall clock");
    g("preset", p.preset, "Epoch preset: cicids or caida");

    g("alpha", p.run.scoring.alpha, "Estimated attack share of the mixture");
    g("rejection_ratio", p.run.scoring.rejection_ratio, "Share of lowest-ranked sequences rejected");
    g("prob_floor", p.run.scoring.prob_floor, "Probability floor for scoring");
    g("aggregation", p.aggregation, "Blacklist aggregation: mean, min or median");

    g("retain_fraction", p.iter.retain_fraction, "Attack-side share kept each round");
    g("max_iterations", p.iter.max_iterations, "Iteration limit");
    g("inner_epochs", p.iter.inner_epochs, "Classifier epochs per iteration");
    g("tolerance", p.iter.tolerance, "Relative loss improvement to continue");
    g("retain_base", p.retain_base, "retained or mixture");
    flag("restart_each_iteration", p.iter.restart_each_iteration, "Retrain from scratch each round");
    flag("keep_best", p.iter.keep_best, "Return the lowest-loss classifier");
    g("classifier_epochs", p.classifier_epochs, "Epochs for the full classifier");

    g("n_normal", p.synth.n_normal, "Synthetic normal-day sequences");
    g("n_mixture", p.synth.n_mixture, "Synthetic mixture sequences");
    g("n_test", p.synth.n_test, "Synthetic held-out mixture sequences");
    g("divergence", p.synth.divergence, "Total-variation distance between class profiles");
    g("stickiness", p.synth.stickiness, "Markov successor probability");
    g("shared_templates", p.synth.shared_templates, "Templates common to both classes");
    g("class_templates", p.synth.class_templates, "Templates exclusive to each class");
    g("shared_statics", p.synth.shared_statics, "Static pairs common to both classes");
    g("class_statics", p.synth.class_statics, "Static pairs exclusive to each class");
    g("n_intervals", p.synth.n_intervals, "Synthetic intervals");
    g("packet_gap_s", p.synth.packet_gap_s, "Synthetic packet spacing in seconds");
}

// Folds the flat parameters into the per-module configs.
void finalize(Params& p) {
    p.ingest.interval_minutes = std::stod(p.interval);
    p.model.optimizer = parse_optimizer(p.optimizer);
    p.model.m_vocab = p.hasher.m_vocab;
    p.model.seed = Rng::mix(p.seed, kNModel);
    p.run.ingest = p.ingest;
    p.run.n_model = p.model;
    p.run.d_model = p.model;
    p.run.d_model.seed = Rng::mix(p.seed, kDModel);
    p.run.scoring.aggregation = parse_aggregation(p.aggregation);
    p.run.seed = p.seed;
    if (!p.preset.empty()) apply_preset(p.run, p.preset);
    p.iter.alpha = p.run.scoring.alpha;
    p.iter.seed = p.seed;
    p.iter.retain_base = parse_retain_base(p.retain_base);
    p.synth.seed = p.seed;
    p.synth.alpha = p.run.scoring.alpha;
    p.synth.seq_len = p.ingest.seq_len;
    if (std::isfinite(p.ingest.interval_minutes)) p.synth.interval_minutes = p.ingest.interval_minutes;
    p.hasher.validate();
    p.run.validate();
    p.iter.validate();
}

fs::path out_path(const Params& p, const std::string& name) {
    fs::create_directories(p.out_dir);
    return fs::path(p.out_dir) / name;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

std::vector<ScoredSequence> read_scored_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return read_scored_csv(in);
}

ModelConfig classifier_config(const Params& p) {
    ModelConfig c = p.model;
    c.seed = Rng::mix(p.seed, kClassifier);
    return c;
}

std::vector<TokenizedSequence> load_tokens(const Params& p, const std::string& path) {
    return tokenize_records(read_packets_file(path), p.ingest, p.hasher);
}

// Scores `target` with the classifier, decides at p > 0.5 and writes the CSV.
void finish_classifier(const Params& p, const BinaryClassifier& model,
                       const std::vector<TokenizedSequence>& target, const std::string& stem) {
    save_checkpoint(out_path(p, stem + ".ckpt").string(), ClassifierCheckpoint{model, p.hasher});
    auto scored = score_classifier(model, target);
    threshold_posterior(scored);
    auto out = open_out(out_path(p, stem + "_scored.csv"));
    write_scored_csv(out, scored);
    if (!scored.empty() && std::all_of(scored.begin(), scored.end(), [](const auto& s) { return s.label.has_value(); }))
        print_report(std::cout, evaluate(scored));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Application-layer DDoS filter driven by a normal-over-mixture likelihood ratio"};
    app.set_config("--config", "", "Flat key=value parameter file");
    app.require_subcommand(1);
    app.fallthrough();
    Params p;
    add_options(app, p);

    std::string input, input2, test_file, n_ckpt_path;
    bool rerank = false;

    auto* synth = app.add_subcommand("synth", "Write normal.jsonl and mixture.jsonl (and test.jsonl)");
    auto* ingest = app.add_subcommand("ingest", "Tokenize a packet file into sequences.jsonl");
    ingest->add_option("input", input, "Packet JSONL")->required();
    auto* train_n = app.add_subcommand("train-n", "Train the normal-day model and histogram");
    train_n->add_option("normal", input, "Normal-day packet JSONL")->required();
    auto* online = app.add_subcommand("online", "Run the interval protocol over a mixture");
    online->add_option("mixture", input, "Mixture packet JSONL")->required();
    online->add_option("--n-ckpt,--n_ckpt", n_ckpt_path, "Normal-day checkpoint")->required();
    auto* iterate_cmd = app.add_subcommand("iterate", "Iterative pseudo-label classifier");
    auto* full = app.add_subcommand("full-classifier", "Supervised classifier on true labels");
    for (auto* sub : {iterate_cmd, full}) {
        sub->add_option("normal", input, "Normal-day packet JSONL")->required();
        sub->add_option("mixture", input2, "Mixture packet JSONL")->required();
        sub->add_option("--test", test_file, "Labeled packet JSONL to score (default: the mixture)");
    }
    auto* eval = app.add_subcommand("eval", "Metrics from a scored CSV");
    eval->add_option("scored", input, "Scored CSV")->required();
    eval->add_flag("--rerank", rerank, "Re-decide by rank at --rejection-ratio before evaluating");
    auto* curve = app.add_subcommand("curve", "Rejection curve from a scored CSV");
    curve->add_option("scored", input, "Scored CSV")->required();
    auto* inspect = app.add_subcommand("inspect-checkpoint", "Print a checkpoint header");
    inspect->add_option("checkpoint", input, "Checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code == 0) return 0;
        std::cerr << app.help();
        return 1;
    }

    try {
        finalize(p);

        if (synth->parsed()) {
            const auto data = synth_generate(p.synth, p.hasher);
            auto n = open_out(out_path(p, "normal.jsonl"));
            write_packets(n, data.normal);
            auto m = open_out(out_path(p, "mixture.jsonl"));
            write_packets(m, data.mixture);
            if (!data.test.empty()) {
                auto t = open_out(out_path(p, "test.jsonl"));
                write_packets(t, data.test);
            }
        } else if (ingest->parsed()) {
            const auto stream = split_intervals(read_packets_file(input), p.ingest);
            auto out = open_out(out_path(p, "sequences.jsonl"));
            for (std::size_t i = 0; i < stream.intervals.size(); ++i) {
                for (const auto& s : encode_all(build_sequences(stream.intervals[i], p.ingest, static_cast<int>(i)), p.hasher)) {
                    nlohmann::ordered_json j;
                    j["interval"] = s.interval_index;
                    j["src_ip"] = s.flow_key.first;
                    j["dst_ip"] = s.flow_key.second;
                    j["extra_info"] = s.static_pair.first;
                    j["protocols"] = s.static_pair.second;
                    j["true_len"] = s.true_len;
                    j["label"] = s.label ? nlohmann::ordered_json(std::string(to_string(*s.label))) : nullptr;
                    j["tokens"] = std::vector<TokenId>(s.tokens.begin(), s.tokens.begin() + s.true_len);
                    out << j.dump() << '\n';
                }
            }
        } else if (train_n->parsed()) {
            const auto res = pretrain_n(read_packets_file(input), p.run, p.hasher);
            save_checkpoint(out_path(p, "n.ckpt").string(), res.checkpoint);
            auto hist = open_out(out_path(p, "n_history.csv"));
            hist << "epoch,train_loss,val_loss\n";
            for (std::size_t e = 0; e < res.train_loss.size(); ++e) {
                hist << e + 1 << ',' << res.train_loss[e] << ',';
                if (e < res.val_loss.size()) hist << res.val_loss[e];
                hist << '\n';
            }
            if (!res.val_loss.empty())
                std::cout << "final validation loss " << res.val_loss.back() << " (uniform "
                          << std::log(static_cast<double>(p.hasher.m_vocab)) << ")\n";
        } else if (online->parsed()) {
            if (!fs::exists(n_ckpt_path)) throw DataError("missing checkpoint: " + n_ckpt_path);
            const auto n = load_model_checkpoint(n_ckpt_path);
            if (!(n.hasher == p.hasher))
                throw DataError("vocabulary-config mismatch between the N checkpoint and the requested hasher");
            const auto res = online_run(read_packets_file(input), n, p.run);
            write_online_outputs(res, p.out_dir);
            save_checkpoint(out_path(p, "d.ckpt").string(), res.d);
            for (const auto& ir : res.intervals) {
                if (ir.over_budget)
                    std::cerr << "warning: interval " << ir.index << " training took " << ir.train_seconds
                              << " s, longer than the interval\n";
                std::cout << "interval " << ir.index << ": " << ir.scored.size() << " sequences, "
                          << ir.blacklist.size() << " blacklisted";
                if (ir.report && ir.report->fpr) std::cout << ", fpr " << *ir.report->fpr;
                if (ir.report && ir.report->acc) std::cout << ", acc " << *ir.report->acc;
                std::cout << '\n';
            }
        } else if (iterate_cmd->parsed() || full->parsed()) {
            const auto normal = load_tokens(p, input);
            const auto mixture = load_tokens(p, input2);
            const auto target = test_file.empty() ? mixture : load_tokens(p, test_file);
            const auto init = BinaryClassifier::random(classifier_config(p));
            if (iterate_cmd->parsed()) {
                const auto res = iterate(init, normal, mixture, p.iter);
                auto hist = open_out(out_path(p, "iteration_history.csv"));
                write_history_csv(hist, res.history);
                finish_classifier(p, res.model, target, "iterative");
            } else {
                const auto model = train_full_classifier(init, normal, mixture, p.classifier_epochs,
                                                         Rng::mix(p.seed, kClassifier));
                finish_classifier(p, model, target, "full");
            }
        } else if (eval->parsed()) {
            auto scored = read_scored_file(input);
            if (rerank) rank_and_threshold(scored, p.run.scoring.rejection_ratio);
            print_report(std::cout, evaluate(scored));
        } else if (curve->parsed()) {
            const auto scored = read_scored_file(input);
            auto out = open_out(out_path(p, "curve.csv"));
            write_curve_csv(out, rejection_curve(scored));
        } else if (inspect->parsed()) {
            std::cout << read_checkpoint_header(read_file_bytes(input)).dump(2) << '\n';
        }
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: bad numeric value: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
