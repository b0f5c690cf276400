// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "ndfilter/checkpoint.hpp"
#include "ndfilter/iterative.hpp"
#include "ndfilter/pipeline.hpp"
#include "ndfilter/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

using namespace ndf;

namespace {

// Pinned tolerances.
constexpr double kGradTol = 1e-5;
constexpr double kGradSeconds = 10;
constexpr double kSoftmaxTol = 1e-9;
constexpr double kTelescopeTol = 1e-10;
constexpr double kProbSeconds = 5;
constexpr double kMassTol = 1e-12;
constexpr double kPosteriorTol = 1e-15;
constexpr double kOracleAuc = 0.99;
constexpr double kAucGap = 0.05;
constexpr double kMaxFpr = 0.05;
constexpr double kRejection = 0.6;
constexpr double kE2eSeconds = 300;
constexpr double kIterAcc = 0.90;
constexpr double kIterFpr = 0.10;
constexpr double kOrderBand = 0.02;
constexpr int kSeeds = 5;
constexpr int kNeedSeeds = 4;
constexpr int kTransferMaxEpochs = 15;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void verdict(int id, bool pass, const std::string& what, const std::string& detail) {
    if (!pass) ++failures;
    std::cout << (pass ? "PASS" : "FAIL") << ' ' << id << ' ' << what << ": " << detail << std::endl;
}

std::string fmt(double x, int digits = 4) {
    std::ostringstream s;
    s << std::setprecision(digits) << x;
    return s.str();
}

TokenizedSequence seq_of(std::vector<TokenId> toks, int T) {
    TokenizedSequence s;
    s.true_len = static_cast<int>(toks.size());
    toks.resize(static_cast<std::size_t>(std::max(T, s.true_len)), kPadToken);
    s.tokens = std::move(toks);
    return s;
}

std::vector<TokenizedSequence> random_batch(int n, int vocab, int T, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TokenizedSequence> out;
    for (int i = 0; i < n; ++i) {
        const int len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
        std::vector<TokenId> toks;
        for (int t = 0; t < len; ++t) toks.push_back(1 + static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab - 1))));
        out.push_back(seq_of(std::move(toks), T));
    }
    return out;
}

// ---- 1, 2: model properties ----

void gradient_correctness() {
    ModelConfig c;
    c.m_vocab = 16;
    c.embed_dim = 4;
    c.hidden_dim = 8;
    c.seed = 3;
    const auto t0 = Clock::now();
    const auto m = SequenceModel::random(c);
    const auto batch = random_batch(4, 16, 10, 11);
    const double err = grad_check(m, batch, 1e-5);
    const double secs = since(t0);
    verdict(1, err < kGradTol && secs < kGradSeconds, "gradient correctness",
            "max relative error " + fmt(err) + " (< " + fmt(kGradTol) + "), " + fmt(secs, 3) + " s");
}

void probability_soundness() {
    ModelConfig c;
    c.m_vocab = 32;
    c.embed_dim = 6;
    c.hidden_dim = 8;
    c.seed = 5;
    const auto t0 = Clock::now();
    const auto m = SequenceModel::random(c);
    const auto batch = random_batch(100, 32, 20, 13);
    const auto lps = sequence_log_probs(m, std::span<const TokenizedSequence>(batch), 1e-300, 16);
    double worst_sum = 0, worst_tel = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto P = forward_sequence(m, batch[i]);
        double prod = 1;
        for (Eigen::Index t = 0; t < P.cols(); ++t) worst_sum = std::max(worst_sum, std::abs(P.col(t).sum() - 1.0));
        for (int t = 0; t < batch[i].true_len; ++t) prod *= P(batch[i].tokens[static_cast<std::size_t>(t)], t);
        worst_tel = std::max(worst_tel, std::abs(std::exp(lps[i]) - prod) / prod);
    }
    const double secs = since(t0);
    verdict(2, worst_sum <= kSoftmaxTol && worst_tel <= kTelescopeTol && secs < kProbSeconds,
            "probability soundness",
            "softmax max |sum-1| " + fmt(worst_sum) + ", telescoping max rel " + fmt(worst_tel) + " on 100 sequences, " +
                fmt(secs, 3) + " s");
}

// ---- 3, 4: histogram and posterior ----

void histogram_exactness() {
    const StaticPair A{"a", "eth:ip:tcp"}, B{"b", "eth:ip:udp"};
    const std::vector<StaticPair> hand{A, A, A, B};
    const auto h0 = HistogramModel::fit(hand, 0.0);
    const bool exact = h0.predict(A) == 0.75 && h0.predict(B) == 0.25;

    double worst = 0;
    Rng rng(8);
    for (double lambda : {0.1, 1.0, 3.0}) {
        HistogramModel h(lambda);
        for (int i = 0; i < 2000; ++i) h.update({"e" + std::to_string(rng.below(50)), "p"});
        double mass = h.unseen_mass();
        for (const auto& [p, n] : h.counts()) mass += h.predict(p);
        worst = std::max(worst, std::abs(mass - 1.0));
    }
    verdict(3, exact && worst <= kMassTol, "histogram exactness",
            std::string("lambda 0 gives ") + fmt(h0.predict(A)) + "/" + fmt(h0.predict(B)) +
                ", smoothed mass max |sum-1| " + fmt(worst));
}

void posterior_identities() {
    bool ok = attack_posterior(-3.0, -3.0, 0.5) == 0.5;
    double worst = 0;
    Rng rng(9);
    for (int i = 0; i < 1000; ++i) {
        const double lp = rng.uniform(-50, 0), alpha = rng.uniform(0.01, 0.99);
        worst = std::max(worst, std::abs(attack_posterior(lp, lp, alpha) - alpha) / alpha);
    }
    ok = ok && worst <= kPosteriorTol;

    std::vector<double> pn(1000), pd(1000), ratio(1000);
    for (std::size_t i = 0; i < pn.size(); ++i) {
        pn[i] = rng.uniform(-30, 0);
        pd[i] = rng.uniform(-30, 0);
        ratio[i] = nd_ratio(pn[i], pd[i]);
    }
    std::vector<std::size_t> by_ratio(pn.size());
    std::iota(by_ratio.begin(), by_ratio.end(), std::size_t{0});
    std::stable_sort(by_ratio.begin(), by_ratio.end(), [&](auto a, auto b) { return ratio[a] < ratio[b]; });
    bool invariant = true;
    for (double alpha : {0.1, 0.5, 0.9}) {
        std::vector<double> post(pn.size());
        for (std::size_t i = 0; i < pn.size(); ++i) post[i] = attack_posterior(pn[i], pd[i], alpha);
        std::vector<std::size_t> by_post(pn.size());
        std::iota(by_post.begin(), by_post.end(), std::size_t{0});
        std::stable_sort(by_post.begin(), by_post.end(), [&](auto a, auto b) { return post[a] > post[b]; });
        invariant = invariant && by_post == by_ratio;
    }
    verdict(4, ok && invariant, "posterior identities",
            std::string("P(0.5)=0.5 exact, max rel |P-alpha| ") + fmt(worst) +
                ", ranking identical for alpha 0.1/0.5/0.9: " + (invariant ? "yes" : "no"));
}

// ---- shared synthetic setup for 5, 6, 7, 9 ----

HasherConfig synth_hasher() {
    HasherConfig h;
    h.m_vocab = 256;
    return h;
}

SynthConfig synth_config(std::uint64_t seed) {
    SynthConfig c;
    c.n_normal = 2000;
    c.n_mixture = 2000;
    c.n_test = 2000;
    c.seq_len = 50;
    c.divergence = 0.5;
    c.alpha = 0.6;
    c.interval_minutes = 1;
    c.n_intervals = 5;
    c.seed = seed;
    return c;
}

ModelConfig small_model(std::uint64_t seed, std::uint64_t stream) {
    ModelConfig mc;
    mc.m_vocab = 256;
    mc.embed_dim = 8;
    mc.hidden_dim = 16;
    mc.batch_size = 32;
    mc.epochs = 3;
    mc.seed = Rng::mix(seed, stream);
    return mc;
}

RunConfig run_config(std::uint64_t seed) {
    RunConfig rc;
    rc.seed = seed;
    rc.ingest.seq_len = 50;
    rc.n_model = small_model(seed, 5);
    rc.d_model = small_model(seed, 6);
    rc.d_epochs_per_interval = 5;
    rc.scoring.alpha = 0.6;
    rc.scoring.rejection_ratio = kRejection;
    return rc;
}

std::vector<TokenizedSequence> tokenize_stream(const std::vector<PacketRecord>& records, const IngestConfig& ic,
                                               const HasherConfig& hc) {
    std::vector<TokenizedSequence> out;
    const auto st = split_intervals(records, ic);
    for (std::size_t i = 0; i < st.intervals.size(); ++i)
        for (auto& s : encode_all(build_sequences(st.intervals[i], ic, static_cast<int>(i)), hc)) out.push_back(std::move(s));
    return out;
}

double oracle_auc(const std::vector<PacketRecord>& records, const SynthConfig& sc, const IngestConfig& ic) {
    const auto profiles = make_profiles(sc, synth_hasher());
    const auto st = split_intervals(records, ic);
    std::vector<double> score;
    std::vector<char> normal;
    for (std::size_t i = 0; i < st.intervals.size(); ++i)
        for (const auto& s : build_sequences(st.intervals[i], ic, static_cast<int>(i))) {
            score.push_back(oracle_score(s, profiles, synth_hasher()));
            normal.push_back(*s.label == Label::normal);
        }
    return auc(score, normal);
}

struct SeedRun {
    SynthData data;
    PretrainResult n;
    OnlineResult online;
    std::string fingerprint;  // checkpoints plus all scored rows
};

SeedRun run_pipeline(std::uint64_t seed) {
    SeedRun r;
    const auto rc = run_config(seed);
    r.data = synth_generate(synth_config(seed), synth_hasher());
    r.n = pretrain_n(r.data.normal, rc, synth_hasher());
    r.online = online_run(r.data.mixture, r.n.checkpoint, rc);
    std::ostringstream fp;
    write_packets(fp, r.data.mixture);
    fp << encode_checkpoint(r.n.checkpoint) << encode_checkpoint(r.online.d);
    for (const auto& ir : r.online.intervals) {
        write_scored_csv(fp, ir.scored);
        for (const auto& ip : ir.blacklist) fp << ip << '\n';
    }
    r.fingerprint = fp.str();
    return r;
}

double acc_at_rank(std::vector<ScoredSequence> scored) {
    rank_and_threshold(scored, kRejection);
    return *evaluate(scored).acc;
}

// ---- 8: transfer ----

// Mean next-token loss a model must reach: halfway between the hashed
// unigram entropy and the exact conditional entropy of the generator.
double transfer_threshold(const std::vector<RequestSequence>& raw, const std::vector<TokenizedSequence>& tok,
                          const std::vector<std::size_t>& val, const SynthProfiles& p, const HasherConfig& hc) {
    std::map<TokenId, double> counts;
    double total = 0, cond = 0;
    for (auto i : val) {
        const auto& s = tok[i];
        for (int t = 0; t < s.true_len; ++t) {
            counts[s.tokens[static_cast<std::size_t>(t)]] += 1;
            total += 1;
        }
        const auto& r = raw[i];
        const auto& q = *r.label == Label::normal ? p.q_normal : p.q_attack;
        std::size_t prev = 0;
        for (int t = 0; t < r.true_len; ++t) {
            const auto& row = r.dynamic[static_cast<std::size_t>(t)];
            const double prev_time = t ? r.dynamic[static_cast<std::size_t>(t - 1)].abs_time : row.abs_time;
            const auto j = p.token_index.at(quantize_row(row, prev_time, hc));
            const double pj = t == 0 ? q[j] : (1 - p.stickiness) * q[j] + (p.successor[prev] == j ? p.stickiness : 0.0);
            cond -= std::log(pj);
            prev = j;
        }
    }
    double unigram = 0;
    for (const auto& [k, c] : counts) unigram -= c / total * std::log(c / total);
    return 0.5 * (unigram + cond / total);
}

void transfer_effect() {
    const auto t0 = Clock::now();
    int wins = 0;
    bool bytewise = true;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
        SynthConfig sc;
        sc.n_normal = 800;
        sc.n_mixture = 800;
        sc.seq_len = 50;
        sc.stickiness = 0.9;
        sc.shared_templates = 12;
        sc.class_templates = 6;
        sc.seed = seed;
        HasherConfig hc = synth_hasher();
        const auto data = synth_generate(sc, hc);
        const auto profiles = make_profiles(sc, hc);

        RunConfig rc;
        rc.seed = seed;
        rc.ingest.seq_len = 50;
        ModelConfig mc;
        mc.m_vocab = 256;
        mc.embed_dim = 16;
        mc.hidden_dim = 32;
        mc.batch_size = 32;
        mc.epochs = 20;
        mc.learning_rate = 0.01;
        mc.seed = Rng::mix(seed, 5);
        rc.n_model = mc;
        rc.d_model = mc;
        const auto n = pretrain_n(data.normal, rc, hc);

        const auto raw = build_sequences(data.mixture, rc.ingest, 0);
        const auto tok = encode_all(raw, hc);
        const auto split = split_indices(tok.size(), 0.9, 0.1, seed);
        std::vector<TokenizedSequence> train, val;
        for (auto i : split.train) train.push_back(tok[i]);
        for (auto i : split.val) val.push_back(tok[i]);
        const double threshold = transfer_threshold(raw, tok, split.val, profiles, hc);

        int reached[2] = {kTransferMaxEpochs + 1, kTransferMaxEpochs + 1};
        for (int transfer = 0; transfer < 2; ++transfer) {
            ModelConfig dc = mc;
            dc.seed = Rng::mix(seed, 6);
            auto d = SequenceModel::random(dc, Role::D);
            if (transfer) {
                transfer_embedding(n.checkpoint.model, d);
                const auto& a = d.backbone.embedding;
                const auto& b = n.checkpoint.model.backbone.embedding;
                bytewise = bytewise && a.rows() == b.rows() && a.cols() == b.cols() &&
                           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
            }
            auto opt = SequenceOptimizer::for_model(d);
            Rng rng(Rng::mix(seed, 7));
            for (int e = 1; e <= kTransferMaxEpochs; ++e) {
                train_epoch(d, train, opt, rng);
                if (validation_loss(d, val) <= threshold) {
                    reached[transfer] = e;
                    break;
                }
            }
        }
        const bool win = reached[1] <= kTransferMaxEpochs && reached[1] < reached[0];
        wins += win;
        const auto show = [](int e) { return e > kTransferMaxEpochs ? std::string(">") + std::to_string(kTransferMaxEpochs) : std::to_string(e); };
        detail += " s" + std::to_string(seed) + " " + show(reached[1]) + " vs " + show(reached[0]) + ";";
    }
    verdict(8, wins >= kNeedSeeds && bytewise, "transfer effect",
            "transfer wins " + std::to_string(wins) + "/" + std::to_string(kSeeds) +
                " (epochs to threshold, transferred vs random:" + detail + " bytewise embedding copy: " +
                (bytewise ? "yes" : "no") + "), " + fmt(since(t0), 3) + " s");
}

}  // namespace

int main() {
    std::cout << "running acceptance criteria" << std::endl;
    gradient_correctness();
    probability_soundness();
    histogram_exactness();
    posterior_identities();

    // 5: N-over-D end to end; the runs are reused for 6, 7 and 9.
    const auto t5 = Clock::now();
    std::vector<SeedRun> runs;
    int e2e_ok = 0, fpr_monotone = 0;
    double min_oracle = 1;
    std::string d5;
    for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
        runs.push_back(run_pipeline(seed));
        const auto& r = runs.back();
        const double oauc = oracle_auc(r.data.mixture, synth_config(seed), run_config(seed).ingest);
        min_oracle = std::min(min_oracle, oauc);
        std::vector<ScoredSequence> all;
        for (const auto& ir : r.online.intervals) all.insert(all.end(), ir.scored.begin(), ir.scored.end());
        const double a = ratio_auc(all);
        rank_and_threshold(all, kRejection);
        const double fpr = evaluate(all).fpr.value_or(1.0);
        const bool ok = oauc >= kOracleAuc && a >= oauc - kAucGap && fpr <= kMaxFpr;
        e2e_ok += ok;
        const auto& iv = r.online.intervals;
        fpr_monotone += iv.size() >= 3 && iv[0].report->fpr >= iv[1].report->fpr && iv[1].report->fpr >= iv[2].report->fpr;
        d5 += " s" + std::to_string(seed) + " oracle " + fmt(oauc) + " auc " + fmt(a) + " fpr " + fmt(fpr) + ";";
    }
    const double secs5 = since(t5);
    verdict(5, min_oracle >= kOracleAuc && e2e_ok >= kNeedSeeds && secs5 < kE2eSeconds, "synthetic N-over-D",
            std::to_string(e2e_ok) + "/" + std::to_string(kSeeds) + " seeds meet the targets (" + d5 +
                " per-interval FPR non-increasing over intervals 0-2 in " + std::to_string(fpr_monotone) + "/" +
                std::to_string(kSeeds) + "), " + fmt(secs5, 3) + " s");

    // 6 and 7: classifiers on the same data, judged on the held-out test day.
    const auto t6 = Clock::now();
    bool loss_ok = true, test_ok = true, order_ok = true;
    std::string d6, d7;
    for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
        const auto& r = runs[seed - 1];
        const auto ic = run_config(seed).ingest;
        const auto hc = synth_hasher();
        const auto N = tokenize_stream(r.data.normal, ic, hc);
        const auto M = tokenize_stream(r.data.mixture, ic, hc);
        const auto T = tokenize_stream(r.data.test, ic, hc);

        const auto init = BinaryClassifier::random(small_model(seed, 7));
        IterativeConfig icfg;
        icfg.seed = seed;
        const double l0 = compute_loss(init, N, M, icfg.alpha);
        const auto it = iterate(init, N, M, icfg);
        const double lf = compute_loss(it.model, N, M, icfg.alpha);
        loss_ok = loss_ok && lf < l0;

        // Predicted attacks are Sel_alpha: the top alpha fraction by p, as in the loss.
        auto it_scored = score_classifier(it.model, T);
        rank_and_threshold(it_scored, icfg.alpha);
        const auto it_rep = evaluate(it_scored);
        test_ok = test_ok && *it_rep.acc >= kIterAcc && it_rep.fpr.value_or(1.0) <= kIterFpr;
        threshold_posterior(it_scored, 0.5);
        const auto half_rep = evaluate(it_scored);
        d6 += " s" + std::to_string(seed) + " loss " + fmt(l0) + "->" + fmt(lf) + " (iteration " +
              std::to_string(it.best_iteration) + ") acc " + fmt(*it_rep.acc) + " fpr " + fmt(it_rep.fpr.value_or(1.0)) +
              " [p>0.5: acc " + fmt(*half_rep.acc) + " fpr " + fmt(half_rep.fpr.value_or(1.0)) + "];";

        const auto full = train_full_classifier(init, N, M, 4, Rng::mix(seed, 8));
        const double acc_full = acc_at_rank(score_classifier(full, T));
        const double acc_it = acc_at_rank(score_classifier(it.model, T));
        const double acc_n = acc_at_rank(score_n_only(r.n.checkpoint, T, 1e-12));
        order_ok = order_ok && acc_full >= acc_it - kOrderBand && acc_it >= acc_n - kOrderBand;
        d7 += " s" + std::to_string(seed) + " " + fmt(acc_full) + " >= " + fmt(acc_it) + " >= " + fmt(acc_n) + ";";
    }
    const std::vector<double> half_n(2000, 0.5), half_m(2000, 0.5);
    const double l_half = compute_loss(half_n, half_m, 0.6);
    const double l_exact = 3 * std::log(2.0);
    const bool half_ok = l_half == l_exact;
    verdict(6, loss_ok && test_ok && half_ok, "iterative classifier",
            "initial->final loss, test acc/fpr on Sel_alpha:" + d6 + " loss(p=0.5) - 3 log 2 = " + fmt(l_half - l_exact));
    verdict(7, order_ok, "ordering full >= iterative >= N-alone",
            "test acc at rejection ratio 0.6:" + d7 + " band " + fmt(kOrderBand) + ", " + fmt(since(t6), 3) + " s");

    transfer_effect();

    // 9: determinism and persistence.
    const auto again = run_pipeline(1);
    const bool repro = again.fingerprint == runs[0].fingerprint;
    const auto dir = std::filesystem::temp_directory_path() / "ndfilter_acceptance";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "n.ckpt").string();
    save_checkpoint(path, runs[0].n.checkpoint);
    const auto first = read_file_bytes(path);
    save_checkpoint(path, load_model_checkpoint(path));
    const bool persist = read_file_bytes(path) == first && !first.empty();
    std::filesystem::remove_all(dir);
    verdict(9, repro && persist, "determinism and persistence",
            std::string("repeat run identical: ") + (repro ? "yes" : "no") + " (" +
                std::to_string(again.fingerprint.size()) + " bytes compared), save-load-save identical: " +
                (persist ? "yes" : "no"));

    std::cout << (failures ? "FAILED " : "ALL PASSED ") << 9 - failures << "/9" << std::endl;
    return failures ? 1 : 0;
}
