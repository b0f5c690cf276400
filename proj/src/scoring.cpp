#include "ndfilter/scoring.hpp"

#include "ndfilter/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace ndf {

std::string_view to_string(Decision d) { return d == Decision::reject ? "reject" : "accept"; }

Aggregation parse_aggregation(const std::string& text) {
    if (text == "mean") return Aggregation::mean;
    if (text == "min") return Aggregation::min;
    if (text == "median") return Aggregation::median;
    throw DomainError("unknown aggregation: " + text);
}

void ScoringConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0,1)");
    if (!(rejection_ratio >= 0.0 && rejection_ratio <= 1.0))
        throw DomainError("rejection_ratio must lie in [0,1]");
    if (!(prob_floor > 0.0 && prob_floor < 1.0)) throw DomainError("prob_floor must lie in (0,1)");
}

std::vector<double> score_all(const SequenceModel& model, const HistogramModel& hist,
                              std::span<const TokenizedSequence> seqs, double prob_floor) {
    std::vector<double> out = sequence_log_probs(model, seqs, prob_floor);
    for (std::size_t i = 0; i < seqs.size(); ++i)
        out[i] += std::log(std::max(hist.predict(seqs[i].static_pair), prob_floor));
    return out;
}

double score_n(const SequenceModel& n_model, const HistogramModel& n_hist,
               const TokenizedSequence& seq, double prob_floor) {
    return score_all(n_model, n_hist, std::span(&seq, 1), prob_floor)[0];
}

double score_d(const SequenceModel& d_model, const HistogramModel& d_hist,
               const TokenizedSequence& seq, double prob_floor) {
    return score_all(d_model, d_hist, std::span(&seq, 1), prob_floor)[0];
}

double attack_posterior(double log_pn, double log_pd, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0,1)");
    const double r = log_pn - log_pd;
    if (std::isnan(r)) throw DomainError("attack_posterior: undefined log ratio");
    // alpha / (alpha + (1 - alpha) * exp(r)), rescaled so the exponent is <= 0
    if (r <= 0.0) return alpha / (alpha + (1.0 - alpha) * std::exp(r));
    const double e = std::exp(-r);
    return alpha * e / (alpha * e + (1.0 - alpha));
}

std::vector<ScoredSequence> score_sequences(const SequenceModel& n_model,
                                            const HistogramModel& n_hist,
                                            const SequenceModel& d_model,
                                            const HistogramModel& d_hist,
                                            std::span<const TokenizedSequence> seqs,
                                            const ScoringConfig& cfg) {
    cfg.validate();
    const auto pn = score_all(n_model, n_hist, seqs, cfg.prob_floor);
    const auto pd = score_all(d_model, d_hist, seqs, cfg.prob_floor);
    std::vector<ScoredSequence> out(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        auto& s = out[i];
        s.flow_key = seqs[i].flow_key;
        s.interval_index = seqs[i].interval_index;
        s.log_pn = pn[i];
        s.log_pd = pd[i];
        s.ratio = nd_ratio(pn[i], pd[i]);
        s.posterior = attack_posterior(pn[i], pd[i], cfg.alpha);
        s.label = seqs[i].label;
    }
    return out;
}

std::size_t rejection_count(double rejection_ratio, std::size_t n) {
    if (!(rejection_ratio >= 0.0 && rejection_ratio <= 1.0))
        throw DomainError("rejection_ratio must lie in [0,1]");
    const auto k = static_cast<std::size_t>(std::floor(rejection_ratio * static_cast<double>(n) + 1e-9));
    return std::min(k, n);
}

std::vector<std::size_t> rank_order(std::span<const ScoredSequence> scored) {
    std::vector<std::size_t> order(scored.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scored[a].ratio != scored[b].ratio) return scored[a].ratio > scored[b].ratio;
        return scored[a].flow_key < scored[b].flow_key;
    });
    return order;
}

void rank_and_threshold(std::span<ScoredSequence> scored, double rejection_ratio) {
    const std::size_t k = rejection_count(rejection_ratio, scored.size());
    const auto order = rank_order(scored);
    for (std::size_t pos = 0; pos < order.size(); ++pos)
        scored[order[pos]].decision = pos + k >= order.size() ? Decision::reject : Decision::accept;
}

void threshold_posterior(std::span<ScoredSequence> scored, double threshold) {
    for (auto& s : scored) s.decision = s.posterior > threshold ? Decision::reject : Decision::accept;
}

std::vector<std::string> build_blacklist(std::span<const ScoredSequence> decided,
                                         Aggregation aggregation) {
    double cutoff = std::numeric_limits<double>::infinity();
    for (const auto& s : decided)
        if (s.decision == Decision::accept) cutoff = std::min(cutoff, s.ratio);

    std::map<std::string, std::vector<double>> per_ip;
    for (const auto& s : decided) per_ip[s.flow_key.first].push_back(s.ratio);

    std::vector<std::string> out;
    for (auto& [ip, ratios] : per_ip) {
        double agg = 0;
        switch (aggregation) {
            case Aggregation::mean:
                agg = std::accumulate(ratios.begin(), ratios.end(), 0.0) /
                      static_cast<double>(ratios.size());
                break;
            case Aggregation::min:
                agg = *std::min_element(ratios.begin(), ratios.end());
                break;
            case Aggregation::median: {
                std::sort(ratios.begin(), ratios.end());
                const std::size_t n = ratios.size();
                agg = n % 2 ? ratios[n / 2] : 0.5 * (ratios[n / 2 - 1] + ratios[n / 2]);
                break;
            }
        }
        if (agg < cutoff) out.push_back(ip);
    }
    return out;  // map iteration order is already sorted and unique
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void check_field(const std::string& s) {
    if (s.find_first_of(",\n\r\"") != std::string::npos)
        throw DomainError("CSV field contains a delimiter: " + s);
}

}  // namespace

void write_scored_csv(std::ostream& out, std::span<const ScoredSequence> scored, bool header) {
    if (header) out << "interval,src_ip,dst_ip,log_pn,log_pd,ratio,posterior,decision,label\n";
    for (const auto& s : scored) {
        check_field(s.flow_key.first);
        check_field(s.flow_key.second);
        out << s.interval_index << ',' << s.flow_key.first << ',' << s.flow_key.second << ','
            << num(s.log_pn) << ',' << num(s.log_pd) << ',' << num(s.ratio) << ','
            << num(s.posterior) << ',' << to_string(s.decision) << ','
            << (s.label ? to_string(*s.label) : "") << '\n';
    }
}

std::vector<ScoredSequence> read_scored_csv(std::istream& in) {
    std::vector<ScoredSequence> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (lineno == 1 && line.rfind("interval,", 0) == 0) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (line.back() == ',') f.emplace_back();
        if (f.size() != 9)
            throw ParseError("scored CSV line " + std::to_string(lineno) + ": expected 9 columns", 0);
        try {
            ScoredSequence s;
            s.interval_index = std::stoi(f[0]);
            s.flow_key = {f[1], f[2]};
            s.log_pn = std::stod(f[3]);
            s.log_pd = std::stod(f[4]);
            s.ratio = std::stod(f[5]);
            s.posterior = std::stod(f[6]);
            if (f[7] == "reject")
                s.decision = Decision::reject;
            else if (f[7] == "accept")
                s.decision = Decision::accept;
            else
                throw DomainError("bad decision " + f[7]);
            if (!f[8].empty()) {
                s.label = parse_label(f[8]);
                if (!s.label) throw DomainError("bad label " + f[8]);
            }
            out.push_back(std::move(s));
        } catch (const std::invalid_argument&) {
            throw ParseError("scored CSV line " + std::to_string(lineno) + ": bad number", 0);
        } catch (const DomainError& e) {
            throw DomainError("scored CSV line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace ndf
