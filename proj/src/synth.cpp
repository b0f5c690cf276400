#include "ndfilter/synth.hpp"

#include "ndfilter/error.hpp"
#include "ndfilter/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

namespace ndf {

namespace {

constexpr double kMixtureBase = 86400.0;  // mixture day starts one day after the normal day
constexpr std::string_view kServer = "192.168.0.10";

const char* const kLayers[] = {"TCP", "HTTP", "TLSv1.2", "SSL"};
const std::uint32_t kTcpFlags[] = {0x02, 0x10, 0x12, 0x18, 0x11, 0x04, 0x19};
const char* const kMethods[] = {"GET", "POST", "HEAD", "PUT"};
const char* const kStacks[] = {"eth:ethertype:ip:tcp", "eth:ethertype:ip:tcp:http",
                               "eth:ethertype:ip:tcp:ssl", "eth:ethertype:ip:tcp:http:data"};

// (1-d) * base over the shared block plus d * uniform over one class block.
std::vector<double> class_profile(const std::vector<double>& base, int shared, int per_class,
                                  int class_slot, double d) {
    std::vector<double> q(static_cast<std::size_t>(shared + 2 * per_class), 0.0);
    for (int j = 0; j < shared; ++j) q[j] = (1.0 - d) * base[j];
    const int first = shared + class_slot * per_class;
    for (int j = 0; j < per_class; ++j) q[first + j] = d / per_class;
    return q;
}

std::vector<double> base_weights(int n, Rng& rng) {
    std::vector<double> w(static_cast<std::size_t>(n));
    for (auto& x : w) x = -std::log(1.0 - rng.uniform());
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& x : w) x /= total;
    return w;
}

std::string ip_of(int prefix, std::size_t k) {
    ++k;
    return std::to_string(prefix) + '.' + std::to_string((k >> 16) & 255) + '.' +
           std::to_string((k >> 8) & 255) + '.' + std::to_string(k & 255);
}

struct Flow {
    double start = 0;
    Label label = Label::normal;
};

// Emits one flow's packets by walking the class chain.
void emit_flow(const Flow& f, const std::string& src, const SynthProfiles& p, const SynthConfig& cfg,
               Rng& rng, std::vector<PacketRecord>& out) {
    const auto& q = f.label == Label::normal ? p.q_normal : p.q_attack;
    const auto& r = f.label == Label::normal ? p.r_normal : p.r_attack;
    const auto& pair = p.statics[rng.categorical(r)];
    std::size_t j = rng.categorical(q);
    for (int t = 0; t < cfg.seq_len; ++t) {
        if (t > 0) {
            if (p.stickiness > 0.0 && rng.uniform() < p.stickiness)
                j = p.successor[j];
            else
                j = rng.categorical(q);
        }
        PacketRecord rec;
        rec.dynamic = p.templates[j];
        rec.dynamic.abs_time = f.start + t * cfg.packet_gap_s;
        rec.extra_info = pair.first;
        rec.protocols = pair.second;
        rec.src_ip = src;
        rec.dst_ip = std::string(kServer);
        rec.label = f.label;
        out.push_back(std::move(rec));
    }
}

// Lays flows over n_intervals windows starting at `base`, splitting the count
// evenly and the attacks by cumulative rounding so every window holds its share.
std::vector<Flow> layout(int n, int n_attack, double base, const SynthConfig& cfg, Rng& rng) {
    const double width = cfg.interval_minutes * 60.0;
    const double duration = (cfg.seq_len - 1) * cfg.packet_gap_s;
    std::vector<Flow> flows;
    int placed = 0, attacks = 0;
    for (int i = 0; i < cfg.n_intervals; ++i) {
        const int upto = static_cast<int>(std::llround(static_cast<double>(n) * (i + 1) / cfg.n_intervals));
        const int count = upto - placed;
        const int a_upto = static_cast<int>(std::llround(static_cast<double>(n_attack) * upto / n));
        const int a_count = a_upto - attacks;
        std::vector<Label> labels(static_cast<std::size_t>(count), Label::normal);
        std::fill(labels.begin(), labels.begin() + a_count, Label::attack);
        rng.shuffle(std::span<Label>(labels));
        for (int k = 0; k < count; ++k) {
            Flow f;
            f.label = labels[k];
            // The very first flow pins the interval origin to `base`.
            f.start = flows.empty() ? base
                                    : base + i * width + 0.01 + rng.uniform() * (width - duration - 0.02);
            flows.push_back(f);
        }
        placed = upto;
        attacks = a_upto;
    }
    return flows;
}

std::vector<PacketRecord> render(std::vector<Flow> flows, int ip_prefix, const SynthProfiles& p,
                                 const SynthConfig& cfg, Rng& rng) {
    std::stable_sort(flows.begin(), flows.end(),
                     [](const Flow& a, const Flow& b) { return a.start < b.start; });
    std::vector<PacketRecord> out;
    out.reserve(flows.size() * static_cast<std::size_t>(cfg.seq_len));
    for (std::size_t k = 0; k < flows.size(); ++k) emit_flow(flows[k], ip_of(ip_prefix, k), p, cfg, rng, out);
    std::stable_sort(out.begin(), out.end(), [](const PacketRecord& a, const PacketRecord& b) {
        return a.dynamic.abs_time < b.dynamic.abs_time;
    });
    return out;
}

}  // namespace

void SynthConfig::validate() const {
    if (n_normal < 0 || n_mixture < 0 || n_test < 0) throw DomainError("sequence counts must be >= 0");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in [0,1]");
    if (seq_len < 1) throw DomainError("seq_len must be >= 1");
    if (shared_templates < 1 || class_templates < 1 || shared_statics < 1 || class_statics < 1)
        throw DomainError("template counts must be >= 1");
    if (!(divergence >= 0.0 && divergence <= 1.0)) throw DomainError("divergence must lie in [0,1]");
    if (!(stickiness >= 0.0 && stickiness < 1.0)) throw DomainError("stickiness must lie in [0,1)");
    if (n_intervals < 1) throw DomainError("n_intervals must be >= 1");
    if (!(packet_gap_s > 0.0)) throw DomainError("packet_gap_s must be > 0");
    if (!(interval_minutes > 0.0) || !std::isfinite(interval_minutes))
        throw DomainError("interval_minutes must be finite and > 0");
    if ((seq_len - 1) * packet_gap_s + 0.02 >= interval_minutes * 60.0)
        throw DomainError("a flow must fit inside one interval");
}

SynthProfiles make_profiles(const SynthConfig& cfg, const HasherConfig& hasher) {
    cfg.validate();
    if (cfg.packet_gap_s * 1000.0 >= hasher.time_bin_ms)
        throw DomainError("packet_gap_s must stay below one time bin");
    Rng rng(Rng::mix(cfg.seed, 1));
    SynthProfiles p;
    p.stickiness = cfg.stickiness;

    const int n_templates = cfg.shared_templates + 2 * cfg.class_templates;
    while (static_cast<int>(p.templates.size()) < n_templates) {
        DynamicRow row;
        row.request_len = hasher.len_bin * static_cast<double>(2 + rng.below(90)) + 0.5 * hasher.len_bin;
        row.ip_flags = rng.below(2) ? 0x4000u : 0u;
        row.tcp_len = hasher.len_bin * static_cast<double>(rng.below(80)) + 0.5 * hasher.len_bin;
        row.tcp_ack = rng.below(4) ? static_cast<double>(1 + rng.below(1u << 30)) : 0.0;
        row.tcp_flags = kTcpFlags[rng.below(std::size(kTcpFlags))];
        row.tcp_window = hasher.len_bin * static_cast<double>(16 + rng.below(4000)) + 0.5 * hasher.len_bin;
        row.highest_layer = kLayers[rng.below(std::size(kLayers))];
        auto token = quantize_row(row, row.abs_time, hasher);
        if (p.token_index.count(token)) continue;
        p.token_index.emplace(token, p.templates.size());
        p.tokens.push_back(std::move(token));
        p.templates.push_back(std::move(row));
    }

    const auto base = base_weights(cfg.shared_templates, rng);
    p.q_normal = class_profile(base, cfg.shared_templates, cfg.class_templates, 0, cfg.divergence);
    p.q_attack = class_profile(base, cfg.shared_templates, cfg.class_templates, 1, cfg.divergence);

    // Successor permutation, one cycle per group so support never leaks across classes.
    p.successor.resize(static_cast<std::size_t>(n_templates));
    const auto cycle = [&](int first, int count) {
        std::vector<std::size_t> ids(static_cast<std::size_t>(count));
        std::iota(ids.begin(), ids.end(), static_cast<std::size_t>(first));
        rng.shuffle(std::span<std::size_t>(ids));
        for (std::size_t k = 0; k < ids.size(); ++k) p.successor[ids[k]] = ids[(k + 1) % ids.size()];
    };
    cycle(0, cfg.shared_templates);
    cycle(cfg.shared_templates, cfg.class_templates);
    cycle(cfg.shared_templates + cfg.class_templates, cfg.class_templates);

    const int n_statics = cfg.shared_statics + 2 * cfg.class_statics;
    for (int k = 0; k < n_statics; ++k) {
        std::string info = std::string(kMethods[rng.below(std::size(kMethods))]) + " /res" + std::to_string(k);
        p.statics.emplace_back(std::move(info), kStacks[rng.below(std::size(kStacks))]);
    }
    const auto static_base = base_weights(cfg.shared_statics, rng);
    p.r_normal = class_profile(static_base, cfg.shared_statics, cfg.class_statics, 0, cfg.divergence);
    p.r_attack = class_profile(static_base, cfg.shared_statics, cfg.class_statics, 1, cfg.divergence);
    return p;
}

SynthData synth_generate(const SynthConfig& cfg, const HasherConfig& hasher) {
    const auto profiles = make_profiles(cfg, hasher);
    Rng layout_rng(Rng::mix(cfg.seed, 2));
    Rng flow_rng(Rng::mix(cfg.seed, 3));

    const int n_attack = static_cast<int>(std::llround(cfg.alpha * cfg.n_mixture));
    SynthData data;
    data.normal = render(layout(cfg.n_normal, 0, 0.0, cfg, layout_rng), 10, profiles, cfg, flow_rng);
    data.mixture = render(layout(cfg.n_mixture, n_attack, kMixtureBase, cfg, layout_rng), 11, profiles,
                          cfg, flow_rng);
    if (cfg.n_test > 0) {
        Rng test_rng(Rng::mix(cfg.seed, 4));
        const int test_attack = static_cast<int>(std::llround(cfg.alpha * cfg.n_test));
        data.test = render(layout(cfg.n_test, test_attack, 2 * kMixtureBase, cfg, test_rng), 12, profiles,
                           cfg, test_rng);
    }
    return data;
}

void write_packets(std::ostream& out, const std::vector<PacketRecord>& records) {
    for (const auto& r : records) out << format_packet_line(r) << '\n';
}

double oracle_score(const RequestSequence& seq, const SynthProfiles& p, const HasherConfig& hasher) {
    const auto log_ratio = [](double pn, double pa) {
        if (pn == pa) return 0.0;
        return std::log(pn) - std::log(pa);
    };
    const auto index_of = [&](const std::string& token) {
        const auto it = p.token_index.find(token);
        if (it == p.token_index.end()) throw DomainError("oracle_score: token outside the profile: " + token);
        return it->second;
    };

    double score = 0.0;
    std::size_t prev = 0;
    double prev_time = seq.true_len > 0 ? seq.dynamic[0].abs_time : 0.0;
    for (int t = 0; t < seq.true_len; ++t) {
        const auto& row = seq.dynamic[static_cast<std::size_t>(t)];
        const std::size_t j = index_of(quantize_row(row, prev_time, hasher));
        prev_time = row.abs_time;
        double pn = p.q_normal[j], pa = p.q_attack[j];
        if (t > 0) {
            const double follow = p.successor[prev] == j ? p.stickiness : 0.0;
            pn = follow + (1.0 - p.stickiness) * pn;
            pa = follow + (1.0 - p.stickiness) * pa;
        }
        score += log_ratio(pn, pa);
        prev = j;
    }

    const auto it = std::find(p.statics.begin(), p.statics.end(), seq.static_pair);
    if (it == p.statics.end()) throw DomainError("oracle_score: static pair outside the profile");
    const auto k = static_cast<std::size_t>(it - p.statics.begin());
    return score + log_ratio(p.r_normal[k], p.r_attack[k]);
}

}  // namespace ndf
