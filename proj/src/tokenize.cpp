#include "ndfilter/tokenize.hpp"

#include "ndfilter/error.hpp"

#include <cmath>
#include <cstdio>

namespace ndf {

namespace {

long long bin_of(double value, double width) {
    return static_cast<long long>(std::floor(value / width));
}

std::string hex(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%x", v);
    return buf;
}

}  // namespace

void HasherConfig::validate() const {
    if (m_vocab < 2) throw DomainError("m_vocab must be >= 2");
    if (!(time_bin_ms > 0.0) || !(len_bin > 0.0)) throw DomainError("bin widths must be > 0");
}

std::string quantize_row(const DynamicRow& row, double prev_time, const HasherConfig& cfg) {
    if (row.is_zero()) return std::string(kPadString);

    const double dt_ms = std::max(0.0, row.abs_time - prev_time) * 1000.0;
    std::string s;
    s.reserve(64);
    s += "dt=" + std::to_string(bin_of(dt_ms, cfg.time_bin_ms));
    s += "|len=" + std::to_string(bin_of(row.request_len, cfg.len_bin));
    s += "|ipf=" + hex(row.ip_flags);
    s += "|tlen=" + std::to_string(bin_of(row.tcp_len, cfg.len_bin));
    s += "|ack=";
    s += row.tcp_ack != 0.0 ? '1' : '0';
    s += "|tf=" + hex(row.tcp_flags);
    s += "|win=" + std::to_string(bin_of(row.tcp_window, cfg.len_bin));
    s += "|hl=" + row.highest_layer;
    return s;
}

std::uint64_t fnv1a64(std::uint64_t seed, std::string_view bytes) {
    constexpr std::uint64_t kOffset = 0xcbf29ce484222325ull;
    constexpr std::uint64_t kPrime = 0x100000001b3ull;
    std::uint64_t h = kOffset;
    for (int i = 0; i < 8; ++i) {
        h ^= (seed >> (8 * i)) & 0xffu;
        h *= kPrime;
    }
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kPrime;
    }
    return h;
}

TokenId hash_token(std::string_view token, const HasherConfig& cfg) {
    if (token == kPadString) return kPadToken;
    const auto buckets = static_cast<std::uint64_t>(cfg.m_vocab - 1);
    return static_cast<TokenId>(1 + fnv1a64(cfg.hash_seed, token) % buckets);
}

TokenizedSequence encode_sequence(const RequestSequence& seq, const HasherConfig& cfg) {
    TokenizedSequence out;
    out.tokens.assign(seq.dynamic.size(), kPadToken);
    out.true_len = seq.true_len;
    out.flow_key = seq.flow_key;
    out.static_pair = seq.static_pair;
    out.interval_index = seq.interval_index;
    out.label = seq.label;

    double prev = seq.true_len > 0 ? seq.dynamic[0].abs_time : 0.0;
    for (int t = 0; t < seq.true_len; ++t) {
        const auto& row = seq.dynamic[static_cast<std::size_t>(t)];
        out.tokens[static_cast<std::size_t>(t)] = hash_token(quantize_row(row, prev, cfg), cfg);
        prev = row.abs_time;
    }
    return out;
}

std::vector<TokenizedSequence> encode_all(const std::vector<RequestSequence>& seqs,
                                          const HasherConfig& cfg) {
    std::vector<TokenizedSequence> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) out.push_back(encode_sequence(s, cfg));
    return out;
}

}  // namespace ndf
