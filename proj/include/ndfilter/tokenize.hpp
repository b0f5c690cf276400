#ifndef NDFILTER_TOKENIZE_HPP
#define NDFILTER_TOKENIZE_HPP

#include "ndfilter/ingest.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ndf {

using TokenId = std::int32_t;

inline constexpr TokenId kPadToken = 0;
inline constexpr std::string_view kPadString = "PAD";

/// Quantization and hashing parameters. Shared by the N and D models; stored
/// in every checkpoint header.
struct HasherConfig {
    int m_vocab = 4096;
    std::uint64_t hash_seed = 0x5DD05;
    double time_bin_ms = 100.0;
    double len_bin = 16.0;

    void validate() const;
    bool operator==(const HasherConfig&) const = default;
};

struct TokenizedSequence {
    std::vector<TokenId> tokens;  // length T, kPadToken after true_len
    int true_len = 0;
    FlowKey flow_key;
    StaticPair static_pair;
    int interval_index = 0;
    std::optional<Label> label;
};

/// Canonical token string of one packet row. `prev_time` is the previous
/// packet's timestamp in the flow (the row's own time for the first packet).
std::string quantize_row(const DynamicRow& row, double prev_time, const HasherConfig& cfg);

/// 64-bit FNV-1a over the little-endian seed bytes followed by the token bytes.
std::uint64_t fnv1a64(std::uint64_t seed, std::string_view bytes);

/// "PAD" maps to 0; everything else to 1 + (hash mod (m_vocab - 1)).
TokenId hash_token(std::string_view token, const HasherConfig& cfg);

TokenizedSequence encode_sequence(const RequestSequence& seq, const HasherConfig& cfg);

std::vector<TokenizedSequence> encode_all(const std::vector<RequestSequence>& seqs,
                                          const HasherConfig& cfg);

}  // namespace ndf

#endif
