#ifndef NDFILTER_INGEST_HPP
#define NDFILTER_INGEST_HPP

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ndf {

enum class Label { normal, attack };

std::string_view to_string(Label label);
std::optional<Label> parse_label(std::string_view text);

/// The eight per-packet attributes that vary within a flow.
struct DynamicRow {
    double abs_time = 0.0;
    double request_len = 0.0;
    std::uint32_t ip_flags = 0;
    double tcp_len = 0.0;
    double tcp_ack = 0.0;
    std::uint32_t tcp_flags = 0;
    double tcp_window = 0.0;
    std::string highest_layer;

    bool is_zero() const;
    bool operator==(const DynamicRow&) const = default;
};

using FlowKey = std::pair<std::string, std::string>;   // (src_ip, dst_ip)
using StaticPair = std::pair<std::string, std::string>;  // (extra_info, protocols)

/// One sub-request: eight dynamic attributes, the two static attributes,
/// the flow identity and an optional ground-truth label.
struct PacketRecord {
    DynamicRow dynamic;
    std::string extra_info;
    std::string protocols;
    std::string src_ip;
    std::string dst_ip;
    std::optional<Label> label;

    bool operator==(const PacketRecord&) const = default;
};

struct IngestConfig {
    int seq_len = 200;  // T
    int epsilon = 3;    // minimum packets per source IP within an interval
    double interval_minutes = 1.0;  // infinity selects a single interval

    void validate() const;
};

struct RequestSequence {
    FlowKey flow_key;
    std::vector<DynamicRow> dynamic;  // exactly seq_len rows, zero after true_len
    StaticPair static_pair;
    int true_len = 0;
    int interval_index = 0;
    std::optional<Label> label;
};

struct IntervalStream {
    std::vector<std::vector<PacketRecord>> intervals;
    double origin_time = 0.0;
    double interval_seconds = 0.0;
};

/// Parses one JSON-lines packet object.
PacketRecord parse_packet_line(std::string_view line);

/// Serializes a record back to one JSON line (hex fields as "0x%08x").
std::string format_packet_line(const PacketRecord& record);

/// Reads every non-blank line; errors carry the 1-based line number.
std::vector<PacketRecord> read_packets(std::istream& in);
std::vector<PacketRecord> read_packets_file(const std::string& path);

IntervalStream split_intervals(const std::vector<PacketRecord>& records,
                               const IngestConfig& cfg);

/// Sort, per-IP epsilon filtering, grouping by flow, chunking into T-length
/// zero-padded sequences. The interval index is copied onto every sequence.
std::vector<RequestSequence> build_sequences(std::vector<PacketRecord> batch,
                                             const IngestConfig& cfg,
                                             int interval_index = 0);

}  // namespace ndf

#endif
