#include "ndfilter/ingest.hpp"

#include "ndfilter/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>

namespace ndf {

namespace {

using nlohmann::json;

const json& require(const json& obj, const char* field) {
    auto it = obj.find(field);
    if (it == obj.end() || it->is_null()) throw MissingFieldError(field);
    return *it;
}

double read_number(const json& obj, const char* field) {
    const json& v = require(obj, field);
    if (!v.is_number())
        throw DomainError(std::string("field \"") + field + "\" is not a number");
    const double x = v.get<double>();
    if (!std::isfinite(x))
        throw DomainError(std::string("field \"") + field + "\" is not finite");
    if (x < 0.0)
        throw DomainError(std::string("field \"") + field + "\" is negative");
    return x;
}

std::uint32_t read_hex(const json& obj, const char* field) {
    const json& v = require(obj, field);
    std::uint64_t value = 0;
    if (v.is_string()) {
        const auto& s = v.get_ref<const std::string&>();
        if (s.size() < 3 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X'))
            throw DomainError(std::string("field \"") + field + "\" must be 0x-prefixed hex");
        std::size_t pos = 0;
        try {
            value = std::stoull(s.substr(2), &pos, 16);
        } catch (const std::exception&) {
            throw DomainError(std::string("field \"") + field + "\" is not valid hex: " + s);
        }
        if (pos != s.size() - 2)
            throw DomainError(std::string("field \"") + field + "\" is not valid hex: " + s);
    } else if (v.is_number_integer()) {
        if (v.is_number_unsigned()) {
            value = v.get<std::uint64_t>();
        } else {
            const auto signed_value = v.get<std::int64_t>();
            if (signed_value < 0)
                throw DomainError(std::string("field \"") + field + "\" is negative");
            value = static_cast<std::uint64_t>(signed_value);
        }
    } else {
        throw DomainError(std::string("field \"") + field + "\" must be hex string or integer");
    }
    if (value > std::numeric_limits<std::uint32_t>::max())
        throw DomainError(std::string("field \"") + field + "\" exceeds 32 bits");
    return static_cast<std::uint32_t>(value);
}

std::string read_string(const json& obj, const char* field) {
    const json& v = require(obj, field);
    if (!v.is_string())
        throw DomainError(std::string("field \"") + field + "\" is not a string");
    return v.get<std::string>();
}

std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", v);
    return buf;
}

}  // namespace

std::string_view to_string(Label label) {
    return label == Label::attack ? "attack" : "normal";
}

std::optional<Label> parse_label(std::string_view text) {
    if (text == "normal") return Label::normal;
    if (text == "attack") return Label::attack;
    return std::nullopt;
}

bool DynamicRow::is_zero() const {
    return abs_time == 0.0 && request_len == 0.0 && ip_flags == 0 && tcp_len == 0.0 &&
           tcp_ack == 0.0 && tcp_flags == 0 && tcp_window == 0.0 && highest_layer.empty();
}

void IngestConfig::validate() const {
    if (seq_len < 2) throw DomainError("sequence length T must be >= 2");
    if (epsilon < 1) throw DomainError("epsilon must be >= 1");
    if (!(interval_minutes > 0.0)) throw DomainError("interval length must be > 0");
}

PacketRecord parse_packet_line(std::string_view line) {
    json obj;
    try {
        obj = json::parse(line.begin(), line.end());
    } catch (const json::parse_error& e) {
        throw ParseError("malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what(),
                         e.byte);
    }
    if (!obj.is_object()) throw ParseError("packet line is not a JSON object", 0);

    PacketRecord r;
    r.dynamic.abs_time = read_number(obj, "abs_time");
    r.dynamic.request_len = read_number(obj, "request_len");
    r.dynamic.ip_flags = read_hex(obj, "ip_flags");
    r.dynamic.tcp_len = read_number(obj, "tcp_len");
    r.dynamic.tcp_ack = read_number(obj, "tcp_ack");
    r.dynamic.tcp_flags = read_hex(obj, "tcp_flags");
    r.dynamic.tcp_window = read_number(obj, "tcp_window");
    r.dynamic.highest_layer = read_string(obj, "highest_layer");
    r.extra_info = read_string(obj, "extra_info");
    r.protocols = read_string(obj, "protocols");
    r.src_ip = read_string(obj, "src_ip");
    r.dst_ip = read_string(obj, "dst_ip");
    if (auto it = obj.find("label"); it != obj.end() && !it->is_null()) {
        if (!it->is_string()) throw DomainError("field \"label\" is not a string");
        r.label = parse_label(it->get_ref<const std::string&>());
        if (!r.label) throw DomainError("field \"label\" must be \"normal\" or \"attack\"");
    }
    return r;
}

std::string format_packet_line(const PacketRecord& r) {
    nlohmann::ordered_json obj;
    obj["abs_time"] = r.dynamic.abs_time;
    obj["request_len"] = r.dynamic.request_len;
    obj["ip_flags"] = hex32(r.dynamic.ip_flags);
    obj["tcp_len"] = r.dynamic.tcp_len;
    obj["tcp_ack"] = r.dynamic.tcp_ack;
    obj["tcp_flags"] = hex32(r.dynamic.tcp_flags);
    obj["tcp_window"] = r.dynamic.tcp_window;
    obj["highest_layer"] = r.dynamic.highest_layer;
    obj["extra_info"] = r.extra_info;
    obj["protocols"] = r.protocols;
    obj["src_ip"] = r.src_ip;
    obj["dst_ip"] = r.dst_ip;
    if (r.label) obj["label"] = std::string(to_string(*r.label));
    return obj.dump();
}

std::vector<PacketRecord> read_packets(std::istream& in) {
    std::vector<PacketRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(parse_packet_line(line));
        } catch (const ParseError& e) {
            throw ParseError("line " + std::to_string(lineno) + ": " + e.what(), e.byte_offset());
        } catch (const MissingFieldError& e) {
            throw DataError("line " + std::to_string(lineno) + ": " + e.what());
        } catch (const DomainError& e) {
            throw DomainError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<PacketRecord> read_packets_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return read_packets(in);
}

IntervalStream split_intervals(const std::vector<PacketRecord>& records, const IngestConfig& cfg) {
    cfg.validate();
    IntervalStream stream;
    if (records.empty()) return stream;

    stream.origin_time = std::min_element(records.begin(), records.end(),
                                          [](const PacketRecord& a, const PacketRecord& b) {
                                              return a.dynamic.abs_time < b.dynamic.abs_time;
                                          })
                             ->dynamic.abs_time;
    stream.interval_seconds = cfg.interval_minutes * 60.0;

    if (std::isinf(cfg.interval_minutes)) {
        stream.intervals.push_back(records);
        return stream;
    }
    for (const auto& r : records) {
        const auto idx = static_cast<std::size_t>(
            std::floor((r.dynamic.abs_time - stream.origin_time) / stream.interval_seconds));
        if (stream.intervals.size() <= idx) stream.intervals.resize(idx + 1);
        stream.intervals[idx].push_back(r);
    }
    return stream;
}

namespace {

template <typename T>
T mode_of(const std::vector<T>& items) {
    std::map<T, int> counts;
    for (const auto& x : items) ++counts[x];
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
        if (it->second > best->second) best = it;  // map order breaks ties lexicographically
    return best->first;
}

}  // namespace

std::vector<RequestSequence> build_sequences(std::vector<PacketRecord> batch,
                                             const IngestConfig& cfg, int interval_index) {
    cfg.validate();
    std::vector<RequestSequence> out;
    if (batch.empty()) return out;

    std::stable_sort(batch.begin(), batch.end(), [](const PacketRecord& a, const PacketRecord& b) {
        return a.dynamic.abs_time < b.dynamic.abs_time;
    });

    std::map<std::string, int> per_ip;
    for (const auto& r : batch) ++per_ip[r.src_ip];

    std::map<FlowKey, std::vector<const PacketRecord*>> flows;
    for (const auto& r : batch)
        if (per_ip[r.src_ip] >= cfg.epsilon) flows[{r.src_ip, r.dst_ip}].push_back(&r);

    const auto T = static_cast<std::size_t>(cfg.seq_len);
    for (const auto& [key, recs] : flows) {
        std::vector<StaticPair> pairs;
        pairs.reserve(recs.size());
        for (const auto* r : recs) pairs.emplace_back(r->extra_info, r->protocols);
        const StaticPair modal = mode_of(pairs);

        for (std::size_t start = 0; start < recs.size(); start += T) {
            const std::size_t len = std::min(T, recs.size() - start);
            RequestSequence seq;
            seq.flow_key = key;
            seq.static_pair = modal;
            seq.true_len = static_cast<int>(len);
            seq.interval_index = interval_index;
            seq.dynamic.resize(T);
            int attacks = 0, normals = 0;
            for (std::size_t k = 0; k < len; ++k) {
                const auto* r = recs[start + k];
                seq.dynamic[k] = r->dynamic;
                if (r->label == Label::attack) ++attacks;
                if (r->label == Label::normal) ++normals;
            }
            if (attacks + normals > 0)
                seq.label = attacks >= normals ? Label::attack : Label::normal;
            out.push_back(std::move(seq));
        }
    }
    return out;
}

}  // namespace ndf
