#ifndef NDFILTER_SYNTH_HPP
#define NDFILTER_SYNTH_HPP

#include "ndfilter/ingest.hpp"
#include "ndfilter/tokenize.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace ndf {

/// Ground-truth traffic generator. Every flow is one source IP sending
/// `seq_len` packets spaced `packet_gap_s` apart, so one flow becomes exactly
/// one request sequence after ingest.
///
/// Class profiles are mixtures over packet templates:
///     q_normal = (1 - d) * base + d * uniform(normal-only templates)
///     q_attack = (1 - d) * base + d * uniform(attack-only templates)
/// which puts their total-variation distance at exactly d. Static pairs use
/// the same construction.
struct SynthConfig {
    int n_normal = 2000;   // normal-day sequences
    int n_mixture = 2000;  // mixture sequences, round(alpha * n_mixture) of them attacks
    int n_test = 0;        // held-out labeled mixture drawn from the same profiles
    double alpha = 0.6;
    int seq_len = 50;
    int shared_templates = 24;
    int class_templates = 12;  // per class
    int shared_statics = 4;
    int class_statics = 3;  // per class
    double divergence = 0.5;
    /// Probability of following a fixed successor of the previous template
    /// instead of drawing afresh. 0 gives i.i.d. tokens.
    double stickiness = 0.0;
    double interval_minutes = 1.0;
    int n_intervals = 5;
    double packet_gap_s = 0.05;
    std::uint64_t seed = 1;

    void validate() const;
};

struct SynthProfiles {
    std::vector<DynamicRow> templates;  // abs_time unused
    std::vector<std::string> tokens;    // quantized string of each template
    std::map<std::string, std::size_t> token_index;
    std::vector<double> q_normal, q_attack;
    std::vector<std::size_t> successor;  // stays within the template's group
    double stickiness = 0.0;
    std::vector<StaticPair> statics;
    std::vector<double> r_normal, r_attack;
};

/// Deterministic in cfg.seed. Template strings are distinct under `hasher`'s
/// bins, and the packet gap must stay inside the first time bin.
SynthProfiles make_profiles(const SynthConfig& cfg, const HasherConfig& hasher);

struct SynthData {
    std::vector<PacketRecord> normal;   // normal-day traffic, labeled normal
    std::vector<PacketRecord> mixture;  // labeled, ordered by timestamp
    std::vector<PacketRecord> test;     // held-out mixture, same layout one day later
};

SynthData synth_generate(const SynthConfig& cfg, const HasherConfig& hasher = {});

void write_packets(std::ostream& out, const std::vector<PacketRecord>& records);

/// Exact log P_normal(x) - log P_attack(x) under the generating profiles,
/// including the static-pair term. May be +-infinity for class-exclusive
/// content. Throws DomainError for a token outside the template set.
double oracle_score(const RequestSequence& seq, const SynthProfiles& profiles,
                    const HasherConfig& hasher);

}  // namespace ndf

#endif
