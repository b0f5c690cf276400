#ifndef NDFILTER_CHECKPOINT_HPP
#define NDFILTER_CHECKPOINT_HPP

// Checkpoint layout:
//   8 bytes   magic "NDCKPT01"
//   8 bytes   header length n, little-endian uint64
//   n bytes   JSON header {version, model_config, hasher_config, role,
//             tensor_index: [{name, shape, offset}], histogram?, optimizer?}
//   ...       tensors as little-endian float32, column-major, in index order;
//             offsets are relative to the first tensor byte.

#include "ndfilter/histogram.hpp"
#include "ndfilter/sequence_model.hpp"
#include "ndfilter/tokenize.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <string_view>

namespace ndf {

inline constexpr std::string_view kCheckpointMagic = "NDCKPT01";
inline constexpr int kCheckpointVersion = 1;

struct ModelCheckpoint {
    SequenceModel model;
    HasherConfig hasher;
    std::optional<HistogramModel> histogram;
    std::optional<SequenceOptimizer> optimizer;
};

struct ClassifierCheckpoint {
    BinaryClassifier model;
    HasherConfig hasher;
};

std::string encode_checkpoint(const ModelCheckpoint& ckpt);
std::string encode_checkpoint(const ClassifierCheckpoint& ckpt);

ModelCheckpoint decode_model_checkpoint(std::string_view bytes);
ClassifierCheckpoint decode_classifier_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const ModelCheckpoint& ckpt);
void save_checkpoint(const std::string& path, const ClassifierCheckpoint& ckpt);
ModelCheckpoint load_model_checkpoint(const std::string& path);
ClassifierCheckpoint load_classifier_checkpoint(const std::string& path);

/// Parsed JSON header only (magic and length verified).
nlohmann::json read_checkpoint_header(std::string_view bytes);
std::string read_file_bytes(const std::string& path);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HasherConfig& cfg);
HasherConfig hasher_config_from_json(const nlohmann::json& j);

}  // namespace ndf

#endif
