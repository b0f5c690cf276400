#include "ndfilter/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace ndf {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

json to_json(const ModelConfig& c) {
    return json{{"m_vocab", c.m_vocab},       {"embed_dim", c.embed_dim},
                {"hidden_dim", c.hidden_dim}, {"layers", c.layers},
                {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                {"epochs", c.epochs},         {"seed", c.seed},
                {"optimizer", to_string(c.optimizer)}, {"clip_norm", c.clip_norm}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.m_vocab = j.at("m_vocab").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.layers = j.at("layers").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    c.clip_norm = j.at("clip_norm").get<double>();
    c.validate();
    return c;
}

json to_json(const HasherConfig& c) {
    return json{{"m_vocab", c.m_vocab},
                {"hash_seed", c.hash_seed},
                {"time_bin_ms", c.time_bin_ms},
                {"len_bin", c.len_bin}};
}

HasherConfig hasher_config_from_json(const json& j) {
    HasherConfig c;
    c.m_vocab = j.at("m_vocab").get<int>();
    c.hash_seed = j.at("hash_seed").get<std::uint64_t>();
    c.time_bin_ms = j.at("time_bin_ms").get<double>();
    c.len_bin = j.at("len_bin").get<double>();
    c.validate();
    return c;
}

namespace {

struct TensorRef {
    std::string name;
    const Mat<double>* data;
};

void append_u64(std::string& out, std::uint64_t v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    out.append(buf, 8);
}

template <typename Model>
void collect(const Model& model, const std::string& prefix, std::vector<TensorRef>& out) {
    for (const auto& [name, m] : param_blocks(model)) out.push_back({prefix + name, m});
}

std::string write(json header, const std::vector<TensorRef>& tensors) {
    json index = json::array();
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        index.push_back({{"name", t.name},
                         {"shape", {t.data->rows(), t.data->cols()}},
                         {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.data->size()) * 4;
    }
    header["version"] = kCheckpointVersion;
    header["tensor_index"] = std::move(index);
    const std::string text = header.dump();

    std::string out(kCheckpointMagic);
    append_u64(out, text.size());
    out += text;
    out.reserve(out.size() + offset);
    for (const auto& t : tensors) {
        for (Eigen::Index i = 0; i < t.data->size(); ++i) {
            const float f = static_cast<float>((*t.data)(i));
            char buf[4];
            std::memcpy(buf, &f, 4);
            out.append(buf, 4);
        }
    }
    return out;
}

struct Parsed {
    json header;
    std::string_view data;
};

Parsed parse(std::string_view bytes) {
    if (bytes.size() < kCheckpointMagic.size() ||
        bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
        throw CheckpointVersionError("bad checkpoint magic (expected NDCKPT01)");
    if (bytes.size() < 16) throw CheckpointTruncatedError("checkpoint truncated before header length");
    std::uint64_t len;
    std::memcpy(&len, bytes.data() + 8, 8);
    if (len > bytes.size() - 16) throw CheckpointTruncatedError("checkpoint truncated inside header");
    Parsed p;
    try {
        p.header = json::parse(bytes.substr(16, len));
    } catch (const json::parse_error& e) {
        throw CheckpointTruncatedError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    if (!p.header.is_object() || !p.header.contains("version"))
        throw CheckpointVersionError("checkpoint header has no version");
    if (p.header.at("version") != kCheckpointVersion)
        throw CheckpointVersionError("unsupported checkpoint version " +
                                     p.header.at("version").dump());
    p.data = bytes.substr(16 + len);
    return p;
}

/// Fills each expected tensor from the index; validates names, shapes, offsets
/// and the total data length.
void read_tensors(const Parsed& p, const std::vector<std::pair<std::string, Mat<double>*>>& expected) {
    const json& index = p.header.at("tensor_index");
    if (!index.is_array() || index.size() != expected.size())
        throw CheckpointShapeError("tensor index has " + std::to_string(index.size()) +
                                   " entries, expected " + std::to_string(expected.size()));
    std::uint64_t offset = 0;
    for (std::size_t k = 0; k < expected.size(); ++k) {
        const json& e = index[k];
        auto& [name, m] = expected[k];
        if (e.at("name") != name)
            throw CheckpointShapeError("tensor " + std::to_string(k) + " is " + e.at("name").dump() +
                                       ", expected " + name);
        const auto rows = e.at("shape").at(0).get<Eigen::Index>();
        const auto cols = e.at("shape").at(1).get<Eigen::Index>();
        if (rows != m->rows() || cols != m->cols())
            throw CheckpointShapeError("tensor " + name + " has shape " + e.at("shape").dump() +
                                       ", config implies [" + std::to_string(m->rows()) + "," +
                                       std::to_string(m->cols()) + "]");
        if (e.at("offset").get<std::uint64_t>() != offset)
            throw CheckpointShapeError("tensor " + name + " has unexpected offset");
        const std::uint64_t n = static_cast<std::uint64_t>(m->size()) * 4;
        if (offset + n > p.data.size())
            throw CheckpointTruncatedError("checkpoint data ends inside tensor " + name);
        for (Eigen::Index i = 0; i < m->size(); ++i) {
            float f;
            std::memcpy(&f, p.data.data() + offset + static_cast<std::uint64_t>(i) * 4, 4);
            (*m)(i) = static_cast<double>(f);
        }
        offset += n;
    }
    if (offset != p.data.size())
        throw CheckpointTruncatedError("checkpoint has " + std::to_string(p.data.size() - offset) +
                                       " bytes beyond the indexed tensors");
}

json histogram_json(const HistogramModel& h) {
    json counts = json::array();
    for (const auto& [pair, c] : h.counts()) counts.push_back({pair.first, pair.second, c});
    return json{{"lambda", h.lambda()}, {"counts", std::move(counts)}};
}

HistogramModel histogram_from_json(const json& j) {
    std::map<StaticPair, std::uint64_t> counts;
    for (const auto& e : j.at("counts"))
        counts[{e.at(0).get<std::string>(), e.at(1).get<std::string>()}] = e.at(2).get<std::uint64_t>();
    return HistogramModel::from_counts(std::move(counts), j.at("lambda").get<double>());
}

template <typename Fn>
auto wrap_json_errors(Fn&& fn) {
    try {
        return fn();
    } catch (const json::exception& e) {
        throw CheckpointVersionError(std::string("malformed checkpoint header: ") + e.what());
    }
}

}  // namespace

std::string encode_checkpoint(const ModelCheckpoint& ckpt) {
    if (ckpt.model.config.m_vocab != ckpt.hasher.m_vocab)
        throw ShapeError("model and hasher disagree on m_vocab");
    json header{{"model_config", to_json(ckpt.model.config)},
                {"hasher_config", to_json(ckpt.hasher)},
                {"role", to_string(ckpt.model.role)}};
    std::vector<TensorRef> tensors;
    collect(ckpt.model, "", tensors);
    if (ckpt.histogram) header["histogram"] = histogram_json(*ckpt.histogram);
    if (ckpt.optimizer) {
        header["optimizer"] = {{"step", ckpt.optimizer->step},
                               {"beta1", ckpt.optimizer->beta1},
                               {"beta2", ckpt.optimizer->beta2},
                               {"floor", ckpt.optimizer->floor}};
        collect(ckpt.optimizer->m, "adam.m.", tensors);
        collect(ckpt.optimizer->v, "adam.v.", tensors);
    }
    return write(std::move(header), tensors);
}

std::string encode_checkpoint(const ClassifierCheckpoint& ckpt) {
    json header{{"model_config", to_json(ckpt.model.config)},
                {"hasher_config", to_json(ckpt.hasher)},
                {"role", to_string(Role::classifier)}};
    std::vector<TensorRef> tensors;
    collect(ckpt.model, "", tensors);
    return write(std::move(header), tensors);
}

ModelCheckpoint decode_model_checkpoint(std::string_view bytes) {
    const Parsed p = parse(bytes);
    return wrap_json_errors([&] {
        const Role role = parse_role(p.header.at("role").get<std::string>());
        if (role == Role::classifier)
            throw CheckpointShapeError("checkpoint holds a classifier, not a sequence model");
        ModelCheckpoint ckpt{SequenceModel::zeros(model_config_from_json(p.header.at("model_config")), role),
                             hasher_config_from_json(p.header.at("hasher_config")),
                             std::nullopt, std::nullopt};
        if (ckpt.hasher.m_vocab != ckpt.model.config.m_vocab)
            throw CheckpointShapeError("model and hasher disagree on m_vocab");
        std::vector<std::pair<std::string, Mat<double>*>> expected;
        for (auto& [name, m] : param_blocks(ckpt.model)) expected.emplace_back(name, m);
        if (p.header.contains("optimizer")) {
            const json& o = p.header.at("optimizer");
            SequenceOptimizer opt = SequenceOptimizer::for_model(ckpt.model);
            opt.step = o.at("step").get<long>();
            opt.beta1 = o.at("beta1").get<double>();
            opt.beta2 = o.at("beta2").get<double>();
            opt.floor = o.at("floor").get<double>();
            ckpt.optimizer = std::move(opt);
            for (auto& [name, m] : param_blocks(ckpt.optimizer->m)) expected.emplace_back("adam.m." + name, m);
            for (auto& [name, m] : param_blocks(ckpt.optimizer->v)) expected.emplace_back("adam.v." + name, m);
        }
        read_tensors(p, expected);
        if (p.header.contains("histogram")) ckpt.histogram = histogram_from_json(p.header.at("histogram"));
        return ckpt;
    });
}

ClassifierCheckpoint decode_classifier_checkpoint(std::string_view bytes) {
    const Parsed p = parse(bytes);
    return wrap_json_errors([&] {
        if (parse_role(p.header.at("role").get<std::string>()) != Role::classifier)
            throw CheckpointShapeError("checkpoint does not hold a classifier");
        ClassifierCheckpoint ckpt{BinaryClassifier::zeros(model_config_from_json(p.header.at("model_config"))),
                                  hasher_config_from_json(p.header.at("hasher_config"))};
        std::vector<std::pair<std::string, Mat<double>*>> expected;
        for (auto& [name, m] : param_blocks(ckpt.model)) expected.emplace_back(name, m);
        read_tensors(p, expected);
        return ckpt;
    });
}

json read_checkpoint_header(std::string_view bytes) { return parse(bytes).header; }

std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {
void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path);
}
}  // namespace

void save_checkpoint(const std::string& path, const ModelCheckpoint& ckpt) {
    write_file(path, encode_checkpoint(ckpt));
}

void save_checkpoint(const std::string& path, const ClassifierCheckpoint& ckpt) {
    write_file(path, encode_checkpoint(ckpt));
}

ModelCheckpoint load_model_checkpoint(const std::string& path) {
    return decode_model_checkpoint(read_file_bytes(path));
}

ClassifierCheckpoint load_classifier_checkpoint(const std::string& path) {
    return decode_classifier_checkpoint(read_file_bytes(path));
}

}  // namespace ndf
