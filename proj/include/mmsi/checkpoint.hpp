#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "mmsi/mmsi.hpp"

namespace mmsi {

// Versioned binary checkpoint: magic, JSON config header, then named tensors
// as little-endian doubles.
constexpr char kCheckpointMagic[8] = {'M', 'M', 'S', 'I', 'C', 'K', 'P', '1'};

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(buf, 8);
}

inline std::uint64_t read_u64(std::istream& in) {
    char buf[8];
    in.read(buf, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    return v;
}

inline void write_checkpoint(const std::string& path, const nlohmann::json& header,
                             const ParamStore& store) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, 8);
    const std::string h = header.dump();
    write_u64(out, h.size());
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    write_u64(out, store.tensors().size());
    for (const auto& t : store.tensors()) {
        write_u64(out, t.name.size());
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_u64(out, static_cast<std::uint64_t>(t.value.rows()));
        write_u64(out, static_cast<std::uint64_t>(t.value.cols()));
        out.write(reinterpret_cast<const char*>(t.value.data()),
                  static_cast<std::streamsize>(sizeof(double)) * t.value.size());
    }
}

inline nlohmann::json open_checkpoint(std::ifstream& in, const std::string& path,
                                      const std::string& expected_type) {
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("not a model checkpoint: " + path);
    const std::uint64_t header_len = read_u64(in);
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    nlohmann::json j = nlohmann::json::parse(header);
    if (j.value("model_type", "") != expected_type)
        throw std::runtime_error("checkpoint " + path + " holds a \"" +
                                 j.value("model_type", "?") + "\" model, expected \"" +
                                 expected_type + "\"");
    return j;
}

inline void read_store(std::istream& in, ParamStore& store) {
    const std::uint64_t n = read_u64(in);
    if (n != store.tensors().size())
        throw std::runtime_error("checkpoint tensor count does not match the model");
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint64_t name_len = read_u64(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        ParamTensor& t = store.at(name);
        const auto rows = static_cast<Eigen::Index>(read_u64(in));
        const auto cols = static_cast<Eigen::Index>(read_u64(in));
        if (rows != t.value.rows() || cols != t.value.cols())
            throw std::runtime_error("checkpoint tensor \"" + name + "\" has mismatched shape");
        in.read(reinterpret_cast<char*>(t.value.data()),
                static_cast<std::streamsize>(sizeof(double)) * t.value.size());
    }
    if (!in) throw std::runtime_error("checkpoint truncated");
}

}  // namespace detail

inline void save_classifier(const GuiltClassifier& model, const std::string& path) {
    nlohmann::json header;
    header["format_version"] = 1;
    header["model_type"] = "classifier";
    header["encoder"] = model.encoder().config().to_json();
    header["vocab_size"] = model.encoder().vocab_size();
    header["expected_source"] = text_source_name(model.expected_source());
    detail::write_checkpoint(path, header, model.params());
}

inline std::unique_ptr<GuiltClassifier> load_classifier(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    nlohmann::json j = detail::open_checkpoint(in, path, "classifier");
    const EncoderConfig cfg = EncoderConfig::from_json(j["encoder"]);
    const std::string src = j.value("expected_source", "fd");
    auto model = std::make_unique<GuiltClassifier>(
        cfg, j["vocab_size"].get<int>(), 0,
        src == "cv" ? TextSource::cv : (src == "cv_d" ? TextSource::cv_d : TextSource::fd));
    detail::read_store(in, model->params());
    return model;
}

inline void save_regressor(const PrisonRegressor& model, const std::string& path) {
    nlohmann::json header;
    header["format_version"] = 1;
    header["model_type"] = "regressor";
    header["encoder"] = model.encoder().config().to_json();
    header["vocab_size"] = model.encoder().vocab_size();
    header["fusion"] = model.use_fusion();
    header["prison_max"] = model.prison_max();
    detail::write_checkpoint(path, header, model.params());
}

inline std::unique_ptr<PrisonRegressor> load_regressor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    nlohmann::json j = detail::open_checkpoint(in, path, "regressor");
    const EncoderConfig cfg = EncoderConfig::from_json(j["encoder"]);
    auto model = std::make_unique<PrisonRegressor>(cfg, j["vocab_size"].get<int>(), 0,
                                                   j["fusion"].get<bool>(),
                                                   j["prison_max"].get<int>());
    detail::read_store(in, model->params());
    return model;
}

inline void save_joint(const JointModel& model, const std::string& path) {
    nlohmann::json header;
    header["format_version"] = 1;
    header["model_type"] = "joint";
    header["encoder"] = model.fd_encoder().config().to_json();
    header["vocab_size"] = model.fd_encoder().vocab_size();
    header["prison_max"] = model.prison_max();
    detail::write_checkpoint(path, header, model.params());
}

inline std::unique_ptr<JointModel> load_joint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    nlohmann::json j = detail::open_checkpoint(in, path, "joint");
    const EncoderConfig cfg = EncoderConfig::from_json(j["encoder"]);
    auto model = std::make_unique<JointModel>(cfg, j["vocab_size"].get<int>(), 0,
                                              j["prison_max"].get<int>());
    detail::read_store(in, model->params());
    return model;
}

}  // namespace mmsi
