// SPDX-License-Identifier: Apache-2.0

#include "prefixbridge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "prefixbridge/config_json.hpp"

namespace pfx {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::size_t kMagicSize = sizeof(kCheckpointMagic);
constexpr std::size_t kPreambleSize = kMagicSize + 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

template <class F>
auto as_format_error(const char* what, F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint ") + what + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint ") + what + ": " + e.what());
    }
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    nlohmann::ordered_json header;
    header["version"] = kCheckpointVersion;
    header["configs"]["lm"] = to_json(ckpt.lm);
    header["configs"]["mapper"] = ckpt.mapper ? to_json(*ckpt.mapper) : Json(nullptr);
    header["configs"]["train"] = ckpt.train ? to_json(*ckpt.train) : Json(nullptr);
    header["vocab"] = ckpt.vocab.corpus_tokens();
    auto manifest = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, p] : ckpt.params.entries()) {
        manifest.push_back({{"name", name}, {"shape", p.value.shape()}, {"offset", offset}});
        offset += p.value.size() * sizeof(float);
    }
    header["manifest"] = std::move(manifest);
    const std::string text = header.dump();

    std::vector<std::uint8_t> out;
    out.reserve(kPreambleSize + text.size() + offset);
    out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& [name, p] : ckpt.params.entries()) {
        const auto* bytes = reinterpret_cast<const std::uint8_t*>(p.value.storage().data());
        out.insert(out.end(), bytes, bytes + p.value.size() * sizeof(float));
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kMagicSize) {
        throw FormatError("checkpoint truncated: missing magic");
    }
    if (std::memcmp(bytes.data(), kCheckpointMagic, kMagicSize - 1) != 0) {
        throw FormatError("not a checkpoint file (bad magic)");
    }
    if (bytes[kMagicSize - 1] != static_cast<std::uint8_t>(kCheckpointMagic[kMagicSize - 1])) {
        throw VersionError("unsupported checkpoint format version byte '" +
                           std::string(1, static_cast<char>(bytes[kMagicSize - 1])) + "'");
    }
    if (bytes.size() < kPreambleSize) {
        throw FormatError("checkpoint truncated: missing header length");
    }
    const std::size_t header_len = get_u32(bytes.data() + kMagicSize);
    if (bytes.size() - kPreambleSize < header_len) {
        throw FormatError("checkpoint truncated: header");
    }
    const auto* header_begin = reinterpret_cast<const char*>(bytes.data() + kPreambleSize);
    Json header;
    try {
        header = Json::parse(header_begin, header_begin + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    if (!header.is_object() || !header.contains("version") || !header["version"].is_number_integer()) {
        throw FormatError("checkpoint header lacks an integer version");
    }
    if (header["version"].get<std::int64_t>() != kCheckpointVersion) {
        throw VersionError("unsupported checkpoint version " + header["version"].dump());
    }

    Checkpoint ckpt;
    as_format_error("configs", [&] {
        const Json& configs = header.at("configs");
        from_json(configs.at("lm"), "lm", ckpt.lm);
        if (!configs.at("mapper").is_null()) {
            MapperConfig m;
            from_json(configs.at("mapper"), "mapper", m);
            ckpt.mapper = m;
        }
        if (!configs.at("train").is_null()) {
            TrainConfig t;
            from_json(configs.at("train"), "train", t);
            ckpt.train = t;
        }
        return 0;
    });
    try {
        ckpt.vocab = Vocabulary(header.at("vocab").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint vocab: ") + e.what());
    } catch (const InvalidCorpusError& e) {
        throw FormatError(std::string("checkpoint vocab: ") + e.what());
    }

    const std::uint8_t* payload = bytes.data() + kPreambleSize + header_len;
    const std::size_t payload_size = bytes.size() - kPreambleSize - header_len;
    std::size_t expected_offset = 0;
    as_format_error("manifest", [&] {
        for (const auto& entry : header.at("manifest")) {
            const auto name = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<Shape>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            if (shape.empty()) {
                throw FormatError("checkpoint manifest: tensor '" + name + "' has no shape");
            }
            const std::size_t n = shape_numel(shape);
            if (offset != expected_offset) {
                throw FormatError("checkpoint manifest: tensor '" + name + "' has offset " + std::to_string(offset) +
                                  ", expected " + std::to_string(expected_offset));
            }
            const std::size_t nbytes = n * sizeof(float);
            if (offset > payload_size || payload_size - offset < nbytes) {
                throw FormatError("checkpoint truncated: tensor '" + name + "' extends past the payload");
            }
            std::vector<float> data(n);
            std::memcpy(data.data(), payload + offset, nbytes);
            if (ckpt.params.contains(name)) {
                throw FormatError("checkpoint manifest: duplicate tensor '" + name + "'");
            }
            try {
                ckpt.params.add(name, Tensor<float>(shape, std::move(data)));
            } catch (const DimensionError& e) {
                throw FormatError(std::string("checkpoint manifest: ") + e.what());
            }
            expected_offset += nbytes;
        }
        return 0;
    });
    if (expected_offset != payload_size) {
        throw FormatError("checkpoint payload has " + std::to_string(payload_size - expected_offset) +
                          " trailing bytes");
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write checkpoint " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw FormatError("failed writing checkpoint " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open checkpoint " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace pfx
