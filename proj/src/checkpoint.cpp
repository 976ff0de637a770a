#include "dsadapt/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts unsupported");
static_assert(sizeof(double) == 8, "float64 payload expected");

namespace dsadapt {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'A', 'D', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::ordered_json header;
    header["step"] = ckpt.step;
    header["num_classes"] = ckpt.num_classes;
    header["config"] = config_to_map(ckpt.config);

    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        nlohmann::ordered_json rec;
        rec["name"] = name;
        rec["shape"] = t.shape();
        rec["offset"] = offset;
        rec["count"] = t.numel();
        tensors.push_back(std::move(rec));
        offset += t.numel();
    }
    header["tensors"] = std::move(tensors);
    std::string json = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    std::uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    std::uint64_t jlen = json.size();
    out.write(reinterpret_cast<const char*>(&jlen), sizeof(jlen));
    out.write(json.data(), static_cast<std::streamsize>(json.size()));
    for (const auto& [name, t] : ckpt.tensors)
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("not a dsadapt checkpoint: " + path);
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    std::uint64_t jlen = 0;
    in.read(reinterpret_cast<char*>(&jlen), sizeof(jlen));
    std::string json(jlen, '\0');
    in.read(json.data(), static_cast<std::streamsize>(jlen));
    if (!in) throw std::runtime_error("truncated checkpoint header: " + path);

    auto header = nlohmann::ordered_json::parse(json);
    Checkpoint ckpt;
    ckpt.step = header.at("step");
    ckpt.num_classes = header.at("num_classes");
    ckpt.config = config_from_map(header.at("config").get<std::map<std::string, std::string>>());

    std::streampos data_start = in.tellg();
    for (const auto& rec : header.at("tensors")) {
        std::string name = rec.at("name");
        std::vector<int> shape = rec.at("shape").get<std::vector<int>>();
        std::uint64_t offset = rec.at("offset");
        std::uint64_t count = rec.at("count");
        Tensor t(shape);
        if (t.numel() != count)
            throw std::runtime_error("checkpoint tensor '" + name + "': shape/count mismatch");
        in.seekg(data_start + static_cast<std::streamoff>(offset * sizeof(double)));
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw std::runtime_error("truncated checkpoint payload at tensor '" + name + "'");
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

}  // namespace dsadapt
