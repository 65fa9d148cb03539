#include "dsmcd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace dsmcd::checkpoint {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'D', 'S', 'M', 'C', 'K', 'P', 'T', '1'};
}

void save(const std::filesystem::path& path, const model::ChangeModel& m) {
    json header;
    header["config"] = json::parse(m.config().to_json());
    json params = json::array();
    for (const auto& [name, p] : m.params().entries())
        params.push_back({{"name", name}, {"shape", p->shape}, {"count", p->numel()}});
    header["params"] = params;
    const std::string htext = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open for write: " + path.string());
    f.write(kMagic, 8);
    const uint64_t hlen = htext.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, p] : m.params().entries())
        f.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: write failed: " + path.string());
}

std::unique_ptr<model::ChangeModel> load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open: " + path.string());
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 8);
    std::string htext(hlen, '\0');
    f.read(htext.data(), static_cast<std::streamsize>(hlen));
    json header = json::parse(htext);

    auto config = model::ModelConfig::from_json(header.at("config").dump());
    auto m = std::make_unique<model::ChangeModel>(config);

    for (const auto& entry : header.at("params")) {
        const std::string name = entry.at("name").get<std::string>();
        const size_t count = entry.at("count").get<size_t>();
        nn::VarPtr p = m->params().find(name);
        if (p->numel() != count)
            throw std::runtime_error("checkpoint: size mismatch for " + name);
        f.read(reinterpret_cast<char*>(p->value.data()),
               static_cast<std::streamsize>(count * sizeof(double)));
    }
    if (!f) throw std::runtime_error("checkpoint: truncated data in " + path.string());
    return m;
}

} // namespace dsmcd::checkpoint
