#include "dsmcd/dataset_io.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "dsmcd/npy.hpp"

namespace dsmcd::dataset_io {

using nlohmann::json;

void write_sample(const std::filesystem::path& dir, const synthcity::TileSample& tile) {
    std::filesystem::create_directories(dir);
    npy::save_grid(dir / "dsm_pre.npy", tile.dsm_pre);

    // image stored 8-bit, values quantized from [0,1]
    Grid<uint8_t> img(3, tile.image_post.height(), tile.image_post.width());
    for (size_t i = 0; i < img.size(); ++i)
        img.raw()[i] = static_cast<uint8_t>(
            std::lround(std::clamp(tile.image_post.raw()[i], 0.0f, 1.0f) * 255.0f));
    npy::save_grid(dir / "image_post.npy", img);

    npy::save_grid(dir / "sem_change.npy", tile.gt_semantic);
    npy::save_grid(dir / "height_change.npy", tile.gt_height);

    Grid<uint8_t> rel(1, tile.relevance.height(), tile.relevance.width());
    for (size_t i = 0; i < rel.size(); ++i)
        rel.raw()[i] = tile.relevance.raw()[i] > 0 ? 1 : 0;
    npy::save_grid(dir / "relevance.npy", rel);
}

synthcity::TileSample read_sample(const std::filesystem::path& dir) {
    synthcity::TileSample t;
    t.dsm_pre = npy::load_f32(dir / "dsm_pre.npy");
    Grid<uint8_t> img = npy::load_u8(dir / "image_post.npy");
    t.image_post = RasterF(img.channels(), img.height(), img.width());
    for (size_t i = 0; i < img.size(); ++i)
        t.image_post.raw()[i] = static_cast<float>(img.raw()[i]) / 255.0f;
    t.gt_semantic = npy::load_u8(dir / "sem_change.npy");
    t.gt_height = npy::load_f32(dir / "height_change.npy");
    Grid<uint8_t> rel = npy::load_u8(dir / "relevance.npy");
    t.relevance = RelevanceMask(1, rel.height(), rel.width());
    for (size_t i = 0; i < rel.size(); ++i)
        t.relevance.raw()[i] = rel.raw()[i] > 0 ? +1 : -1;
    return t;
}

void write_stats(const std::filesystem::path& split_dir, const SplitStats& stats) {
    json j;
    j["split"] = stats.split;
    j["class_pixels"] = {stats.class_pixels[0], stats.class_pixels[1], stats.class_pixels[2]};
    if (stats.height_scale) {
        j["height_scale"] = {{"min_m", stats.height_scale->min_m},
                             {"max_m", stats.height_scale->max_m}};
        j["coverage"] = stats.coverage;
    }
    if (stats.input_stats) {
        const auto& is = *stats.input_stats;
        j["input_stats"] = {{"dsm_mean", is.dsm_mean},
                            {"dsm_std", is.dsm_std},
                            {"image_mean", {is.image_mean[0], is.image_mean[1], is.image_mean[2]}},
                            {"image_std", {is.image_std[0], is.image_std[1], is.image_std[2]}}};
    }
    std::ofstream f(split_dir / "stats.json");
    if (!f) throw std::runtime_error("write_stats: cannot open " + split_dir.string());
    f << j.dump(2) << "\n";
}

SplitStats read_stats(const std::filesystem::path& split_dir) {
    std::ifstream f(split_dir / "stats.json");
    if (!f) throw std::runtime_error("read_stats: missing stats.json in " + split_dir.string());
    json j = json::parse(f);
    SplitStats s;
    s.split = j.at("split").get<std::string>();
    for (int c = 0; c < 3; ++c) s.class_pixels[c] = j.at("class_pixels")[c].get<size_t>();
    if (j.contains("height_scale")) {
        datapipe::HeightScale hs;
        hs.min_m = j["height_scale"].at("min_m").get<double>();
        hs.max_m = j["height_scale"].at("max_m").get<double>();
        s.height_scale = hs;
        s.coverage = j.value("coverage", 0.0);
    }
    if (j.contains("input_stats")) {
        datapipe::InputStats is;
        is.dsm_mean = j["input_stats"].at("dsm_mean").get<double>();
        is.dsm_std = j["input_stats"].at("dsm_std").get<double>();
        for (int c = 0; c < 3; ++c) {
            is.image_mean[c] = j["input_stats"].at("image_mean")[c].get<double>();
            is.image_std[c] = j["input_stats"].at("image_std")[c].get<double>();
        }
        s.input_stats = is;
    }
    return s;
}

void write_manifest(const std::filesystem::path& split_dir,
                    const std::vector<std::string>& ids) {
    std::ofstream f(split_dir / "manifest.txt");
    if (!f) throw std::runtime_error("write_manifest: cannot open " + split_dir.string());
    for (const auto& id : ids) f << id << "\n";
}

std::vector<std::string> read_manifest(const std::filesystem::path& split_dir) {
    std::ifstream f(split_dir / "manifest.txt");
    if (!f)
        throw std::runtime_error("read_manifest: missing manifest.txt in " + split_dir.string());
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) ids.push_back(line);
    return ids;
}

std::vector<datapipe::SamplePair> load_split(const std::filesystem::path& dataset_dir,
                                             const std::string& split) {
    const auto split_dir = dataset_dir / split;
    std::vector<datapipe::SamplePair> samples;
    for (const auto& id : read_manifest(split_dir)) {
        synthcity::TileSample t = read_sample(split_dir / id);
        datapipe::SamplePair sp = datapipe::assemble_sample(id, t);
        // label invariants hold on anything we are willing to train on
        for (int y = 0; y < sp.gt_semantic.height(); ++y)
            for (int x = 0; x < sp.gt_semantic.width(); ++x) {
                const uint8_t s = sp.gt_semantic.at(y, x);
                const float hc = sp.gt_height.at(y, x);
                const bool ok = (s == synthcity::kBackground && hc == 0.0f) ||
                                (s == synthcity::kDemolished && hc < 0.0f) ||
                                (s == synthcity::kNewlyBuilt && hc > 0.0f);
                if (!ok)
                    throw std::runtime_error("load_split: label invariant violated in sample " +
                                             sp.id);
            }
        samples.push_back(std::move(sp));
    }
    return samples;
}

} // namespace dsmcd::dataset_io
