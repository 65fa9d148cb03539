#include "dsmcd/synthcity.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "dsmcd/rng.hpp"

namespace dsmcd::synthcity {

namespace {

struct Rect {
    int x0, y0, x1, y1;  // half-open
    int w() const { return x1 - x0; }
    int h() const { return y1 - y0; }
    int area() const { return w() * h(); }
    bool overlaps(const Rect& o) const {
        return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
    }
};

enum class Kind { Static, Demolished, New, RebuiltPre };

struct Building {
    Rect rect;
    double height;
    Kind kind;
    // rebuilt pairs: the late-period footprint and height
    Rect rect_post{};
    double height_post = 0.0;
};

constexpr double kPi = 3.14159265358979323846;
constexpr int kMaxPlacementAttempts = 20000;

Rect sample_rect(Rng& rng, int scene_w, int scene_h, int min_side, int max_side) {
    const int w = static_cast<int>(rng.uniform_int(min_side, max_side));
    const int h = static_cast<int>(rng.uniform_int(min_side, max_side));
    const int x0 = static_cast<int>(rng.uniform_int(0, scene_w - w));
    const int y0 = static_cast<int>(rng.uniform_int(0, scene_h - h));
    return {x0, y0, x0 + w, y0 + h};
}

void paint(MaskU8& mask, const Rect& r) {
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) mask.at(y, x) = 1;
}

void raise(RasterF& dsm, const Rect& r, double h) {
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) dsm.at(y, x) += static_cast<float>(h);
}

/// Hillshade intensity with light azimuth 315 deg, altitude 45 deg.
RasterF hillshade(const RasterF& dsm) {
    const int h = dsm.height(), w = dsm.width();
    RasterF shade(1, h, w);
    const double azimuth = 315.0 * kPi / 180.0;
    const double altitude = 45.0 * kPi / 180.0;
    const double zenith = kPi / 2.0 - altitude;
    // light direction measured from north, clockwise; conventional transform
    const double az_math = kPi / 2.0 - azimuth;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
            const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
            const double dzdx = (dsm.at(y, xp) - dsm.at(y, xm)) / (xp - xm == 0 ? 1 : xp - xm);
            const double dzdy = (dsm.at(yp, x) - dsm.at(ym, x)) / (yp - ym == 0 ? 1 : yp - ym);
            const double slope = std::atan(std::hypot(dzdx, dzdy));
            double aspect = std::atan2(dzdy, -dzdx);
            double s = std::cos(zenith) * std::cos(slope) +
                       std::sin(zenith) * std::sin(slope) * std::cos(az_math - aspect);
            shade.at(y, x) = static_cast<float>(std::clamp(s, 0.0, 1.0));
        }
    }
    return shade;
}

} // namespace

void SceneConfig::validate() const {
    if (width <= 0 || height <= 0)
        throw std::invalid_argument("SceneConfig: width and height must be positive");
    if (num_buildings_pre < 0 || num_new < 0 || num_demolished < 0 || num_rebuilt < 0)
        throw std::invalid_argument("SceneConfig: counts must be non-negative");
    if (num_demolished + num_rebuilt > num_buildings_pre)
        throw std::invalid_argument(
            "SceneConfig: demolished + rebuilt cannot exceed pre-period buildings");
    if (occlusion_rate < 0.0 || occlusion_rate > 1.0)
        throw std::invalid_argument("SceneConfig: occlusion_rate must be in [0,1]");
    if (height_min_m <= 0.0 || height_max_m < height_min_m)
        throw std::invalid_argument("SceneConfig: invalid height range");
    if (noise_sigma < 0.0)
        throw std::invalid_argument("SceneConfig: noise_sigma must be non-negative");
}

double default_tau_noise(const SceneConfig& config) { return 3.0 * config.noise_sigma; }

Scene generate_scene(const SceneConfig& config) {
    config.validate();
    const int w = config.width, h = config.height;

    const int min_dim = std::min(w, h);
    const int min_side = std::max(3, min_dim / 16);
    const int max_side = std::max(min_side, min_dim / 5);

    // Worst-case footprint area must leave room, otherwise rejection
    // placement cannot be relied upon to terminate.
    const long long total = static_cast<long long>(config.num_buildings_pre + config.num_new);
    const long long worst_area = total * static_cast<long long>(max_side) * max_side;
    if (worst_area > static_cast<long long>(0.8 * w * h))
        throw std::invalid_argument("generate_scene: total footprint area exceeds 80% of scene");

    Rng rng(config.seed);

    // Assign roles within the pre-period population: the first num_demolished
    // are demolished, the next num_rebuilt are rebuilt, the rest are static.
    std::vector<Building> buildings;
    std::vector<Rect> occupied;  // bounding regions that future placements must avoid

    auto place = [&](int margin_growth) -> Rect {
        for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
            Rect r = sample_rect(rng, w, h, min_side, max_side);
            Rect grown{std::max(0, r.x0 - margin_growth), std::max(0, r.y0 - margin_growth),
                       std::min(w, r.x1 + margin_growth), std::min(h, r.y1 + margin_growth)};
            bool ok = true;
            for (const auto& o : occupied)
                if (grown.overlaps(o)) { ok = false; break; }
            if (ok) return r;
        }
        throw std::runtime_error("generate_scene: placement did not converge");
    };

    auto sample_height = [&]() { return rng.uniform(config.height_min_m, config.height_max_m); };

    for (int i = 0; i < config.num_buildings_pre; ++i) {
        Kind kind = Kind::Static;
        if (i < config.num_demolished) kind = Kind::Demolished;
        else if (i < config.num_demolished + config.num_rebuilt) kind = Kind::RebuiltPre;

        // rebuilt pairs reserve extra margin so the shifted late footprint
        // stays clear of the neighbours
        Rect r = place(kind == Kind::RebuiltPre ? max_side / 2 + 2 : 1);
        Building b;
        b.rect = r;
        b.height = sample_height();
        b.kind = kind;
        if (kind == Kind::RebuiltPre) {
            // overlapping late-period footprint: shift and resize, clamped in bounds
            const int max_shift = std::max(2, r.w() / 2);
            for (;;) {
                int dx = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
                int dy = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
                int grow_x = static_cast<int>(rng.uniform_int(-2, 3));
                int grow_y = static_cast<int>(rng.uniform_int(-2, 3));
                Rect p{r.x0 + dx, r.y0 + dy, r.x1 + dx + grow_x, r.y1 + dy + grow_y};
                p.x0 = std::clamp(p.x0, 0, w - 1);
                p.y0 = std::clamp(p.y0, 0, h - 1);
                p.x1 = std::clamp(p.x1, p.x0 + min_side, w);
                p.y1 = std::clamp(p.y1, p.y0 + min_side, h);
                if (p.overlaps(r)) { b.rect_post = p; break; }
            }
            // rebuilt height differs by at least 1 m so the label survives
            // any sane noise threshold
            do { b.height_post = sample_height(); } while (std::abs(b.height_post - b.height) < 1.0);
            Rect bound{std::min(r.x0, b.rect_post.x0), std::min(r.y0, b.rect_post.y0),
                       std::max(r.x1, b.rect_post.x1), std::max(r.y1, b.rect_post.y1)};
            occupied.push_back(bound);
        } else {
            occupied.push_back(r);
        }
        buildings.push_back(b);
    }
    for (int i = 0; i < config.num_new; ++i) {
        Rect r = place(1);
        occupied.push_back(r);
        buildings.push_back({r, sample_height(), Kind::New});
    }

    Scene scene;
    scene.dsm_pre = RasterF(1, h, w, 0.0f);
    scene.dsm_post = RasterF(1, h, w, 0.0f);
    scene.buildings_pre = MaskU8(1, h, w, 0);
    scene.buildings_post = MaskU8(1, h, w, 0);
    scene.relevance_mask = RelevanceMask(1, h, w, +1);

    for (const auto& b : buildings) {
        switch (b.kind) {
            case Kind::Static:
                raise(scene.dsm_pre, b.rect, b.height);
                raise(scene.dsm_post, b.rect, b.height);
                paint(scene.buildings_pre, b.rect);
                paint(scene.buildings_post, b.rect);
                break;
            case Kind::Demolished:
                raise(scene.dsm_pre, b.rect, b.height);
                paint(scene.buildings_pre, b.rect);
                break;
            case Kind::New:
                raise(scene.dsm_post, b.rect, b.height);
                paint(scene.buildings_post, b.rect);
                break;
            case Kind::RebuiltPre:
                raise(scene.dsm_pre, b.rect, b.height);
                paint(scene.buildings_pre, b.rect);
                raise(scene.dsm_post, b.rect_post, b.height_post);
                paint(scene.buildings_post, b.rect_post);
                break;
        }
    }

    // sensor noise, independent per epoch
    for (size_t i = 0; i < scene.dsm_pre.size(); ++i)
        scene.dsm_pre.raw()[i] += static_cast<float>(rng.normal(0.0, config.noise_sigma));
    for (size_t i = 0; i < scene.dsm_post.size(); ++i)
        scene.dsm_post.raw()[i] += static_cast<float>(rng.normal(0.0, config.noise_sigma));

    // relevance flips over whole changed components
    std::vector<size_t> changed_idx;
    for (size_t i = 0; i < buildings.size(); ++i)
        if (buildings[i].kind != Kind::Static) changed_idx.push_back(i);
    const int n_flips =
        static_cast<int>(std::floor(config.occlusion_rate * changed_idx.size() + 0.5));
    // Fisher-Yates prefix selection
    for (int i = 0; i < n_flips; ++i) {
        const int j = static_cast<int>(rng.uniform_int(i, static_cast<int64_t>(changed_idx.size()) - 1));
        std::swap(changed_idx[i], changed_idx[j]);
        const Building& b = buildings[changed_idx[i]];
        auto flip = [&](const Rect& r) {
            for (int y = r.y0; y < r.y1; ++y)
                for (int x = r.x0; x < r.x1; ++x) scene.relevance_mask.at(y, x) = -1;
        };
        flip(b.rect);
        if (b.kind == Kind::RebuiltPre) flip(b.rect_post);
    }

    // Late-period imagery: hillshade of the post DSM modulated by a
    // per-footprint albedo and texture noise. Correlated with the DSM but
    // not equal to it.
    RasterF shade = hillshade(scene.dsm_post);
    scene.image_post = RasterF(3, h, w, 0.0f);
    RasterF albedo(3, h, w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) albedo.at(c, y, x) = 0.45f;
    for (const auto& b : buildings) {
        if (b.kind == Kind::Demolished) continue;  // absent from the late period
        const Rect& r = b.kind == Kind::RebuiltPre ? b.rect_post : b.rect;
        float rgb[3];
        for (float& v : rgb) v = static_cast<float>(rng.uniform(0.3, 0.9));
        for (int c = 0; c < 3; ++c)
            for (int y = r.y0; y < r.y1; ++y)
                for (int x = r.x0; x < r.x1; ++x) albedo.at(c, y, x) = rgb[c];
    }
    const double texture_sigma = 0.03;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double v = 0.15 + 0.85 * shade.at(y, x);
                v = v * albedo.at(c, y, x) + rng.normal(0.0, texture_sigma);
                scene.image_post.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }

    return scene;
}

RasterF compute_height_change(const RasterF& dsm_pre, const RasterF& dsm_post) {
    if (!dsm_pre.same_shape(dsm_post))
        throw std::invalid_argument("compute_height_change: dimension mismatch");
    RasterF out(dsm_pre.channels(), dsm_pre.height(), dsm_pre.width());
    for (size_t i = 0; i < out.size(); ++i)
        out.raw()[i] = dsm_post.raw()[i] - dsm_pre.raw()[i];
    return out;
}

ChangeLabels generate_change_map(const RasterF& delta_h, const RelevanceMask& relevance,
                                 const MaskU8& buildings_pre, const MaskU8& buildings_post,
                                 double tau_noise) {
    if (!delta_h.same_plane(relevance) || !delta_h.same_plane(buildings_pre) ||
        !delta_h.same_plane(buildings_post))
        throw std::invalid_argument("generate_change_map: dimension mismatch");
    const int h = delta_h.height(), w = delta_h.width();

    ChangeLabels labels;
    labels.semantic = LabelMap(1, h, w, kBackground);
    labels.height_change = RasterF(1, h, w, 0.0f);
    labels.raw_delta_h = delta_h;

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int m = relevance.at(y, x);
            if (m != 1 && m != -1)
                throw std::invalid_argument("generate_change_map: relevance must be in {-1,+1}");
            const double dh_raw = delta_h.at(y, x);
            const double dh = std::abs(dh_raw) < tau_noise ? 0.0 : dh_raw;
            const double signed_change = dh * m;
            if (signed_change < 0.0 && buildings_pre.at(y, x)) {
                labels.semantic.at(y, x) = kDemolished;
                labels.height_change.at(y, x) = static_cast<float>(dh_raw * m);
            } else if (signed_change > 0.0 && buildings_post.at(y, x)) {
                labels.semantic.at(y, x) = kNewlyBuilt;
                labels.height_change.at(y, x) = static_cast<float>(dh_raw * m);
            }
        }
    }
    return labels;
}

std::vector<TileSample> split_tiles(const Scene& scene, const ChangeLabels& labels,
                                    int tile_size, bool keep_empty) {
    const int h = scene.dsm_pre.height(), w = scene.dsm_pre.width();
    if (tile_size <= 0 || h % tile_size != 0 || w % tile_size != 0)
        throw std::invalid_argument("split_tiles: tile_size must divide scene dimensions");

    std::vector<TileSample> tiles;
    for (int ty = 0; ty < h; ty += tile_size) {
        for (int tx = 0; tx < w; tx += tile_size) {
            TileSample t;
            t.dsm_pre = RasterF(1, tile_size, tile_size);
            t.image_post = RasterF(3, tile_size, tile_size);
            t.gt_semantic = LabelMap(1, tile_size, tile_size);
            t.gt_height = RasterF(1, tile_size, tile_size);
            t.relevance = RelevanceMask(1, tile_size, tile_size);
            bool has_change = false;
            for (int y = 0; y < tile_size; ++y) {
                for (int x = 0; x < tile_size; ++x) {
                    t.dsm_pre.at(y, x) = scene.dsm_pre.at(ty + y, tx + x);
                    for (int c = 0; c < 3; ++c)
                        t.image_post.at(c, y, x) = scene.image_post.at(c, ty + y, tx + x);
                    const uint8_t s = labels.semantic.at(ty + y, tx + x);
                    t.gt_semantic.at(y, x) = s;
                    t.gt_height.at(y, x) = labels.height_change.at(ty + y, tx + x);
                    t.relevance.at(y, x) = scene.relevance_mask.at(ty + y, tx + x);
                    if (s != kBackground) has_change = true;
                }
            }
            if (keep_empty || has_change) tiles.push_back(std::move(t));
        }
    }
    return tiles;
}

HeightScale compute_normalization_stats(const std::vector<TileSample>& train_tiles,
                                        double coverage) {
    if (train_tiles.empty())
        throw std::invalid_argument("compute_normalization_stats: empty tile list");
    if (coverage <= 0.0 || coverage > 1.0)
        throw std::invalid_argument("compute_normalization_stats: coverage must be in (0,1]");

    std::vector<float> values;
    for (const auto& t : train_tiles)
        values.insert(values.end(), t.gt_height.raw().begin(), t.gt_height.raw().end());
    std::sort(values.begin(), values.end());

    const size_t n = values.size();
    const double p_lo = (1.0 - coverage) / 2.0;
    const double p_hi = 1.0 - p_lo;
    auto index = [n](double p) {
        auto i = static_cast<size_t>(std::llround(p * static_cast<double>(n - 1)));
        return std::min(i, n - 1);
    };
    return {static_cast<double>(values[index(p_lo)]), static_cast<double>(values[index(p_hi)])};
}

size_t count_components(const LabelMap& semantic, uint8_t cls) {
    const int h = semantic.height(), w = semantic.width();
    std::vector<uint8_t> seen(static_cast<size_t>(h) * w, 0);
    size_t count = 0;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (semantic.at(y, x) != cls || seen[static_cast<size_t>(y) * w + x]) continue;
            ++count;
            queue.push_back({y, x});
            seen[static_cast<size_t>(y) * w + x] = 1;
            while (!queue.empty()) {
                auto [cy, cx] = queue.front();
                queue.pop_front();
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        const size_t ni = static_cast<size_t>(ny) * w + nx;
                        if (seen[ni] || semantic.at(ny, nx) != cls) continue;
                        seen[ni] = 1;
                        queue.push_back({ny, nx});
                    }
                }
            }
        }
    }
    return count;
}

DatasetStats dataset_stats(const std::vector<TileSample>& tiles, int cum_bins) {
    DatasetStats s;
    s.tiles_total = tiles.size();
    if (tiles.empty()) return s;

    std::vector<float> heights_dem, heights_new;
    for (const auto& t : tiles) {
        bool has_change = false;
        s.objects_demolished += count_components(t.gt_semantic, kDemolished);
        s.objects_newly_built += count_components(t.gt_semantic, kNewlyBuilt);
        for (int y = 0; y < t.gt_semantic.height(); ++y) {
            for (int x = 0; x < t.gt_semantic.width(); ++x) {
                ++s.pixels_total;
                const uint8_t c = t.gt_semantic.at(y, x);
                if (c == kDemolished) {
                    ++s.pixels_demolished;
                    heights_dem.push_back(t.gt_height.at(y, x));
                    has_change = true;
                } else if (c == kNewlyBuilt) {
                    ++s.pixels_newly_built;
                    heights_new.push_back(t.gt_height.at(y, x));
                    has_change = true;
                }
            }
        }
        if (has_change) ++s.tiles_with_change;
    }
    s.changed_pixel_proportion =
        s.pixels_total == 0
            ? 0.0
            : static_cast<double>(s.pixels_demolished + s.pixels_newly_built) / s.pixels_total;
    s.tiles_with_change_fraction =
        s.tiles_total == 0 ? 0.0 : static_cast<double>(s.tiles_with_change) / s.tiles_total;

    auto cumulative = [cum_bins](std::vector<float>& v) {
        std::vector<CumulativeRow> rows;
        if (v.empty()) return rows;
        std::sort(v.begin(), v.end());
        const double lo = v.front(), hi = v.back();
        const double span = hi > lo ? hi - lo : 1.0;
        size_t cursor = 0;
        for (int b = 1; b <= cum_bins; ++b) {
            const double edge = lo + span * b / cum_bins;
            while (cursor < v.size() && v[cursor] <= edge) ++cursor;
            rows.push_back({edge, static_cast<double>(cursor) / v.size()});
        }
        rows.back().cumulative_fraction = 1.0;
        return rows;
    };
    s.cum_height_demolished = cumulative(heights_dem);
    s.cum_height_newly_built = cumulative(heights_new);
    return s;
}

} // namespace dsmcd::synthcity
