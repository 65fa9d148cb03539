#include "dsmcd/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "dsmcd/checkpoint.hpp"

namespace dsmcd::harness {

using nlohmann::json;

namespace {

std::string pad_id(size_t i) {
    std::ostringstream os;
    os << std::setw(3) << std::setfill('0') << i;
    return os.str();
}

json read_json_file(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw std::invalid_argument("config: cannot open " + p.string());
    return json::parse(f);
}

} // namespace

RunConfig RunConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    RunConfig c;
    try {
        if (j.contains("scene")) {
            const auto& s = j["scene"];
            c.scene.width = s.value("width", c.scene.width);
            c.scene.height = s.value("height", c.scene.height);
            c.scene.num_buildings_pre = s.value("num_buildings_pre", c.scene.num_buildings_pre);
            c.scene.num_new = s.value("num_new", c.scene.num_new);
            c.scene.num_demolished = s.value("num_demolished", c.scene.num_demolished);
            c.scene.num_rebuilt = s.value("num_rebuilt", c.scene.num_rebuilt);
            c.scene.height_min_m = s.value("height_min_m", c.scene.height_min_m);
            c.scene.height_max_m = s.value("height_max_m", c.scene.height_max_m);
            c.scene.occlusion_rate = s.value("occlusion_rate", c.scene.occlusion_rate);
            c.scene.noise_sigma = s.value("noise_sigma", c.scene.noise_sigma);
        }
        if (j.contains("dataset")) {
            const auto& d = j["dataset"];
            c.dataset.scenes = d.value("scenes", c.dataset.scenes);
            c.dataset.tile_size = d.value("tile_size", c.dataset.tile_size);
            c.dataset.keep_empty = d.value("keep_empty", c.dataset.keep_empty);
            c.dataset.coverage = d.value("coverage", c.dataset.coverage);
            if (d.contains("splits"))
                for (int i = 0; i < 3; ++i) c.dataset.splits[i] = d["splits"][i].get<double>();
            if (d.contains("path")) c.dataset.path = d["path"].get<std::string>();
        }
        if (j.contains("model")) c.model = model::ModelConfig::from_json(j["model"].dump());
        if (j.contains("train")) {
            const auto& t = j["train"];
            c.training.epochs = t.value("epochs", c.training.epochs);
            if (t.contains("max_steps") && !t["max_steps"].is_null())
                c.training.max_steps = t["max_steps"].get<int64_t>();
            c.training.batch_size = t.value("batch_size", c.training.batch_size);
            c.training.accum_steps = t.value("accum_steps", c.training.accum_steps);
            c.training.shuffle = t.value("shuffle", c.training.shuffle);
            c.training.optim.lr = t.value("lr", c.training.optim.lr);
            c.training.optim.cosine_decay =
                t.value("cosine_decay", c.training.optim.cosine_decay);
            if (t.contains("loss_weights")) {
                c.training.loss_weights.lambda_pseudo = t["loss_weights"][0].get<double>();
                c.training.loss_weights.lambda_height = t["loss_weights"][1].get<double>();
                c.training.loss_weights.lambda_semantic = t["loss_weights"][2].get<double>();
            }
            if (t.contains("class_weights")) {
                c.training.class_weights.background = t["class_weights"][0].get<double>();
                c.training.class_weights.demolished = t["class_weights"][1].get<double>();
                c.training.class_weights.newly_built = t["class_weights"][2].get<double>();
            }
            c.training.consistency_weight =
                t.value("consistency_weight", c.training.consistency_weight);
            c.training.checkpoint_every_steps =
                t.value("checkpoint_every", c.training.checkpoint_every_steps);
        }
        if (j.contains("eval")) {
            const auto& e = j["eval"];
            c.eval.split = e.value("split", c.eval.split);
            c.eval.hist_bins = e.value("hist_bins", c.eval.hist_bins);
            if (e.contains("checkpoint")) c.eval.checkpoint = e["checkpoint"].get<std::string>();
        }
        if (j.contains("sweep_t")) {
            c.sweep_t.clear();
            for (const auto& v : j["sweep_t"]) c.sweep_t.push_back(v.get<double>());
        }
        c.seed = j.value("seed", c.seed);
        if (j.contains("out")) c.out = j["out"].get<std::string>();
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::from_json_file(const std::filesystem::path& path) {
    return from_json(read_json_file(path).dump());
}

std::array<size_t, 3> split_counts(size_t n, const std::array<double, 3>& p) {
    if (p[0] < 0 || p[1] < 0 || p[2] < 0 || std::abs(p[0] + p[1] + p[2] - 1.0) > 1e-9)
        throw std::invalid_argument("split_counts: proportions must be non-negative and sum to 1");
    const size_t b1 = static_cast<size_t>(std::floor(p[0] * static_cast<double>(n)));
    const size_t b2 = static_cast<size_t>(std::floor((p[0] + p[1]) * static_cast<double>(n)));
    return {b1, b2 - b1, n - b2};
}

GenerateSummary cmd_generate(const RunConfig& cfg) {
    const auto root = cfg.dataset_path();
    std::filesystem::create_directories(root);

    // one tile stream over all scenes, then cumulative split boundaries
    Rng master(cfg.seed);
    std::vector<synthcity::TileSample> tiles;
    for (int i = 0; i < cfg.dataset.scenes; ++i) {
        synthcity::SceneConfig sc = cfg.scene;
        sc.seed = master.next_u64();
        synthcity::Scene scene = synthcity::generate_scene(sc);
        RasterF delta = synthcity::compute_height_change(scene.dsm_pre, scene.dsm_post);
        synthcity::ChangeLabels labels =
            synthcity::generate_change_map(delta, scene.relevance_mask, scene.buildings_pre,
                                           scene.buildings_post, synthcity::default_tau_noise(sc));
        auto scene_tiles = synthcity::split_tiles(scene, labels, cfg.dataset.tile_size,
                                                  cfg.dataset.keep_empty);
        for (auto& t : scene_tiles) tiles.push_back(std::move(t));
    }

    const auto counts = split_counts(tiles.size(), cfg.dataset.splits);
    GenerateSummary summary;
    summary.path = root;
    summary.tiles_train = counts[0];
    summary.tiles_val = counts[1];
    summary.tiles_test = counts[2];

    size_t cursor = 0;
    for (int s = 0; s < 3; ++s) {
        const auto split_dir = root / dataset_io::kSplits[s];
        std::filesystem::create_directories(split_dir);
        std::vector<std::string> ids;
        for (size_t i = 0; i < counts[s]; ++i, ++cursor) {
            const std::string id = pad_id(i);
            dataset_io::write_sample(split_dir / id, tiles[cursor]);
            ids.push_back(id);
        }
        dataset_io::write_manifest(split_dir, ids);
    }

    // stats are computed from what loaders will actually see on disk
    std::optional<datapipe::HeightScale> train_scale;
    std::optional<datapipe::InputStats> train_inputs;
    for (int s = 0; s < 3; ++s) {
        const auto split_dir = root / dataset_io::kSplits[s];
        auto samples = dataset_io::load_split(root, dataset_io::kSplits[s]);
        dataset_io::SplitStats st;
        st.split = dataset_io::kSplits[s];
        for (const auto& sp : samples)
            for (uint8_t v : sp.gt_semantic.raw()) st.class_pixels[v] += 1;
        if (s == 0) {
            if (samples.empty())
                throw std::invalid_argument("cmd_generate: training split is empty");
            std::vector<synthcity::TileSample> train_tiles;
            for (const auto& sp : samples) {
                synthcity::TileSample t;
                t.gt_height = sp.gt_height;
                train_tiles.push_back(std::move(t));
            }
            train_scale =
                synthcity::compute_normalization_stats(train_tiles, cfg.dataset.coverage);
            train_inputs = datapipe::compute_input_stats(samples);
            st.height_scale = train_scale;
            st.input_stats = train_inputs;
            st.coverage = cfg.dataset.coverage;
        }
        dataset_io::write_stats(split_dir, st);
    }
    return summary;
}

namespace {

struct TrainContext {
    std::vector<datapipe::SamplePair> samples;
    datapipe::HeightScale scale;
    datapipe::InputStats stats;
};

TrainContext load_train_context(const RunConfig& cfg) {
    TrainContext ctx;
    const auto root = cfg.dataset_path();
    ctx.samples = dataset_io::load_split(root, "train");
    auto st = dataset_io::read_stats(root / "train");
    if (!st.height_scale || !st.input_stats)
        throw std::invalid_argument("train stats document is missing scale information");
    ctx.scale = *st.height_scale;
    ctx.stats = *st.input_stats;
    return ctx;
}

train::TrainConfig resolve_train_config(const RunConfig& cfg) {
    train::TrainConfig tc = cfg.training;
    tc.seed = cfg.seed;
    // gated-off tasks force their loss weights to zero
    if (!cfg.model.gates.pseudo) tc.loss_weights.lambda_pseudo = 0.0;
    if (!cfg.model.gates.height) tc.loss_weights.lambda_height = 0.0;
    if (!cfg.model.gates.semantic) tc.loss_weights.lambda_semantic = 0.0;
    tc.checkpoint_path = cfg.out / "model.ckpt";
    tc.log_path = cfg.out / "train_log.jsonl";
    return tc;
}

} // namespace

train::TrainResult cmd_train(const RunConfig& cfg) {
    std::filesystem::create_directories(cfg.out);
    TrainContext ctx = load_train_context(cfg);
    model::ModelConfig mc = cfg.model;
    mc.init_seed = cfg.seed == 0 ? mc.init_seed : cfg.seed;
    model::ChangeModel m(mc);
    return train::train_model(m, ctx.samples, ctx.stats, ctx.scale, resolve_train_config(cfg));
}

EvalOutcome evaluate_split(const Predictor& predictor, double mparams,
                           const std::vector<datapipe::SamplePair>& samples, int hist_bins) {
    if (samples.empty()) throw std::invalid_argument("evaluate_split: empty split");
    metrics::ConfusionAccumulator conf;
    metrics::HeightAccumulator height;
    std::vector<double> all_pred, all_gt;
    bool has_semantic = false, has_height = false;

    for (const auto& sp : samples) {
        Prediction p = predictor(sp);
        if (p.has_semantic) {
            has_semantic = true;
            conf.add(p.classes, sp.gt_semantic);
        }
        if (p.has_height) {
            has_height = true;
            MaskU8 change_mask(1, sp.gt_semantic.height(), sp.gt_semantic.width(), 0);
            for (size_t i = 0; i < change_mask.size(); ++i)
                change_mask.raw()[i] = sp.gt_semantic.raw()[i] != 0 ? 1 : 0;
            height.add(p.height_m, sp.gt_height, change_mask);
            for (size_t i = 0; i < p.height_m.size(); ++i) {
                all_pred.push_back(p.height_m.raw()[i]);
                all_gt.push_back(sp.gt_height.raw()[i]);
            }
        }
    }

    EvalOutcome out;
    out.has_semantic = has_semantic;
    out.has_height = has_height;
    out.report.mparams = mparams;
    if (has_semantic) {
        out.report.iou_d = conf.iou_demolished();
        out.report.iou_n = conf.iou_newly_built();
        out.report.miou = conf.miou();
        out.report.f1 = conf.f1();
    }
    if (has_height) {
        out.report.rmse = height.rmse();
        out.report.mae = height.mae();
        out.report.crmse = height.crmse();
        out.report.crel = height.crel();
        out.report.czncc = height.czncc();
        out.histogram = metrics::height_histogram(all_pred, all_gt, hist_bins);
    }
    return out;
}

Predictor model_predictor(const model::ChangeModel& m, const datapipe::InputStats& stats,
                          const datapipe::HeightScale& scale) {
    return [&m, stats, scale](const datapipe::SamplePair& sp) {
        datapipe::ModelInput in = datapipe::normalize_inputs(sp.dsm_pre, sp.image_post, stats);
        model::ModelOutputs out = m.forward(in.dsm, in.image);
        const int h = sp.dsm_pre.height(), w = sp.dsm_pre.width();
        Prediction p;
        p.classes = LabelMap(1, h, w, 0);
        p.height_m = RasterF(1, h, w, 0.0f);
        if (out.sem_logits) {
            p.has_semantic = true;
            const int n = h * w;
            for (int i = 0; i < n; ++i) {
                double best = out.sem_logits->value[i];
                uint8_t arg = 0;
                for (uint8_t c = 1; c < 3; ++c) {
                    const double v = out.sem_logits->value[static_cast<size_t>(c) * n + i];
                    if (v > best) {
                        best = v;
                        arg = c;
                    }
                }
                p.classes.raw()[i] = arg;
            }
        }
        if (out.height_norm) {
            p.has_height = true;
            for (size_t i = 0; i < p.height_m.size(); ++i)
                p.height_m.raw()[i] = static_cast<float>(
                    datapipe::denormalize_height(out.height_norm->value[i], scale));
        }
        return p;
    };
}

Predictor gt_predictor() {
    return [](const datapipe::SamplePair& sp) {
        Prediction p;
        p.classes = sp.gt_semantic;
        p.height_m = sp.gt_height;
        p.has_semantic = true;
        p.has_height = true;
        return p;
    };
}

EvalOutcome cmd_eval(const RunConfig& cfg) {
    std::filesystem::create_directories(cfg.out);
    const auto root = cfg.dataset_path();
    auto samples = dataset_io::load_split(root, cfg.eval.split);
    auto train_stats = dataset_io::read_stats(root / "train");
    if (!train_stats.height_scale || !train_stats.input_stats)
        throw std::invalid_argument("cmd_eval: training height scale missing");

    const auto ckpt =
        cfg.eval.checkpoint.empty() ? cfg.out / "model.ckpt" : cfg.eval.checkpoint;
    auto m = checkpoint::load(ckpt);
    EvalOutcome out = evaluate_split(
        model_predictor(*m, *train_stats.input_stats, *train_stats.height_scale), m->mparams(),
        samples, cfg.eval.hist_bins);

    std::ofstream rf(cfg.out / ("report_" + cfg.eval.split + ".json"));
    rf << out.report.to_json() << "\n";
    if (out.histogram) {
        std::ofstream hf(cfg.out / ("hist_" + cfg.eval.split + ".csv"));
        hf << out.histogram->to_csv();
    }
    return out;
}

namespace {

std::string cell(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << v;
    return os.str();
}

std::string opt_cell(const std::optional<double>& v) { return v ? cell(*v) : "-"; }

} // namespace

std::string ablation_table_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "setting,IoU_D,IoU_N,mIoU,F1,RMSE,MAE,cRMSE,cRel,cZNCC\n";
    for (const auto& row : rows) {
        os << row.setting;
        if (!row.outcome) {
            for (int i = 0; i < 9; ++i) os << ",-";
            os << "\n";
            continue;
        }
        const auto& o = *row.outcome;
        auto sem = [&](double v) { return o.has_semantic ? cell(v) : std::string("-"); };
        os << "," << sem(o.report.iou_d) << "," << sem(o.report.iou_n) << ","
           << sem(o.report.miou) << "," << sem(o.report.f1);
        if (o.has_height) {
            os << "," << cell(o.report.rmse) << "," << cell(o.report.mae) << ","
               << opt_cell(o.report.crmse) << "," << opt_cell(o.report.crel) << ","
               << opt_cell(o.report.czncc);
        } else {
            os << ",-,-,-,-,-";
        }
        os << "\n";
    }
    return os.str();
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg) {
    const std::array<std::pair<std::string, model::TaskGates>, 5> settings = {{
        {"semantic", {true, false, false}},
        {"height", {false, true, false}},
        {"semantic+height", {true, true, false}},
        {"height+pseudo", {false, true, true}},
        {"semantic+height+pseudo", {true, true, true}},
    }};

    std::filesystem::create_directories(cfg.out / "ablate");
    TrainContext ctx = load_train_context(cfg);
    auto eval_samples = dataset_io::load_split(cfg.dataset_path(), cfg.eval.split);

    std::vector<AblationRow> rows;
    auto flush = [&rows, &cfg]() {
        std::ofstream f(cfg.out / "ablate" / "table.csv");
        f << ablation_table_csv(rows);
    };

    for (const auto& [name, gates] : settings) {
        AblationRow row;
        row.setting = name;
        row.gates = gates;
        try {
            RunConfig sub = cfg;
            sub.model.gates = gates;
            sub.out = cfg.out / "ablate" / name;
            std::filesystem::create_directories(sub.out);

            model::ModelConfig mc = sub.model;
            model::ChangeModel m(mc);
            train::train_model(m, ctx.samples, ctx.stats, ctx.scale, resolve_train_config(sub));
            row.outcome = evaluate_split(model_predictor(m, ctx.stats, ctx.scale), m.mparams(),
                                         eval_samples, cfg.eval.hist_bins);
            rows.push_back(row);
            flush();
        } catch (...) {
            rows.push_back(row);
            flush();
            throw;  // partial table is preserved on disk
        }
    }
    return rows;
}

std::vector<SweepEntry> cmd_sweep_t(const RunConfig& cfg) {
    for (double t : cfg.sweep_t)
        if (!(t > 0.0)) throw std::invalid_argument("cmd_sweep_t: t values must be positive");

    std::filesystem::create_directories(cfg.out / "sweep_t");
    TrainContext ctx = load_train_context(cfg);
    auto eval_samples = dataset_io::load_split(cfg.dataset_path(), cfg.eval.split);

    std::vector<SweepEntry> entries;
    for (double t : cfg.sweep_t) {
        RunConfig sub = cfg;
        sub.model.decoder.temperature = t;
        sub.model.gates = {true, true, true};
        std::ostringstream name;
        name << "t_" << t;
        sub.out = cfg.out / "sweep_t" / name.str();
        std::filesystem::create_directories(sub.out);

        model::ChangeModel m(sub.model);
        train::train_model(m, ctx.samples, ctx.stats, ctx.scale, resolve_train_config(sub));
        EvalOutcome out = evaluate_split(model_predictor(m, ctx.stats, ctx.scale), m.mparams(),
                                         eval_samples, cfg.eval.hist_bins);

        SweepEntry entry;
        entry.t = t;
        entry.histogram_csv = sub.out / "hist.csv";
        if (out.histogram) {
            std::ofstream hf(entry.histogram_csv);
            hf << out.histogram->to_csv();
            // mass of the prediction bin containing zero, a sharpness proxy
            uint64_t total = 0, zero_bin = 0;
            const auto& h = *out.histogram;
            for (size_t b = 0; b + 1 < h.edges.size(); ++b) {
                total += h.pred_counts[b];
                if (h.edges[b] <= 0.0 && 0.0 <= h.edges[b + 1]) zero_bin += h.pred_counts[b];
            }
            entry.near_zero_pred_mass =
                total == 0 ? 0.0 : static_cast<double>(zero_bin) / static_cast<double>(total);
        }
        entries.push_back(entry);
    }

    json index = json::array();
    for (const auto& e : entries)
        index.push_back({{"t", e.t},
                         {"histogram", e.histogram_csv.string()},
                         {"near_zero_pred_mass", e.near_zero_pred_mass}});
    std::ofstream f(cfg.out / "sweep_t" / "index.json");
    f << index.dump(2) << "\n";
    return entries;
}

std::string cmd_report(const RunConfig& cfg) {
    std::ostringstream os;
    bool found = false;
    for (const auto& split : {"train", "val", "test"}) {
        const auto p = cfg.out / ("report_" + std::string(split) + ".json");
        if (!std::filesystem::exists(p)) continue;
        found = true;
        std::ifstream f(p);
        std::stringstream buf;
        buf << f.rdbuf();
        auto r = metrics::MetricReport::from_json(buf.str());
        os << "split " << split << ":\n"
           << "  IoU_D " << cell(r.iou_d) << "  IoU_N " << cell(r.iou_n) << "  mIoU "
           << cell(r.miou) << "  F1 " << cell(r.f1) << "\n"
           << "  RMSE " << cell(r.rmse) << " m  MAE " << cell(r.mae) << " m  cRMSE "
           << opt_cell(r.crmse) << " m  cRel " << opt_cell(r.crel) << "  cZNCC "
           << opt_cell(r.czncc) << "\n"
           << "  MParams " << cell(r.mparams) << "\n";
    }
    const auto table = cfg.out / "ablate" / "table.csv";
    if (std::filesystem::exists(table)) {
        found = true;
        std::ifstream f(table);
        os << "ablation table (" << table.string() << "):\n" << f.rdbuf();
    }
    if (!found) os << "no reports under " << cfg.out.string() << "\n";
    return os.str();
}

int run_command(const std::string& command, const RunConfig& cfg) {
    try {
        if (command == "generate") {
            auto s = cmd_generate(cfg);
            std::cout << "dataset at " << s.path.string() << ": " << s.tiles_train << "/"
                      << s.tiles_val << "/" << s.tiles_test << " train/val/test tiles\n";
        } else if (command == "train") {
            auto r = cmd_train(cfg);
            std::cout << "trained " << r.steps << " steps; checkpoint at "
                      << (cfg.out / "model.ckpt").string() << "\n";
        } else if (command == "eval") {
            auto out = cmd_eval(cfg);
            std::cout << out.report.to_json() << "\n";
        } else if (command == "ablate") {
            auto rows = cmd_ablate(cfg);
            std::cout << ablation_table_csv(rows);
        } else if (command == "sweep-t") {
            auto entries = cmd_sweep_t(cfg);
            std::cout << "sweep over " << entries.size() << " temperature values done\n";
        } else if (command == "report") {
            std::cout << cmd_report(cfg);
        } else {
            std::cerr << "unknown command: " << command << "\n";
            return kConfigError;
        }
        return kOk;
    } catch (const train::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumericError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    }
}

} // namespace dsmcd::harness
