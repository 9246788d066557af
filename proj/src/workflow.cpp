#include "taco/workflow.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "taco/io.hpp"
#include "taco/losses.hpp"

#ifndef TACO_VERSION
#define TACO_VERSION "0.0.0"
#endif

namespace taco::workflow {

namespace fs = std::filesystem;
using nlohmann::json;

std::string tool_version() { return TACO_VERSION; }

namespace {

void say(const Log& log, const std::string& msg) {
    if (log) log(msg);
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// Line of the first occurrence of "key" in the config text, or 0.
int locate_key(const std::string& text, const std::string& key) {
    const auto pos = text.find('"' + key + '"');
    if (pos == std::string::npos) return 0;
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

class Section {
public:
    Section(const json& root, std::string name) : name_(std::move(name)) {
        if (root.contains(name_)) {
            j_ = root.at(name_);
            if (!j_.is_object()) throw ConfigError("section '" + name_ + "' must be an object");
        } else {
            j_ = json::object();
        }
    }

    template <typename T>
    void get(const std::string& key, T& dst) {
        known_.push_back(key);
        if (!j_.contains(key)) return;
        try {
            j_.at(key).get_to(dst);
        } catch (const json::exception&) {
            throw ConfigError("'" + key + "' in section '" + name_ + "' has the wrong type");
        }
    }

    template <typename E, typename Parse>
    void get_enum(const std::string& key, E& dst, Parse parse) {
        std::string s;
        get(key, s);
        if (!s.empty()) dst = parse(s);
    }

    void finish() const {
        for (const auto& [key, _] : j_.items())
            if (std::find(known_.begin(), known_.end(), key) == known_.end())
                throw ConfigError("unknown key '" + key + "' in section '" + name_ + "'");
    }

    [[nodiscard]] const json& raw() const { return j_; }

private:
    std::string name_;
    json j_;
    std::vector<std::string> known_;
};

void parse_sections(const json& root, ToolConfig& c) {
    if (!root.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, _] : root.items())
        if (key != "dataset" && key != "enhancer" && key != "detector" && key != "optimize" && key != "evaluate")
            throw ConfigError("unknown section '" + key + "'");

    Section d(root, "dataset");
    auto& ds = c.dataset;
    d.get("positions", ds.positions);
    d.get("views", ds.views);
    d.get("image_size", ds.image_size);
    d.get("texture_size", ds.texture_size);
    d.get("fov_deg", ds.fov_deg);
    d.get("distance_min", ds.distance_min);
    d.get("distance_max", ds.distance_max);
    d.get("narrow_range_deg", ds.narrow_range_deg);
    d.get("wide_range_deg", ds.wide_range_deg);
    d.get_enum("angle_convention", ds.angles, [](const std::string& s) {
        if (s == "swapped") return scene::AngleConvention::swapped;
        if (s == "verbatim") return scene::AngleConvention::verbatim;
        throw ConfigError("'angle_convention' must be 'swapped' or 'verbatim'");
    });
    d.get("train_ratio", ds.train_ratio);
    d.get("test_ratio", ds.test_ratio);
    d.get("procedural_textures", ds.procedural_textures);
    d.get("max_distractors", ds.max_distractors);
    d.get("seed", ds.seed);
    d.get("threads", ds.threads);
    d.finish();
    ds.validate();

    Section e(root, "enhancer");
    auto& en = c.enhancer;
    e.get("epochs", en.epochs);
    e.get("batch", en.batch);
    e.get("lr", en.lr);
    e.get("seed", en.seed);
    e.get("hidden", en.hidden);
    e.get("slope", en.slope);
    e.get("threads", en.threads);
    e.finish();
    if (en.epochs < 1 || en.batch < 1) throw ConfigError("'epochs' and 'batch' in section 'enhancer' must be >= 1");
    if (en.hidden < 1) throw ConfigError("'hidden' in section 'enhancer' must be >= 1");

    Section t(root, "detector");
    auto& de = c.detector;
    t.get("epochs", de.epochs);
    t.get("batch", de.batch);
    t.get("lr", de.lr);
    t.get("box_weight", de.box_weight);
    t.get("seed", de.seed);
    t.get("threads", de.threads);
    t.get("channels", de.model.channels);
    t.get("head_hidden", de.model.head_hidden);
    t.get("slope", de.model.slope);
    t.get("center_span_cells", de.model.center_span_cells);
    t.finish();
    de.model.image_size = ds.image_size;
    if (de.epochs < 1 || de.batch < 1) throw ConfigError("'epochs' and 'batch' in section 'detector' must be >= 1");

    c.optimize = optim::run_config_from_json(root.contains("optimize") ? root.at("optimize") : json::object());

    Section v(root, "evaluate");
    auto& ev = c.eval;
    v.get("conf_floor", ev.conf_floor);
    v.get("nms_iou", ev.nms_iou);
    v.get("match_iou", ev.match_iou);
    v.get("adr_conf", ev.adr_conf);
    v.get("classes", ev.classes);
    auto& ex = c.experiments;
    v.get("gammas", ex.gammas);
    std::vector<std::string> names;
    v.get("inits", names);
    if (v.raw().contains("inits")) {
        ex.inits.clear();
        for (const auto& n : names) ex.inits.push_back(optim::init_strategy_from_string(n));
    }
    names.clear();
    v.get("schemes", names);
    if (v.raw().contains("schemes")) {
        ex.schemes.clear();
        for (const auto& n : names) ex.schemes.push_back(optim::loss_scheme_from_string(n));
    }
    v.get("saliency_images", ex.saliency_images);
    v.get("saliency_granularity", ex.saliency_granularity);
    v.finish();
    if (!(ev.adr_conf >= 0 && ev.adr_conf <= 1)) throw ConfigError("'adr_conf' must lie in [0,1]");
    for (double g : ex.gammas)
        if (!(g >= 0)) throw ConfigError("'gammas' entries must be >= 0");
}

scene::Dataset load_dataset(const Workspace& ws) { return scene::read_dataset(ws.dataset()); }

render::EnhancerModel load_enhancer(const Workspace& ws) {
    if (!fs::exists(ws.enhancer())) throw ConfigError("missing enhancer checkpoint " + ws.enhancer().string() + " (run train-enhancer first)");
    return render::load_enhancer(ws.enhancer());
}

detector::DetectorModel load_detector(const Workspace& ws) {
    if (!fs::exists(ws.detector())) throw ConfigError("missing detector checkpoint " + ws.detector().string() + " (run train-detector first)");
    return detector::load_detector(ws.detector());
}

void write_json(const fs::path& path, const json& j) { io::write_text_file(path, j.dump(2) + "\n"); }

std::string history_csv(const char* column, const std::vector<double>& history) {
    std::string out = std::string("epoch,") + column + "\n";
    char buf[64];
    for (std::size_t i = 0; i < history.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.10g\n", i + 1, history[i]);
        out += buf;
    }
    return out;
}

Image snapshot_grid(const std::vector<optim::Snapshot>& snaps) {
    if (snaps.empty()) return {};
    const int n = static_cast<int>(snaps.size());
    const int cols = std::min(n, 6);
    const int rows = (n + cols - 1) / cols;
    const int h = snaps.front().texture.height(), w = snaps.front().texture.width();
    const int pad = 2;
    Image grid(3, rows * (h + pad) + pad, cols * (w + pad) + pad, 1.0);
    for (int i = 0; i < n; ++i) {
        const int oy = pad + (i / cols) * (h + pad), ox = pad + (i % cols) * (w + pad);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) grid.at(c, oy + y, ox + x) = snaps[static_cast<std::size_t>(i)].texture.values.at(c, y, x);
    }
    return grid;
}

// Looks for a finished run with the same configuration.
std::optional<fs::path> find_run(const Workspace& ws, const json& config) {
    if (!fs::exists(ws.runs())) return std::nullopt;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(ws.runs()))
        if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        const auto rec = dir / "run.json";
        if (!fs::exists(rec) || !fs::exists(dir / "texture.tnsr")) continue;
        try {
            const auto j = json::parse(io::read_text_file(rec));
            if (j.at("config") == config && j.value("tool_version", "") == tool_version()) return dir;
        } catch (const json::exception&) {
        }
    }
    return std::nullopt;
}

render::TextureMap ensure_run(const Workspace& ws, const ToolConfig& cfg, const std::string& name, const Log& log) {
    if (auto dir = find_run(ws, optim::to_json(cfg.optimize))) {
        say(log, "reusing run " + dir->filename().string() + " for " + name);
        return render::TextureMap(io::read_image_tensor(*dir / "texture.tnsr"), render::TextureRole::adversarial);
    }
    return optimize(ws, cfg, name, log).texture;
}

SweepRow score_texture(const std::string& label, double value, const render::TextureMap& tex,
                       std::span<const scene::SceneSample* const> test, const detector::DetectorModel& det,
                       const ToolConfig& cfg) {
    const std::pair<std::string, render::TextureMap> one{label, tex};
    const auto rows = eval::compare_textures(std::span(&one, 1), test, det, cfg.eval, cfg.optimize.threads);
    return {label, value, rows[0].ap, rows[0].adr, texture_smoothness(tex, cfg.optimize.loss.k), max_channel_range(tex)};
}

std::string sweep_csv(const char* first, const std::vector<SweepRow>& rows, bool with_value) {
    std::string out = std::string(first) + (with_value ? ",value" : "") + ",ap50,adr,smooth,max_range\n";
    char buf[256];
    for (const auto& r : rows) {
        if (with_value)
            std::snprintf(buf, sizeof buf, "%s,%.10g,%.6f,%.6f,%.8f,%.6f\n", r.label.c_str(), r.value, r.ap, r.adr, r.smooth, r.max_range);
        else
            std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.8f,%.6f\n", r.label.c_str(), r.ap, r.adr, r.smooth, r.max_range);
        out += buf;
    }
    return out;
}

}  // namespace

ToolConfig parse_config(const std::string& text, const std::string& source) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t byte = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n');
        const auto nl = text.rfind('\n', byte == 0 ? 0 : byte - 1);
        const auto col = nl == std::string::npos ? byte + 1 : byte - nl;
        throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": invalid JSON");
    }
    ToolConfig c;
    try {
        parse_sections(root, c);
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        const auto q1 = msg.find('\'');
        const auto q2 = q1 == std::string::npos ? q1 : msg.find('\'', q1 + 1);
        const int line = q2 == std::string::npos ? 0 : locate_key(text, msg.substr(q1 + 1, q2 - q1 - 1));
        throw ConfigError(source + (line > 0 ? ":" + std::to_string(line) : "") + ": " + msg);
    }
    return c;
}

ToolConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    return parse_config(io::read_text_file(path), path.string());
}

json to_json(const ToolConfig& c) {
    json j;
    j["dataset"] = scene::to_json(c.dataset);
    j["enhancer"] = {{"epochs", c.enhancer.epochs}, {"batch", c.enhancer.batch}, {"lr", c.enhancer.lr},
                     {"seed", c.enhancer.seed},     {"hidden", c.enhancer.hidden}, {"slope", c.enhancer.slope},
                     {"threads", c.enhancer.threads}};
    j["detector"] = {{"epochs", c.detector.epochs},
                     {"batch", c.detector.batch},
                     {"lr", c.detector.lr},
                     {"box_weight", c.detector.box_weight},
                     {"seed", c.detector.seed},
                     {"threads", c.detector.threads},
                     {"channels", c.detector.model.channels},
                     {"head_hidden", c.detector.model.head_hidden},
                     {"slope", c.detector.model.slope},
                     {"center_span_cells", c.detector.model.center_span_cells}};
    j["optimize"] = optim::to_json(c.optimize);
    std::vector<std::string> inits, schemes;
    for (auto i : c.experiments.inits) inits.push_back(optim::to_string(i));
    for (auto s : c.experiments.schemes) schemes.push_back(optim::to_string(s));
    j["evaluate"] = {{"conf_floor", c.eval.conf_floor},
                     {"nms_iou", c.eval.nms_iou},
                     {"match_iou", c.eval.match_iou},
                     {"adr_conf", c.eval.adr_conf},
                     {"classes", c.eval.classes},
                     {"gammas", c.experiments.gammas},
                     {"inits", inits},
                     {"schemes", schemes},
                     {"saliency_images", c.experiments.saliency_images},
                     {"saliency_granularity", c.experiments.saliency_granularity}};
    return j;
}

json refresh_manifest(const Workspace& ws) {
    json m;
    m["tool_version"] = tool_version();
    json paths = json::object();
    json seeds = json::object();
    auto rel = [&](const fs::path& p) { return fs::relative(p, ws.root).generic_string(); };
    if (fs::exists(ws.dataset() / "manifest.json")) {
        paths["dataset"] = rel(ws.dataset() / "manifest.json");
        const auto dm = json::parse(io::read_text_file(ws.dataset() / "manifest.json"));
        seeds["dataset"] = dm.at("config").at("seed");
        m["dataset_config"] = dm.at("config");
    }
    for (const auto* stage : {"enhancer", "detector"}) {
        const auto rec = ws.checkpoints() / (std::string(stage) + ".json");
        const auto ckpt = ws.checkpoints() / (std::string(stage) + ".tbdl");
        if (!fs::exists(rec) || !fs::exists(ckpt)) continue;
        const auto r = json::parse(io::read_text_file(rec));
        paths[stage] = rel(ckpt);
        seeds[stage] = r.at("config").at("seed");
    }
    json runs = json::object();
    if (fs::exists(ws.runs())) {
        std::vector<fs::path> dirs;
        for (const auto& e : fs::directory_iterator(ws.runs()))
            if (e.is_directory() && fs::exists(e.path() / "run.json") && fs::exists(e.path() / "texture.tnsr"))
                dirs.push_back(e.path());
        std::sort(dirs.begin(), dirs.end());
        for (const auto& d : dirs) {
            const auto r = json::parse(io::read_text_file(d / "run.json"));
            runs[d.filename().string()] = {{"texture", rel(d / "texture.tnsr")}, {"log", rel(d / "log.csv")},
                                           {"seed", r.at("config").at("seed")}};
        }
    }
    paths["runs"] = runs;
    if (fs::exists(ws.reports())) paths["reports"] = rel(ws.reports());
    m["paths"] = paths;
    m["seeds"] = seeds;
    fs::create_directories(ws.root);
    write_json(ws.manifest(), m);
    return m;
}

void gen_dataset(const Workspace& ws, const ToolConfig& cfg, const Log& log) {
    say(log, "generating " + std::to_string(cfg.dataset.positions * cfg.dataset.views) + " views");
    const auto ds = scene::generate_dataset(cfg.dataset);
    scene::write_dataset(ds, ws.dataset(), tool_version());
    say(log, "train positions " + std::to_string(ds.train_positions.size()) + ", test positions " +
                 std::to_string(ds.test_positions.size()));
    refresh_manifest(ws);
}

render::EnhancerTrainResult train_enhancer(const Workspace& ws, const ToolConfig& cfg, bool resume, const Log& log) {
    const auto ds = load_dataset(ws);
    fs::create_directories(ws.checkpoints());
    const auto state_path = ws.checkpoints() / "enhancer.state";
    auto tc = cfg.enhancer;
    std::optional<TrainCheckpoint> ckpt;
    if (resume) {
        if (!fs::exists(state_path)) throw ConfigError("nothing to resume: " + state_path.string() + " not found");
        ckpt = load_train_checkpoint(state_path, "enhancer-state");
        tc.resume = &*ckpt;
        say(log, "resuming enhancer training at epoch " + std::to_string(ckpt->next_epoch + 1));
    }
    tc.on_epoch = [&](const TrainCheckpoint& c) {
        save_train_checkpoint(state_path, "enhancer-state", c);
        say(log, "enhancer epoch " + std::to_string(c.next_epoch) + " L1 " + fmt("%.5f", c.history.back()));
    };
    const auto train = ds.split(true), heldout = ds.split(false);
    auto result = render::train_enhancer(train, heldout, ds.textures, tc);
    const json conf = to_json(cfg)["enhancer"];
    render::save_enhancer(ws.enhancer(), result.model, {{"heldout_l1", result.heldout_l1}, {"config", conf}});
    io::write_text_file(ws.checkpoints() / "enhancer_history.csv", history_csv("train_l1", result.history));
    write_json(ws.checkpoints() / "enhancer.json", {{"config", conf},
                                                    {"heldout_l1", result.heldout_l1},
                                                    {"param_count", result.model.param_count()},
                                                    {"history", result.history},
                                                    {"tool_version", tool_version()}});
    say(log, "enhancer held-out L1 " + fmt("%.5f", result.heldout_l1));
    refresh_manifest(ws);
    return result;
}

DetectorReport train_detector(const Workspace& ws, const ToolConfig& cfg, bool resume, const Log& log) {
    const auto ds = load_dataset(ws);
    fs::create_directories(ws.checkpoints());
    const auto state_path = ws.checkpoints() / "detector.state";
    auto tc = cfg.detector;
    tc.model.image_size = ds.config.image_size;
    std::optional<TrainCheckpoint> ckpt;
    if (resume) {
        if (!fs::exists(state_path)) throw ConfigError("nothing to resume: " + state_path.string() + " not found");
        ckpt = load_train_checkpoint(state_path, "detector-state");
        tc.resume = &*ckpt;
        say(log, "resuming detector training at epoch " + std::to_string(ckpt->next_epoch + 1));
    }
    tc.on_epoch = [&](const TrainCheckpoint& c) {
        save_train_checkpoint(state_path, "detector-state", c);
        say(log, "detector epoch " + std::to_string(c.next_epoch) + " loss " + fmt("%.5f", c.history.back()));
    };
    const std::vector<render::TextureMap> textures{ds.base, ds.naive, ds.random};
    DetectorReport rep;
    rep.train = detector::train_detector(ds.split(true), textures, tc);
    const auto test = ds.split(false);
    const auto dump = eval::run_detector(test, ds.base, rep.train.model, cfg.eval, tc.threads);
    rep.heldout_ap = eval::average_precision(dump, eval::ground_truth(test), cfg.eval.match_iou, cfg.eval.classes);
    const json conf = to_json(cfg)["detector"];
    detector::save_detector(ws.detector(), rep.train.model, {{"heldout_ap", rep.heldout_ap}, {"config", conf}});
    io::write_text_file(ws.checkpoints() / "detector_history.csv", history_csv("train_loss", rep.train.history));
    write_json(ws.checkpoints() / "detector.json", {{"config", conf},
                                                    {"heldout_ap50_base", rep.heldout_ap},
                                                    {"param_count", rep.train.model.param_count()},
                                                    {"history", rep.train.history},
                                                    {"tool_version", tool_version()}});
    say(log, "detector held-out AP@0.5 (base texture) " + fmt("%.4f", rep.heldout_ap));
    refresh_manifest(ws);
    return rep;
}

optim::OptimizeResult optimize(const Workspace& ws, const ToolConfig& cfg, const std::string& name, const Log& log) {
    const auto ds = load_dataset(ws);
    const auto enh = load_enhancer(ws);
    const auto det = load_detector(ws);
    const auto samples = ds.split(cfg.optimize.dataset == optim::DatasetChoice::train);
    const fs::path dir = ws.run(name);
    fs::create_directories(dir / "snapshots");
    say(log, "optimizing '" + name + "' on " + std::to_string(samples.size()) + " views");
    const long steps_per_epoch = static_cast<long>((samples.size() + cfg.optimize.batch - 1) / cfg.optimize.batch);
    optim::OptimizeResult res;
    try {
        res = optim::optimize_texture(samples, det, enh, cfg.optimize, &ds.base,
                                      [&](long step, const losses::LossReport& r) {
                                          if (step % steps_per_epoch == 0)
                                              say(log, "step " + std::to_string(step) + " L_total " + fmt("%.4f", r.l_total));
                                      });
    } catch (const NumericError&) {
        write_json(dir / "run.json", {{"config", optim::to_json(cfg.optimize)}, {"status", "numeric failure"},
                                      {"tool_version", tool_version()}});
        throw;
    }
    io::write_image_tensor(dir / "texture.tnsr", res.texture.values);
    io::write_ppm(dir / "texture.ppm", res.texture.values);
    std::string csv;
    for (const auto& line : res.csv) csv += line + "\n";
    io::write_text_file(dir / "log.csv", csv);
    char buf[64];
    for (const auto& s : res.snapshots) {
        std::snprintf(buf, sizeof buf, "step_%05ld.tnsr", s.step);
        io::write_image_tensor(dir / "snapshots" / buf, s.texture.values);
    }
    io::write_ppm(dir / "snapshot_grid.ppm", snapshot_grid(res.snapshots));
    write_json(dir / "run.json", {{"config", optim::to_json(cfg.optimize)},
                                  {"status", "ok"},
                                  {"steps", res.reports.size()},
                                  {"epoch_loss", res.epoch_loss},
                                  {"range_violations", res.range_violations},
                                  {"pre_clamp_out_of_range", res.out_of_range},
                                  {"final_smoothness", texture_smoothness(res.texture, cfg.optimize.loss.k)},
                                  {"tool_version", tool_version()}});
    say(log, "wrote " + (dir / "texture.tnsr").string());
    refresh_manifest(ws);
    return res;
}

double texture_smoothness(const render::TextureMap& t, int k) { return losses::smooth_loss(t.values, k).value; }

double max_channel_range(const render::TextureMap& t) {
    double r = 0.0;
    for (int c = 0; c < t.values.channels; ++c) {
        const auto p = t.values.plane(c);
        const auto [mn, mx] = std::minmax_element(p.begin(), p.end());
        r = std::max(r, *mx - *mn);
    }
    return r;
}

EvaluateReport evaluate(const Workspace& ws, const ToolConfig& cfg, const EvaluateOptions& opts, const Log& log) {
    const auto ds = load_dataset(ws);
    const auto det = load_detector(ws);
    const auto test = ds.split(false);
    const int threads = cfg.optimize.threads;
    fs::create_directories(ws.reports() / "dumps");
    EvaluateReport rep;

    std::vector<std::pair<std::string, render::TextureMap>> textures{{"base", ds.base}, {"naive", ds.naive}, {"random", ds.random}};
    if (fs::exists(ws.run("default") / "texture.tnsr"))
        textures.emplace_back("adversarial", render::TextureMap(io::read_image_tensor(ws.run("default") / "texture.tnsr"),
                                                                render::TextureRole::adversarial));
    for (const auto& [name, path] : opts.textures) {
        if (!fs::exists(path)) throw ConfigError("texture not found: " + path.string());
        textures.emplace_back(name, render::TextureMap(io::read_image_tensor(path), render::TextureRole::adversarial));
    }
    const auto gts = eval::ground_truth(test);
    for (const auto& [name, tex] : textures) {
        const auto dump = eval::run_detector(test, tex, det, cfg.eval, threads);
        eval::write_dump(ws.reports() / "dumps" / (name + ".txt"), dump);
        rep.textures.push_back({name, eval::average_precision(dump, gts, cfg.eval.match_iou, cfg.eval.classes),
                                eval::adr(dump, gts, cfg.eval.adr_conf, cfg.eval.match_iou, cfg.eval.classes)});
    }
    io::write_text_file(ws.reports() / "textures.csv", eval::rows_csv(rep.textures));
    io::write_text_file(ws.reports() / "textures.txt", eval::format_table(rep.textures));
    say(log, "\n" + eval::format_table(rep.textures));

    if (opts.gamma_sweep) {
        for (double g : cfg.experiments.gammas) {
            ToolConfig c = cfg;
            c.optimize.loss.gamma = g;
            const std::string label = "gamma_" + fmt("%g", g);
            rep.gamma.push_back(score_texture(label, g, ensure_run(ws, c, label, log), test, det, cfg));
        }
        io::write_text_file(ws.reports() / "gamma_sweep.csv", sweep_csv("run", rep.gamma, true));
    }
    if (opts.init_study) {
        for (auto init : cfg.experiments.inits) {
            ToolConfig c = cfg;
            c.optimize.init = init;
            const std::string label = "init_" + optim::to_string(init);
            rep.init.push_back(score_texture(label, 0, ensure_run(ws, c, label, log), test, det, cfg));
        }
        io::write_text_file(ws.reports() / "init_study.csv", sweep_csv("run", rep.init, false));
    }
    if (opts.loss_ablation) {
        for (auto scheme : cfg.experiments.schemes) {
            ToolConfig c = cfg;
            c.optimize.scheme = scheme;
            const std::string label = "scheme_" + optim::to_string(scheme);
            rep.ablation.push_back(score_texture(label, 0, ensure_run(ws, c, label, log), test, det, cfg));
        }
        io::write_text_file(ws.reports() / "loss_ablation.csv", sweep_csv("run", rep.ablation, false));
    }
    if (opts.saliency) {
        fs::create_directories(ws.reports() / "saliency");
        std::string csv = "image_id,texture,base_score,inside_mass\n";
        const int n = std::min<int>(cfg.experiments.saliency_images, static_cast<int>(test.size()));
        char buf[160];
        for (const auto& [name, tex] : textures) {
            if (name != "base" && name != "adversarial") continue;
            for (int i = 0; i < n; ++i) {
                const auto& s = *test[static_cast<std::size_t>(i * static_cast<int>(test.size()) / std::max(1, n))];
                const Image img = scene::retexture(s, tex);
                const auto sal = eval::ablation_saliency(img, s.gt, det, cfg.experiments.saliency_granularity);
                std::snprintf(buf, sizeof buf, "%05d_%s.ppm", s.id, name.c_str());
                io::write_ppm(ws.reports() / "saliency" / buf, eval::saliency_overlay(img, sal.heat));
                std::snprintf(buf, sizeof buf, "%d,%s,%.6f,%.6f\n", s.id, name.c_str(), sal.base_score, sal.inside_mass);
                csv += buf;
            }
        }
        io::write_text_file(ws.reports() / "saliency.csv", csv);
    }
    if (opts.external_dump) {
        if (!fs::exists(*opts.external_dump)) throw ConfigError("detection dump not found: " + opts.external_dump->string());
        const auto dump = eval::read_dump(*opts.external_dump);
        rep.external = eval::TextureRow{"external", eval::average_precision(dump, gts, cfg.eval.match_iou, cfg.eval.classes),
                                        eval::adr(dump, gts, cfg.eval.adr_conf, cfg.eval.match_iou, cfg.eval.classes)};
        const std::vector<eval::TextureRow> one{*rep.external};
        io::write_text_file(ws.reports() / "external_dump.csv", eval::rows_csv(one));
    }
    refresh_manifest(ws);
    return rep;
}

}  // namespace taco::workflow
