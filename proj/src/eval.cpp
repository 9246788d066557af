#include "taco/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "taco/losses.hpp"
#include "taco/parallel.hpp"

namespace taco::eval {

namespace {

const std::vector<int> kDefaultClasses{detector::kTruck, detector::kCarLike};

std::span<const int> or_default(std::span<const int> classes) { return classes.empty() ? kDefaultClasses : classes; }

bool in_set(int cls, std::span<const int> classes) { return std::find(classes.begin(), classes.end(), cls) != classes.end(); }

std::vector<const GroundTruth*> gt_index(std::span<const GroundTruth> gts, int& max_id) {
    max_id = -1;
    for (const auto& g : gts) max_id = std::max(max_id, g.image_id);
    std::vector<const GroundTruth*> idx(static_cast<std::size_t>(max_id + 1), nullptr);
    for (const auto& g : gts) {
        if (g.image_id < 0) throw FormatError("ground truth with negative image id");
        if (idx[static_cast<std::size_t>(g.image_id)] != nullptr) throw FormatError("more than one ground truth per image");
        idx[static_cast<std::size_t>(g.image_id)] = &g;
    }
    return idx;
}

const GroundTruth* lookup(const std::vector<const GroundTruth*>& idx, int id) {
    return (id >= 0 && static_cast<std::size_t>(id) < idx.size()) ? idx[static_cast<std::size_t>(id)] : nullptr;
}

}  // namespace

void write_dump(std::ostream& out, std::span<const DumpEntry> entries) {
    char buf[192];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof buf, "%d %d %.6f %.6f %.6f %.6f %.8f\n", e.image_id, e.cls, e.box.cx, e.box.cy, e.box.w,
                      e.box.h, e.confidence);
        out << buf;
    }
}

void write_dump(const std::filesystem::path& path, std::span<const DumpEntry> entries) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    write_dump(out, entries);
}

std::vector<DumpEntry> read_dump(std::istream& in) {
    std::vector<DumpEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ss(line);
        DumpEntry e;
        std::string extra;
        if (!(ss >> e.image_id >> e.cls >> e.box.cx >> e.box.cy >> e.box.w >> e.box.h >> e.confidence) || (ss >> extra))
            throw FormatError("detection dump line " + std::to_string(lineno) + ": expected 'image_id class x y w h confidence'");
        if (!(e.box.w > 0 && e.box.h > 0))
            throw FormatError("detection dump line " + std::to_string(lineno) + ": non-positive box size");
        if (!(e.confidence >= 0 && e.confidence <= 1))
            throw FormatError("detection dump line " + std::to_string(lineno) + ": confidence outside [0,1]");
        out.push_back(e);
    }
    return out;
}

std::vector<DumpEntry> read_dump(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    return read_dump(in);
}

std::vector<DumpEntry> to_dump(int image_id, std::span<const detector::Detection> dets) {
    std::vector<DumpEntry> out;
    for (const auto& d : dets) out.push_back({image_id, d.best_class(), d.box, d.max_conf()});
    return out;
}

std::vector<PrPoint> pr_curve(std::span<const DumpEntry> entries, std::span<const GroundTruth> gts, double iou_thresh,
                              std::span<const int> classes) {
    if (gts.empty()) throw ConfigError("average precision needs at least one ground-truth image");
    classes = or_default(classes);
    int max_id = 0;
    const auto idx = gt_index(gts, max_id);
    std::vector<std::size_t> order(entries.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return entries[a].confidence > entries[b].confidence; });
    std::vector<char> matched(idx.size(), 0);
    std::vector<PrPoint> curve;
    long tp = 0, fp = 0;
    for (std::size_t i : order) {
        const auto& e = entries[i];
        const GroundTruth* g = lookup(idx, e.image_id);
        const bool on_gt = g != nullptr && losses::iou(e.box, g->box) >= iou_thresh;
        if (on_gt && in_set(e.cls, classes) && !matched[static_cast<std::size_t>(e.image_id)]) {
            matched[static_cast<std::size_t>(e.image_id)] = 1;
            ++tp;
        } else if (!on_gt && g != nullptr &&
                   std::any_of(g->ignore.begin(), g->ignore.end(),
                               [&](const Box& b) { return losses::iou(e.box, b) >= iou_thresh; })) {
            continue;
        } else {
            ++fp;
        }
        curve.push_back({static_cast<double>(tp) / static_cast<double>(tp + fp),
                         static_cast<double>(tp) / static_cast<double>(gts.size())});
    }
    return curve;
}

double average_precision(std::span<const DumpEntry> entries, std::span<const GroundTruth> gts, double iou_thresh,
                         std::span<const int> classes) {
    auto curve = pr_curve(entries, gts, iou_thresh, classes);
    for (std::size_t i = curve.size(); i-- > 1;) curve[i - 1].precision = std::max(curve[i - 1].precision, curve[i].precision);
    double ap = 0.0, prev_recall = 0.0;
    for (const auto& p : curve) {
        ap += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    return ap;
}

double adr(std::span<const DumpEntry> entries, std::span<const GroundTruth> gts, double conf_thresh, double iou_thresh,
           std::span<const int> classes) {
    if (gts.empty()) return 0.0;
    classes = or_default(classes);
    int max_id = 0;
    const auto idx = gt_index(gts, max_id);
    std::vector<char> hit(idx.size(), 0);
    for (const auto& e : entries) {
        if (!in_set(e.cls, classes) || e.confidence < conf_thresh) continue;
        const GroundTruth* g = lookup(idx, e.image_id);
        if (g != nullptr && losses::iou(e.box, g->box) >= iou_thresh) hit[static_cast<std::size_t>(e.image_id)] = 1;
    }
    const long n = std::count(hit.begin(), hit.end(), 1);
    return static_cast<double>(n) / static_cast<double>(gts.size());
}

std::vector<GroundTruth> ground_truth(std::span<const scene::SceneSample* const> samples) {
    std::vector<GroundTruth> out;
    for (const auto* s : samples) {
        GroundTruth g{s->id, s->gt, {}};
        for (const auto& d : s->distractors) g.ignore.push_back(d.box);
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<DumpEntry> run_detector(std::span<const scene::SceneSample* const> samples, const render::TextureMap& texture,
                                    const detector::DetectorModel& det, const EvalSettings& settings, int threads) {
    std::vector<std::vector<DumpEntry>> per(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        const auto& s = *samples[i];
        const Image img = scene::retexture(s, texture);
        const auto dets = detector::nms(detector::detect(img, det, settings.conf_floor), settings.nms_iou);
        per[i] = to_dump(s.id, dets);
    });
    std::vector<DumpEntry> out;
    for (auto& p : per) out.insert(out.end(), p.begin(), p.end());
    return out;
}

std::vector<TextureRow> compare_textures(std::span<const std::pair<std::string, render::TextureMap>> textures,
                                         std::span<const scene::SceneSample* const> samples,
                                         const detector::DetectorModel& det, const EvalSettings& settings, int threads) {
    const auto gts = ground_truth(samples);
    std::vector<TextureRow> rows;
    for (const auto& [name, tex] : textures) {
        const auto dump = run_detector(samples, tex, det, settings, threads);
        rows.push_back({name, average_precision(dump, gts, settings.match_iou, settings.classes),
                        adr(dump, gts, settings.adr_conf, settings.match_iou, settings.classes)});
    }
    return rows;
}

std::string rows_csv(std::span<const TextureRow> rows) {
    std::string out = "texture,ap50,adr\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", r.name.c_str(), r.ap, r.adr);
        out += buf;
    }
    return out;
}

std::string format_table(std::span<const TextureRow> rows) {
    std::size_t width = 7;
    for (const auto& r : rows) width = std::max(width, r.name.size());
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s\n", static_cast<int>(width), "texture", "AP@0.5", "ADR");
    out += buf;
    out += std::string(width + 20, '-') + "\n";
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-*s  %8.4f  %8.4f\n", static_cast<int>(width), r.name.c_str(), r.ap, r.adr);
        out += buf;
    }
    return out;
}

double truck_score(const Image& raw, const detector::DetectorConfig& cfg, const Box& gt) {
    const int g = cfg.grid();
    double best = 0.0;
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            const double cx = (gx + 0.5) * cfg.stride(), cy = (gy + 0.5) * cfg.stride();
            if (cx < gt.x1() || cx >= gt.x2() || cy < gt.y1() || cy >= gt.y2()) continue;
            best = std::max(best, nn::sigmoid(raw.at(detector::kTruck, gy, gx)));
        }
    return best;
}

Saliency ablation_saliency(const Image& image, const Box& gt, const detector::DetectorModel& det, int granularity) {
    detector::DetectorCache cache;
    detector::forward(det, image, &cache);
    const Image& feat = cache.activated[2];
    if (granularity < 1 || feat.height % granularity != 0 || feat.width % granularity != 0)
        throw ConfigError("saliency granularity must divide the feature map size");
    Saliency out;
    out.base_score = truck_score(cache.raw, det.cfg, gt);
    out.blocks = Image(1, granularity, granularity);
    const int bh = feat.height / granularity, bw = feat.width / granularity;
    for (int by = 0; by < granularity; ++by)
        for (int bx = 0; bx < granularity; ++bx) {
            Image edited = feat;
            for (int c = 0; c < feat.channels; ++c)
                for (int y = by * bh; y < (by + 1) * bh; ++y)
                    for (int x = bx * bw; x < (bx + 1) * bw; ++x) edited.at(c, y, x) = 0.0;
            const double s = truck_score(detector::forward_from_stage3(det, edited), det.cfg, gt);
            out.blocks.at(0, by, bx) = std::max(0.0, out.base_score - s);
        }
    const double mx = *std::max_element(out.blocks.data.begin(), out.blocks.data.end());
    out.heat = Image(1, image.height, image.width);
    double total = 0.0, inside = 0.0;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const double v = out.blocks.at(0, y * granularity / image.height, x * granularity / image.width);
            const double h = mx > 0 ? v / mx : 0.0;
            out.heat.at(0, y, x) = h;
            total += h;
            if (x + 0.5 >= gt.x1() && x + 0.5 < gt.x2() && y + 0.5 >= gt.y1() && y + 0.5 < gt.y2()) inside += h;
        }
    out.inside_mass = total > 0 ? inside / total : 0.0;
    return out;
}

Image saliency_overlay(const Image& image, const Image& heat) {
    if (image.channels != 3 || heat.channels != 1 || heat.height != image.height || heat.width != image.width)
        throw ShapeError("saliency_overlay: shape mismatch");
    Image out = image;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const double a = 0.6 * heat.at(0, y, x);
            out.at(0, y, x) = (1 - a) * image.at(0, y, x) + a;
            out.at(1, y, x) = (1 - a) * image.at(1, y, x);
            out.at(2, y, x) = (1 - a) * image.at(2, y, x);
        }
    return out;
}

}  // namespace taco::eval
