#include "taco/detector.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "taco/adam.hpp"
#include "taco/io.hpp"
#include "taco/parallel.hpp"
#include "taco/rng.hpp"

namespace taco::detector {

namespace {

constexpr double kClassPriorLogit = -4.6;

double box_iou(const Box& a, const Box& b) {
    const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
    const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

double cell_center(int g, const DetectorConfig& cfg) { return (g + 0.5) * cfg.stride(); }
double span(const DetectorConfig& cfg) { return cfg.center_span_cells * cfg.stride(); }

nn::Conv2d* maybe(DetectorModel* m, nn::Conv2d DetectorModel::*member) { return m ? &(m->*member) : nullptr; }

Image flip_horizontal(const Image& img) {
    Image out(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    return out;
}

struct Augment {
    bool flip = false;
    double dx = 0, dy = 0;  // shift in [-1,1], scaled by the allowed range
    std::array<double, 3> gain{1, 1, 1};
    double offset = 0;
};

// Shift with edge replication, then a global gain/offset. Box centers stay inside the image.
Image augment(const Image& src, std::vector<Target>& targets, const Augment& a, int max_shift) {
    Image img = a.flip ? flip_horizontal(src) : src;
    if (a.flip)
        for (auto& t : targets) t.box.cx = img.width - t.box.cx;
    double lo_x = -max_shift, hi_x = max_shift, lo_y = -max_shift, hi_y = max_shift;
    for (const auto& t : targets) {
        lo_x = std::max(lo_x, 1.0 - t.box.cx);
        hi_x = std::min(hi_x, img.width - 1.0 - t.box.cx);
        lo_y = std::max(lo_y, 1.0 - t.box.cy);
        hi_y = std::min(hi_y, img.height - 1.0 - t.box.cy);
    }
    const int sx = static_cast<int>(std::lround(std::clamp(a.dx * max_shift, lo_x, hi_x)));
    const int sy = static_cast<int>(std::lround(std::clamp(a.dy * max_shift, lo_y, hi_y)));
    Image out(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                const int ys = std::clamp(y - sy, 0, img.height - 1), xs = std::clamp(x - sx, 0, img.width - 1);
                out.at(c, y, x) = std::clamp(a.gain[static_cast<std::size_t>(c % 3)] * img.at(c, ys, xs) + a.offset, 0.0, 1.0);
            }
    for (auto& t : targets) {
        t.box.cx += sx;
        t.box.cy += sy;
    }
    return out;
}

}  // namespace

// ------------------------------------------------------------------ model

DetectorModel::DetectorModel(const DetectorConfig& config, std::uint64_t seed) : cfg(config) {
    if (cfg.image_size % 16 != 0 || cfg.image_size < 64) throw ConfigError("detector image size must be a multiple of 16, >= 64");
    if (cfg.classes < 1) throw ConfigError("detector needs at least one class");
    Rng rng = make_rng(seed, {0xde7});
    int in = 3;
    for (int i = 0; i < 4; ++i) {
        stages[static_cast<std::size_t>(i)] = nn::Conv2d(in, cfg.channels[static_cast<std::size_t>(i)], 3, 2, 1);
        stages[static_cast<std::size_t>(i)].init_he(rng, cfg.slope);
        in = cfg.channels[static_cast<std::size_t>(i)];
    }
    head_hidden = nn::Conv2d(in, cfg.head_hidden, 3, 1, 1);
    head_hidden.init_he(rng, cfg.slope);
    head_out = nn::Conv2d(cfg.head_hidden, cfg.outputs(), 1, 1, 0);
    head_out.init_he(rng, cfg.slope);
    for (auto& w : head_out.weight) w *= 0.1;
    for (int c = 0; c < cfg.classes; ++c) head_out.bias[static_cast<std::size_t>(c)] = kClassPriorLogit;
    head_out.bias[static_cast<std::size_t>(cfg.classes + 2)] = std::log(3.0);
    head_out.bias[static_cast<std::size_t>(cfg.classes + 3)] = std::log(3.0);
}

std::size_t DetectorModel::param_count() const {
    std::size_t n = head_hidden.param_count() + head_out.param_count();
    for (const auto& s : stages) n += s.param_count();
    return n;
}

DetectorModel DetectorModel::zeros_like() const {
    DetectorModel z = *this;
    for (auto& s : z.stages) s.zero();
    z.head_hidden.zero();
    z.head_out.zero();
    return z;
}

std::vector<std::span<double>> DetectorModel::parameters() {
    std::vector<std::span<double>> p;
    for (auto& s : stages) {
        p.emplace_back(s.weight);
        p.emplace_back(s.bias);
    }
    p.emplace_back(head_hidden.weight);
    p.emplace_back(head_hidden.bias);
    p.emplace_back(head_out.weight);
    p.emplace_back(head_out.bias);
    return p;
}

int Detection::best_class() const {
    return static_cast<int>(std::max_element(conf.begin(), conf.end()) - conf.begin());
}

double Detection::max_conf() const { return *std::max_element(conf.begin(), conf.end()); }

// ------------------------------------------------------------------ forward / decode

Image forward(const DetectorModel& model, const Image& image, DetectorCache* cache) {
    const auto& cfg = model.cfg;
    if (image.channels != 3 || image.height != cfg.image_size || image.width != cfg.image_size)
        throw ShapeError("detector: input must be 3x" + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size));
    DetectorCache local;
    DetectorCache& c = cache ? *cache : local;
    const Image* x = &image;
    for (std::size_t i = 0; i < 4; ++i) {
        c.pre[i] = nn::conv_forward(model.stages[i], *x, c.convs[i]);
        c.activated[i] = c.pre[i];
        nn::leaky_relu_inplace(c.activated[i], cfg.slope);
        x = &c.activated[i];
    }
    c.pre[4] = nn::conv_forward(model.head_hidden, c.activated[3], c.convs[4]);
    c.activated[4] = c.pre[4];
    nn::leaky_relu_inplace(c.activated[4], cfg.slope);
    c.raw = nn::conv_forward(model.head_out, c.activated[4], c.convs[5]);
    c.valid = true;
    return c.raw;
}

Image forward_from_stage3(const DetectorModel& model, const Image& stage3_activation) {
    nn::ConvCache scratch;
    Image x = nn::conv_forward(model.stages[3], stage3_activation, scratch);
    nn::leaky_relu_inplace(x, model.cfg.slope);
    Image h = nn::conv_forward(model.head_hidden, x, scratch);
    nn::leaky_relu_inplace(h, model.cfg.slope);
    return nn::conv_forward(model.head_out, h, scratch);
}

std::vector<Detection> decode(const Image& raw, const DetectorConfig& cfg, double conf_floor) {
    const int g = cfg.grid();
    if (raw.channels != cfg.outputs() || raw.height != g || raw.width != g) throw ShapeError("decode: head output shape mismatch");
    const int C = cfg.classes;
    std::vector<Detection> out;
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            Detection d;
            d.cell = gy * g + gx;
            d.conf.resize(static_cast<std::size_t>(C));
            for (int c = 0; c < C; ++c) d.conf[static_cast<std::size_t>(c)] = nn::sigmoid(raw.at(c, gy, gx));
            if (d.max_conf() < conf_floor) continue;
            d.box.cx = cell_center(gx, cfg) + (nn::sigmoid(raw.at(C, gy, gx)) - 0.5) * span(cfg);
            d.box.cy = cell_center(gy, cfg) + (nn::sigmoid(raw.at(C + 1, gy, gx)) - 0.5) * span(cfg);
            d.box.w = cfg.stride() * std::exp(raw.at(C + 2, gy, gx));
            d.box.h = cfg.stride() * std::exp(raw.at(C + 3, gy, gx));
            out.push_back(std::move(d));
        }
    return out;
}

std::array<double, 4> encode_box(const Box& box, int cell, const DetectorConfig& cfg) {
    const int g = cfg.grid();
    const double sx = (box.cx - cell_center(cell % g, cfg)) / span(cfg) + 0.5;
    const double sy = (box.cy - cell_center(cell / g, cfg)) / span(cfg) + 0.5;
    if (!(sx > 0 && sx < 1 && sy > 0 && sy < 1)) throw ShapeError("encode_box: center outside the cell's reach");
    if (!(box.w > 0 && box.h > 0)) throw ShapeError("encode_box: non-positive box size");
    return {std::log(sx / (1 - sx)), std::log(sy / (1 - sy)), std::log(box.w / cfg.stride()), std::log(box.h / cfg.stride())};
}

std::vector<Detection> detect(const Image& image, const DetectorModel& model, double conf_floor, DetectorCache* cache) {
    return decode(forward(model, image, cache), model.cfg, conf_floor);
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        const double ca = a.max_conf(), cb = b.max_conf();
        if (ca != cb) return ca > cb;
        return a.cell < b.cell;
    });
    std::vector<Detection> kept;
    for (auto& d : dets) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (k.best_class() == d.best_class() && box_iou(k.box, d.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(std::move(d));
    }
    return kept;
}

// ------------------------------------------------------------------ backward

Image raw_gradient(const Image& raw, const DetectorConfig& cfg, std::span<const DetectionGrad> upstream) {
    const int g = cfg.grid();
    const int C = cfg.classes;
    Image d(raw.channels, raw.height, raw.width);
    for (const auto& u : upstream) {
        if (u.cell < 0 || u.cell >= g * g) throw ShapeError("raw_gradient: cell index out of range");
        const int gy = u.cell / g;
        const int gx = u.cell % g;
        for (int c = 0; c < C && c < static_cast<int>(u.d_conf.size()); ++c) {
            const double b = nn::sigmoid(raw.at(c, gy, gx));
            d.at(c, gy, gx) += u.d_conf[static_cast<std::size_t>(c)] * b * (1 - b);
        }
        const double sx = nn::sigmoid(raw.at(C, gy, gx));
        const double sy = nn::sigmoid(raw.at(C + 1, gy, gx));
        d.at(C, gy, gx) += u.d_box[0] * span(cfg) * sx * (1 - sx);
        d.at(C + 1, gy, gx) += u.d_box[1] * span(cfg) * sy * (1 - sy);
        d.at(C + 2, gy, gx) += u.d_box[2] * cfg.stride() * std::exp(raw.at(C + 2, gy, gx));
        d.at(C + 3, gy, gx) += u.d_box[3] * cfg.stride() * std::exp(raw.at(C + 3, gy, gx));
    }
    return d;
}

Image backward(const DetectorModel& model, const DetectorCache& cache, const Image& d_raw, DetectorModel* grad,
               bool want_input_grad) {
    if (!cache.valid) throw MissingCacheError("detector backward: no forward cache");
    const double slope = model.cfg.slope;
    Image d = nn::conv_backward(model.head_out, cache.convs[5], d_raw, maybe(grad, &DetectorModel::head_out), true);
    nn::leaky_relu_backward_inplace(d, cache.pre[4], slope);
    d = nn::conv_backward(model.head_hidden, cache.convs[4], d, maybe(grad, &DetectorModel::head_hidden), true);
    for (int i = 3; i >= 0; --i) {
        const auto si = static_cast<std::size_t>(i);
        nn::leaky_relu_backward_inplace(d, cache.pre[si], slope);
        const bool need_input = i > 0 || want_input_grad;
        d = nn::conv_backward(model.stages[si], cache.convs[si], d, grad ? &grad->stages[si] : nullptr, need_input);
    }
    return d;
}

Image input_gradient(const DetectorModel& model, const DetectorCache& cache, std::span<const DetectionGrad> upstream) {
    if (!cache.valid) throw MissingCacheError("input_gradient: no forward cache");
    const Image d_raw = raw_gradient(cache.raw, model.cfg, upstream);
    return backward(model, cache, d_raw, nullptr, true);
}

// ------------------------------------------------------------------ training

std::vector<Target> sample_targets(const scene::SceneSample& sample) {
    std::vector<Target> t{{sample.gt, kTruck}};
    for (const auto& d : sample.distractors) t.push_back({d.box, d.cls});
    return t;
}

TrainLoss training_loss(const Image& raw, const DetectorConfig& cfg, std::span<const Target> targets, double box_weight) {
    const int g = cfg.grid();
    const int C = cfg.classes;
    if (raw.channels != cfg.outputs() || raw.height != g || raw.width != g) throw ShapeError("training_loss: head shape mismatch");
    Image cls_target(C, g, g);
    std::vector<const Target*> box_target(static_cast<std::size_t>(g * g), nullptr);
    // Later targets never override the truck's box assignment.
    for (auto it = targets.rbegin(); it != targets.rend(); ++it) {
        const Target& t = *it;
        bool any = false;
        for (int gy = 0; gy < g; ++gy)
            for (int gx = 0; gx < g; ++gx) {
                const double cx = cell_center(gx, cfg), cy = cell_center(gy, cfg);
                if (cx >= t.box.x1() && cx < t.box.x2() && cy >= t.box.y1() && cy < t.box.y2()) {
                    cls_target.at(t.cls, gy, gx) = 1.0;
                    box_target[static_cast<std::size_t>(gy * g + gx)] = &t;
                    any = true;
                }
            }
        if (!any) {
            const int gx = std::clamp(static_cast<int>(t.box.cx / cfg.stride()), 0, g - 1);
            const int gy = std::clamp(static_cast<int>(t.box.cy / cfg.stride()), 0, g - 1);
            cls_target.at(t.cls, gy, gx) = 1.0;
            box_target[static_cast<std::size_t>(gy * g + gx)] = &t;
        }
    }
    int positives = 0;
    for (const auto* t : box_target) positives += t != nullptr;
    const double norm = 1.0 / std::max(1, positives);

    TrainLoss out;
    out.d_raw = Image(raw.channels, g, g);
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            for (int c = 0; c < C; ++c) {
                const double z = raw.at(c, gy, gx);
                const double t = cls_target.at(c, gy, gx);
                out.cls += (nn::softplus(z) - t * z) * norm;
                out.d_raw.at(c, gy, gx) = (nn::sigmoid(z) - t) * norm;
            }
            const Target* t = box_target[static_cast<std::size_t>(gy * g + gx)];
            if (t == nullptr) continue;
            const double tsx = std::clamp((t->box.cx - cell_center(gx, cfg)) / span(cfg) + 0.5, 0.02, 0.98);
            const double tsy = std::clamp((t->box.cy - cell_center(gy, cfg)) / span(cfg) + 0.5, 0.02, 0.98);
            const double tw = std::log(t->box.w / cfg.stride());
            const double th = std::log(t->box.h / cfg.stride());
            const double sx = nn::sigmoid(raw.at(C, gy, gx));
            const double sy = nn::sigmoid(raw.at(C + 1, gy, gx));
            const double ex = sx - tsx, ey = sy - tsy;
            const double ew = raw.at(C + 2, gy, gx) - tw, eh = raw.at(C + 3, gy, gx) - th;
            const double k = box_weight * norm;
            out.box += k * (ex * ex + ey * ey + ew * ew + eh * eh);
            out.d_raw.at(C, gy, gx) = 2 * k * ex * sx * (1 - sx);
            out.d_raw.at(C + 1, gy, gx) = 2 * k * ey * sy * (1 - sy);
            out.d_raw.at(C + 2, gy, gx) = 2 * k * ew;
            out.d_raw.at(C + 3, gy, gx) = 2 * k * eh;
        }
    out.value = out.cls + out.box;
    return out;
}

DetectorTrainResult train_detector(std::span<const scene::SceneSample* const> train,
                                   std::span<const render::TextureMap> textures, const DetectorTrainConfig& cfg) {
    if (train.empty()) throw ConfigError("train_detector: no training samples");
    if (textures.empty()) throw ConfigError("train_detector: no textures");
    if (cfg.epochs < 1 || cfg.batch < 1) throw ConfigError("train_detector: epochs and batch must be >= 1");
    DetectorTrainResult result;
    result.model = DetectorModel(cfg.model, cfg.seed);
    DetectorModel& model = result.model;
    optim::Adam adam({cfg.lr, 0.9, 0.999, 1e-8});
    std::vector<std::size_t> order(train.size());
    int first_epoch = 0;
    if (cfg.resume) {
        auto params = model.parameters();
        restore_checkpoint(*cfg.resume, params, adam);
        result.history = cfg.resume->history;
        first_epoch = cfg.resume->next_epoch;
    }

    for (int epoch = first_epoch; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng = make_rng(cfg.seed, {0x7d7, static_cast<std::uint64_t>(epoch)});
        shuffle(order, rng);
        std::vector<Augment> aug(order.size());
        for (auto& a : aug) {
            a.flip = (rng() & 1) != 0;
            if (cfg.max_shift > 0) {
                a.dx = uniform(rng, -1, 1);
                a.dy = uniform(rng, -1, 1);
            }
            if (cfg.jitter > 0) {
                const double g = uniform(rng, 1 - cfg.jitter, 1 + cfg.jitter);
                for (auto& gc : a.gain) gc = g * uniform(rng, 1 - cfg.jitter / 2, 1 + cfg.jitter / 2);
                a.offset = uniform(rng, -cfg.jitter, cfg.jitter) * 0.5;
            }
        }
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch));
            std::vector<DetectorModel> grads(n, model.zeros_like());
            std::vector<double> losses(n);
            parallel_for(n, cfg.threads, [&](std::size_t k) {
                const std::size_t idx = order[start + k];
                const auto& s = *train[idx];
                const auto& tex = textures[(idx + static_cast<std::size_t>(epoch)) % textures.size()];
                auto targets = sample_targets(s);
                const Image img = augment(scene::retexture(s, tex), targets, aug[start + k], cfg.max_shift);
                DetectorCache cache;
                const Image raw = forward(model, img, &cache);
                const TrainLoss l = training_loss(raw, model.cfg, targets, cfg.box_weight);
                losses[k] = l.value;
                backward(model, cache, l.d_raw, &grads[k], false);
            });
            DetectorModel total = model.zeros_like();
            auto tp = total.parameters();
            for (std::size_t k = 0; k < n; ++k) {
                if (!std::isfinite(losses[k])) throw NumericError("train_detector: loss became non-finite");
                epoch_loss += losses[k];
                auto gp = grads[k].parameters();
                for (std::size_t b = 0; b < gp.size(); ++b)
                    for (std::size_t i = 0; i < gp[b].size(); ++i) tp[b][i] += gp[b][i] / static_cast<double>(n);
            }
            auto params = model.parameters();
            adam.step(params, tp);
        }
        result.history.push_back(epoch_loss / static_cast<double>(train.size()));
        auto params = model.parameters();
        const TrainCheckpoint ckpt = capture_checkpoint(epoch + 1, params, adam, result.history);
        if (cfg.on_epoch) cfg.on_epoch(ckpt);
    }
    return result;
}

std::vector<double> overfit_single(const Image& image, std::span<const Target> targets, const DetectorTrainConfig& cfg,
                                   int steps) {
    DetectorModel model(cfg.model, cfg.seed);
    optim::Adam adam({cfg.lr, 0.9, 0.999, 1e-8});
    std::vector<double> history;
    for (int i = 0; i < steps; ++i) {
        DetectorCache cache;
        const Image raw = forward(model, image, &cache);
        const TrainLoss l = training_loss(raw, model.cfg, targets, cfg.box_weight);
        history.push_back(l.value);
        DetectorModel grad = model.zeros_like();
        backward(model, cache, l.d_raw, &grad, false);
        auto p = model.parameters();
        auto g = grad.parameters();
        adam.step(p, g);
    }
    return history;
}

// ------------------------------------------------------------------ checkpoints

void save_detector(const std::filesystem::path& path, const DetectorModel& model, const nlohmann::json& meta) {
    std::vector<io::NamedTensor> tensors;
    auto add = [&](const std::string& name, const nn::Conv2d& c) {
        const auto o = static_cast<std::uint32_t>(c.out_channels), i = static_cast<std::uint32_t>(c.in_channels),
                   k = static_cast<std::uint32_t>(c.kernel);
        tensors.push_back({name + ".weight", {{o, i, k, k}, c.weight}});
        tensors.push_back({name + ".bias", {{o}, c.bias}});
    };
    for (std::size_t i = 0; i < 4; ++i) add("stage" + std::to_string(i), model.stages[i]);
    add("head_hidden", model.head_hidden);
    add("head_out", model.head_out);
    nlohmann::json m = meta.is_object() ? meta : nlohmann::json::object();
    m["image_size"] = model.cfg.image_size;
    m["classes"] = model.cfg.classes;
    m["channels"] = model.cfg.channels;
    m["head_hidden"] = model.cfg.head_hidden;
    m["slope"] = model.cfg.slope;
    m["center_span_cells"] = model.cfg.center_span_cells;
    m["param_count"] = model.param_count();
    io::write_bundle(path, "detector", m, tensors);
}

DetectorModel load_detector(const std::filesystem::path& path) {
    const io::Bundle b = io::read_bundle(path);
    if (b.kind != "detector") throw FormatError("not a detector checkpoint: " + path.string());
    DetectorConfig cfg;
    cfg.image_size = b.meta.at("image_size");
    cfg.classes = b.meta.at("classes");
    cfg.channels = b.meta.at("channels").get<std::array<int, 4>>();
    cfg.head_hidden = b.meta.at("head_hidden");
    cfg.slope = b.meta.at("slope");
    cfg.center_span_cells = b.meta.at("center_span_cells");
    DetectorModel m(cfg, 0);
    auto load = [&](const std::string& name, nn::Conv2d& c) {
        const auto& w = b.get(name + ".weight");
        const auto& bias = b.get(name + ".bias");
        if (w.values.size() != c.weight.size() || bias.values.size() != c.bias.size())
            throw FormatError("checkpoint tensor size mismatch: " + name);
        c.weight = w.values;
        c.bias = bias.values;
    };
    for (std::size_t i = 0; i < 4; ++i) load("stage" + std::to_string(i), m.stages[i]);
    load("head_hidden", m.head_hidden);
    load("head_out", m.head_out);
    return m;
}

}  // namespace taco::detector
