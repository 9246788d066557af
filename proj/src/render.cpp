#include "taco/render.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "taco/adam.hpp"
#include "taco/io.hpp"
#include "taco/parallel.hpp"
#include "taco/rng.hpp"

namespace taco::render {

namespace {

const double kIdentityGainLogit = std::log(std::exp(1.0) - 1.0);

PixelRect full_rect(const Image& img) { return {0, 0, img.width, img.height}; }

}  // namespace

EnhancerModel::EnhancerModel(int hidden_width, double leaky_slope, std::uint64_t seed)
    : hidden(hidden_width), slope(leaky_slope), conv1(kInputChannels, hidden_width, 3, 1, 1),
      conv2(hidden_width, kOutputChannels, 3, 1, 1) {
    if (hidden_width < 1) throw ConfigError("enhancer hidden width must be >= 1");
    Rng rng = make_rng(seed, {0xe4a});
    conv1.init_he(rng, slope);
    conv2.init_he(rng, slope);
    for (auto& w : conv2.weight) w *= 0.1;
    conv2.bias[0] = kIdentityGainLogit;
}

std::size_t EnhancerModel::param_count() const { return conv1.param_count() + conv2.param_count(); }

EnhancerModel EnhancerModel::zeros_like() const {
    EnhancerModel z = *this;
    z.conv1.zero();
    z.conv2.zero();
    return z;
}

std::vector<std::span<double>> EnhancerModel::parameters() {
    return {conv1.weight, conv1.bias, conv2.weight, conv2.bias};
}

void EnhancerModel::set_identity() {
    conv2.zero();
    conv2.bias[0] = kIdentityGainLogit;
}

PixelRect mask_window(const Image& mask, int margin) {
    int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(0, y, x) != 0.0) {
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) return {};
    return {std::max(0, x0 - margin), std::max(0, y0 - margin), std::min(mask.width, x1 + 1 + margin),
            std::min(mask.height, y1 + 1 + margin)};
}

Image normalize_depth(const Image& depth) {
    Image out = depth;
    const double mx = depth.data.empty() ? 0.0 : *std::max_element(depth.data.begin(), depth.data.end());
    if (mx > 0)
        for (auto& v : out.data) v /= mx;
    return out;
}

Image enhance(const Image& raw, const Image& gray, const Image& depth, const EnhancerModel& model, EnhancerCache* cache,
              PixelRect roi) {
    require_same_shape(raw, gray, "enhance");
    if (raw.channels != 3) throw ShapeError("enhance: X_raw must have 3 channels");
    if (depth.channels != 1 || depth.height != raw.height || depth.width != raw.width)
        throw ShapeError("enhance: depth shape mismatch");
    if (roi.empty()) roi = full_rect(raw);
    if (roi.x0 < 0 || roi.y0 < 0 || roi.x1 > raw.width || roi.y1 > raw.height) throw ShapeError("enhance: roi outside image");

    EnhancerCache local;
    EnhancerCache& c = cache ? *cache : local;
    c.roi = roi;
    const Image dnorm = normalize_depth(depth);
    c.input = Image(EnhancerModel::kInputChannels, roi.height(), roi.width());
    for (int y = 0; y < roi.height(); ++y)
        for (int x = 0; x < roi.width(); ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                c.input.at(ch, y, x) = raw.at(ch, roi.y0 + y, roi.x0 + x);
                c.input.at(3 + ch, y, x) = gray.at(ch, roi.y0 + y, roi.x0 + x);
            }
            c.input.at(6, y, x) = dnorm.at(0, roi.y0 + y, roi.x0 + x);
        }
    c.pre1 = nn::conv_forward(model.conv1, c.input, c.c1);
    Image hidden = c.pre1;
    nn::leaky_relu_inplace(hidden, model.slope);
    c.out2 = nn::conv_forward(model.conv2, hidden, c.c2);
    c.valid = true;

    Image enh(3, raw.height, raw.width);
    for (int y = 0; y < roi.height(); ++y)
        for (int x = 0; x < roi.width(); ++x) {
            const double g = nn::softplus(c.out2.at(0, y, x));
            for (int ch = 0; ch < 3; ++ch)
                enh.at(ch, roi.y0 + y, roi.x0 + x) = g * c.input.at(ch, y, x) + c.out2.at(1 + ch, y, x);
        }
    return enh;
}

Image enhance_backward(const EnhancerCache& cache, const EnhancerModel& model, const Image& d_enh,
                       EnhancerModel* param_grad) {
    if (!cache.valid) throw MissingCacheError("enhance_backward: no forward cache");
    const PixelRect& roi = cache.roi;
    const int h = roi.height();
    const int w = roi.width();
    Image d_out2(EnhancerModel::kOutputChannels, h, w);
    Image d_raw(3, d_enh.height, d_enh.width);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double z = cache.out2.at(0, y, x);
            const double g = nn::softplus(z);
            double dg = 0.0;
            for (int ch = 0; ch < 3; ++ch) {
                const double de = d_enh.at(ch, roi.y0 + y, roi.x0 + x);
                dg += de * cache.input.at(ch, y, x);
                d_out2.at(1 + ch, y, x) = de;
                d_raw.at(ch, roi.y0 + y, roi.x0 + x) = g * de;
            }
            d_out2.at(0, y, x) = dg * nn::sigmoid(z);
        }
    Image d_hidden = nn::conv_backward(model.conv2, cache.c2, d_out2, param_grad ? &param_grad->conv2 : nullptr, true);
    nn::leaky_relu_backward_inplace(d_hidden, cache.pre1, model.slope);
    const Image d_input = nn::conv_backward(model.conv1, cache.c1, d_hidden, param_grad ? &param_grad->conv1 : nullptr, true);
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) d_raw.at(ch, roi.y0 + y, roi.x0 + x) += d_input.at(ch, y, x);
    return d_raw;
}

Image composite(const Image& enh, const Image& ref, const Image& mask) {
    require_same_shape(enh, ref, "composite");
    if (mask.channels != 1 || mask.height != enh.height || mask.width != enh.width)
        throw ShapeError("composite: mask shape mismatch");
    for (double m : mask.data)
        if (m != 0.0 && m != 1.0) throw ShapeError("composite: mask is not binary");
    Image out = ref;
    const std::size_t plane = out.plane_size();
    for (std::size_t p = 0; p < plane; ++p)
        if (mask.data[p] == 1.0)
            for (int c = 0; c < out.channels; ++c) out.data[c * plane + p] = enh.data[c * plane + p];
    return out;
}

L1Loss render_loss(const Image& adv, const Image& ref) {
    require_same_shape(adv, ref, "render_loss");
    L1Loss l;
    l.grad = Image(adv.channels, adv.height, adv.width);
    const double inv = adv.data.empty() ? 0.0 : 1.0 / static_cast<double>(adv.data.size());
    for (std::size_t i = 0; i < adv.data.size(); ++i) {
        const double d = adv.data[i] - ref.data[i];
        l.value += std::abs(d);
        l.grad.data[i] = d > 0 ? inv : d < 0 ? -inv : 0.0;
    }
    l.value *= inv;
    return l;
}

RenderForward render_forward(const scene::SceneSample& sample, const TextureMap& texture, const EnhancerModel& model) {
    RenderForward f;
    f.raw = render_raw(sample.render_map, texture);
    f.enh = enhance(f.raw, sample.gray, sample.depth, model, &f.enhancer, mask_window(sample.body_mask, 2));
    f.adv = composite(f.enh, sample.ref, sample.body_mask);
    f.valid = true;
    return f;
}

Image render_backward(const Image& d_adv, const scene::SceneSample& sample, const RenderForward& forward,
                      const EnhancerModel& model) {
    if (!forward.valid) throw MissingCacheError("render_backward: forward pass missing");
    require_same_shape(d_adv, forward.adv, "render_backward");
    Image d_enh(3, d_adv.height, d_adv.width);
    const std::size_t plane = d_enh.plane_size();
    for (std::size_t p = 0; p < plane; ++p)
        if (sample.body_mask.data[p] == 1.0)
            for (int c = 0; c < 3; ++c) d_enh.data[c * plane + p] = d_adv.data[c * plane + p];
    const Image d_raw = enhance_backward(forward.enhancer, model, d_enh);
    return render_raw_transpose(sample.render_map, d_raw);
}

double mean_render_loss(std::span<const scene::SceneSample* const> samples, std::span<const TextureMap> textures,
                        const EnhancerModel& model) {
    if (samples.empty()) return 0.0;
    double sum = 0.0;
    for (const auto* s : samples) {
        const auto f = render_forward(*s, textures[static_cast<std::size_t>(s->texture_id)], model);
        sum += render_loss(f.adv, s->ref).value;
    }
    return sum / static_cast<double>(samples.size());
}

EnhancerTrainResult train_enhancer(std::span<const scene::SceneSample* const> train,
                                   std::span<const scene::SceneSample* const> heldout,
                                   std::span<const TextureMap> textures, const EnhancerTrainConfig& cfg) {
    if (train.empty()) throw ConfigError("train_enhancer: no training samples");
    if (cfg.epochs < 1 || cfg.batch < 1) throw ConfigError("train_enhancer: epochs and batch must be >= 1");
    for (const auto* s : train)
        if (s->texture_id < 0 || static_cast<std::size_t>(s->texture_id) >= textures.size())
            throw ConfigError("train_enhancer: sample references an unknown texture");

    EnhancerTrainResult result;
    result.model = EnhancerModel(cfg.hidden, cfg.slope, cfg.seed);
    EnhancerModel& model = result.model;
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
        Rng rng = make_rng(cfg.seed, {0x7a1, static_cast<std::uint64_t>(epoch)});
        shuffle(order, rng);
        // cosine decay from lr to lr/10 across the epochs
        const double phase = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 0.0;
        adam.set_lr(cfg.lr * (0.1 + 0.45 * (1 + std::cos(std::numbers::pi * phase))));
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch));
            std::vector<EnhancerModel> grads(n, model.zeros_like());
            std::vector<double> losses(n, 0.0);
            parallel_for(n, cfg.threads, [&](std::size_t k) {
                const auto& s = *train[order[start + k]];
                const auto f = render_forward(s, textures[static_cast<std::size_t>(s.texture_id)], model);
                const auto l = render_loss(f.adv, s.ref);
                losses[k] = l.value;
                Image d_enh(3, l.grad.height, l.grad.width);
                const std::size_t plane = d_enh.plane_size();
                for (std::size_t p = 0; p < plane; ++p)
                    if (s.body_mask.data[p] == 1.0)
                        for (int c = 0; c < 3; ++c) d_enh.data[c * plane + p] = l.grad.data[c * plane + p];
                enhance_backward(f.enhancer, model, d_enh, &grads[k]);
            });
            EnhancerModel total = model.zeros_like();
            auto total_params = total.parameters();
            for (std::size_t k = 0; k < n; ++k) {
                if (!std::isfinite(losses[k])) throw NumericError("train_enhancer: loss became non-finite");
                epoch_loss += losses[k];
                auto g = grads[k].parameters();
                for (std::size_t b = 0; b < g.size(); ++b)
                    for (std::size_t i = 0; i < g[b].size(); ++i) total_params[b][i] += g[b][i] / static_cast<double>(n);
            }
            auto params = model.parameters();
            adam.step(params, total_params);
        }
        result.history.push_back(epoch_loss / static_cast<double>(train.size()));
        auto params = model.parameters();
        const TrainCheckpoint ckpt = capture_checkpoint(epoch + 1, params, adam, result.history);
        if (cfg.on_epoch) cfg.on_epoch(ckpt);
    }
    result.heldout_l1 = mean_render_loss(heldout, textures, model);
    return result;
}

void save_enhancer(const std::filesystem::path& path, const EnhancerModel& model, const nlohmann::json& meta) {
    auto tensor = [](const std::vector<double>& v, std::vector<std::uint32_t> shape) {
        return io::Tensor{std::move(shape), v};
    };
    const auto h = static_cast<std::uint32_t>(model.hidden);
    const std::vector<io::NamedTensor> tensors{
        {"conv1.weight", tensor(model.conv1.weight, {h, 7, 3, 3})},
        {"conv1.bias", tensor(model.conv1.bias, {h})},
        {"conv2.weight", tensor(model.conv2.weight, {4, h, 3, 3})},
        {"conv2.bias", tensor(model.conv2.bias, {4})},
    };
    nlohmann::json m = meta.is_object() ? meta : nlohmann::json::object();
    m["hidden"] = model.hidden;
    m["slope"] = model.slope;
    m["param_count"] = model.param_count();
    io::write_bundle(path, "enhancer", m, tensors);
}

EnhancerModel load_enhancer(const std::filesystem::path& path) {
    const io::Bundle b = io::read_bundle(path);
    if (b.kind != "enhancer") throw FormatError("not an enhancer checkpoint: " + path.string());
    EnhancerModel m(b.meta.at("hidden").get<int>(), b.meta.at("slope").get<double>(), 0);
    auto load = [&](const char* name, std::vector<double>& dst) {
        const auto& t = b.get(name);
        if (t.values.size() != dst.size()) throw FormatError(std::string("checkpoint tensor size mismatch: ") + name);
        dst = t.values;
    };
    load("conv1.weight", m.conv1.weight);
    load("conv1.bias", m.conv1.bias);
    load("conv2.weight", m.conv2.weight);
    load("conv2.bias", m.conv2.bias);
    return m;
}

}  // namespace taco::render
