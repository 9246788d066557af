#include "taco/optim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "taco/parallel.hpp"
#include "taco/rng.hpp"

namespace taco::optim {

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::array<std::pair<const char*, E>, N>& table, const char* what) {
    for (const auto& [name, value] : table)
        if (s == name) return value;
    throw ConfigError(std::string("unknown ") + what + ": " + s);
}

constexpr std::array<std::pair<const char*, InitStrategy>, 4> kInit{
    {{"zeros", InitStrategy::zeros}, {"ones", InitStrategy::ones}, {"random", InitStrategy::random}, {"base", InitStrategy::base}}};
constexpr std::array<std::pair<const char*, ClampMode>, 2> kClamp{
    {{"feasible", ClampMode::feasible}, {"verbatim", ClampMode::verbatim}}};
constexpr std::array<std::pair<const char*, LossScheme>, 3> kScheme{
    {{"cls+iou", LossScheme::cls_iou}, {"cls", LossScheme::cls}, {"iou", LossScheme::iou}}};
constexpr std::array<std::pair<const char*, UpdateRule>, 2> kRule{{{"adam", UpdateRule::adam}, {"sgd", UpdateRule::sgd}}};
constexpr std::array<std::pair<const char*, DatasetChoice>, 2> kData{
    {{"train", DatasetChoice::train}, {"test", DatasetChoice::test}}};

template <typename E, std::size_t N>
std::string enum_name(E v, const std::array<std::pair<const char*, E>, N>& table) {
    for (const auto& [name, value] : table)
        if (v == value) return name;
    return "?";
}

long count_out_of_range(const Image& T) {
    return std::count_if(T.data.begin(), T.data.end(), [](double v) { return !(v >= 0.0 && v <= 1.0); });
}

}  // namespace

std::string to_string(InitStrategy s) { return enum_name(s, kInit); }
std::string to_string(ClampMode m) { return enum_name(m, kClamp); }
std::string to_string(LossScheme s) { return enum_name(s, kScheme); }
std::string to_string(UpdateRule u) { return enum_name(u, kRule); }
std::string to_string(DatasetChoice d) { return enum_name(d, kData); }
InitStrategy init_strategy_from_string(const std::string& s) { return parse_enum(s, kInit, "init strategy"); }
ClampMode clamp_mode_from_string(const std::string& s) { return parse_enum(s, kClamp, "clamp mode"); }
LossScheme loss_scheme_from_string(const std::string& s) { return parse_enum(s, kScheme, "loss scheme"); }
UpdateRule update_rule_from_string(const std::string& s) { return parse_enum(s, kRule, "update rule"); }
DatasetChoice dataset_choice_from_string(const std::string& s) { return parse_enum(s, kData, "dataset choice"); }

render::TextureMap init_texture(InitStrategy strategy, int size, std::uint64_t seed, const render::TextureMap* base) {
    if (size < 1) throw ConfigError("texture size must be >= 1");
    render::TextureMap t(size, size, 0.0, render::TextureRole::adversarial);
    switch (strategy) {
        case InitStrategy::zeros: break;
        case InitStrategy::ones: std::fill(t.values.data.begin(), t.values.data.end(), 1.0); break;
        case InitStrategy::random: {
            Rng rng = make_rng(seed, {0x1417});
            for (auto& v : t.values.data) v = uniform01(rng);
            break;
        }
        case InitStrategy::base:
            if (base == nullptr) throw ConfigError("init strategy 'base' needs a base texture");
            if (base->height() != size || base->width() != size) throw ShapeError("base texture size mismatch");
            t.values = base->values;
            break;
    }
    return t;
}

Image grad_clamp(const Image& grad, const Image& T, double eta, ClampMode mode) {
    require_same_shape(grad, T, "grad_clamp");
    if (!(eta > 0)) throw ConfigError("grad_clamp: step size must be > 0");
    Image out = grad;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double t = T.data[i];
        double lo = -t, hi = 1.0 - t;
        if (mode == ClampMode::feasible) {
            lo = (t - 1.0) / eta;
            hi = t / eta;
            // pull the bounds inward until t - eta * bound is exactly inside [0,1]
            while (t - eta * hi < 0.0) hi = std::nextafter(hi, -HUGE_VAL);
            while (t - eta * lo > 1.0) lo = std::nextafter(lo, HUGE_VAL);
        }
        out.data[i] = std::clamp(out.data[i], lo, hi);
    }
    return out;
}

StepStats step(Image& T, const Image& grad, OptimizerState& st, ClampMode mode) {
    require_same_shape(T, grad, "step");
    for (std::size_t i = 0; i < grad.data.size(); ++i)
        if (!std::isfinite(grad.data[i]))
            throw NumericError("non-finite texture gradient at element " + std::to_string(i) + " (step " +
                               std::to_string(st.t) + ")");
    const double lr = st.adam.lr;
    const Image g = grad_clamp(grad, T, lr, mode);
    ++st.t;
    if (st.rule == UpdateRule::sgd) {
        for (std::size_t i = 0; i < T.data.size(); ++i) T.data[i] -= lr * g.data[i];
    } else {
        if (!st.m.same_shape(T)) {
            st.m = Image(T.channels, T.height, T.width);
            st.v = Image(T.channels, T.height, T.width);
        }
        const double c1 = 1.0 - std::pow(st.adam.beta1, static_cast<double>(st.t));
        const double c2 = 1.0 - std::pow(st.adam.beta2, static_cast<double>(st.t));
        for (std::size_t i = 0; i < T.data.size(); ++i) {
            const double gi = g.data[i];
            st.m.data[i] = st.adam.beta1 * st.m.data[i] + (1 - st.adam.beta1) * gi;
            st.v.data[i] = st.adam.beta2 * st.v.data[i] + (1 - st.adam.beta2) * gi * gi;
            T.data[i] -= lr * (st.m.data[i] / c1) / (std::sqrt(st.v.data[i] / c2) + st.adam.eps);
        }
    }
    StepStats stats;
    stats.out_of_range = count_out_of_range(T);
    for (auto& v : T.data) v = std::clamp(v, 0.0, 1.0);
    return stats;
}

void RunConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (!(adam.lr > 0)) throw ConfigError("learning rate must be > 0");
    if (!(conf_floor >= 0 && conf_floor < 1)) throw ConfigError("conf_floor must lie in [0,1)");
    if (snapshot_every < 0) throw ConfigError("snapshot_every must be >= 0");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    loss.validate();
}

nlohmann::json to_json(const RunConfig& c) {
    return {{"init", to_string(c.init)},
            {"epochs", c.epochs},
            {"batch", c.batch},
            {"seed", c.seed},
            {"beta", c.loss.beta},
            {"gamma", c.loss.gamma},
            {"k", c.loss.k},
            {"tau_iop", c.loss.tau_iop},
            {"tau_iou", c.loss.tau_iou},
            {"eps_sqrt", c.loss.eps_sqrt},
            {"scheme", to_string(c.scheme)},
            {"clamp", to_string(c.clamp)},
            {"rule", to_string(c.rule)},
            {"lr", c.adam.lr},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"adam_eps", c.adam.eps},
            {"dataset", to_string(c.dataset)},
            {"conf_floor", c.conf_floor},
            {"snapshot_every", c.snapshot_every},
            {"deterministic", c.deterministic},
            {"threads", c.threads}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    RunConfig c;
    auto get = [&](const char* key, auto& dst) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(dst);
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(std::string("run config: bad value for '") + key + "'");
        }
    };
    auto get_enum = [&](const char* key, auto& dst, auto parse) {
        if (!j.contains(key)) return;
        if (!j.at(key).is_string()) throw ConfigError(std::string("run config: '") + key + "' must be a string");
        dst = parse(j.at(key).get<std::string>());
    };
    static const std::vector<std::string> known{"init", "epochs", "batch", "seed", "beta", "gamma", "k", "tau_iop",
                                                "tau_iou", "eps_sqrt", "scheme", "clamp", "rule", "lr", "beta1",
                                                "beta2", "adam_eps", "dataset", "conf_floor", "snapshot_every",
                                                "deterministic", "threads"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("run config: unknown key '" + key + "'");
    get_enum("init", c.init, init_strategy_from_string);
    get("epochs", c.epochs);
    get("batch", c.batch);
    get("seed", c.seed);
    get("beta", c.loss.beta);
    get("gamma", c.loss.gamma);
    get("k", c.loss.k);
    get("tau_iop", c.loss.tau_iop);
    get("tau_iou", c.loss.tau_iou);
    get("eps_sqrt", c.loss.eps_sqrt);
    get_enum("scheme", c.scheme, loss_scheme_from_string);
    get_enum("clamp", c.clamp, clamp_mode_from_string);
    get_enum("rule", c.rule, update_rule_from_string);
    get("lr", c.adam.lr);
    get("beta1", c.adam.beta1);
    get("beta2", c.adam.beta2);
    get("adam_eps", c.adam.eps);
    get_enum("dataset", c.dataset, dataset_choice_from_string);
    get("conf_floor", c.conf_floor);
    get("snapshot_every", c.snapshot_every);
    get("deterministic", c.deterministic);
    get("threads", c.threads);
    c.validate();
    return c;
}

SampleAttack attack_sample(const scene::SceneSample& sample, const render::TextureMap& texture,
                           const detector::DetectorModel& det, const render::EnhancerModel& enh,
                           const losses::LossConfig& loss, LossScheme scheme, double conf_floor) {
    const auto fwd = render::render_forward(sample, texture, enh);
    detector::DetectorCache cache;
    const auto dets = detector::detect(fwd.adv, det, conf_floor, &cache);
    auto cls = losses::cls_loss(dets, sample.gt, loss.tau_iop);
    auto iou = losses::iou_loss(dets, sample.gt, loss.tau_iou);
    SampleAttack out;
    out.l_cls = cls.value;
    out.l_iou = iou.value;
    out.omega_iop = cls.omega;
    out.omega_iou = iou.omega;
    double beta = loss.beta;
    if (scheme == LossScheme::cls) {
        beta = 0.0;
        iou.omega.clear();
    } else if (scheme == LossScheme::iou) {
        beta = 1.0;
        cls.omega.clear();
        for (auto& d : cls.d_conf) std::fill(d.begin(), d.end(), 0.0);
    }
    out.l_atk = (scheme == LossScheme::iou ? 0.0 : cls.value) + beta * (scheme == LossScheme::cls ? 0.0 : iou.value);
    const auto upstream = losses::attack_gradients(dets, cls, iou, beta);
    if (upstream.empty()) {
        out.grad = Image(3, texture.height(), texture.width());
        return out;
    }
    const Image d_img = detector::input_gradient(det, cache, upstream);
    out.grad = render::render_backward(d_img, sample, fwd, enh);
    return out;
}

OptimizeResult optimize_texture(std::span<const scene::SceneSample* const> samples, const detector::DetectorModel& det,
                                const render::EnhancerModel& enh, const RunConfig& cfg, const render::TextureMap* base,
                                const StepHook& hook) {
    cfg.validate();
    if (samples.empty()) throw ConfigError("optimize: no samples");
    const int tex_size = samples.front()->render_map.texture_height;
    OptimizeResult res;
    res.texture = init_texture(cfg.init, tex_size, cfg.seed, base);
    Image& T = res.texture.values;
    OptimizerState state;
    state.adam = cfg.adam;
    state.rule = cfg.rule;
    res.csv.push_back(losses::LossReport::csv_header());
    const int threads = cfg.deterministic ? 1 : cfg.threads;

    auto snapshot = [&](long step) {
        res.range_violations += count_out_of_range(T);
        res.snapshots.push_back({step, res.texture});
    };
    snapshot(0);

    std::vector<std::size_t> order(samples.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng = make_rng(cfg.seed, {0x0e7, static_cast<std::uint64_t>(epoch)});
        shuffle(order, rng);
        double epoch_total = 0.0;
        long epoch_steps = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch));
            std::vector<SampleAttack> parts(n);
            parallel_for(n, threads, [&](std::size_t k) {
                parts[k] = attack_sample(*samples[order[start + k]], res.texture, det, enh, cfg.loss, cfg.scheme,
                                         cfg.conf_floor);
            });
            losses::LossReport rep;
            rep.grad_atk = Image(T.channels, T.height, T.width);
            const double inv = 1.0 / static_cast<double>(n);
            for (const auto& p : parts) {
                rep.l_cls += p.l_cls * inv;
                rep.l_iou += p.l_iou * inv;
                rep.l_atk += p.l_atk * inv;
                rep.omega_iop.push_back(p.omega_iop);
                rep.omega_iou.push_back(p.omega_iou);
                for (std::size_t i = 0; i < T.data.size(); ++i) rep.grad_atk.data[i] += p.grad.data[i] * inv;
            }
            const auto smooth = losses::smooth_loss(T, cfg.loss.k, cfg.loss.eps_sqrt);
            rep.l_smooth = smooth.value;
            rep.l_total = losses::total_loss(rep.l_atk, rep.l_smooth, cfg.loss.gamma);
            rep.grad_smooth = smooth.grad;
            rep.grad_total = rep.grad_atk;
            for (std::size_t i = 0; i < T.data.size(); ++i) rep.grad_total.data[i] += cfg.loss.gamma * smooth.grad.data[i];

            const auto stats = step(T, rep.grad_total, state, cfg.clamp);
            res.out_of_range += stats.out_of_range;
            const auto [mn, mx] = std::minmax_element(T.data.begin(), T.data.end());
            res.csv.push_back(rep.csv_row(state.t, *mn, *mx));
            if (hook) hook(state.t, rep);
            rep.grad_atk = rep.grad_smooth = rep.grad_total = Image();
            epoch_total += rep.l_total;
            ++epoch_steps;
            res.reports.push_back(std::move(rep));
            if (cfg.snapshot_every > 0 && state.t % cfg.snapshot_every == 0) snapshot(state.t);
        }
        res.epoch_loss.push_back(epoch_total / static_cast<double>(std::max<long>(1, epoch_steps)));
    }
    if (res.snapshots.back().step != state.t) snapshot(state.t);
    return res;
}

}  // namespace taco::optim
