#include "taco/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace taco::losses {

namespace {

constexpr double kMaxConf = 1.0 - 1e-7;

void require_positive(const Box& b, const char* what) {
    if (!(b.w > 0 && b.h > 0)) throw ShapeError(std::string(what) + ": box has non-positive size");
}

double overlap(double a1, double a2, double b1, double b2) { return std::min(a2, b2) - std::max(a1, b1); }

double intersection(const Box& a, const Box& b) {
    const double iw = overlap(a.x1(), a.x2(), b.x1(), b.x2());
    const double ih = overlap(a.y1(), a.y2(), b.y1(), b.y2());
    return (iw > 0 && ih > 0) ? iw * ih : 0.0;
}

// d overlap / d(center, size) of the first interval.
std::array<double, 2> overlap_gradient(double c, double s, double b1, double b2) {
    const double a1 = c - s / 2, a2 = c + s / 2;
    const bool upper = a2 <= b2;  // a2 is the min
    const bool lower = a1 >= b1;  // a1 is the max
    return {(upper ? 1.0 : 0.0) - (lower ? 1.0 : 0.0), (upper ? 0.5 : 0.0) + (lower ? 0.5 : 0.0)};
}

void check_texture(const Image& T, const char* what) {
    if (T.channels < 1 || T.height < 1 || T.width < 1) throw ShapeError(std::string(what) + ": empty texture");
}

void check_k(int k) {
    if (k < 1 || k % 2 == 0) throw ConfigError("kernel size must be odd");
}

// Clamp-to-edge box sum of width k along one axis of a single plane.
void box_sum_rows(const double* in, double* out, int h, int w, int r) {
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int m = -r; m <= r; ++m) s += in[y * w + std::clamp(x + m, 0, w - 1)];
            out[y * w + x] = s;
        }
}

void box_sum_cols(const double* in, double* out, int h, int w, int r) {
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int n = -r; n <= r; ++n) s += in[std::clamp(y + n, 0, h - 1) * w + x];
            out[y * w + x] = s;
        }
}

std::vector<double> box_sum(const double* in, int h, int w, int r) {
    std::vector<double> tmp(static_cast<std::size_t>(h) * w), out(tmp.size());
    box_sum_rows(in, tmp.data(), h, w, r);
    box_sum_cols(tmp.data(), out.data(), h, w, r);
    return out;
}

// Adjoint of box_sum.
std::vector<double> box_sum_transpose(const double* in, int h, int w, int r) {
    std::vector<double> tmp(static_cast<std::size_t>(h) * w, 0.0), out(tmp.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int n = -r; n <= r; ++n) tmp[std::clamp(y + n, 0, h - 1) * w + x] += in[y * w + x];
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int m = -r; m <= r; ++m) out[y * w + std::clamp(x + m, 0, w - 1)] += tmp[y * w + x];
    return out;
}

}  // namespace

void LossConfig::validate() const {
    if (!(beta >= 0) || !(gamma >= 0)) throw ConfigError("loss weights must be >= 0");
    if (k < 3 || k % 2 == 0) throw ConfigError("smooth-loss kernel size must be odd and >= 3");
    if (!(tau_iop >= 0 && tau_iop <= 1) || !(tau_iou >= 0 && tau_iou <= 1))
        throw ConfigError("loss thresholds must lie in [0,1]");
    if (!(eps_sqrt > 0)) throw ConfigError("eps_sqrt must be > 0");
}

double iou(const Box& a, const Box& b) {
    require_positive(a, "iou");
    require_positive(b, "iou");
    const double inter = intersection(a, b);
    return inter / (a.area() + b.area() - inter);
}

double iop(const Box& pred, const Box& gt) {
    require_positive(pred, "iop");
    return intersection(pred, gt) / pred.area();
}

std::array<double, 4> iou_gradient(const Box& p, const Box& g) {
    const double iw = overlap(p.x1(), p.x2(), g.x1(), g.x2());
    const double ih = overlap(p.y1(), p.y2(), g.y1(), g.y2());
    if (iw <= 0 || ih <= 0) return {0, 0, 0, 0};
    const double inter = iw * ih;
    const double uni = p.area() + g.area() - inter;
    const auto gx = overlap_gradient(p.cx, p.w, g.x1(), g.x2());
    const auto gy = overlap_gradient(p.cy, p.h, g.y1(), g.y2());
    // dI for (cx, cy, w, h), dA_pred for the same.
    const std::array<double, 4> dI{gx[0] * ih, gy[0] * iw, gx[1] * ih, gy[1] * iw};
    const std::array<double, 4> dA{0, 0, p.h, p.w};
    std::array<double, 4> d{};
    for (int i = 0; i < 4; ++i) d[i] = (dI[i] * uni - inter * (dA[i] - dI[i])) / (uni * uni);
    return d;
}

ClsLoss cls_loss(std::span<const detector::Detection> dets, const Box& gt, double tau_iop) {
    ClsLoss out;
    out.d_conf.resize(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) {
        out.d_conf[i].assign(dets[i].conf.size(), 0.0);
        if (!(iop(dets[i].box, gt) > tau_iop)) continue;
        out.omega.push_back(static_cast<int>(i));
        for (std::size_t c = 0; c < dets[i].conf.size(); ++c) {
            double b = dets[i].conf[c];
            if (b > kMaxConf) {
                b = kMaxConf;
                ++out.clamped;
            }
            out.value -= std::log(1.0 - b);
            out.d_conf[i][c] = 1.0 / (1.0 - b);
        }
    }
    return out;
}

IouLoss iou_loss(std::span<const detector::Detection> dets, const Box& gt, double tau_iou) {
    IouLoss out;
    out.d_box.assign(dets.size(), {0, 0, 0, 0});
    for (std::size_t i = 0; i < dets.size(); ++i) {
        const double v = iou(dets[i].box, gt);
        if (!(v > tau_iou)) continue;
        out.omega.push_back(static_cast<int>(i));
        out.value += v;
        out.d_box[i] = iou_gradient(dets[i].box, gt);
    }
    return out;
}

std::vector<detector::DetectionGrad> attack_gradients(std::span<const detector::Detection> dets, const ClsLoss& cls,
                                                      const IouLoss& iou_part, double beta) {
    std::vector<int> used;
    used.insert(used.end(), cls.omega.begin(), cls.omega.end());
    used.insert(used.end(), iou_part.omega.begin(), iou_part.omega.end());
    std::sort(used.begin(), used.end());
    used.erase(std::unique(used.begin(), used.end()), used.end());
    std::vector<detector::DetectionGrad> out;
    for (int i : used) {
        const auto si = static_cast<std::size_t>(i);
        detector::DetectionGrad g;
        g.cell = dets[si].cell;
        g.d_conf = si < cls.d_conf.size() ? cls.d_conf[si] : std::vector<double>(dets[si].conf.size(), 0.0);
        if (si < iou_part.d_box.size())
            for (int k = 0; k < 4; ++k) g.d_box[k] = beta * iou_part.d_box[si][k];
        out.push_back(std::move(g));
    }
    return out;
}

ScalarGrad tv_loss(const Image& T, double eps) {
    check_texture(T, "tv_loss");
    ScalarGrad out;
    out.grad = Image(T.channels, T.height, T.width);
    for (int i = 0; i + 1 < T.height; ++i)
        for (int j = 0; j + 1 < T.width; ++j) {
            double s = eps;
            for (int c = 0; c < T.channels; ++c) {
                const double dv = T.at(c, i, j) - T.at(c, i + 1, j);
                const double dh = T.at(c, i, j) - T.at(c, i, j + 1);
                s += dv * dv + dh * dh;
            }
            const double r = std::sqrt(s);
            out.value += r;
            for (int c = 0; c < T.channels; ++c) {
                const double dv = T.at(c, i, j) - T.at(c, i + 1, j);
                const double dh = T.at(c, i, j) - T.at(c, i, j + 1);
                out.grad.at(c, i, j) += (dv + dh) / r;
                out.grad.at(c, i + 1, j) -= dv / r;
                out.grad.at(c, i, j + 1) -= dh / r;
            }
        }
    return out;
}

Image local_variation_bruteforce(const Image& T, int k) {
    check_texture(T, "local_variation");
    check_k(k);
    const int r = k / 2;
    Image D(1, T.height, T.width);
    for (int c = 0; c < T.channels; ++c)
        for (int i = 0; i < T.height; ++i)
            for (int j = 0; j < T.width; ++j) {
                const double t = T.at(c, i, j);
                double s = 0;
                for (int n = -r; n <= r; ++n)
                    for (int m = -r; m <= r; ++m) {
                        const double d = t - T.at(c, std::clamp(i + n, 0, T.height - 1), std::clamp(j + m, 0, T.width - 1));
                        s += d * d;
                    }
                D.at(0, i, j) += s;
            }
    return D;
}

Image local_variation_fast(const Image& T, int k) {
    check_texture(T, "local_variation");
    check_k(k);
    const int r = k / 2;
    const int h = T.height, w = T.width;
    const double k2 = static_cast<double>(k) * k;
    const std::size_t plane = T.plane_size();
    Image D(1, h, w);
    std::vector<double> sq(plane);
    for (int c = 0; c < T.channels; ++c) {
        const double* t = T.data.data() + c * plane;
        for (std::size_t p = 0; p < plane; ++p) sq[p] = t[p] * t[p];
        const auto s1 = box_sum(t, h, w, r);
        const auto s2 = box_sum(sq.data(), h, w, r);
        for (std::size_t p = 0; p < plane; ++p) D.data[p] += k2 * sq[p] - 2 * t[p] * s1[p] + s2[p];
    }
    return D;
}

ScalarGrad smooth_loss(const Image& T, int k, double eps) {
    const Image D = local_variation_fast(T, k);
    const int r = k / 2;
    const int h = T.height, w = T.width;
    const double k2 = static_cast<double>(k) * k;
    const std::size_t plane = T.plane_size();
    const double inv = 1.0 / static_cast<double>(plane);
    ScalarGrad out;
    out.grad = Image(T.channels, h, w);
    std::vector<double> G(plane);
    for (std::size_t p = 0; p < plane; ++p) {
        const double s = std::sqrt(std::max(D.data[p], 0.0) + eps);
        out.value += s;
        G[p] = inv / (2 * s);
    }
    out.value *= inv;
    const auto atg = box_sum_transpose(G.data(), h, w, r);
    std::vector<double> gt(plane);
    for (int c = 0; c < T.channels; ++c) {
        const double* t = T.data.data() + c * plane;
        const auto s1 = box_sum(t, h, w, r);
        for (std::size_t p = 0; p < plane; ++p) gt[p] = G[p] * t[p];
        const auto atgt = box_sum_transpose(gt.data(), h, w, r);
        double* g = out.grad.data.data() + c * plane;
        for (std::size_t p = 0; p < plane; ++p)
            g[p] = 2 * k2 * G[p] * t[p] - 2 * G[p] * s1[p] + 2 * t[p] * atg[p] - 2 * atgt[p];
    }
    return out;
}

std::string LossReport::csv_header() { return "step,l_cls,l_iou,l_atk,l_smooth,l_total,tex_min,tex_max"; }

std::string LossReport::csv_row(long step, double tex_min, double tex_max) const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g", step, l_cls, l_iou, l_atk, l_smooth,
                  l_total, tex_min, tex_max);
    return buf;
}

}  // namespace taco::losses
