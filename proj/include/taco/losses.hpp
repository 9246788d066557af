#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "taco/detector.hpp"
#include "taco/image.hpp"

namespace taco::losses {

struct LossConfig {
    double beta = 0.01;      // IoU-loss weight
    double gamma = 0.1;      // smoothness weight
    int k = 3;               // smooth-loss window, odd
    double tau_iop = 0.6;
    double tau_iou = 0.45;
    double eps_sqrt = 1e-8;

    void validate() const;
};

/// Intersection over union of two center-format boxes. Throws on a
/// non-positive size.
double iou(const Box& a, const Box& b);

/// Intersection area over the prediction's area.
double iop(const Box& pred, const Box& gt);

/// d IoU(pred, gt) / d (cx, cy, w, h) of pred. One-sided at ties, zero when
/// the boxes do not overlap.
std::array<double, 4> iou_gradient(const Box& pred, const Box& gt);

struct ClsLoss {
    double value = 0.0;
    std::vector<int> omega;                 // indices into the detection list
    std::vector<std::vector<double>> d_conf; // per detection, per class
    int clamped = 0;                        // confidences clamped to 1 - 1e-7
};

/// -sum over Omega_iop and classes of log(1 - b).
ClsLoss cls_loss(std::span<const detector::Detection> dets, const Box& gt, double tau_iop);

struct IouLoss {
    double value = 0.0;
    std::vector<int> omega;
    std::vector<std::array<double, 4>> d_box;  // per detection
};

/// Sum over Omega_iou of IoU(pred, gt).
IouLoss iou_loss(std::span<const detector::Detection> dets, const Box& gt, double tau_iou);

inline double attack_loss(double cls, double iou_value, double beta) { return cls + beta * iou_value; }

/// Upstream gradients of L_cls + beta * L_iou on the detection list, one
/// entry per detection in either Omega set.
std::vector<detector::DetectionGrad> attack_gradients(std::span<const detector::Detection> dets, const ClsLoss& cls,
                                                      const IouLoss& iou_part, double beta);

struct ScalarGrad {
    double value = 0.0;
    Image grad;
};

/// sum over (i, j) with right and down neighbors of
/// sqrt(sum_c (T_ij - T_i+1,j)^2 + (T_ij - T_i,j+1)^2 + eps).
ScalarGrad tv_loss(const Image& T, double eps_sqrt = 1e-8);

/// D_ij = sum_c sum_{|n|,|m| <= k/2} (T_ij - T_i+n,j+m)^2, clamp-to-edge.
Image local_variation_bruteforce(const Image& T, int k);

/// Same D from two separable box sums: k^2 T^2 - 2 T (T*K) + (T^2*K).
Image local_variation_fast(const Image& T, int k);

/// (1 / (W H)) sum sqrt(D + eps), gradient through the fast path.
ScalarGrad smooth_loss(const Image& T, int k, double eps_sqrt = 1e-8);

inline double total_loss(double attack, double smooth, double gamma) { return attack + gamma * smooth; }

/// Values and texture gradients of one optimization step.
struct LossReport {
    double l_cls = 0.0;
    double l_iou = 0.0;
    double l_atk = 0.0;
    double l_smooth = 0.0;
    double l_total = 0.0;
    std::vector<std::vector<int>> omega_iop;  // per batch sample
    std::vector<std::vector<int>> omega_iou;
    Image grad_atk;
    Image grad_smooth;
    Image grad_total;

    static std::string csv_header();
    [[nodiscard]] std::string csv_row(long step, double tex_min, double tex_max) const;
};

}  // namespace taco::losses
