#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "taco/losses.hpp"

using namespace taco;
using namespace taco::losses;
using testutil::rel_err;

namespace {

detector::Detection make_det(Box b, std::vector<double> conf, int cell = 0) {
    detector::Detection d;
    d.box = b;
    d.conf = std::move(conf);
    d.cell = cell;
    return d;
}

}  // namespace

TEST_CASE("iou and iop on hand-computed boxes") {
    const Box a{1, 1, 2, 2}, b{2, 2, 2, 2};
    CHECK(iou(a, a) == doctest::Approx(1.0));
    CHECK(iou(a, Box{10, 10, 2, 2}) == 0.0);
    CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-14));
    CHECK(iop(a, b) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(iop(Box{5, 5, 2, 2}, Box{5, 5, 6, 6}) == doctest::Approx(1.0));
    CHECK(iop(a, Box{10, 10, 2, 2}) == 0.0);
    CHECK_THROWS_AS(iou(Box{0, 0, 0, 1}, a), ShapeError);
}

TEST_CASE("iou and iop match pixel counting on random integer boxes") {
    Rng rng = make_rng(5, {1});
    for (int i = 0; i < 1000; ++i) {
        int c[8];
        for (int k = 0; k < 8; k += 2) {
            const int p = uniform_int(rng, 0, 30), q = uniform_int(rng, 0, 30);
            c[k] = std::min(p, q);
            c[k + 1] = std::max(p, q) + 1;
        }
        // c = {ax0, ax1, ay0, ay1, bx0, bx1, by0, by1}
        const Box a = Box::from_corners(c[0], c[2], c[1], c[3]);
        const Box b = Box::from_corners(c[4], c[6], c[5], c[7]);
        const double inter = testutil::counted_overlap(c[0], c[2], c[1], c[3], c[4], c[6], c[5], c[7]);
        const double uni = a.area() + b.area() - inter;
        REQUIRE(std::abs(iou(a, b) - inter / uni) <= 1e-6);
        REQUIRE(std::abs(iop(a, b) - inter / a.area()) <= 1e-6);
    }
}

TEST_CASE("iou gradient matches finite differences away from kinks") {
    Rng rng = make_rng(6, {2});
    int checked = 0;
    while (checked < 200) {
        const Box gt{uniform(rng, 20, 40), uniform(rng, 20, 40), uniform(rng, 8, 30), uniform(rng, 8, 30)};
        Box p{gt.cx + uniform(rng, -8, 8), gt.cy + uniform(rng, -8, 8), gt.w * uniform(rng, 0.6, 1.5),
              gt.h * uniform(rng, 0.6, 1.5)};
        // keep every edge pair clear of coincidence so the central difference is smooth
        const double gap = std::min({std::abs(p.x1() - gt.x1()), std::abs(p.x2() - gt.x2()), std::abs(p.y1() - gt.y1()),
                                     std::abs(p.y2() - gt.y2())});
        if (gap < 0.05 || iou(p, gt) == 0.0) continue;
        const auto g = iou_gradient(p, gt);
        double* fields[4] = {&p.cx, &p.cy, &p.w, &p.h};
        for (int k = 0; k < 4; ++k) {
            const double fd = testutil::central_diff([&] { return iou(p, gt); }, *fields[k], 1e-6);
            REQUIRE(std::abs(g[static_cast<std::size_t>(k)] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
        }
        ++checked;
    }
}

TEST_CASE("classification loss closed forms") {
    const Box gt{20, 20, 10, 10};
    std::vector<detector::Detection> none{make_det({80, 80, 4, 4}, {0.9})};
    CHECK(cls_loss(none, gt, 0.6).value == 0.0);
    CHECK(cls_loss(none, gt, 0.6).omega.empty());

    std::vector<detector::Detection> one{make_det(gt, {0.5})};
    const ClsLoss l = cls_loss(one, gt, 0.6);
    CHECK(l.value == doctest::Approx(0.693147180559945).epsilon(1e-12));
    REQUIRE(l.omega.size() == 1);

    std::vector<detector::Detection> tiny{make_det(gt, {1e-12, 1e-12, 1e-12})};
    CHECK(cls_loss(tiny, gt, 0.6).value < 1e-10);

    std::vector<detector::Detection> sat{make_det(gt, {1.0})};
    const ClsLoss s = cls_loss(sat, gt, 0.6);
    CHECK(std::isfinite(s.value));
    CHECK(s.clamped == 1);
}

TEST_CASE("classification loss gradient matches finite differences") {
    const Box gt{30, 30, 20, 14};
    std::vector<detector::Detection> dets{make_det({30, 31, 12, 10}, {0.3, 0.7, 0.1}),
                                          make_det({32, 29, 8, 8}, {0.9, 0.2, 0.4}),
                                          make_det({70, 70, 8, 8}, {0.8, 0.8, 0.8})};
    const ClsLoss l = cls_loss(dets, gt, 0.6);
    CHECK(l.omega == std::vector<int>{0, 1});
    for (std::size_t i = 0; i < dets.size(); ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            const double fd =
                testutil::central_diff([&] { return cls_loss(dets, gt, 0.6).value; }, dets[i].conf[c], 1e-7);
            CHECK(rel_err(l.d_conf[i][c], fd) <= 1e-3);
        }
}

TEST_CASE("iou loss and attack loss") {
    const Box gt{20, 20, 10, 10};
    std::vector<detector::Detection> none{make_det({80, 80, 4, 4}, {0.9})};
    CHECK(iou_loss(none, gt, 0.45).value == 0.0);
    std::vector<detector::Detection> same{make_det(gt, {0.5})};
    CHECK(iou_loss(same, gt, 0.45).value == doctest::Approx(1.0));

    CHECK(attack_loss(0.6931, 1.0, 0.01) == doctest::Approx(0.7031).epsilon(1e-12));
    CHECK(attack_loss(0.6931, 1.0, 0.0) == 0.6931);

    LossConfig cfg;
    CHECK(cfg.beta == 0.01);
    CHECK(cfg.gamma == 0.1);
    for (double g : {0.5, 1.0, 2.0}) CHECK(total_loss(1.5, 0.25, g) == doctest::Approx(1.5 + 0.25 * g));
    CHECK(total_loss(1.5, 0.25, 0.0) == 1.5);
}

TEST_CASE("attack gradients chain cls and weighted iou terms") {
    const Box gt{30, 30, 20, 14};
    std::vector<detector::Detection> dets{make_det({31, 30, 18, 13}, {0.3, 0.6, 0.1}, 5),
                                          make_det({70, 70, 8, 8}, {0.8, 0.8, 0.8}, 9)};
    const auto c = cls_loss(dets, gt, 0.6);
    const auto u = iou_loss(dets, gt, 0.45);
    const auto g = attack_gradients(dets, c, u, 0.01);
    REQUIRE(g.size() == 1);
    CHECK(g[0].cell == 5);
    for (std::size_t k = 0; k < 3; ++k) CHECK(g[0].d_conf[k] == doctest::Approx(c.d_conf[0][k]));
    for (std::size_t k = 0; k < 4; ++k) CHECK(g[0].d_box[k] == doctest::Approx(0.01 * u.d_box[0][k]));
}

TEST_CASE("total variation hand example and gradient") {
    Image t(1, 2, 2);
    t.at(0, 0, 1) = 1;
    t.at(0, 1, 1) = 1;
    CHECK(tv_loss(t, 0.0).value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tv_loss(Image(3, 8, 8, 0.4)).value < 1e-2);

    Image r = testutil::random_image(3, 7, 6, 3);
    const auto l = tv_loss(r);
    for (std::size_t i = 0; i < r.data.size(); i += 3) {
        const double fd = testutil::central_diff([&] { return tv_loss(r).value; }, r.data[i], 1e-6);
        CHECK(rel_err(l.grad.data[i], fd) <= 1e-3);
    }
}

TEST_CASE("local variation hand examples") {
    Image t(1, 3, 3);
    t.at(0, 1, 1) = 1;
    const Image d = local_variation_bruteforce(t, 3);
    CHECK(d.at(0, 1, 1) == 8.0);
    CHECK(d.at(0, 0, 0) == 1.0);
    const Image f = local_variation_fast(t, 3);
    CHECK(f.at(0, 1, 1) == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(f.at(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-12));

    const Image c(3, 9, 9, 0.37);
    for (double v : local_variation_fast(c, 5).data) CHECK(std::abs(v) < 1e-12);
    for (double v : local_variation_bruteforce(c, 5).data) CHECK(v == 0.0);
    CHECK_THROWS_AS(local_variation_fast(c, 4), ConfigError);

    // smooth loss of the single bright texel
    double expect = 0.0;
    for (double v : d.data) expect += std::sqrt(v + 1e-8);
    CHECK(smooth_loss(t, 3).value == doctest::Approx(expect / 9.0).epsilon(1e-10));
    CHECK(smooth_loss(c, 3).value < 1e-3);
}

TEST_CASE("fast local variation equals brute force on random textures") {
    for (int k : {3, 5, 7})
        for (std::uint64_t s = 0; s < 10; ++s) {
            const Image t = testutil::random_image(3, 32, 32, 100 * k + s);
            const Image a = local_variation_fast(t, k), b = local_variation_bruteforce(t, k);
            for (std::size_t i = 0; i < a.data.size(); ++i) REQUIRE(rel_err(a.data[i], b.data[i], 1e-12) <= 1e-9);
        }
}

TEST_CASE("smooth loss gradient matches finite differences") {
    for (int k : {3, 5}) {
        Image t = testutil::random_image(3, 9, 8, 40 + k);
        const auto l = smooth_loss(t, k);
        for (std::size_t i = 0; i < t.data.size(); i += 5) {
            const double fd = testutil::central_diff([&] { return smooth_loss(t, k).value; }, t.data[i], 1e-6);
            CHECK(rel_err(l.grad.data[i], fd) <= 1e-3);
        }
    }
}

TEST_CASE("loss report csv row") {
    LossReport r;
    r.l_cls = 1.5;
    r.l_iou = 0.25;
    r.l_atk = 1.5025;
    r.l_smooth = 0.125;
    r.l_total = 1.5150;
    CHECK(LossReport::csv_header() == "step,l_cls,l_iou,l_atk,l_smooth,l_total,tex_min,tex_max");
    CHECK(r.csv_row(7, 0, 1) == "7,1.5,0.25,1.5025,0.125,1.515,0,1");
}

TEST_CASE("loss config validation") {
    LossConfig c;
    CHECK_NOTHROW(c.validate());
    c.k = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.gamma = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
